use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub pi_init: f64,
    #[serde(rename = "sigma2_B_init")]
    pub sigma2_b_init: f64,
    pub ridge: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { tol: 1e-6, max_iters: 2000, pi_init: 0.01, sigma2_b_init: 1.0, ridge: 1e-4 }
    }
}

impl EngineConfig {
    /// Settings used for the simulation studies.
    pub fn simulation() -> Self {
        EngineConfig { tol: 1e-8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1"));
        }
        if !(self.pi_init > 0.0 && self.pi_init < 1.0) {
            return Err(Error::InvalidConfig("pi_init must lie in (0, 1)"));
        }
        if !(self.sigma2_b_init > 0.0 && self.sigma2_b_init.is_finite()) {
            return Err(Error::InvalidConfig("sigma2_B_init must be positive"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidConfig("ridge must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_uses_exact_field_names() {
        let cfg: EngineConfig = serde_json::from_str(
            r#"{"tol":1e-8,"max_iters":50,"pi_init":0.5,"sigma2_B_init":2.0,"ridge":0.001}"#,
        )
        .unwrap();
        assert_eq!(cfg.max_iters, 50);
        assert_eq!(cfg.sigma2_b_init, 2.0);
        assert!(serde_json::from_str::<EngineConfig>(r#"{"tol":1e-8,"bogus":1}"#).is_err());
        let partial: EngineConfig = serde_json::from_str(r#"{"pi_init":0.5}"#).unwrap();
        assert_eq!(partial.tol, 1e-6);
    }

    #[test]
    fn validation() {
        assert!(EngineConfig::default().validate().is_ok());
        assert!(EngineConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(EngineConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(EngineConfig { pi_init: 1.0, ..Default::default() }.validate().is_err());
        assert!(EngineConfig { tol: f64::INFINITY, ..Default::default() }.validate().is_ok());
    }
}
