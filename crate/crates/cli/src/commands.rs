//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use narvb_core::metrics::{mape, mspe, nrmse, selection_score, MetricBundle, NrmseForm};
use narvb_core::sim::{generate, ScenarioSpec};
use narvb_core::{
    backtest, fit, forecast_one, BacktestConfig, EngineConfig, Fit, Segmentation,
    TimeSeriesPanel,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::io::{
    fmt_f64, read_json, read_panel, read_segmentation, segmentation_by_type, write_coefficients,
    write_json, write_panel, write_series, write_text, IndicatorFile,
};
use crate::manifest::{version, RunManifest};
use crate::{
    BacktestArgs, Cli, Command, FitArgs, MetricsArgs, ModelArgs, ReplayArgs, SimulateArgs,
    VerifyArgs,
};

pub const THREADS_ENV: &str = "NAR_THREADS";

const FIT_LAGS: u64 = 10;
const BACKTEST_LAGS: u64 = 14;

/// What a command produced, before the manifest is written.
struct Outcome {
    config: Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
    out_dir: Option<PathBuf>,
    stdout: Option<String>,
    failure: Option<String>,
}

impl Outcome {
    fn files(config: Value, out_dir: &Path, outputs: Vec<PathBuf>) -> Self {
        Outcome {
            config,
            seed: None,
            outputs,
            out_dir: Some(out_dir.to_path_buf()),
            stdout: None,
            failure: None,
        }
    }
}

/// Runs a parsed command line. `args` are the raw arguments after the program
/// name; they go into the manifest for replay.
pub fn execute(cli: Cli, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(a)?),
        Command::Fit(a) => ("fit", run_fit(a)?),
        Command::Forecast(a) => ("forecast", run_forecast(a)?),
        Command::Backtest(a) => ("backtest", run_backtest(a)?),
        Command::Verify(a) => ("verify", run_verify(a)?),
        Command::Metrics(a) => ("metrics", run_metrics(a)?),
        Command::Replay(a) => return replay(a),
    };
    if let Some(text) = &outcome.stdout {
        println!("{text}");
    }
    if let Some(dir) = &outcome.out_dir {
        RunManifest {
            command: name.to_owned(),
            args,
            config: outcome.config,
            seed: outcome.seed,
            version: version(),
            duration_secs: start.elapsed().as_secs_f64(),
            outputs: outcome.outputs,
        }
        .write(dir)?;
    }
    match outcome.failure {
        Some(msg) => Err(CliError::Verify(msg)),
        None => Ok(()),
    }
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    if m.command == "replay" {
        return Err(CliError::Usage("a replay manifest cannot be replayed".into()));
    }
    let argv = std::iter::once("narvb".to_owned()).chain(m.args.iter().cloned());
    let cli = <Cli as clap::Parser>::try_parse_from(argv)
        .map_err(|e| CliError::Usage(format!("manifest arguments: {e}")))?;
    execute(cli, m.args)
}

/// Worker pool sized by `NAR_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Usage(e.to_string()))
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let mut spec = match (&a.scenario, &a.spec) {
        (Some(name), _) => ScenarioSpec::preset(name, a.cov.into(), a.seed)
            .map_err(|_| CliError::Usage(format!("unknown scenario {name:?}")))?,
        (None, Some(path)) => read_json(path)?,
        (None, None) => return Err(CliError::Usage("--scenario or --spec is required".into())),
    };
    if let Some(t) = a.rows {
        spec.t = t;
    }
    if let Some(s) = a.noise_scale {
        spec.noise_scale = s;
    }
    if let Some(l) = a.level {
        spec.level = l;
    }
    spec.validate()?;

    let reps = a.replicates;
    let jobs: Vec<(ScenarioSpec, PathBuf)> = if reps == 1 {
        vec![(spec.clone(), a.out.clone())]
    } else {
        (0..reps).map(|r| (spec.replicate(r), a.out.join(format!("rep_{r:03}")))).collect()
    };
    let written = thread_pool()?.install(|| {
        jobs.par_iter().map(|(s, dir)| write_simulation(s, dir)).collect::<Result<Vec<_>>>()
    })?;
    let mut outcome = Outcome::files(
        json!({ "scenario": spec, "replicates": reps }),
        &a.out,
        written.into_iter().flatten().collect(),
    );
    outcome.seed = Some(spec.seed);
    Ok(outcome)
}

fn write_simulation(spec: &ScenarioSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    let sim = generate(spec)?;
    let files = [
        dir.join("panel.csv"),
        dir.join("truth.json"),
        dir.join("coefficients_true.csv"),
        dir.join("scenario.json"),
    ];
    write_panel(&files[0], &sim.panel)?;
    write_json(&files[1], &IndicatorFile::new(&sim.indicators, &spec.seg))?;
    write_coefficients(&files[2], &sim.coefficients)?;
    write_json(&files[3], spec)?;
    Ok(files.to_vec())
}

struct Model {
    panel: TimeSeriesPanel,
    seg: Segmentation,
    p: usize,
    cfg: EngineConfig,
}

impl Model {
    fn load(a: &ModelArgs, default_lags: u64) -> Result<Self> {
        let panel = read_panel(&a.data)?;
        let seg = match (&a.seg, a.group_by_type) {
            (Some(path), _) => read_segmentation(path, panel.nodes())?,
            (None, true) => segmentation_by_type(&panel, &a.data)?,
            (None, false) => Segmentation::universal(panel.nodes()),
        };
        let cfg = match &a.config {
            Some(path) => read_json(path)?,
            None => EngineConfig::default(),
        };
        cfg.validate()?;
        Ok(Model { panel, seg, p: a.lags.unwrap_or(default_lags) as usize, cfg })
    }

    fn config(&self) -> Value {
        json!({
            "lags": self.p,
            "segmentation": self.seg,
            "engine": self.cfg,
            "nodes": self.panel.nodes(),
            "rows": self.panel.rows(),
        })
    }

    fn fit(&self) -> Result<Fit> {
        Ok(fit(&self.panel, &self.seg, self.p, &self.cfg)?)
    }
}

#[derive(Serialize)]
struct FitSummary {
    iterations: usize,
    converged: bool,
    degenerate_scale_steps: usize,
    elbo: f64,
    pi1: f64,
    pi2: f64,
    #[serde(rename = "sigma2_B")]
    sigma2_b: f64,
    #[serde(rename = "Sigma")]
    sigma: Vec<Vec<f64>>,
    means: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn run_fit(a: &FitArgs) -> Result<Outcome> {
    let model = Model::load(&a.model, FIT_LAGS)?;
    let f = model.fit()?;
    let r = &f.result;
    let files = [
        a.out.join("coefficients.csv"),
        a.out.join("indicators.json"),
        a.out.join("elbo_trace.csv"),
        a.out.join("fit_summary.json"),
    ];
    write_coefficients(&files[0], &r.coefficients)?;
    write_json(&files[1], &IndicatorFile::new(&r.indicators, &model.seg))?;
    write_series(&files[2], "iteration,elbo", r.elbo_trace.iter().copied().enumerate())?;
    let hp = &r.hyperparams;
    write_json(
        &files[3],
        &FitSummary {
            iterations: r.iterations,
            converged: r.converged,
            degenerate_scale_steps: r.degenerate_scale_steps,
            elbo: *r.elbo_trace.last().expect("trace is non-empty"),
            pi1: hp.pi1,
            pi2: hp.pi2,
            sigma2_b: hp.sigma2_b,
            sigma: rows_of(&hp.sigma),
            means: f.means.iter().copied().collect(),
        },
    )?;
    Ok(Outcome::files(model.config(), &a.out, files.to_vec()))
}

fn run_forecast(a: &FitArgs) -> Result<Outcome> {
    let model = Model::load(&a.model, FIT_LAGS)?;
    let f = model.fit()?;
    let yhat = forecast_one(&model.panel, &f.result.coefficients, &f.means)?;
    let path = a.out.join("forecast.csv");
    let cells: Vec<String> = yhat.iter().map(|v| fmt_f64(*v)).collect();
    write_text(&path, &format!("{}\n{}\n", model.panel.node_ids().join(","), cells.join(",")))?;
    Ok(Outcome::files(model.config(), &a.out, vec![path]))
}

#[derive(Serialize)]
struct BacktestSummary {
    split: usize,
    steps: usize,
    reselections: usize,
    mape: Option<f64>,
    mape_excluded: Option<usize>,
    nrmse: Option<f64>,
    mspe: Option<f64>,
}

fn run_backtest(a: &BacktestArgs) -> Result<Outcome> {
    let model = Model::load(&a.model, BACKTEST_LAGS)?;
    let cfg = BacktestConfig {
        engine: model.cfg,
        split: a.split_index,
        refit_structure_every: a.refit_every,
        estimator: a.estimator.into(),
    };
    let report = backtest(&model.panel, &model.seg, model.p, &cfg)?;
    let ids = model.panel.node_ids();
    let mut csv = String::from("step,node,actual,forecast\n");
    for s in 0..report.len() {
        for (j, id) in ids.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                s + 1,
                id,
                fmt_f64(report.actuals[(s, j)]),
                fmt_f64(report.forecasts[(s, j)])
            ));
        }
    }
    let files = [a.out.join("backtest.csv"), a.out.join("summary.json")];
    write_text(&files[0], &csv)?;
    let form: NrmseForm = a.nrmse_form.into();
    let scored = !report.is_empty();
    write_json(
        &files[1],
        &BacktestSummary {
            split: report.split,
            steps: report.len(),
            reselections: report.steps.iter().filter(|s| s.reselected).count(),
            mape: report.mape.map(|m| m.value),
            mape_excluded: report.mape.map(|m| m.excluded),
            nrmse: if scored { nrmse(&report.actuals, &report.forecasts, form).ok() } else { None },
            mspe: if scored { mspe(&report.actuals, &report.forecasts).ok() } else { None },
        },
    )?;
    let mut config = model.config();
    config["split_index"] = json!(a.split_index);
    config["refit_every"] = json!(a.refit_every);
    config["estimator"] = json!(cfg.estimator);
    config["nrmse_form"] = json!(form);
    Ok(Outcome::files(config, &a.out, files.to_vec()))
}

fn run_verify(a: &VerifyArgs) -> Result<Outcome> {
    let report = thread_pool()?.install(|| crate::verify::run(a.instances as usize, a.seed))?;
    let line = format!(
        "oracle agreement: {}/{} selections match (need {}), {} evidence-bound violations",
        report.matches, report.instances, report.required_matches, report.kl_violations
    );
    let mut outputs = Vec::new();
    if let Some(dir) = &a.out {
        let path = dir.join("verify.json");
        write_json(&path, &report)?;
        outputs.push(path);
    }
    Ok(Outcome {
        config: json!({ "instances": a.instances, "seed": a.seed }),
        seed: Some(a.seed),
        outputs,
        out_dir: a.out.clone(),
        failure: (!report.passed()).then(|| line.clone()),
        stdout: Some(line),
    })
}

/// Reads `step,node,actual,forecast` back into step x node matrices.
pub fn read_backtest(path: &Path) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut nodes: Vec<String> = Vec::new();
    let mut cells: Vec<(usize, usize, f64, f64)> = Vec::new();
    for rec in reader.deserialize::<(usize, String, f64, f64)>() {
        let (step, node, actual, forecast) = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        let j = match nodes.iter().position(|n| *n == node) {
            Some(j) => j,
            None => {
                nodes.push(node);
                nodes.len() - 1
            }
        };
        cells.push((step, j, actual, forecast));
    }
    let steps = cells.iter().map(|c| c.0).max().unwrap_or(0);
    let m = nodes.len();
    if cells.len() != steps * m || cells.iter().any(|c| c.0 == 0) {
        return Err(CliError::format(path, "expected one row per step and node, steps from 1"));
    }
    let mut actual = DMatrix::zeros(steps, m);
    let mut forecast = DMatrix::zeros(steps, m);
    for (s, j, a, f) in cells {
        actual[(s - 1, j)] = a;
        forecast[(s - 1, j)] = f;
    }
    Ok((actual, forecast))
}

fn run_metrics(a: &MetricsArgs) -> Result<Outcome> {
    let mut bundle = MetricBundle::default();
    if let (Some(t), Some(s)) = (&a.truth, &a.selected) {
        let (ti, tseg) = IndicatorFile::load(t)?;
        let (si, sseg) = IndicatorFile::load(s)?;
        let score = selection_score(&[ti.support(&tseg)?], &[si.support(&sseg)?])?;
        bundle = score.into();
    }
    if let Some(path) = &a.backtest {
        let (actual, forecast) = read_backtest(path)?;
        if actual.is_empty() {
            return Err(CliError::format(path, "no forecasts to score"));
        }
        bundle.mspe = Some(mspe(&actual, &forecast)?);
        bundle.mape = mape(&actual, &forecast).ok().map(|m| m.value);
        bundle.nrmse = nrmse(&actual, &forecast, a.nrmse_form.into()).ok();
    }
    if a.truth.is_none() && a.backtest.is_none() {
        return Err(CliError::Usage("metrics needs --truth/--selected or --backtest".into()));
    }
    Ok(Outcome {
        config: Value::Null,
        seed: None,
        outputs: Vec::new(),
        out_dir: None,
        stdout: Some(serde_json::to_string_pretty(&bundle).expect("serialisable bundle")),
        failure: None,
    })
}
