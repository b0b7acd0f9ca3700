//! Fixed-seed end-to-end pipeline checked against golden digests, followed
//! by reduced-scale checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use drbeta::io::sha256_hex;

use crate::commands::{
    cmd_evaluate, cmd_fit, cmd_forecast, cmd_rib, cmd_simulate, EvaluateArgs, FitArgs, ForecastArgs, RibArgs,
    SimulateArgs,
};
use crate::experiments::{self as ex, CriterionResult, MASTER_SEED};
use crate::CliError;

const GOLDEN: &str = include_str!("../golden/pipeline.json");

pub const PIPELINE_M: usize = 780;
pub const PIPELINE_DAYS: usize = 60;
pub const PIPELINE_WINDOW: usize = 40;

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Keep the pipeline outputs here instead of a temporary directory.
    #[arg(long)]
    pub keep: Option<PathBuf>,
    /// Write the pipeline digests to this file and skip the comparison.
    #[arg(long)]
    pub bless: Option<PathBuf>,
    /// Only run the pipeline comparison.
    #[arg(long)]
    pub pipeline_only: bool,
}

/// Runs simulate → rib → fit → forecast → evaluate through the command
/// layer in `dir` and returns the digest of every file it wrote.
pub fn run_pipeline(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let sim_dir = dir.join("sim");
    cmd_simulate(&SimulateArgs {
        config: None,
        seed: Some(MASTER_SEED),
        m: Some(PIPELINE_M),
        days: Some(PIPELINE_DAYS),
        reps: Some(1),
        out: Some(sim_dir.clone()),
        latent: false,
        spot_beta: false,
    })?;
    let rep = sim_dir.join("rep_0000");
    let rib_dir = dir.join("rib");
    cmd_rib(&RibArgs {
        config: None,
        panel: Some(rep.join("observed.csv")),
        market_ticks: None,
        asset_ticks: None,
        m: None,
        estimators: vec![drbeta::rib::Estimator::Rib, drbeta::rib::Estimator::Chen, drbeta::rib::Estimator::Prvb],
        out: Some(rib_dir.clone()),
        blocks: false,
    })?;
    cmd_fit(&FitArgs {
        config: None,
        series: rib_dir.join("rib.csv"),
        p: Some(1),
        q: Some(1),
        bic: false,
        max_p: None,
        max_q: None,
        starts: None,
        out: Some(dir.join("fit.json")),
    })?;
    cmd_forecast(&ForecastArgs {
        config: None,
        series: rib_dir.join("rib.csv"),
        window: Some(PIPELINE_WINDOW),
        p: Some(1),
        q: Some(1),
        arma: true,
        out: Some(dir.join("forecast.csv")),
    })?;
    cmd_evaluate(&EvaluateArgs {
        pred: dir.join("forecast.csv"),
        target: rep.join("truth.csv"),
        pred_col: "forecast".into(),
        target_col: "true_h".into(),
        metric: drbeta::model::Metric::Msfe,
        acf_lags: None,
        out: Some(dir.join("evaluate.json")),
    })?;
    let files = [
        "sim/rep_0000/observed.csv",
        "sim/rep_0000/truth.csv",
        "rib/rib.csv",
        "rib/chen.csv",
        "rib/prvb.csv",
        "fit.json",
        "forecast.csv",
        "evaluate.json",
    ];
    let mut out = BTreeMap::new();
    for f in files {
        let bytes = std::fs::read(dir.join(f)).map_err(drbeta::Error::from)?;
        out.insert(f.to_string(), sha256_hex(&bytes));
    }
    Ok(out)
}

pub fn golden_digests() -> BTreeMap<String, String> {
    serde_json::from_str(GOLDEN).unwrap_or_default()
}

pub fn pipeline_check(keep: Option<&Path>) -> Result<CriterionResult, CliError> {
    let tmp = tempfile::tempdir().map_err(drbeta::Error::from)?;
    let dir = keep.unwrap_or(tmp.path());
    std::fs::create_dir_all(dir).map_err(drbeta::Error::from)?;
    let got = run_pipeline(dir)?;
    let want = golden_digests();
    let mismatched: Vec<&String> = got.keys().filter(|k| want.get(*k) != got.get(*k)).collect();
    Ok(CriterionResult {
        id: 11,
        name: "pipeline reproducibility",
        pass: !want.is_empty() && mismatched.is_empty() && want.len() == got.len(),
        detail: if mismatched.is_empty() {
            format!("{} outputs match the golden digests", got.len())
        } else {
            format!("digest mismatch: {mismatched:?}")
        },
    })
}

/// Debias sign check: RIB's mean error must be smaller than that of the
/// estimator with the debias term's sign reversed.
pub fn debias_check(reps: usize, days: usize) -> CriterionResult {
    let (good, flipped) = ex::debias_bias(2340, reps, days, MASTER_SEED);
    CriterionResult {
        id: 0,
        name: "debias sign",
        pass: good.mean.abs() + 2.0 * good.se < flipped.mean.abs(),
        detail: format!(
            "mean error RIB {:.4} (se {:.4}), sign-reversed debias {:.4} (se {:.4})",
            good.mean, good.se, flipped.mean, flipped.se
        ),
    }
}

pub fn cmd_selftest(a: &SelftestArgs) -> Result<(), CliError> {
    if let Some(path) = &a.bless {
        let tmp = tempfile::tempdir().map_err(drbeta::Error::from)?;
        let got = run_pipeline(a.keep.as_deref().unwrap_or(tmp.path()))?;
        let mut s = serde_json::to_string_pretty(&got).map_err(drbeta::Error::from)?;
        s.push('\n');
        std::fs::write(path, s).map_err(drbeta::Error::from)?;
        println!("wrote {} digests to {}", got.len(), path.display());
        return Ok(());
    }
    let mut results = vec![pipeline_check(a.keep.as_deref())?];
    if !a.pipeline_only {
        let s = ex::Scale::quick();
        results.push(ex::criterion_linearity(s.linearity_cases, MASTER_SEED));
        results.push(ex::criterion_mapping(s.mapping_days, s.mapping_sim_steps, s.mapping_euler_steps, MASTER_SEED));
        results.push(ex::criterion_derivatives(s.derivative_cases, MASTER_SEED));
        results.push(debias_check(20, 25));
    }
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        failed += usize::from(!r.pass);
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", results.len())));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}
