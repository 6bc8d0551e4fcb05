use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use astg_core::eval::{aggregate, read_jsonl, Annotation, DEFAULT_THRESHOLDS};
use clap::Args;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth JSONL.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Prediction JSONL.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// vIoU thresholds, comma separated.
    #[arg(long = "r", value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
    /// Directory for per_sample.csv and aggregate.csv.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    if let Some(r) = args.thresholds.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        bail!("threshold {r} is not in (0, 1)");
    }
    let gts: Vec<Annotation> = read_jsonl(&args.gt).with_context(|| format!("reading {}", args.gt.display()))?;
    let preds: Vec<Annotation> = read_jsonl(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let report = aggregate(&gts, &preds, &args.thresholds)?;
    print!("{}", report.render());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        report.write_per_sample_csv(&dir.join("per_sample.csv"))?;
        report.write_aggregate_csv(&dir.join("aggregate.csv"))?;
    }
    Ok(0)
}
