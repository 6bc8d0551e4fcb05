use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use astg_core::eval::{aggregate, write_jsonl, Annotation, MetricsReport, DEFAULT_THRESHOLDS};
use astg_core::simworld::{run_scenario, EpisodeRow, FaultSpec, GenParams};
use astg_core::{generate, EngineConfig};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::run::read_faults;
use crate::settings::EngineFlags;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    pub episodes: u64,
    /// Seed of the first episode; episode i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fault spec JSON.
    #[arg(long, value_name = "FILE")]
    pub faults: Option<PathBuf>,
    /// Scenario generator parameters JSON.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    /// Stride values to sweep, comma separated; defaults to the configured stride.
    #[arg(long = "stride-sweep", value_delimiter = ',', value_name = "LIST")]
    pub strides: Vec<usize>,
    /// Also write every generated scenario as JSON.
    #[arg(long)]
    pub save_scenarios: bool,
    #[arg(long, value_name = "DIR", default_value = "sim-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineFlags,
}

#[derive(Debug, Serialize)]
struct TimingRow {
    seed: u64,
    stride: usize,
    wall_ms: f64,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    stride: usize,
    episodes: usize,
    propose_total: u64,
    propose_ratio: f64,
    verify_total: u64,
    agent_calls_total: u64,
    tracker_calls_total: u64,
    m_tiou: f64,
    m_viou: f64,
}

struct Episode {
    row: EpisodeRow,
    wall_ms: f64,
    gt: Annotation,
    prediction: Option<Annotation>,
}

fn read_params(path: Option<&Path>) -> Result<GenParams> {
    match path {
        None => Ok(GenParams::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("malformed generator params {}", p.display()))
        }
    }
}

fn sweep(seeds: &[u64], params: &GenParams, faults: &FaultSpec, config: &EngineConfig) -> Result<Vec<Episode>> {
    // collect preserves input order, so outputs do not depend on scheduling
    seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let run = run_scenario(seed, params, faults, config)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok(Episode { row: run.row(config.stride), wall_ms, gt: run.world.ground_truth(), prediction: run.prediction })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn report(episodes: &[Episode]) -> Result<MetricsReport> {
    let gts: Vec<Annotation> = episodes.iter().map(|e| e.gt.clone()).collect();
    let preds: Vec<Annotation> = episodes.iter().filter_map(|e| e.prediction.clone()).collect();
    Ok(aggregate(&gts, &preds, &DEFAULT_THRESHOLDS)?)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let config = args.engine.resolve_from_env()?;
    let faults = read_faults(args.faults.as_deref())?;
    let params = read_params(args.params.as_deref())?;
    let strides = if args.strides.is_empty() { vec![config.stride] } else { args.strides.clone() };
    let seeds: Vec<u64> = (0..args.episodes).map(|i| args.seed + i).collect();
    // fail on unusable parameters before spinning up workers
    if let Some(&s) = seeds.first() {
        generate(s, &params)?;
    }
    std::fs::create_dir_all(&args.out)?;
    if args.save_scenarios {
        let dir = args.out.join("scenarios");
        std::fs::create_dir_all(&dir)?;
        for &s in &seeds {
            let sc = generate(s, &params)?;
            std::fs::write(dir.join(format!("{}.json", sc.video_id())), serde_json::to_string_pretty(&sc)?)?;
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut sweep_rows = Vec::new();
    let mut walls = Vec::new();
    for &stride in &strides {
        let cfg = EngineConfig { stride, ..config.clone() };
        cfg.validate()?;
        let episodes = pool.install(|| sweep(&seeds, &params, &faults, &cfg))?;
        let metrics = report(&episodes)?;

        let dir = if strides.len() == 1 { args.out.clone() } else { args.out.join(format!("stride_{stride}")) };
        std::fs::create_dir_all(&dir)?;
        metrics.write_per_sample_csv(&dir.join("per_sample.csv"))?;
        metrics.write_aggregate_csv(&dir.join("aggregate.csv"))?;
        write_jsonl(&dir.join("gt.jsonl"), &episodes.iter().map(|e| e.gt.clone()).collect::<Vec<_>>())?;
        write_jsonl(&dir.join("pred.jsonl"), &episodes.iter().filter_map(|e| e.prediction.clone()).collect::<Vec<_>>())?;

        println!("stride {stride}");
        println!("{}", metrics.render());

        let sum = |f: fn(&EpisodeRow) -> u32| episodes.iter().map(|e| u64::from(f(&e.row))).sum::<u64>();
        let propose_total = sum(|r| r.propose);
        let first: u64 = sweep_rows.first().map_or(propose_total, |r: &SweepRow| r.propose_total);
        sweep_rows.push(SweepRow {
            stride,
            episodes: episodes.len(),
            propose_total,
            propose_ratio: if first == 0 { 0.0 } else { propose_total as f64 / first as f64 },
            verify_total: sum(|r| r.verify),
            agent_calls_total: sum(|r| r.agent_calls),
            tracker_calls_total: sum(|r| r.tracker_calls),
            m_tiou: metrics.m_tiou,
            m_viou: metrics.m_viou,
        });
        walls.push(episodes.iter().map(|e| e.wall_ms).sum::<f64>());
        for e in episodes {
            timing.push(TimingRow { seed: e.row.seed, stride, wall_ms: e.wall_ms });
            rows.push(e.row);
        }
    }
    write_csv(&args.out.join("episodes.csv"), &rows)?;
    write_csv(&args.out.join("timing.csv"), &timing)?;
    if strides.len() > 1 {
        // wall time stays in timing.csv so this file is reproducible
        write_csv(&args.out.join("stride_sweep.csv"), &sweep_rows)?;
        for (r, ms) in sweep_rows.iter().zip(&walls) {
            println!("stride {}: {} proposals (ratio {:.3}), {ms:.0} ms", r.stride, r.propose_total, r.propose_ratio);
        }
    }
    Ok(0)
}
