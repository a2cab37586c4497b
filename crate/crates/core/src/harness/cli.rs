//! `aoi-sim` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::burst::burstiness_report;
use super::config::{ExperimentConfig, LoadError};
use super::output::{self, line_chart, RunMeta, Series};
use super::ppo_run::train_and_eval_ppo;
use super::sweep::{sweep_delay, sweep_mat, TradeoffCurve};
use crate::simulator::{self, SimConfig, SimError};

#[derive(Debug, Parser)]
#[command(name = "aoi-sim", version, about = "Timeliness-fidelity simulator for multi-camera scene reconstruction")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration, TOML or JSON (by extension). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fidelity against the maximum acceptable age.
    SweepMat,
    /// Optimal threshold for each mean delay.
    SweepDelay,
    /// Fidelity under two-state bursty traffic.
    Burstiness,
    /// Train the PPO selector and compare it with the best threshold.
    TrainPpo,
    /// One simulation with the configured policy; per-slot records.
    Run,
    /// Check a configuration file and exit.
    ValidateConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        self != Format::Svg
    }

    fn svg(self) -> bool {
        self != Format::Csv
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Runs the command line in `argv` (program name first) and returns the
/// process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(()) => 0,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn load(args: &Args) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

struct Out<'a> {
    dir: &'a Path,
    format: Format,
}

impl Out<'_> {
    fn file(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        std::fs::create_dir_all(self.dir)?;
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn chart(&self, name: &str, svg: impl FnOnce() -> String) -> Result<(), Failure> {
        if self.format.svg() {
            let mut f = self.file(name)?;
            f.write_all(svg().as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    fn meta<C: Serialize>(&self, command: &str, sim: &SimConfig, config: &C) -> Result<(), Failure> {
        std::fs::create_dir_all(self.dir)?;
        let meta = RunMeta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: sim.seed,
            eval_interval: sim.eval_interval,
            eval_offset: sim.eval_offset,
            warmup: sim.warmup,
            horizon: sim.horizon,
            config,
        };
        output::write_json(&meta, &self.dir.join("meta.json"))?;
        Ok(())
    }
}

fn curve_series(curve: &TradeoffCurve, label: &str, key: fn(&super::sweep::CurvePoint) -> f64) -> Series {
    Series::new(label, curve.points.iter().map(|p| (p.axis, key(p))).collect())
}

fn write_curve(out: &Out, stem: &str, curve: &TradeoffCurve, title: &str) -> Result<(), Failure> {
    if out.format.csv() {
        let mut f = out.file(&format!("{stem}.csv"))?;
        output::write_curve_csv(&curve.points, &mut f)?;
    }
    out.chart(&format!("{stem}_psnr.svg"), || {
        line_chart(title, "MAT (ms)", "PSNR (dB)", &[curve_series(curve, "PSNR", |p| p.psnr.mean)])
    })?;
    out.chart(&format!("{stem}_ssim.svg"), || {
        line_chart(title, "MAT (ms)", "SSIM", &[curve_series(curve, "SSIM", |p| p.ssim.mean)])
    })?;
    out.chart(&format!("{stem}_reward.svg"), || {
        line_chart(title, "MAT (ms)", "reward", &[curve_series(curve, "reward", |p| p.reward.mean)])
    })
}

fn execute(args: &Args) -> Result<(), Failure> {
    let cfg = load(args)?;
    let out = Out {
        dir: &args.out,
        format: args.format,
    };
    match args.command {
        Command::ValidateConfig => {
            println!("ok");
            Ok(())
        }
        Command::SweepMat => {
            let curve = sweep_mat(&cfg.sim, &cfg.sweep.gamma_grid(), cfg.sweep.replications)?;
            write_curve(&out, "mat_sweep", &curve, "Fidelity vs. MAT")?;
            out.meta("sweep-mat", &cfg.sim, &cfg)?;
            if let Some(g) = curve.gamma_star() {
                println!("gamma_star_ms {g}");
            }
            Ok(())
        }
        Command::SweepDelay => {
            let points = sweep_delay(&cfg.sim, &cfg.sweep.delays_ms, &cfg.sweep.gamma_grid(), cfg.sweep.replications)?;
            if out.format.csv() {
                output::write_delay_csv(&points, out.file("delay_sweep.csv")?)?;
                for p in &points {
                    output::write_curve_csv(&p.curve.points, out.file(&format!("mat_sweep_delay_{}.csv", p.mean_delay_ms))?)?;
                }
            }
            out.chart("delay_sweep.svg", || {
                let pts = points.iter().map(|p| (p.mean_delay_ms, p.gamma_star)).collect();
                line_chart("Optimal MAT vs. mean delay", "mean delay (ms)", "optimal MAT (ms)", &[Series::new("optimal MAT", pts)])
            })?;
            out.chart("delay_sweep_psnr.svg", || {
                let series: Vec<Series> = points
                    .iter()
                    .map(|p| curve_series(&p.curve, &format!("{} ms", p.mean_delay_ms), |c| c.psnr.mean))
                    .collect();
                line_chart("PSNR vs. MAT per mean delay", "MAT (ms)", "PSNR (dB)", &series)
            })?;
            out.meta("sweep-delay", &cfg.sim, &cfg)?;
            for p in &points {
                println!("mean_delay_ms {} gamma_star_ms {}", p.mean_delay_ms, p.gamma_star);
            }
            Ok(())
        }
        Command::Burstiness => {
            let report = burstiness_report(&cfg.sim, &cfg.burstiness)?;
            if out.format.csv() {
                output::write_burstiness_csv(&report, out.file("burstiness.csv")?)?;
                let mut w = csv::Writer::from_writer(out.file("recovery.csv")?);
                w.write_record(["slots_since_switch", "psnr_mean"])?;
                for (s, p) in &report.recovery_curve {
                    w.serialize((s, p))?;
                }
                w.flush()?;
            }
            out.chart("recovery.svg", || {
                let low = report.psnr_low.mean;
                let span = report.recovery_curve.last().map_or(0.0, |p| p.0);
                line_chart(
                    "PSNR after a switch to low traffic",
                    "slots since switch",
                    "PSNR (dB)",
                    &[
                        Series::new("after switch", report.recovery_curve.clone()),
                        Series::new("low-traffic mean", vec![(0.0, low), (span, low)]),
                    ],
                )
            })?;
            out.meta("burstiness", &cfg.sim, &cfg)?;
            println!(
                "psnr_low {:.3} psnr_high {:.3} recovery_lag_slots {:.1} ci95 [{:.1}, {:.1}]",
                report.psnr_low.mean,
                report.psnr_high.mean,
                report.recovery_lag_slots,
                report.recovery_lag_ci95.0,
                report.recovery_lag_ci95.1
            );
            Ok(())
        }
        Command::TrainPpo => {
            let curve = sweep_mat(&cfg.sim, &cfg.sweep.gamma_grid(), cfg.sweep.replications)?;
            let (report, agent) = train_and_eval_ppo(&cfg.sim, &cfg.ppo, &curve)?;
            std::fs::create_dir_all(out.dir)?;
            agent
                .save(&out.dir.join("policy.json"))
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            if out.format.csv() {
                output::write_curve_csv(&curve.points, out.file("mat_sweep.csv")?)?;
                output::write_methods_csv(&report.rows, out.file("ppo_comparison.csv")?)?;
                output::write_trace_csv(&report.trace, out.file("reward_trace.csv")?)?;
            }
            out.chart("reward_trace.svg", || {
                let w = cfg.ppo.plateau_window.max(1);
                let r = &report.trace.rewards;
                let raw = r.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect();
                let trailing = r
                    .windows(w)
                    .enumerate()
                    .map(|(i, win)| ((i + w) as f64, win.iter().sum::<f64>() / w as f64))
                    .collect();
                let best = report.threshold().reward.mean;
                line_chart(
                    "PPO training reward",
                    "episode",
                    "reward",
                    &[
                        Series::new("episode", raw),
                        Series::new(format!("trailing {w}"), trailing),
                        Series::new("best threshold", vec![(1.0, best), (r.len().max(1) as f64, best)]),
                    ],
                )
            })?;
            out.meta("train-ppo", &cfg.sim, &cfg)?;
            for row in &report.rows {
                println!(
                    "{} psnr {:.3} ssim {:.4} reward {:.4}",
                    row.method, row.psnr.mean, row.ssim.mean, row.reward.mean
                );
            }
            Ok(())
        }
        Command::Run => run_records(&cfg, &out),
    }
}

fn run_records(cfg: &ExperimentConfig, out: &Out) -> Result<(), Failure> {
    let n = cfg.sim.n_cameras;
    let records = simulator::run(cfg.sim.clone())?;
    let mut slots = out.format.csv().then(|| out.file("slots.csv")).transpose()?.map(csv::Writer::from_writer);
    let mut ages = out.format.csv().then(|| out.file("aoi_trace.csv")).transpose()?.map(csv::Writer::from_writer);
    if let Some(w) = slots.as_mut() {
        w.write_record(["slot", "traffic_state", "delivered", "dropped", "selected", "psnr", "ssim", "reward"])?;
    }
    if let Some(w) = ages.as_mut() {
        let header: Vec<String> = std::iter::once("slot".to_string())
            .chain((1..=n).map(|i| format!("age_{i}")))
            .collect();
        w.write_record(&header)?;
    }
    let mut psnr_trace = Vec::new();
    for rec in records {
        let rec = rec?;
        if let Some(ev) = &rec.eval {
            psnr_trace.push((rec.slot as f64, ev.psnr));
        }
        if let Some(w) = slots.as_mut() {
            let ids = |v: Vec<usize>| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
            let (selected, psnr, ssim, reward) = match &rec.eval {
                Some(ev) => (ev.mask.bits(), ev.psnr.to_string(), ev.ssim.to_string(), ev.reward.to_string()),
                None => Default::default(),
            };
            w.write_record([
                rec.slot.to_string(),
                rec.traffic_state.label().to_string(),
                ids(rec.deliveries.iter().map(|f| f.camera_id).collect()),
                ids(rec.drops.clone()),
                selected,
                psnr,
                ssim,
                reward,
            ])?;
        }
        if let Some(w) = ages.as_mut() {
            let row: Vec<String> = std::iter::once(rec.slot.to_string())
                .chain(rec.aoi.ages.iter().map(|a| if a.seeded { a.slots.to_string() } else { String::new() }))
                .collect();
            w.write_record(&row)?;
        }
    }
    for w in [slots.as_mut(), ages.as_mut()].into_iter().flatten() {
        w.flush()?;
    }
    out.chart("run_psnr.svg", || {
        line_chart("PSNR at evaluation slots", "slot", "PSNR (dB)", &[Series::new("PSNR", psnr_trace.clone())])
    })?;
    out.meta("run", &cfg.sim, cfg)?;
    let mean = psnr_trace.iter().map(|p| p.1).sum::<f64>() / psnr_trace.len().max(1) as f64;
    println!("evaluations {} mean_psnr {mean:.3}", psnr_trace.len());
    Ok(())
}
