//! CSV tables, SVG line charts and run metadata.
//!
//! Floats are written in their shortest round-trip form, so reading a
//! table back gives the same values bit for bit.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::burst::BurstinessReport;
use super::ppo_run::MethodRow;
use super::stats::MeanStd;
use super::sweep::{CurvePoint, DelayPoint};
use crate::policy::ppo::TrainLog;

pub const CURVE_HEADER: &str = "gamma_ms,psnr_mean,psnr_std,ssim_mean,ssim_std,reward_mean,reward_std";

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    gamma_ms: f64,
    psnr_mean: f64,
    psnr_std: f64,
    ssim_mean: f64,
    ssim_std: f64,
    reward_mean: f64,
    reward_std: f64,
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(CurveRow {
            gamma_ms: p.axis,
            psnr_mean: p.psnr.mean,
            psnr_std: p.psnr.std,
            ssim_mean: p.ssim.mean,
            ssim_std: p.ssim.std,
            reward_mean: p.reward.mean,
            reward_std: p.reward.std,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: Read>(r: R) -> csv::Result<Vec<CurvePoint>> {
    csv::Reader::from_reader(r)
        .deserialize::<CurveRow>()
        .map(|row| {
            let row = row?;
            Ok(CurvePoint {
                axis: row.gamma_ms,
                psnr: MeanStd { mean: row.psnr_mean, std: row.psnr_std },
                ssim: MeanStd { mean: row.ssim_mean, std: row.ssim_std },
                reward: MeanStd { mean: row.reward_mean, std: row.reward_std },
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DelayRow {
    mean_delay_ms: f64,
    gamma_star_ms: f64,
    psnr_at_gamma_star: f64,
}

pub fn write_delay_csv<W: Write>(points: &[DelayPoint], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        let best = p.curve.best_index().map_or(f64::NAN, |i| p.curve.points[i].psnr.mean);
        out.serialize(DelayRow {
            mean_delay_ms: p.mean_delay_ms,
            gamma_star_ms: p.gamma_star,
            psnr_at_gamma_star: best,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MethodCsvRow<'a> {
    method: &'a str,
    gamma_ms: Option<f64>,
    psnr_mean: f64,
    psnr_std: f64,
    ssim_mean: f64,
    ssim_std: f64,
    reward_mean: f64,
    reward_std: f64,
}

pub fn write_methods_csv<W: Write>(rows: &[MethodRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(MethodCsvRow {
            method: &r.method,
            gamma_ms: r.gamma_ms,
            psnr_mean: r.psnr.mean,
            psnr_std: r.psnr.std,
            ssim_mean: r.ssim.mean,
            ssim_std: r.ssim.std,
            reward_mean: r.reward.mean,
            reward_std: r.reward.std,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// `episode,reward,psnr,ssim`, episodes counted from 1.
pub fn write_trace_csv<W: Write>(log: &TrainLog, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "reward", "psnr", "ssim"])?;
    for (i, ((r, p), s)) in log.rewards.iter().zip(&log.psnr).zip(&log.ssim).enumerate() {
        out.serialize((i + 1, r, p, s))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BurstRow {
    mean_delay_low: f64,
    mean_delay_high: f64,
    psnr_low_mean: f64,
    psnr_low_std: f64,
    psnr_high_mean: f64,
    psnr_high_std: f64,
    raw_lag_slots: f64,
    control_lag_slots: f64,
    recovery_lag_slots: f64,
    recovery_lag_ci95_lo: f64,
    recovery_lag_ci95_hi: f64,
    switches: usize,
    censored: usize,
    low_share: f64,
}

pub fn write_burstiness_csv<W: Write>(b: &BurstinessReport, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.serialize(BurstRow {
        mean_delay_low: b.mean_delay_low,
        mean_delay_high: b.mean_delay_high,
        psnr_low_mean: b.psnr_low.mean,
        psnr_low_std: b.psnr_low.std,
        psnr_high_mean: b.psnr_high.mean,
        psnr_high_std: b.psnr_high.std,
        raw_lag_slots: b.raw_lag_slots,
        control_lag_slots: b.control_lag_slots,
        recovery_lag_slots: b.recovery_lag_slots,
        recovery_lag_ci95_lo: b.recovery_lag_ci95.0,
        recovery_lag_ci95_hi: b.recovery_lag_ci95.1,
        switches: b.switches,
        censored: b.censored,
        low_share: b.low_share,
    })?;
    out.flush()?;
    Ok(())
}

/// One line of a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Static line chart with axes, five ticks per axis and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{L} {T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(x),
            H - B + 16.0,
            tick(x)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            L - 6.0,
            sy(y) + 4.0,
            tick(y)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (L + W - R) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let ly = T + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{}</text>"#,
            W - R - 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Written next to every output set.
#[derive(Clone, Debug, Serialize)]
pub struct RunMeta<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    /// Evaluation protocol: scored slots are `t >= warmup` with
    /// `t % eval_interval == eval_offset`.
    pub eval_interval: u64,
    pub eval_offset: u64,
    pub warmup: u64,
    pub horizon: u64,
    pub config: &'a C,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(axis: f64, k: f64) -> CurvePoint {
        let ms = |m: f64| MeanStd { mean: m, std: m / 7.0 };
        CurvePoint {
            axis,
            psnr: ms(20.0 + k / 3.0),
            ssim: ms(0.1 * k + 1e-17),
            reward: ms(-k / 11.0),
        }
    }

    #[test]
    fn curve_csv_round_trips_exactly() {
        let pts: Vec<CurvePoint> = (0..21).map(|i| point(i as f64 * 6.0, i as f64 + 0.1)).collect();
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next(), Some(CURVE_HEADER));
        assert_eq!(read_curve_csv(&buf[..]).unwrap(), pts);
    }

    #[test]
    fn trace_csv_counts_from_one() {
        let log = TrainLog {
            rewards: vec![0.5, 0.25],
            psnr: vec![20.0, 21.0],
            ssim: vec![0.5, 0.75],
            updates: vec![],
        };
        let mut buf = Vec::new();
        write_trace_csv(&log, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "episode,reward,psnr,ssim\n1,0.5,20.0,0.5\n2,0.25,21.0,0.75\n"
        );
    }

    #[test]
    fn chart_is_well_formed_and_escaped() {
        let svg = line_chart(
            "a < b",
            "x",
            "y",
            &[Series::new("one", vec![(0.0, 1.0), (1.0, 2.0)]), Series::new("flat", vec![(0.0, 3.0)])],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
