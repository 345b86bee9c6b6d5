//! Static SVG 1.1 emission for memory-function ribbon plots and paired
//! posterior density comparisons. Coordinates are computed directly from
//! the summaries; no plotting dependency.

use std::fmt::Write;

use ecomem::diagnostics::{EffectComparison, MemoryFunction};
use ecomem::GroundTruth;

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 40.0;

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        let f = (v - self.min) / (self.max - self.min);
        self.lo_px + f * (self.hi_px - self.lo_px)
    }
}

fn fmt_px(v: f64) -> String {
    format!("{:.2}", v)
}

fn polyline(points: &[(f64, f64)], class: &str, style: &str) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{},{}", fmt_px(*x), fmt_px(*y)))
        .collect();
    format!(
        "<polyline class=\"{class}\" points=\"{}\" style=\"{style}\"/>\n",
        pts.join(" ")
    )
}

fn polygon(points: &[(f64, f64)], class: &str, style: &str) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{},{}", fmt_px(*x), fmt_px(*y)))
        .collect();
    format!(
        "<polygon class=\"{class}\" points=\"{}\" style=\"{style}\"/>\n",
        pts.join(" ")
    )
}

fn axes(out: &mut String, y0: f64, xs: &Scale, ys: &Scale, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        fmt_px(xs.lo_px),
        fmt_px(y0 + PANEL_H - MARGIN_B),
        fmt_px(xs.hi_px),
        fmt_px(y0 + PANEL_H - MARGIN_B)
    );
    let _ = write!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        fmt_px(xs.lo_px),
        fmt_px(ys.map(ys.min)),
        fmt_px(xs.lo_px),
        fmt_px(ys.map(ys.max))
    );
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{x_label}</text>\n",
        fmt_px((xs.lo_px + xs.hi_px) / 2.0),
        fmt_px(y0 + PANEL_H - 8.0)
    );
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{y_label}</text>\n",
        fmt_px(14.0),
        fmt_px(y0 + PANEL_H / 2.0),
        fmt_px(14.0),
        fmt_px(y0 + PANEL_H / 2.0)
    );
    // y tick labels at min / mid / max
    for v in [ys.min, (ys.min + ys.max) / 2.0, ys.max] {
        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"end\">{v:.2}</text>\n",
            fmt_px(xs.lo_px - 4.0),
            fmt_px(ys.map(v) + 3.0)
        );
    }
}

/// One ribbon panel per memory covariate: posterior-mean weight curve,
/// shaded credible band, threshold reference line, and an optional truth
/// overlay.
pub fn memory_plot(mems: &[MemoryFunction], truth: Option<&GroundTruth>) -> String {
    let n = mems.len().max(1);
    let total_h = PANEL_H * n as f64;
    let mut out = String::new();
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{PANEL_W}\" height=\"{total_h}\" viewBox=\"0 0 {PANEL_W} {total_h}\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, mem) in mems.iter().enumerate() {
        let y0 = PANEL_H * i as f64;
        let max_lag = mem.lags.len().saturating_sub(1) as f64;
        let top = mem
            .lags
            .iter()
            .map(|l| l.upper)
            .chain(
                truth
                    .and_then(|t| t.weights.get(&mem.var))
                    .into_iter()
                    .flatten()
                    .cloned(),
            )
            .fold(mem.threshold, f64::max);
        let xs = Scale {
            min: 0.0,
            max: max_lag.max(1.0),
            lo_px: MARGIN_L,
            hi_px: PANEL_W - MARGIN_R,
        };
        let ys = Scale {
            min: 0.0,
            max: top * 1.05,
            lo_px: y0 + PANEL_H - MARGIN_B,
            hi_px: y0 + MARGIN_T,
        };

        let _ = write!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" font-weight=\"bold\">{}</text>\n",
            fmt_px(MARGIN_L),
            fmt_px(y0 + 18.0),
            mem.var
        );
        let _ = write!(
            out,
            "<text class=\"subtitle\" x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#555\">{:.0}% credible band</text>\n",
            fmt_px(MARGIN_L),
            fmt_px(y0 + 31.0),
            mem.cred_level * 100.0
        );

        // band: upper path forward, lower path back
        let mut band: Vec<(f64, f64)> = mem
            .lags
            .iter()
            .map(|l| (xs.map(l.lag as f64), ys.map(l.upper.min(ys.max))))
            .collect();
        band.extend(
            mem.lags
                .iter()
                .rev()
                .map(|l| (xs.map(l.lag as f64), ys.map(l.lower.max(0.0)))),
        );
        out.push_str(&polygon(
            &band,
            "band",
            "fill:#9ecae1;fill-opacity:0.55;stroke:none",
        ));

        let mean: Vec<(f64, f64)> = mem
            .lags
            .iter()
            .map(|l| (xs.map(l.lag as f64), ys.map(l.mean)))
            .collect();
        out.push_str(&polyline(
            &mean,
            "mean",
            "fill:none;stroke:#08519c;stroke-width:1.8",
        ));

        if let Some(w) = truth.and_then(|t| t.weights.get(&mem.var)) {
            let pts: Vec<(f64, f64)> = w
                .iter()
                .enumerate()
                .map(|(lag, &v)| (xs.map(lag as f64), ys.map(v.min(ys.max))))
                .collect();
            out.push_str(&polyline(
                &pts,
                "truth",
                "fill:none;stroke:#d62728;stroke-width:1.4;stroke-dasharray:5 2",
            ));
        }

        let ty = ys.map(mem.threshold);
        let _ = write!(
            out,
            "<line class=\"threshold\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\" stroke-dasharray=\"3 3\"/>\n",
            fmt_px(xs.lo_px),
            fmt_px(ty),
            fmt_px(xs.hi_px),
            fmt_px(ty)
        );

        axes(&mut out, y0, &xs, &ys, "lag", "weight");
        // x tick labels at integer lags (thinned if many)
        let step = if max_lag > 15.0 { 2 } else { 1 };
        for lag in (0..mem.lags.len()).step_by(step) {
            let _ = write!(
                out,
                "<text x=\"{}\" y=\"{}\" font-size=\"9\" text-anchor=\"middle\">{lag}</text>\n",
                fmt_px(xs.map(lag as f64)),
                fmt_px(y0 + PANEL_H - MARGIN_B + 12.0)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Gaussian kernel density over an even grid; bandwidth by Silverman's
/// rule.
fn kde(draws: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bw = (0.9 * sd * n.powf(-0.2)).max(1e-12);
    grid.iter()
        .map(|&g| {
            draws
                .iter()
                .map(|&d| {
                    let z = (g - d) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                / (n * bw * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect()
}

/// Overlaid posterior densities of one coefficient from the memory fit and
/// the no-memory baseline.
pub fn compare_plot(cmp: &EffectComparison) -> String {
    let all: Vec<f64> = cmp
        .fit_draws
        .iter()
        .chain(cmp.baseline_draws.iter())
        .cloned()
        .collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = (hi - lo).max(1e-9) * 0.15;
    let grid: Vec<f64> = (0..240)
        .map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 239.0)
        .collect();
    let d_fit = kde(&cmp.fit_draws, &grid);
    let d_base = kde(&cmp.baseline_draws, &grid);
    let peak = d_fit
        .iter()
        .chain(d_base.iter())
        .cloned()
        .fold(1e-12, f64::max);

    let xs = Scale {
        min: grid[0],
        max: *grid.last().unwrap(),
        lo_px: MARGIN_L,
        hi_px: PANEL_W - MARGIN_R,
    };
    let ys = Scale {
        min: 0.0,
        max: peak * 1.05,
        lo_px: PANEL_H - MARGIN_B,
        hi_px: MARGIN_T,
    };

    let mut out = String::new();
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" viewBox=\"0 0 {PANEL_W} {PANEL_H}\">\n"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"18\" font-size=\"13\" font-weight=\"bold\">{} effect: memory vs lag-0 baseline</text>\n",
        fmt_px(MARGIN_L),
        cmp.term
    );

    for (dens, class, color) in [
        (&d_fit, "density-fit", "#08519c"),
        (&d_base, "density-baseline", "#d62728"),
    ] {
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .zip(dens.iter())
            .map(|(&g, &d)| (xs.map(g), ys.map(d)))
            .collect();
        out.push_str(&polyline(
            &pts,
            class,
            &format!("fill:none;stroke:{color};stroke-width:1.8"),
        ));
    }
    // zero reference if in range
    if xs.min < 0.0 && xs.max > 0.0 {
        let zx = xs.map(0.0);
        let _ = write!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\" stroke-dasharray=\"3 3\"/>\n",
            fmt_px(zx),
            fmt_px(ys.lo_px),
            fmt_px(zx),
            fmt_px(ys.hi_px)
        );
    }
    axes(
        &mut out,
        0.0,
        &xs,
        &ys,
        &format!("beta.{}", cmp.term),
        "density",
    );
    out.push_str("</svg>\n");
    out
}
