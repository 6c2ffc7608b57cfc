//! Static SVG coverage plots: one panel per generator, one series per
//! analysis, dashed guide lines at the nominal level ± 2·MCSE. The CSV
//! is the normative output; plots are a reading aid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use stepwedge::sim::{coverage_mcse, ScenarioResult};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 230.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 150.0;

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#8a4f7d", "#e08d2e", "#3bb2c4", "#6d6d6d", "#a8763e",
];

fn x_pos(i: usize, n: usize) -> f64 {
    let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    if n <= 1 {
        MARGIN_LEFT + span / 2.0
    } else {
        MARGIN_LEFT + span * i as f64 / (n - 1) as f64
    }
}

fn y_pos(v: f64, lo: f64, hi: f64) -> f64 {
    let span = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    MARGIN_TOP + span * (1.0 - (v - lo) / (hi - lo))
}

/// Short scenario caption for an x tick.
fn scenario_label(r: &ScenarioResult) -> String {
    let sc = &r.scenario;
    format!(
        "I{} S{} K{} ({},{}) θ={}",
        sc.design.n_clusters(),
        sc.design.n_sequences(),
        sc.design.per_cell(),
        sc.icc.rho0,
        sc.icc.rho1,
        sc.theta
    )
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render one generator's coverage panel.
fn coverage_panel(generator: &str, results: &[&ScenarioResult], n_reps: usize) -> String {
    // Series keyed by analysis label, in first-seen order via BTreeMap on
    // (model, source, dof) strings for a stable legend.
    let mut series: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        for row in &r.rows {
            if let Some(m) = row.measures {
                let key = format!("{} / {} / {}", row.model.label(), row.source.token(), row.dof.token());
                series.entry(key).or_default().push((i, m.coverage));
            }
        }
    }
    let nominal = 0.95;
    let mcse = coverage_mcse(nominal, n_reps);
    let (guide_lo, guide_hi) = (nominal - 2.0 * mcse, nominal + 2.0 * mcse);
    let mut lo = guide_lo;
    let mut hi = guide_hi;
    for pts in series.values() {
        for &(_, c) in pts {
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    let pad = 0.25 * (hi - lo).max(0.02);
    let lo = (lo - pad).max(0.0);
    let hi = (hi + pad).min(1.0);
    let n = results.len();

    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="22" font-size="15" text-anchor="middle">Coverage by scenario — generator {}</text>
"#,
        MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / 2.0,
        svg_escape(generator),
    );

    // Axes.
    let x0 = MARGIN_LEFT - 8.0;
    let x1 = WIDTH - MARGIN_RIGHT + 8.0;
    let y_bottom = HEIGHT - MARGIN_BOTTOM;
    let _ = write!(
        s,
        r##"<line x1="{x0}" y1="{y_bottom}" x2="{x1}" y2="{y_bottom}" stroke="#333"/>
<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y_bottom}" stroke="#333"/>
"##
    );

    // Y ticks on a step that yields roughly 6 labels.
    let raw_step = (hi - lo) / 6.0;
    let step = [0.005, 0.01, 0.02, 0.05, 0.1]
        .into_iter()
        .find(|&c| c >= raw_step)
        .unwrap_or(0.1);
    let mut tick = (lo / step).ceil() * step;
    while tick <= hi + 1e-12 {
        let y = y_pos(tick, lo, hi);
        let _ = write!(
            s,
            r##"<line x1="{}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/>
<text x="{}" y="{}" text-anchor="end">{:.1}%</text>
"##,
            x0,
            x0 - 6.0,
            y + 4.0,
            100.0 * tick
        );
        tick += step;
    }

    // Nominal line and its ± 2·MCSE band, dashed.
    for (v, dash, color, label) in [
        (nominal, "none", "#333", "95%"),
        (guide_lo, "6 4", "#888", "95% − 2·MCSE"),
        (guide_hi, "6 4", "#888", "95% + 2·MCSE"),
    ] {
        if v < lo || v > hi {
            continue;
        }
        let y = y_pos(v, lo, hi);
        let dash_attr = if dash == "none" { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
        let _ = write!(
            s,
            r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="{color}"{dash_attr}/>
<text x="{}" y="{}" fill="{color}">{label}</text>
"#,
            x1 + 4.0,
            y + 4.0,
        );
    }

    // X ticks, rotated captions.
    for (i, r) in results.iter().enumerate() {
        let x = x_pos(i, n);
        let _ = write!(
            s,
            r##"<line x1="{x}" y1="{y_bottom}" x2="{x}" y2="{}" stroke="#333"/>
<text transform="translate({},{}) rotate(45)" text-anchor="start">{}</text>
"##,
            y_bottom + 5.0,
            x - 4.0,
            y_bottom + 16.0,
            svg_escape(&scenario_label(r)),
        );
    }

    // Series.
    for (si, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(i, c)| format!("{:.2},{:.2}", x_pos(i, n), y_pos(c, lo, hi)))
            .collect();
        if path.len() > 1 {
            let _ = write!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>
"#,
                path.join(" ")
            );
        }
        for &(i, c) in pts {
            let _ = write!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>
"#,
                x_pos(i, n),
                y_pos(c, lo, hi)
            );
        }
        // Legend entry.
        let ly = MARGIN_TOP + 18.0 * si as f64;
        let lx = WIDTH - MARGIN_RIGHT + 70.0;
        let _ = write!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>
<text x="{}" y="{}">{}</text>
"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            svg_escape(label),
        );
    }

    s.push_str("</svg>\n");
    s
}

/// Write one coverage SVG per generator into `dir`.
pub fn write_coverage_plots(dir: &Path, results: &[ScenarioResult], n_reps: usize) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
    let mut by_generator: BTreeMap<String, Vec<&ScenarioResult>> = BTreeMap::new();
    for r in results {
        by_generator
            .entry(r.scenario.generator.token().to_string())
            .or_default()
            .push(r);
    }
    for (generator, group) in &by_generator {
        let path = dir.join(format!("coverage_{}.svg", generator.to_lowercase()));
        let svg = coverage_panel(generator, group, n_reps);
        std::fs::write(&path, svg).with_context(|| format!("write {}", path.display()))?;
    }
    Ok(())
}
