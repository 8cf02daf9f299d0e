use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::guarantees::BoundCheckReport;

use super::{ScenarioRun, TrialOutcome};

/// `results.csv`: one row per trial. Trials that failed before a check was
/// possible get `NaN` entries and `pass_all = false`.
pub fn write_results_csv<W: Write>(trials: &[TrialOutcome], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(BoundCheckReport::CSV_HEADER)?;
    for t in trials {
        match &t.check {
            Some(check) => wtr.write_record(check.csv_row(t.trial))?,
            None => {
                let mut row = vec![t.trial.to_string(), t.epsilon.to_string(), "NaN".to_string()];
                row.extend(std::iter::repeat_n("NaN".to_string(), 8));
                row.push("false".to_string());
                wtr.write_record(row)?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

/// Log-log plot of the observed `‖x⋆ − x0‖` per trial against the line
/// `Cε`. `None` without stability constants or without a positive `ε`.
pub fn error_vs_eps_svg(run: &ScenarioRun) -> Option<String> {
    let total_c = run.certification.bound.as_ref().ok()?.total_c;
    let points: Vec<(f64, f64)> = run
        .trials
        .iter()
        .filter(|t| t.epsilon > 0.0)
        .filter_map(|t| t.check.as_ref().map(|c| (t.epsilon, c.l2.observed)))
        .filter(|(_, e)| e.is_finite())
        .collect();
    let eps_min = run.config.epsilons.iter().copied().filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
    let eps_max = run.config.epsilons.iter().copied().fold(0.0, f64::max);
    if !eps_min.is_finite() || eps_max <= 0.0 {
        return None;
    }
    let (x_lo, x_hi) = if eps_min < eps_max {
        (eps_min.log10(), eps_max.log10())
    } else {
        (eps_min.log10() - 0.5, eps_min.log10() + 0.5)
    };
    let ys = points
        .iter()
        .map(|p| p.1)
        .filter(|&v| v > 0.0)
        .chain([total_c * eps_min, total_c * eps_max]);
    let (mut y_lo, mut y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v.log10()), hi.max(v.log10()))
    });
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let floor = 10f64.powf(y_lo);
    let sx = |e: f64| MARGIN + (e.log10() - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v.max(floor).log10() - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">epsilon (log10 from {x_lo:.2} to {x_hi:.2})</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="13" transform="rotate(-90 16 {})" text-anchor="middle">error (log10 from {y_lo:.2} to {y_hi:.2})</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="crimson" stroke-width="2"/>"#,
        sx(10f64.powf(x_lo)),
        sy(total_c * 10f64.powf(x_lo)),
        sx(10f64.powf(x_hi)),
        sy(total_c * 10f64.powf(x_hi))
    );
    for (e, v) in &points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
            sx(*e),
            sy(*v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" fill="crimson">C eps, C = {total_c:.4e}</text>"#,
        MARGIN + 10.0,
        MARGIN - 10.0
    );
    let _ = writeln!(svg, "</svg>");
    Some(svg)
}
