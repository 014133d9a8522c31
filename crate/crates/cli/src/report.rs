//! Deterministic CSV and SVG emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::eval::EvalReport;
use crate::rollout::EpisodeTrace;
use crate::CliError;

pub const CSV_HEADER: &str =
    "variant,task,mode,success_rate,smoothness_mean,episodes,seed_bank_id";

/// One CSV row per evaluation cell; byte-deterministic for fixed inputs.
pub fn write_csv(path: &Path, report: &EvalReport) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for c in &report.cells {
        writeln!(
            w,
            "{},{},{},{:.3},{:.9e},{},{}",
            c.variant,
            c.task.name(),
            c.mode.name(),
            c.success_rate,
            c.smoothness_mean,
            c.episodes,
            c.seed_bank
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Three-panel SVG of an end-effector path: xy, xz, and yz projections.
/// Output bytes depend only on the trace.
pub fn trace_svg(trace: &EpisodeTrace) -> String {
    const PANEL: f64 = 220.0;
    const MARGIN: f64 = 20.0;
    let width = 3.0 * PANEL + 4.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN + 18.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN:.0}\" y=\"14\" font-family=\"monospace\" font-size=\"12\">{} {} seed={} success={} steps={}</text>\n",
        trace.task.name(),
        trace.mode.name(),
        trace.seed,
        trace.success,
        trace.steps_used
    ));
    // panel projections: (x, y), (x, z), (y, z); workspace x/y in [0,1],
    // z in [0, 0.25] scaled by 4 to match
    let projs: [(&str, Box<dyn Fn(&(f64, f64, f64)) -> (f64, f64)>); 3] = [
        ("xy", Box::new(|p: &(f64, f64, f64)| (p.0, p.1))),
        ("xz", Box::new(|p: &(f64, f64, f64)| (p.0, p.2 * 4.0))),
        ("yz", Box::new(|p: &(f64, f64, f64)| (p.1, p.2 * 4.0))),
    ];
    for (i, (label, proj)) in projs.iter().enumerate() {
        let x0 = MARGIN + i as f64 * (PANEL + MARGIN);
        let y0 = MARGIN + 18.0;
        svg.push_str(&format!(
            "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{PANEL:.0}\" height=\"{PANEL:.0}\" fill=\"none\" stroke=\"#888\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\">{label}</text>\n",
            x0 + 4.0,
            y0 + 12.0
        ));
        let pts: Vec<String> = trace
            .path
            .iter()
            .map(|p| {
                let (u, v) = proj(p);
                format!("{:.2},{:.2}", x0 + u * PANEL, y0 + (1.0 - v) * PANEL)
            })
            .collect();
        if pts.len() >= 2 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1a6fb0\" stroke-width=\"1.2\"/>\n",
                pts.join(" ")
            ));
        }
        if let Some(first) = pts.first() {
            let (cx, cy) = first.split_once(',').unwrap();
            svg.push_str(&format!(
                "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"#2a9d2a\"/>\n"
            ));
        }
        if let Some(last) = pts.last() {
            let (cx, cy) = last.split_once(',').unwrap();
            svg.push_str(&format!(
                "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"#c03030\"/>\n"
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, trace: &EpisodeTrace) -> Result<(), CliError> {
    std::fs::write(path, trace_svg(trace))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::EvalCell;
    use sceneflow_sim::{InitMode, TaskId};

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&path, &EvalReport::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn one_cell_one_row() {
        let report = EvalReport {
            cells: vec![EvalCell {
                variant: "baseline".into(),
                task: TaskId::PushToGoal,
                mode: InitMode::Rand,
                success_rate: 87.5,
                smoothness_mean: 1.25e-4,
                episode_len_mean: 40.0,
                episodes: 8,
                seed_bank: 42,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "baseline,push-to-goal,rand,87.500,1.250000000e-4,8,42");
    }

    #[test]
    fn svg_regeneration_is_byte_identical() {
        let trace = crate::rollout::EpisodeTrace {
            task: TaskId::WipeCells,
            mode: InitMode::Clean,
            seed: 3,
            carry: true,
            chunks: Vec::new(),
            path: (0..20)
                .map(|i| (0.1 + 0.02 * i as f64, 0.5, 0.1 + 0.001 * i as f64))
                .collect(),
            success: true,
            steps_used: 20,
        };
        assert_eq!(trace_svg(&trace), trace_svg(&trace));
        assert!(trace_svg(&trace).contains("polyline"));
    }
}
