//! Per-run CSV files, summary tables and SVG plots.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::config::Method;
use super::trace::{read_csv, write_csv, RoundTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    /// Final cumulative simulated time, in seconds.
    pub total_time: f64,
    /// Energy spent by all devices, in joules.
    pub total_energy: f64,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
}

pub fn summarize(traces: &[RoundTrace]) -> Result<RunSummary> {
    let last = traces.last().ok_or_else(|| Error::Data("empty trace".into()))?;
    let accuracies: Vec<f64> = traces.iter().filter_map(|t| t.test_accuracy).collect();
    Ok(RunSummary {
        method: last.method,
        seed: last.seed,
        total_time: last.cumulative_time,
        total_energy: last.total_energy(),
        best_accuracy: accuracies.iter().copied().fold(f64::NAN, f64::max),
        final_accuracy: accuracies.last().copied().unwrap_or(f64::NAN),
    })
}

pub fn run_file_name(method: Method, seed: u64) -> String {
    format!("{method}_seed{seed}.csv")
}

pub fn write_run(out_dir: &Path, traces: &[RoundTrace]) -> Result<PathBuf> {
    let first = traces.first().ok_or_else(|| Error::Data("empty trace".into()))?;
    let path = out_dir.join(run_file_name(first.method, first.seed));
    write_csv(BufWriter::new(File::create(&path)?), traces)?;
    Ok(path)
}

/// Reads every `<method>_seed<k>.csv` in `dir`, ordered by method then seed.
pub fn load_runs(dir: &Path) -> Result<Vec<Vec<RoundTrace>>> {
    let mut runs = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".csv") && name.contains("_seed") {
            let traces = read_csv(File::open(&path)?)?;
            if !traces.is_empty() {
                runs.push(traces);
            }
        }
    }
    runs.sort_by_key(|r: &Vec<RoundTrace>| (r[0].method, r[0].seed));
    Ok(runs)
}

pub fn write_summary(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "seed", "time_s", "energy_j", "best_accuracy", "final_accuracy"])?;
    for s in summaries {
        w.write_record([
            s.method.to_string(),
            s.seed.to_string(),
            format!("{:.16e}", s.total_time),
            format!("{:.16e}", s.total_energy),
            format!("{:.16e}", s.best_accuracy),
            format!("{:.16e}", s.final_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Means over seeds, one row per method.
pub fn write_method_summary(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut by_method: BTreeMap<Method, Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        by_method.entry(s.method).or_default().push(s);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "runs", "mean_time_s", "mean_energy_j", "mean_best_accuracy", "mean_final_accuracy"])?;
    for (m, runs) in by_method {
        let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(|s| f(s)).sum::<f64>() / runs.len() as f64;
        w.write_record([
            m.to_string(),
            runs.len().to_string(),
            format!("{:.6e}", mean(|s| s.total_time)),
            format!("{:.6e}", mean(|s| s.total_energy)),
            format!("{:.4}", mean(|s| s.best_accuracy)),
            format!("{:.4}", mean(|s| s.final_accuracy)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn method_color(m: Method) -> RGBColor {
    match m {
        Method::FedRt => RGBColor(214, 39, 40),
        Method::StaticR => RGBColor(31, 119, 180),
        Method::StaticT => RGBColor(44, 160, 44),
        Method::CeFedAvg => RGBColor(127, 127, 127),
        Method::MllSgd => RGBColor(148, 103, 189),
    }
}

type Series = (Method, Vec<(f64, f64)>);

fn plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let perr = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", path.display()));
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x0 <= x1 && y0 <= y1) {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| if hi > lo { (hi - lo) * 0.02 } else { lo.abs().max(1.0) * 0.05 };
    let (px, py) = (pad(x0, x1), pad(y0, y1));

    let root = SVGBackend::new(path, (900, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| perr(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0 - px..x1 + px, y0 - py..y1 + py)
        .map_err(|e| perr(&e))?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(|e| perr(&e))?;
    let mut labelled = Vec::new();
    for (m, pts) in series {
        let color = method_color(*m);
        let s = chart.draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2))).map_err(|e| perr(&e))?;
        if !labelled.contains(m) {
            labelled.push(*m);
            s.label(m.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(|e| perr(&e))?;
    root.present().map_err(|e| perr(&e))?;
    Ok(())
}

/// Accuracy and loss against simulated time, and energy against edge rounds.
pub fn plot_runs(runs: &[Vec<RoundTrace>], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let per_global = |f: fn(&RoundTrace) -> Option<f64>| -> Vec<Series> {
        runs.iter()
            .map(|tr| {
                let pts = tr.iter().filter_map(|t| f(t).map(|y| (t.cumulative_time, y))).collect();
                (tr[0].method, pts)
            })
            .collect()
    };
    let energy: Vec<Series> = runs
        .iter()
        .map(|tr| (tr[0].method, tr.iter().enumerate().map(|(i, t)| ((i + 1) as f64, t.total_energy())).collect()))
        .collect();
    let out = [
        ("accuracy_vs_time.svg", "Test accuracy", "simulated time (s)", "accuracy", per_global(|t| t.test_accuracy)),
        ("loss_vs_time.svg", "Training loss", "simulated time (s)", "cross-entropy", per_global(|t| t.train_loss)),
        ("energy_vs_round.svg", "Cumulative device energy", "edge round", "energy (J)", energy),
    ];
    let mut paths = Vec::new();
    for (file, title, xl, yl, series) in out {
        let p = out_dir.join(file);
        plot(&p, title, xl, yl, &series)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Summary tables and plots for runs already on disk or in memory.
pub fn write_report(runs: &[Vec<RoundTrace>], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let summaries = runs.iter().map(|r| summarize(r)).collect::<Result<Vec<_>>>()?;
    let summary = out_dir.join("summary.csv");
    write_summary(&summary, &summaries)?;
    let by_method = out_dir.join("summary_by_method.csv");
    write_method_summary(&by_method, &summaries)?;
    let mut paths = vec![summary, by_method];
    paths.extend(plot_runs(runs, out_dir)?);
    Ok(paths)
}

/// Writes one CSV per run plus the summary tables and plots.
pub fn emit_outputs(runs: &[Vec<RoundTrace>], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for r in runs {
        paths.push(write_run(out_dir, r)?);
    }
    paths.extend(write_report(runs, out_dir)?);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::super::trace::tests::sample;
    use super::*;

    #[test]
    fn outputs_round_trip_and_summarize() {
        let dir = tempfile::tempdir().unwrap();
        let run = vec![sample(0, 0, false), sample(0, 1, true), sample(1, 0, false), sample(1, 1, true)];
        let paths = emit_outputs(std::slice::from_ref(&run), dir.path()).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
        let loaded = load_runs(dir.path()).unwrap();
        assert_eq!(loaded, vec![run.clone()]);
        let s = summarize(&run).unwrap();
        assert_eq!(s.total_time, run.last().unwrap().cumulative_time);
        assert_eq!(s.best_accuracy, 0.91);
        let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let row = text.lines().nth(1).unwrap();
        let time: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(time, run.last().unwrap().cumulative_time);
        let svg = std::fs::read_to_string(dir.path().join("accuracy_vs_time.svg")).unwrap();
        assert!(svg.contains("<svg") && svg.contains("static-t"));
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        std::fs::write(&file, "x").unwrap();
        let run = vec![sample(0, 0, true)];
        assert!(matches!(emit_outputs(&[run], &file), Err(Error::Io(_))));
    }
}
