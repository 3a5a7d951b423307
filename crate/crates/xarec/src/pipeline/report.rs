//! Human-readable report rendering: markdown tables, CSV, and simple SVG
//! bar charts for the benchmark and classifier evaluation artifacts.

use std::fmt::Write as _;
use std::path::Path;

use crate::classifier::EvalReport;
use crate::eval::BenchmarkReport;
use crate::explain::Method;
use crate::ingest::SensorKind;

use super::PipelineError;

/// Per-class precision/recall/F1 table in the reference layout.
pub fn render_eval_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("| Activity | Precision | Recall | F1-Score |\n");
    out.push_str("|---|---|---|---|\n");
    for c in &report.per_class {
        let _ = writeln!(out, "| {} | {:.2} | {:.2} | {:.2} |", c.label, c.precision, c.recall, c.f1);
    }
    let _ = writeln!(
        out,
        "| Average | {:.2} | {:.2} | {:.2} |",
        report.macro_precision, report.macro_recall, report.macro_f1
    );
    let _ = writeln!(out, "\nSamples: {}, accuracy {:.3}", report.samples, report.accuracy);
    out
}

pub fn render_benchmark_markdown(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    out.push_str("## Explanation accuracy and cost\n\n");
    out.push_str("| Method | EAcc% | Classified | Mean s/instance | Std s |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (method, r) in &report.per_method {
        let _ = writeln!(
            out,
            "| {} | {:.1} | {} | {:.2} | {:.2} |",
            method, r.eacc_pct, r.classified, r.timing.mean_seconds, r.timing.std_seconds
        );
    }
    out.push_str("\n## Sensor types used (share of features, %)\n\n");
    out.push_str("| Method | Door | Motion | Temperature |\n");
    out.push_str("|---|---|---|---|\n");
    for (method, r) in &report.per_method {
        let g = |k: SensorKind| r.content.feature_type_pct.get(&k).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "| {} | {:.1} | {:.1} | {:.1} |",
            method,
            g(SensorKind::Door),
            g(SensorKind::Motion),
            g(SensorKind::Temperature)
        );
    }
    out.push_str("\n## Motion polarity (share of motion features, %)\n\n");
    out.push_str("| Method | Presence | Absence |\n");
    out.push_str("|---|---|---|\n");
    for (method, r) in &report.per_method {
        let _ = writeln!(out, "| {} | {:.1} | {:.1} |", method, r.content.motion_presence_pct, r.content.motion_absence_pct);
    }
    let _ = writeln!(
        out,
        "\nInstances: {}; all-methods-accurate subset: {}",
        report.instances,
        report.all_accurate_instances.len()
    );
    out
}

pub fn write_benchmark_csv(report: &BenchmarkReport, path: &Path) -> Result<(), PipelineError> {
    let mut out = String::from("method,eacc_pct,classified,accurate,mean_seconds,std_seconds,door_pct,motion_pct,temperature_pct,presence_pct,absence_pct\n");
    for (method, r) in &report.per_method {
        let g = |k: SensorKind| r.content.feature_type_pct.get(&k).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{},{:.3},{},{},{:.4},{:.4},{:.2},{:.2},{:.2},{:.2},{:.2}",
            method,
            r.eacc_pct,
            r.classified,
            r.accurate,
            r.timing.mean_seconds,
            r.timing.std_seconds,
            g(SensorKind::Door),
            g(SensorKind::Motion),
            g(SensorKind::Temperature),
            r.content.motion_presence_pct,
            r.content.motion_absence_pct
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Minimal grouped bar chart, one bar per method.
fn bar_chart(title: &str, bars: &[(String, f64)], unit: &str) -> String {
    let width = 520.0;
    let height = 300.0;
    let margin = 50.0;
    let max = bars.iter().map(|(_, v)| *v).fold(1e-9, f64::max);
    let bw = (width - 2.0 * margin) / bars.len() as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">{title}</text>\n",
        width / 2.0
    );
    for (i, (label, value)) in bars.iter().enumerate() {
        let h = (height - 2.0 * margin) * value / max;
        let x = margin + i as f64 * bw + bw * 0.15;
        let y = height - margin - h;
        let _ = write!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#4878a8\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">{value:.1}{unit}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">{label}</text>\n",
            bw * 0.7,
            x + bw * 0.35,
            y - 6.0,
            x + bw * 0.35,
            height - margin + 16.0,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write bar charts mirroring the benchmark figures: accuracy, timing,
/// sensor-type share, and motion polarity.
pub fn write_svg_charts(report: &BenchmarkReport, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    let methods: Vec<(Method, &crate::eval::MethodReport)> = report.per_method.iter().map(|(m, r)| (*m, r)).collect();
    let eacc: Vec<(String, f64)> = methods.iter().map(|(m, r)| (m.to_string(), r.eacc_pct)).collect();
    std::fs::write(dir.join("eacc.svg"), bar_chart("Accurate explanations", &eacc, "%"))?;
    let timing: Vec<(String, f64)> = methods.iter().map(|(m, r)| (m.to_string(), r.timing.mean_seconds)).collect();
    std::fs::write(dir.join("timing.svg"), bar_chart("Seconds per explanation", &timing, "s"))?;
    let absence: Vec<(String, f64)> = methods.iter().map(|(m, r)| (m.to_string(), r.content.motion_absence_pct)).collect();
    std::fs::write(dir.join("polarity.svg"), bar_chart("Motion absence share", &absence, "%"))?;
    let motion: Vec<(String, f64)> = methods
        .iter()
        .map(|(m, r)| (m.to_string(), r.content.feature_type_pct.get(&SensorKind::Motion).copied().unwrap_or(0.0)))
        .collect();
    std::fs::write(dir.join("sensor_types.svg"), bar_chart("Motion-sensor feature share", &motion, "%"))?;
    Ok(())
}
