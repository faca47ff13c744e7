//! Evaluation artifacts: report files, confusion dump, prototype-weight
//! exports, and self-contained SVG charts with their data embedded as
//! comments.

use std::fs;

use crate::config::ExperimentConfig;
use crate::data::{ClassSplit, DataError};
use crate::manifest::RunManifest;
use crate::metrics::EvalReport;
use crate::pipeline::{
    corpus_from_disk, evaluate_model, load_model, EvalDetails, OutputLayout, PipelineError,
};

/// Flat key,value report. mIoU values are percent-scaled; per-class rows
/// use `absent` for classes with an undefined IoU.
pub fn render_report_csv(report: &EvalReport, class_names: &[String]) -> String {
    let mut out = String::from("key,value\n");
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push(',');
        out.push_str(&v);
        out.push('\n');
    };
    push("n_points", report.n_points.to_string());
    push("miou_seen", (report.miou_seen * 100.0).to_string());
    push("miou_unseen", (report.miou_unseen * 100.0).to_string());
    push("miou_all", (report.miou_all * 100.0).to_string());
    push("hmiou", (report.hmiou * 100.0).to_string());
    push("entropy_visual", report.entropy_visual.to_string());
    push("entropy_semantic", report.entropy_semantic.to_string());
    for (c, name) in class_names.iter().enumerate() {
        let value = match report.per_class_iou.get(c).copied().flatten() {
            Some(v) => (v * 100.0).to_string(),
            None => "absent".to_string(),
        };
        push(&format!("iou_{name}"), value);
    }
    out
}

pub fn render_report_json(report: &EvalReport, split: &ClassSplit, class_names: &[String]) -> String {
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"n_points\": {},\n", report.n_points));
    out.push_str(&format!("  \"miou_seen\": {},\n", report.miou_seen * 100.0));
    out.push_str(&format!("  \"miou_unseen\": {},\n", report.miou_unseen * 100.0));
    out.push_str(&format!("  \"miou_all\": {},\n", report.miou_all * 100.0));
    out.push_str(&format!("  \"hmiou\": {},\n", report.hmiou * 100.0));
    out.push_str(&format!("  \"entropy_visual\": {},\n", report.entropy_visual));
    out.push_str(&format!("  \"entropy_semantic\": {},\n", report.entropy_semantic));
    out.push_str("  \"classes\": [\n");
    for (c, name) in class_names.iter().enumerate() {
        let iou = match report.per_class_iou.get(c).copied().flatten() {
            Some(v) => format!("{}", v * 100.0),
            None => "null".to_string(),
        };
        let seen = split.is_seen(c);
        out.push_str(&format!(
            "    {{\"id\": {c}, \"name\": \"{name}\", \"seen\": {seen}, \"iou\": {iou}}}{}\n",
            if c + 1 < class_names.len() { "," } else { "" }
        ));
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn render_confusion_csv(confusion: &[Vec<u64>], class_names: &[String]) -> String {
    let mut out = String::from("label\\prediction");
    for name in class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (l, row) in confusion.iter().enumerate() {
        out.push_str(&class_names[l]);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Per-class prototype-weight rows: `class_id,w0..w{M-1}`.
pub fn render_weights_csv(rows: &[Vec<f64>], m: usize) -> String {
    let mut out = String::from("class_id");
    for j in 0..m {
        out.push_str(&format!(",w{j}"));
    }
    out.push('\n');
    for (c, row) in rows.iter().enumerate() {
        out.push_str(&c.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal bar chart of per-class IoU (percent). Bars for seen classes
/// are darker; absent classes render as hollow bars.
pub fn svg_per_class_iou(
    report: &EvalReport,
    split: &ClassSplit,
    class_names: &[String],
) -> String {
    let bar_h = 22;
    let gap = 6;
    let left = 110;
    let width = 460;
    let height = (bar_h + gap) * class_names.len() + 50;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<!-- data: per-class IoU (percent)\n");
    for (c, name) in class_names.iter().enumerate() {
        let v = report
            .per_class_iou
            .get(c)
            .copied()
            .flatten()
            .map(|x| (x * 100.0).to_string())
            .unwrap_or_else(|| "absent".into());
        svg.push_str(&format!("  {name},{v}\n"));
    }
    svg.push_str("-->\n");
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"18\" font-family=\"monospace\" font-size=\"13\">per-class IoU (%)</text>\n"
    ));
    let scale = (width - left - 60) as f64 / 100.0;
    for (c, name) in class_names.iter().enumerate() {
        let y = 30 + c * (bar_h + gap);
        let seen = split.is_seen(c);
        let label = xml_escape(name);
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{label}{}</text>\n",
            y + bar_h - 7,
            if seen { "" } else { " *" }
        ));
        match report.per_class_iou.get(c).copied().flatten() {
            Some(iou) => {
                let w = (iou * 100.0 * scale).max(1.0);
                let fill = if seen { "#4878a8" } else { "#c0622c" };
                svg.push_str(&format!(
                    "<rect x=\"{left}\" y=\"{y}\" width=\"{w:.1}\" height=\"{bar_h}\" fill=\"{fill}\"/>\n"
                ));
                svg.push_str(&format!(
                    "<text x=\"{:.1}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{:.1}</text>\n",
                    left as f64 + w + 4.0,
                    y + bar_h - 7,
                    iou * 100.0
                ));
            }
            None => {
                svg.push_str(&format!(
                    "<rect x=\"{left}\" y=\"{y}\" width=\"40\" height=\"{bar_h}\" fill=\"none\" stroke=\"#999\"/>\n"
                ));
            }
        }
    }
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"10\">* unseen class</text>\n",
        height - 8
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Grouped per-class bars of mean prototype weights for the visual and
/// semantic paths, one block per class.
pub fn svg_lgp_weights(
    class_names: &[String],
    visual: &[Vec<f64>],
    semantic: &[f64],
    m: usize,
) -> String {
    let block_h = 70;
    let left = 110;
    let width = 520;
    let height = block_h * class_names.len() + 40;
    let chart_w = (width - left - 20) as f64;
    let bar_w = chart_w / m as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<!-- data: mean prototype weights per class; rows: class,path,w0..\n");
    for (c, name) in class_names.iter().enumerate() {
        let vis: Vec<String> = visual[c].iter().map(|v| format!("{v:.6}")).collect();
        let sem: Vec<String> = semantic[c * m..(c + 1) * m].iter().map(|v| format!("{v:.6}")).collect();
        svg.push_str(&format!("  {name},visual,{}\n", vis.join(",")));
        svg.push_str(&format!("  {name},semantic,{}\n", sem.join(",")));
    }
    svg.push_str("-->\n");
    svg.push_str(
        "<text x=\"110\" y=\"16\" font-family=\"monospace\" font-size=\"13\">prototype weight distributions (solid: visual, outline: semantic)</text>\n",
    );
    for (c, name) in class_names.iter().enumerate() {
        let base = 30 + c * block_h + 50;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
            base - 20,
            xml_escape(name)
        ));
        let max_w = visual[c]
            .iter()
            .chain(&semantic[c * m..(c + 1) * m])
            .fold(1e-9f64, |a, &b| a.max(b));
        for j in 0..m {
            let x = left as f64 + j as f64 * bar_w;
            let vh = (visual[c][j] / max_w * 40.0).max(0.5);
            let sh = (semantic[c * m + j] / max_w * 40.0).max(0.5);
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{vh:.1}\" fill=\"#4878a8\"/>\n",
                x,
                base as f64 - vh,
                bar_w * 0.45
            ));
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{sh:.1}\" fill=\"none\" stroke=\"#c0622c\"/>\n",
                x + bar_w * 0.5,
                base as f64 - sh,
                bar_w * 0.45
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// One-decimal, percent-scale table of the headline metrics.
pub fn format_summary(report: &EvalReport) -> String {
    format!(
        "mIoU seen {:5.1}  unseen {:5.1}  all {:5.1}  HmIoU {:5.1}  (entropy: visual {:.3}, semantic {:.3}, {} points)",
        report.miou_seen * 100.0,
        report.miou_unseen * 100.0,
        report.miou_all * 100.0,
        report.hmiou * 100.0,
        report.entropy_visual,
        report.entropy_semantic,
        report.n_points
    )
}

/// Writes the full evaluation artifact set into `layout.eval_dir()` and
/// returns the report plus the manifest describing what was written.
pub fn write_eval_artifacts(
    details: &EvalDetails,
    corpus_split: &ClassSplit,
    class_names: &[String],
    layout: &OutputLayout,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    let dir = layout.eval_dir();
    fs::create_dir_all(&dir).map_err(DataError::Io)?;
    let files = [
        ("report.csv", render_report_csv(&details.report, class_names)),
        (
            "report.json",
            render_report_json(&details.report, corpus_split, class_names),
        ),
        (
            "confusion.csv",
            render_confusion_csv(&details.report.confusion, class_names),
        ),
        (
            "lgp_weights_visual.csv",
            render_weights_csv(&details.visual_class_means, details.m),
        ),
        (
            "lgp_weights_semantic.csv",
            render_weights_csv(
                &(0..class_names.len())
                    .map(|c| details.semantic_dists[c * details.m..(c + 1) * details.m].to_vec())
                    .collect::<Vec<_>>(),
                details.m,
            ),
        ),
        (
            "per_class_iou.svg",
            svg_per_class_iou(&details.report, corpus_split, class_names),
        ),
        (
            "lgp_weights.svg",
            svg_lgp_weights(
                class_names,
                &details.visual_class_means,
                &details.semantic_dists,
                details.m,
            ),
        ),
    ];
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(DataError::Io)?;
        manifest.add_artifact(&path);
    }
    Ok(())
}

/// `eval`: loads corpus + checkpoints from the layout, evaluates, writes
/// artifacts and the manifest.
pub fn cmd_eval(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<EvalDetails, PipelineError> {
    let corpus = corpus_from_disk(&layout.corpus_dir(), cfg)?;
    let model = load_model(layout, cfg, &corpus)?;
    let details = evaluate_model(&model, &corpus, cfg)?;
    let mut manifest = RunManifest::new("eval");
    manifest.put("seed", cfg.seed);
    manifest.put_config(&cfg.to_key_values());
    write_eval_artifacts(
        &details,
        &corpus.split,
        &corpus.class_names,
        layout,
        &mut manifest,
    )?;
    manifest.write(&layout.root)?;
    Ok(details)
}

/// `report`: renders an existing `eval/report.csv` as a human summary.
pub fn cmd_report(layout: &OutputLayout) -> Result<String, PipelineError> {
    let path = layout.eval_dir().join("report.csv");
    let text = fs::read_to_string(&path).map_err(|e| {
        PipelineError::Data(DataError::Format {
            path: path.display().to_string(),
            detail: format!("missing report ({e}); run `zshot eval` first"),
        })
    })?;
    let mut lines = vec!["key                value".to_string()];
    for line in text.lines().skip(1) {
        if let Some((k, v)) = line.split_once(',') {
            let rendered = match v.parse::<f64>() {
                Ok(num) if k.starts_with("miou") || k.starts_with("hmiou") || k.starts_with("iou_") => {
                    format!("{num:.1}")
                }
                _ => v.to_string(),
            };
            lines.push(format!("{k:<18} {rendered}"));
        }
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{build_report, IouAveraging};

    fn sample_report() -> (EvalReport, ClassSplit, Vec<String>) {
        let split = ClassSplit {
            seen: vec![0, 1],
            unseen: vec![2],
        };
        let confusion = vec![vec![8, 1, 1], vec![2, 7, 1], vec![1, 2, 7]];
        let report = build_report(confusion, &split, IouAveraging::ExcludeAbsent, 1.3, 1.9);
        let names = vec!["ball".to_string(), "pipe".to_string(), "spike".to_string()];
        (report, split, names)
    }

    #[test]
    fn report_csv_has_required_keys() {
        let (report, _, names) = sample_report();
        let csv = render_report_csv(&report, &names);
        for key in ["miou_seen", "miou_unseen", "miou_all", "hmiou", "entropy_visual"] {
            assert!(csv.contains(&format!("{key},")), "missing {key}");
        }
        assert!(csv.contains("iou_ball,"));
    }

    #[test]
    fn svg_parses_as_well_formed_xml() {
        // minimal well-formedness scan: every opened tag closes, quotes
        // balance, and the root is an svg element
        let (report, split, names) = sample_report();
        let svg = svg_per_class_iou(&report, &split, &names);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        let opens = svg.matches("<rect").count();
        let closes = svg.matches("/>").count() + svg.matches("</").count();
        assert!(closes >= opens);
        assert_eq!(svg.matches('"').count() % 2, 0, "unbalanced quotes");

        let visual = vec![vec![0.5, 0.3, 0.2]; 3];
        let semantic = vec![0.4, 0.3, 0.3, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8];
        let svg2 = svg_lgp_weights(&names, &visual, &semantic, 3);
        assert!(svg2.starts_with("<svg"));
        assert!(svg2.trim_end().ends_with("</svg>\n") || svg2.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn confusion_csv_shape() {
        let (report, _, names) = sample_report();
        let csv = render_confusion_csv(&report.confusion, &names);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("ball,8,1,1"));
    }

    #[test]
    fn json_is_structurally_sound() {
        let (report, split, names) = sample_report();
        let json = render_report_json(&report, &split, &names);
        assert_eq!(json.matches('{').count(), json.matches('}').count());
        assert_eq!(json.matches('[').count(), json.matches(']').count());
        assert!(json.contains("\"hmiou\""));
    }
}
