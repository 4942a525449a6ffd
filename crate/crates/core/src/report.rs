//! CSV and SVG renderings of an [`EvalReport`].
//!
//! CSV files open with `#` comment lines carrying the schema tag and the
//! evaluation config, so every artifact can be traced back to its inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::eval::{CountConfusion, EvalReport, PrPoint, SweepPoint, REPORT_SCHEMA};

fn header(report: &EvalReport) -> String {
    let config = serde_json::to_string(&report.config).expect("config serializes");
    format!("# schema: {REPORT_SCHEMA}\n# config: {config}\n")
}

pub fn pr_curve_csv(report: &EvalReport) -> String {
    let mut s = header(report);
    s.push_str("class,confidence,recall,precision\n");
    for c in &report.per_class {
        for p in &c.pr_points {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                c.class, p.confidence, p.recall, p.precision
            );
        }
    }
    s
}

pub fn sweep_csv(report: &EvalReport) -> String {
    let mut s = header(report);
    s.push_str("tau,ap\n");
    for p in &report.sweep {
        let _ = writeln!(s, "{},{}", p.tau, p.ap);
    }
    s
}

pub fn confusion_csv(report: &EvalReport) -> String {
    let mut s = header(report);
    let _ = writeln!(
        s,
        "# class: {}, tau: {}",
        report.confusion.class, report.confusion.tau
    );
    s.push_str("gt_count,pred_count,images\n");
    for (gt, row) in report.confusion.matrix.iter().enumerate() {
        for (pred, n) in row.iter().enumerate() {
            let _ = writeln!(s, "{gt},{pred},{n}");
        }
    }
    s
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Unit square plot frame with axis labels; returns a mapper to pixels.
fn frame(s: &mut String, xlabel: &str, ylabel: &str) -> impl Fn(f64, f64) -> (f64, f64) {
    let (x0, x1, y0, y1) = (PAD, W - PAD / 2.0, H - PAD, PAD);
    let _ = writeln!(
        s,
        "<rect x=\"{x0}\" y=\"{y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        x1 - x0,
        y0 - y1
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let x = x0 + v * (x1 - x0);
        let y = y0 - v * (y0 - y1);
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v}</text>",
            y0 + 16.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v}</text>",
            x0 - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        H - 8.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
    move |u: f64, v: f64| {
        (
            x0 + u.clamp(0.0, 1.0) * (x1 - x0),
            y0 - v.clamp(0.0, 1.0) * (y0 - y1),
        )
    }
}

fn polyline(s: &mut String, pts: impl Iterator<Item = (f64, f64)>, colour: &str) {
    let coords: Vec<String> = pts.map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
        coords.join(" ")
    );
}

/// Precision against recall, one line per class.
pub fn pr_curve_svg(report: &EvalReport) -> String {
    const COLOURS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];
    let mut s = svg_open(&format!(
        "Precision-recall, IoU {} at confidence {}",
        report.config.iou_threshold, report.optimal_confidence
    ));
    let map = frame(&mut s, "recall", "precision");
    for (k, c) in report.per_class.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let pts = std::iter::once(PrPoint {
            confidence: 1.0,
            recall: 0.0,
            precision: c.pr_points.first().map_or(1.0, |p| p.precision),
        })
        .chain(c.pr_points.iter().copied());
        polyline(&mut s, pts.map(|p| map(p.recall, p.precision)), colour);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{colour}\">{}</text>",
            W - PAD - 60.0,
            PAD + 16.0 * (k as f64 + 1.0),
            c.class
        );
    }
    s.push_str("</svg>\n");
    s
}

/// AP against the confidence threshold with the optimum marked.
pub fn sweep_svg(report: &EvalReport) -> String {
    let mut s = svg_open(&format!(
        "AP over confidence threshold (optimum {})",
        report.optimal_confidence
    ));
    let map = frame(&mut s, "confidence threshold", "AP");
    polyline(
        &mut s,
        report.sweep.iter().map(|p: &SweepPoint| map(p.tau, p.ap)),
        "#1f77b4",
    );
    let best = report
        .sweep
        .iter()
        .find(|p| p.tau == report.optimal_confidence);
    if let Some(p) = best {
        let (x, y) = map(p.tau, p.ap);
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"#d62728\"/>"
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Heat map of images by (true count, predicted count).
pub fn confusion_svg(m: &CountConfusion) -> String {
    let n = m.matrix.len().max(1);
    let mut s = svg_open(&format!(
        "{} count per image at confidence {}",
        m.class, m.tau
    ));
    let size = ((H - 2.0 * PAD) / n as f64).min(64.0);
    let max = m.matrix.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    for (gt, row) in m.matrix.iter().enumerate() {
        for (pred, &count) in row.iter().enumerate() {
            let x = PAD + pred as f64 * size;
            let y = PAD + gt as f64 * size;
            // log scale keeps the dominant (0, 0) cell from washing out the rest
            let shade = if count == 0 {
                0.0
            } else {
                (1.0 + count as f64).ln() / (1.0 + max).ln()
            };
            let level = (255.0 * (1.0 - shade)).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{size:.1}\" height=\"{size:.1}\" fill=\"rgb({level},{level},255)\" stroke=\"#999\"/>"
            );
            let ink = if shade > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{ink}\">{count}</text>",
                x + size / 2.0,
                y + size / 2.0 + 4.0
            );
        }
    }
    for k in 0..n {
        let c = PAD + (k as f64 + 0.5) * size;
        let _ = writeln!(
            s,
            "<text x=\"{c:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{k}</text>",
            PAD - 6.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{k}</text>",
            PAD - 6.0,
            c + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"36\" text-anchor=\"middle\">predicted</text>",
        PAD + n as f64 * size / 2.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{0:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0:.1})\">labelled</text>",
        PAD + n as f64 * size / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// `(file name, contents)` for every rendering of `report`.
pub fn render_all(report: &EvalReport, svg: bool) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("pr_curve.csv", pr_curve_csv(report)),
        ("sweep.csv", sweep_csv(report)),
        ("confusion.csv", confusion_csv(report)),
    ];
    if svg {
        out.push(("pr_curve.svg", pr_curve_svg(report)));
        out.push(("sweep.svg", sweep_svg(report)));
        out.push(("confusion.svg", confusion_svg(&report.confusion)));
    }
    out
}

/// Writes `report.json` and the renderings into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport, svg: bool) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(dir.join("report.json"), json)?;
    for (name, text) in render_all(report, svg) {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{BBox, Class, Detection, GroundTruthLabel};
    use crate::eval::{evaluate, EvalConfig};

    fn report() -> EvalReport {
        let label = |id: &str, x: f64| GroundTruthLabel {
            image_id: id.into(),
            class: Class::Deer,
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
            mask: None,
            observers: vec![],
        };
        let det = |id: &str, x: f64, c: f64| Detection {
            image_id: id.into(),
            class: Class::Deer,
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
            confidence: c,
            mask: None,
        };
        let labels = vec![label("a", 0.0), label("a", 50.0), label("b", 0.0)];
        let dets = vec![det("a", 0.0, 0.9), det("b", 0.0, 0.4), det("c", 0.0, 0.2)];
        evaluate(&["a", "b", "c"], &dets, &labels, &EvalConfig::default()).unwrap()
    }

    #[test]
    fn csv_shapes() {
        let r = report();
        let sweep = sweep_csv(&r);
        let rows: Vec<&str> = sweep.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "tau,ap");
        assert_eq!(rows.len(), 1 + 201);
        assert!(sweep.starts_with("# schema: wildcensus-report/1\n# config: {"));
        let conf = confusion_csv(&r);
        let total: usize = conf
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn svgs_are_well_formed() {
        let r = report();
        for (name, text) in render_all(&r, true)
            .into_iter()
            .filter(|(n, _)| n.ends_with(".svg"))
        {
            assert!(
                text.starts_with("<svg") && text.trim_end().ends_with("</svg>"),
                "{name}"
            );
            assert_eq!(
                text.matches("<text").count(),
                text.matches("</text>").count(),
                "{name}"
            );
            assert!(!text.contains("NaN"), "{name}");
        }
    }
}
