use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{DetCurve, Eer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub protocol: String,
    pub split: String,
    pub dataset: String,
    pub d_eer: f64,
    pub threshold: f64,
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// One row per model, one D-EER column per dataset; datasets seen during
/// training are marked intra, the rest cross.
pub fn metrics_markdown(rows: &[MetricRow], intra: &[String]) -> String {
    let mut datasets: Vec<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    datasets.sort_by_key(|d| (!intra.iter().any(|i| i == d), *d));
    datasets.dedup();

    let mut table: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    let mut order: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.model.as_str(), r.protocol.as_str());
        if !order.contains(&key) {
            order.push(key);
        }
        table.entry(key).or_default().insert(&r.dataset, r.d_eer);
    }

    let mut out = String::from("| Model | Protocol |");
    for d in &datasets {
        let scope = if intra.iter().any(|i| i == d) { "intra" } else { "cross" };
        let _ = write!(out, " {d} ({scope}) D-EER % |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(datasets.len()));
    out.push('\n');
    for key in order {
        let _ = write!(out, "| {} | {} |", key.0, key.1);
        for d in &datasets {
            match table[&key].get(d) {
                Some(v) => {
                    let _ = write!(out, " {:.2} |", 100.0 * v);
                }
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    out
}

const PLOT: f64 = 360.0;
const MARGIN: f64 = 50.0;

/// DET curve as a standalone SVG: APCER on x, BPCER on y, both linear.
pub fn det_svg(title: &str, curve: &DetCurve, eer: &Eer) -> String {
    let px = |v: f64| MARGIN + v * PLOT;
    let py = |v: f64| MARGIN + (1.0 - v) * PLOT;
    let size = PLOT + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>",
            px(v),
            py(0.0),
            px(v),
            py(1.0)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>",
            px(0.0),
            py(v),
            px(1.0),
            py(v)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            py(0.0) + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            px(0.0) - 5.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    );
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.apcer), py(p.bpcer)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\"/>",
        points.join(" ")
    );
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#c0392b\"/>",
        px(eer.eer),
        py(eer.eer)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{} (D-EER {:.2}%)</text>"#,
        size / 2.0,
        MARGIN - 18.0,
        escape(title),
        100.0 * eer.eer
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">APCER</text>"#,
        size / 2.0,
        size - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">BPCER</text>"#,
        size / 2.0,
        size / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{d_eer, det_curve, ScoreSet};

    fn row(model: &str, dataset: &str, d_eer: f64) -> MetricRow {
        MetricRow {
            model: model.into(),
            protocol: "default".into(),
            split: "test".into(),
            dataset: dataset.into(),
            d_eer,
            threshold: 0.5,
        }
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row("dct20", "a", 0.123456789), row("srm", "b", 0.1 + 0.2)];
        write_metrics_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("model,protocol,split,dataset,d_eer,threshold\n"));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn markdown_layout() {
        let rows = vec![row("dct20", "other", 0.25), row("dct20", "home", 0.05), row("srm", "home", 0.5)];
        let md = metrics_markdown(&rows, &["home".to_string()]);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(
            lines[0],
            "| Model | Protocol | home (intra) D-EER % | other (cross) D-EER % |"
        );
        assert_eq!(lines[2], "| dct20 | default | 5.00 | 25.00 |");
        assert_eq!(lines[3], "| srm | default | 50.00 | n/a |");
    }

    #[test]
    fn svg_is_well_formed() {
        let s = ScoreSet::from_scores(&[0.1, 0.4, 0.35], &[0.8, 0.3]).unwrap();
        let svg = det_svg("a<b", &det_curve(&s).unwrap(), &d_eer(&s).unwrap());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline") && svg.contains("a&lt;b"));
    }
}
