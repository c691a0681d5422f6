//! Static SVG line charts of metrics against epoch.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::config::AblationAxis;
use crate::dp::MetricsRecord;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One named line: `(epoch, value)` points in epoch order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// A rendered chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    /// File stem, e.g. `epsilon`.
    pub name: String,
    pub series: Vec<Series>,
    pub svg: String,
}

/// Per-epoch mean of `metric` over runs, for the given experiment.
fn mean_curve(records: &[MetricsRecord], id: &str, metric: fn(&MetricsRecord) -> f64) -> Vec<(f64, f64)> {
    let mut by_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.experiment_id == id) {
        let e = by_epoch.entry(r.epoch).or_insert((0.0, 0));
        e.0 += metric(r);
        e.1 += 1;
    }
    by_epoch
        .into_iter()
        .map(|(epoch, (sum, n))| (epoch as f64, sum / n as f64))
        .collect()
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one chart. Accuracy columns use a fixed `[0, 1]` range.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(|v| v.is_finite())
        .collect();
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (mut y0, mut y1) = if y_label.ends_with("acc") {
        (0.0, 1.0)
    } else {
        ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)))
    };
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        esc(title)
    );
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black"><line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/><line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}"/></g>"#,
        l = MARGIN_LEFT,
        r = MARGIN_LEFT + pw,
        t = MARGIN_TOP,
        b = MARGIN_TOP + ph
    );
    for i in 0..=4 {
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{fy:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            py(fy) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{fx:.1}</text>"#,
            px(fx),
            MARGIN_TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 12.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="y-label" x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0,
        esc(y_label)
    );
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            esc(&series.name),
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle class="point" cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = MARGIN_LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            esc(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One test-accuracy chart per ablation axis present in `records`, plus a chart
/// named `all` for experiments outside every axis.
pub fn report(records: &[MetricsRecord]) -> Result<Vec<Chart>> {
    if records.is_empty() {
        return Err(Error::Parse {
            line: 2,
            reason: "CSV has no data rows".into(),
        });
    }
    let mut ids: Vec<&str> = Vec::new();
    for r in records {
        if !ids.contains(&r.experiment_id.as_str()) {
            ids.push(&r.experiment_id);
        }
    }
    let metric = |r: &MetricsRecord| r.test_acc;
    let build = |name: &str, members: &[&str]| {
        let series: Vec<Series> = members
            .iter()
            .map(|id| Series {
                name: id.to_string(),
                points: mean_curve(records, id, metric),
            })
            .collect();
        let svg = render_svg(&format!("test accuracy by {name}"), "epoch", "test_acc", &series);
        Chart {
            name: name.to_string(),
            series,
            svg,
        }
    };
    let mut charts = Vec::new();
    let mut covered: Vec<&str> = Vec::new();
    for axis in AblationAxis::ALL {
        let axis_ids = axis.ids();
        let members: Vec<&str> = ids.iter().copied().filter(|id| axis_ids.iter().any(|a| a == id)).collect();
        if !members.is_empty() {
            covered.extend(&members);
            charts.push(build(axis.name(), &members));
        }
    }
    let rest: Vec<&str> = ids.iter().copied().filter(|id| !covered.contains(id)).collect();
    if !rest.is_empty() {
        charts.push(build("all", &rest));
    }
    Ok(charts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, epoch: usize, acc: f64) -> MetricsRecord {
        MetricsRecord {
            experiment_id: id.into(),
            run: 0,
            epoch,
            train_loss: 1.0,
            train_acc: acc,
            test_loss: 1.0,
            test_acc: acc,
            epsilon_spent: 1.0,
            sigma: 1.0,
        }
    }

    #[test]
    fn two_series_two_points() {
        let records = vec![rec("a", 1, 0.1), rec("a", 2, 0.2), rec("b", 1, 0.3), rec("b", 2, 0.4)];
        let charts = report(&records).unwrap();
        assert_eq!(charts.len(), 1);
        let c = &charts[0];
        assert_eq!(c.series.len(), 2);
        assert!(c.series.iter().all(|s| s.points.len() == 2));
        assert_eq!(c.svg.matches("<polyline").count(), 2);
        assert_eq!(c.svg.matches("class=\"point\"").count(), 4);
        assert!(c.svg.contains(">epoch</text>") && c.svg.contains(">test_acc</text>"));
    }

    #[test]
    fn axes_group_preset_rows() {
        let records = vec![rec("table1-02", 1, 0.5), rec("table1-19", 1, 0.3), rec("table1-09", 1, 0.4)];
        let names: Vec<String> = report(&records).unwrap().into_iter().map(|c| c.name).collect();
        assert_eq!(names, vec!["epsilon", "optimizer", "batch_size", "epochs"]);
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let records = vec![rec("a", 1, 0.1), rec("a", 2, 0.2)];
        assert_eq!(report(&records).unwrap(), report(&records).unwrap());
        assert!(matches!(report(&[]), Err(Error::Parse { .. })));
    }
}
