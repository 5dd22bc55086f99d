//! Threshold-free interpretability scores, top-k listings, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissect::{csv_field, LabeledBasis};
use crate::error::{Error, Result};
use crate::tensorstore::{Concept, FeatureDataset};

/// Area under `xi -> #{i : phi_i >= xi}` on `[0, 1]`, i.e. the sum of clamped scores.
pub fn score1(val_scores: &[f64]) -> f64 {
    val_scores.iter().map(|v| v.clamp(0.0, 1.0)).sum()
}

/// Best score per distinct label, keyed by label.
pub fn label_maxima(val_scores: &[f64], labels: &[usize]) -> BTreeMap<usize, f64> {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for (&v, &l) in val_scores.iter().zip(labels) {
        let v = v.clamp(0.0, 1.0);
        let e = best.entry(l).or_insert(v);
        if v > *e {
            *e = v;
        }
    }
    best
}

/// Area under `psi(xi)`, the number of labels with some detector scoring at least `xi`.
pub fn score2(val_scores: &[f64], labels: &[usize]) -> Result<f64> {
    if val_scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            val_scores.len(),
            labels.len()
        )));
    }
    Ok(label_maxima(val_scores, labels).values().sum())
}

/// `psi(xi)` evaluated directly.
pub fn psi(val_scores: &[f64], labels: &[usize], xi: f64) -> usize {
    label_maxima(val_scores, labels)
        .values()
        .filter(|&&m| m >= xi)
        .count()
}

/// Breakpoints of the non-increasing step function `psi`: each `(xi, n)` means
/// `psi` equals `n` on the interval ending at `xi` (and starting at the previous breakpoint).
pub fn psi_curve(val_scores: &[f64], labels: &[usize]) -> Vec<(f64, usize)> {
    let mut maxima: Vec<f64> = label_maxima(val_scores, labels).into_values().collect();
    maxima.sort_by(f64::total_cmp);
    maxima.dedup();
    maxima
        .iter()
        .map(|&m| (m, maxima.iter().filter(|&&v| v >= m).count()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub detector: usize,
    pub concept_id: u32,
    pub concept_name: String,
    pub bias: f64,
    pub train_iou: f64,
    pub val_iou: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpReport {
    pub basis: String,
    pub score1: f64,
    pub score2: f64,
    pub unique_labels: usize,
    pub psi_curve: Vec<(f64, usize)>,
    pub detectors: Vec<DetectorReport>,
}

impl InterpReport {
    pub fn from_labeled(name: &str, lb: &LabeledBasis, concepts: &[Concept]) -> Result<Self> {
        let labels: Vec<usize> = lb.labels.iter().map(|l| l.concept).collect();
        let detectors = lb
            .labels
            .iter()
            .zip(&lb.val_scores)
            .enumerate()
            .map(|(i, (l, &v))| DetectorReport {
                detector: i,
                concept_id: concepts[l.concept].id,
                concept_name: concepts[l.concept].name.clone(),
                bias: lb.detectors.biases[i],
                train_iou: l.train_score,
                val_iou: v,
                degenerate: l.degenerate,
            })
            .collect();
        Ok(Self {
            basis: name.to_string(),
            score1: score1(&lb.val_scores),
            score2: score2(&lb.val_scores, &labels)?,
            unique_labels: label_maxima(&lb.val_scores, &labels).len(),
            psi_curve: psi_curve(&lb.val_scores, &labels),
            detectors,
        })
    }
}

/// Writes `report.csv`, `report.json`, and `report.svg` for one or more bases.
pub fn emit_report(reports: &[InterpReport], dir: impl AsRef<Path>) -> Result<()> {
    if reports.is_empty() || reports.iter().any(|r| r.detectors.is_empty()) {
        return Err(Error::Empty("report has no basis detectors".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut csv =
        String::from("basis,detector,concept_id,concept_name,bias,train_iou,val_iou,degenerate\n");
    for r in reports {
        for d in &r.detectors {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                csv_field(&r.basis),
                d.detector,
                d.concept_id,
                csv_field(&d.concept_name),
                d.bias,
                d.train_iou,
                d.val_iou,
                d.degenerate
            );
        }
    }
    let path = dir.join("report.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("report.json");
    let mut json =
        serde_json::to_string_pretty(reports).map_err(|e| Error::Format(e.to_string()))?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("report.svg");
    fs::write(&path, render_svg(reports)).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

const PALETTE: [&str; 6] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377",
];

/// Grouped score bars on the left, `psi` step curves on the right.
pub fn render_svg(reports: &[InterpReport]) -> String {
    let (w, h) = (720.0, 320.0);
    let (top, bottom) = (30.0, 270.0);
    let plot_h = bottom - top;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);

    // bars
    let max_score = reports
        .iter()
        .map(|r| r.score1.max(r.score2))
        .fold(1.0f64, f64::max);
    let (bx0, bx1) = (50.0, 330.0);
    let group_w = (bx1 - bx0) / 2.0;
    let bar_w = group_w * 0.8 / reports.len() as f64;
    let _ = writeln!(
        s,
        r#"<line x1="{bx0}" y1="{bottom}" x2="{bx1}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{bx0}" y1="{top}" x2="{bx0}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20">max {:.4}</text>"#, bx0, max_score);
    for (g, metric) in ["score1", "score2"].iter().enumerate() {
        let gx = bx0 + g as f64 * group_w + group_w * 0.1;
        for (k, r) in reports.iter().enumerate() {
            let v = if g == 0 { r.score1 } else { r.score2 };
            let bh = plot_h * v / max_score;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {} {:.6}</title></rect>"#,
                gx + k as f64 * bar_w,
                bottom - bh,
                bar_w,
                bh,
                PALETTE[k % PALETTE.len()],
                xml_escape(&r.basis),
                metric,
                v
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            bx0 + (g as f64 + 0.5) * group_w,
            bottom + 15.0,
            metric
        );
    }

    // psi curves
    let (cx0, cx1) = (390.0, 690.0);
    let max_psi = reports
        .iter()
        .map(|r| r.unique_labels)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let _ = writeln!(
        s,
        r#"<line x1="{cx0}" y1="{bottom}" x2="{cx1}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{cx0}" y1="{top}" x2="{cx0}" y2="{bottom}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">xi</text>"#,
        (cx0 + cx1) / 2.0,
        bottom + 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20">psi (max {})</text>"#,
        cx0, max_psi
    );
    let px = |xi: f64| cx0 + (cx1 - cx0) * xi;
    let py = |n: f64| bottom - plot_h * n / max_psi;
    for (k, r) in reports.iter().enumerate() {
        let mut pts = Vec::new();
        let mut x_prev = 0.0;
        for &(xi, n) in &r.psi_curve {
            pts.push(format!("{:.2},{:.2}", px(x_prev), py(n as f64)));
            pts.push(format!("{:.2},{:.2}", px(xi), py(n as f64)));
            x_prev = xi;
        }
        pts.push(format!("{:.2},{:.2}", px(x_prev), py(0.0)));
        pts.push(format!("{:.2},{:.2}", px(1.0), py(0.0)));
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            cx1 - 120.0,
            top + 14.0 * (k as f64 + 1.0),
            PALETTE[k % PALETTE.len()],
            xml_escape(&r.basis)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopActivation {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub projection: f64,
    /// `(projection - mean) / sigma` when statistics were supplied.
    pub standardized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub per_detector: Vec<Vec<TopActivation>>,
    /// Set when `k` exceeded the pixel count and every pixel was returned.
    pub truncated: bool,
}

/// Exact top-`k` pixels per direction by projection; ties resolve by image id, then pixel index.
pub fn topk_activations(
    directions: &DMatrix<f64>,
    ds: &FeatureDataset,
    k: usize,
    stats: Option<(&[f64], &[f64])>,
) -> Result<TopK> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if directions.ncols() != ds.layer_dim() {
        return Err(Error::DimensionMismatch(format!(
            "directions have D = {}, features have D = {}",
            directions.ncols(),
            ds.layer_dim()
        )));
    }
    if ds.pixel_count() == 0 {
        return Err(Error::Empty("no pixels to rank".into()));
    }
    if let Some((m, s)) = stats {
        if m.len() != directions.nrows() || s.len() != directions.nrows() {
            return Err(Error::Shape(
                "statistics do not match the direction count".into(),
            ));
        }
    }
    let sorted = ds.sorted_by_id();
    let n_dir = directions.nrows();
    let dim = directions.ncols();
    // (value, image rank, pixel) per direction, gathered per image in parallel
    let per_image: Vec<Vec<Vec<(f64, usize, usize)>>> = (0..sorted.len())
        .into_par_iter()
        .map(|img| {
            let t = sorted.load_image(img)?;
            let mut out = vec![Vec::new(); n_dir];
            for (p, px) in t.data().chunks_exact(dim).enumerate() {
                for (i, list) in out.iter_mut().enumerate() {
                    let v: f64 = px
                        .iter()
                        .enumerate()
                        .map(|(c, &x)| f64::from(x) * directions[(i, c)])
                        .sum();
                    list.push((v, img, p));
                }
            }
            for list in out.iter_mut() {
                keep_top(list, k);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut per_detector = Vec::with_capacity(n_dir);
    for i in 0..n_dir {
        let mut all: Vec<(f64, usize, usize)> = per_image
            .iter()
            .flat_map(|img| img[i].iter().copied())
            .collect();
        keep_top(&mut all, k);
        per_detector.push(
            all.into_iter()
                .map(|(v, img, p)| {
                    let rec = &sorted.images()[img];
                    TopActivation {
                        image_id: rec.id.clone(),
                        row: p / rec.width,
                        col: p % rec.width,
                        projection: v,
                        standardized: stats.map(|(m, s)| (v - m[i]) / s[i]),
                    }
                })
                .collect(),
        );
    }
    Ok(TopK {
        per_detector,
        truncated: k > ds.pixel_count(),
    })
}

fn keep_top(list: &mut Vec<(f64, usize, usize)>, k: usize) {
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if list.len() > k {
        list.select_nth_unstable_by(k - 1, cmp);
        list.truncate(k);
    }
    list.sort_by(cmp);
}

pub fn topk_csv(top: &TopK) -> String {
    let mut out = String::from("detector,rank,image_id,row,col,projection,standardized\n");
    for (i, list) in top.per_detector.iter().enumerate() {
        for (r, a) in list.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                i,
                r,
                csv_field(&a.image_id),
                a.row,
                a.col,
                a.projection,
                a.standardized.map(|v| v.to_string()).unwrap_or_default()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorstore::{FeatureDatasetWriter, Split, Tensor};

    fn midpoint(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        (0..n).map(|k| f((k as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
    }

    #[test]
    fn score_examples() {
        assert!((score1(&[0.2, 0.5]) - 0.7).abs() < 1e-15);
        assert_eq!(score1(&[0.0, 0.0]), 0.0);
        assert_eq!(score1(&[1.0, 1.0, 1.0]), 3.0);
        assert!((score2(&[0.2, 0.5, 0.4], &[0, 0, 1]).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(score2(&[0.3], &[5]).unwrap(), 0.3);
        assert_eq!(score2(&[0.1, 0.6], &[0, 1]).unwrap(), score1(&[0.1, 0.6]));
        assert!(score2(&[0.1], &[]).is_err());
    }

    #[test]
    fn matches_grid_integration() {
        let phi = [0.2, 0.5, 0.4, 0.0, 0.9];
        let labels = [0, 0, 1, 2, 1];
        let s1 = midpoint(|xi| phi.iter().filter(|&&v| v >= xi).count() as f64, 10_000);
        let s2 = midpoint(|xi| psi(&phi, &labels, xi) as f64, 10_000);
        assert!((s1 - score1(&phi)).abs() < 1e-4);
        assert!((s2 - score2(&phi, &labels).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn psi_curve_breakpoints() {
        let c = psi_curve(&[0.2, 0.5, 0.4], &[0, 0, 1]);
        assert_eq!(c, vec![(0.4, 2), (0.5, 1)]);
        assert_eq!(psi(&[0.2, 0.5, 0.4], &[0, 0, 1], 0.0), 2);
        // area from breakpoints
        let mut prev = 0.0;
        let mut area = 0.0;
        for &(xi, n) in &c {
            area += (xi - prev) * n as f64;
            prev = xi;
        }
        assert!((area - 0.9).abs() < 1e-12);
    }

    fn report(name: &str) -> InterpReport {
        InterpReport {
            basis: name.into(),
            score1: 1.5,
            score2: 0.9,
            unique_labels: 2,
            psi_curve: vec![(0.4, 2), (0.5, 1)],
            detectors: vec![DetectorReport {
                detector: 0,
                concept_id: 3,
                concept_name: "sky, blue".into(),
                bias: 0.25,
                train_iou: 0.5,
                val_iou: 0.4,
                degenerate: false,
            }],
        }
    }

    #[test]
    fn emit_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let reps = [report("learned"), report("natural")];
        emit_report(&reps, a.path()).unwrap();
        emit_report(&reps, b.path()).unwrap();
        for f in ["report.csv", "report.json", "report.svg"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        let svg = std::fs::read_to_string(a.path().join("report.svg")).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 4);
        let csv = std::fs::read_to_string(a.path().join("report.csv")).unwrap();
        assert!(csv.contains("\"sky, blue\""));
    }

    #[test]
    fn empty_report_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], dir.path()).is_err());
        let mut r = report("x");
        r.detectors.clear();
        assert!(emit_report(&[r], dir.path()).is_err());
    }

    #[test]
    fn topk_matches_full_sort() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = FeatureDatasetWriter::new(dir.path(), 2);
        let vals = [
            ("b", vec![3.0f32, 0.0, 1.0, 1.0, 3.0, 2.0]),
            ("a", vec![1.0f32, 5.0, 3.0, -1.0, 0.5, 0.5]),
        ];
        for (id, v) in &vals {
            w.add_image(
                id,
                Split::Val,
                &Tensor::new(vec![1, 3, 2], v.clone()).unwrap(),
            )
            .unwrap();
        }
        let path = w.finish(None).unwrap();
        let ds = FeatureDataset::load(path).unwrap();
        let dirs = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let top = topk_activations(&dirs, &ds, 6, None).unwrap();
        assert!(!top.truncated);
        // full-sort oracle on channel 0: values a:[1,3,0.5], b:[3,1,3]
        let ch0: Vec<(String, usize, f64)> = top.per_detector[0]
            .iter()
            .map(|t| (t.image_id.clone(), t.col, t.projection))
            .collect();
        assert_eq!(
            ch0,
            vec![
                ("a".into(), 1, 3.0),
                ("b".into(), 0, 3.0),
                ("b".into(), 2, 3.0),
                ("a".into(), 0, 1.0),
                ("b".into(), 1, 1.0),
                ("a".into(), 2, 0.5),
            ]
        );
        let one = topk_activations(&dirs, &ds, 1, Some((&[0.0, 1.0], &[1.0, 2.0]))).unwrap();
        assert_eq!(one.per_detector[1][0].image_id, "a");
        assert_eq!(one.per_detector[1][0].standardized, Some(2.0));
        assert!(topk_activations(&dirs, &ds, 100, None).unwrap().truncated);
        assert!(topk_activations(&dirs, &ds, 0, None).is_err());
    }
}
