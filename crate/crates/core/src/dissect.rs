//! Detector maps, dataset-level IoU against concept masks, labeling, and the
//! natural-basis quantile baseline.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorstore::{BinaryMask, Concept, ConceptDataset, FeatureDataset, Split, Tensor};
use crate::trainer::BasisModel;

/// Linear detectors `w_i^T x - b_i > 0` in raw feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSet {
    /// `I x D` directions.
    pub directions: DMatrix<f64>,
    pub biases: Vec<f64>,
}

impl DetectorSet {
    pub fn new(directions: DMatrix<f64>, biases: Vec<f64>) -> Result<Self> {
        if directions.nrows() == 0 {
            return Err(Error::Empty("detector set has no directions".into()));
        }
        if biases.len() != directions.nrows() {
            return Err(Error::Shape(format!(
                "{} directions but {} biases",
                directions.nrows(),
                biases.len()
            )));
        }
        if directions.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "detector parameters are not finite".into(),
            ));
        }
        Ok(Self { directions, biases })
    }

    /// Learned detectors with biases mapped back to raw projection space.
    pub fn from_model(model: &BasisModel) -> Result<Self> {
        let biases = model.raw_classifiers()?.iter().map(|c| c.bias).collect();
        Self::new(model.detector_rows()?, biases)
    }

    /// The natural basis `e_i` with top-`q` quantile thresholds from `ds`.
    pub fn natural_baseline(ds: &FeatureDataset, q: f64) -> Result<Self> {
        let d = ds.layer_dim();
        let eye = DMatrix::identity(d, d);
        let biases = quantile_thresholds(ds, &eye, q)?;
        Self::new(eye, biases)
    }

    pub fn len(&self) -> usize {
        self.directions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }
}

fn project<'a>(features: &'a [f32], w: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    features.chunks_exact(w.len()).map(move |px| {
        px.iter()
            .zip(w)
            .map(|(&x, &wk)| f64::from(x) * wk)
            .sum::<f64>()
    })
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn check_features(features: &Tensor, dim: usize) -> Result<(usize, usize)> {
    match features.shape() {
        &[h, w, d] if d == dim => Ok((h, w)),
        s => Err(Error::DimensionMismatch(format!(
            "features have shape {:?}, detectors expect [H, W, {}]",
            s, dim
        ))),
    }
}

/// Applies `w^T x - b > 0` to every pixel of an `[H, W, D]` tensor.
pub fn binarized_map(features: &Tensor, w: &[f64], b: f64) -> Result<Vec<bool>> {
    check_features(features, w.len())?;
    Ok(project(features.data(), w).map(|p| p - b > 0.0).collect())
}

/// Bilinear resize with half-pixel-center alignment and edge clamping.
pub fn upsample_bilinear(
    map: &[f64],
    height: usize,
    width: usize,
    target_h: usize,
    target_w: usize,
) -> Result<Vec<f64>> {
    if height == 0 || width == 0 || map.len() != height * width {
        return Err(Error::Shape(format!(
            "map of {} values is not {}x{}",
            map.len(),
            height,
            width
        )));
    }
    if target_h == 0 || target_w == 0 {
        return Err(Error::Shape("upsampling target has zero size".into()));
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..target_w).map(|x| axis(x, width, target_w)).collect();
    let mut out = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let (y0, y1, fy) = axis(y, height, target_h);
        for &(x0, x1, fx) in &cols {
            let top = map[y0 * width + x0] * (1.0 - fx) + map[y0 * width + x1] * fx;
            let bottom = map[y1 * width + x0] * (1.0 - fx) + map[y1 * width + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

/// Upsamples a binary map and re-binarizes at 0.5.
pub fn upsample_binary(
    bits: &[bool],
    height: usize,
    width: usize,
    target_h: usize,
    target_w: usize,
) -> Result<Vec<bool>> {
    if (height, width) == (target_h, target_w) && bits.len() == height * width {
        return Ok(bits.to_vec());
    }
    let map: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(upsample_bilinear(&map, height, width, target_h, target_w)?
        .into_iter()
        .map(|v| v > 0.5)
        .collect())
}

/// Integer counts summed over images, from which IoU is computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoUCounts {
    pub detectors: usize,
    pub concepts: usize,
    /// `|M_i ∩ L_c|`, row-major `I x C`.
    pub intersection: Vec<u64>,
    /// `|M_i|` per detector.
    pub detector_area: Vec<u64>,
    /// `|L_c|` per concept.
    pub concept_area: Vec<u64>,
    pub images: usize,
}

impl IoUCounts {
    pub fn zeros(detectors: usize, concepts: usize) -> Self {
        Self {
            detectors,
            concepts,
            intersection: vec![0; detectors * concepts],
            detector_area: vec![0; detectors],
            concept_area: vec![0; concepts],
            images: 0,
        }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.intersection.iter_mut().zip(&other.intersection) {
            *a += b;
        }
        for (a, b) in self.detector_area.iter_mut().zip(&other.detector_area) {
            *a += b;
        }
        for (a, b) in self.concept_area.iter_mut().zip(&other.concept_area) {
            *a += b;
        }
        self.images += other.images;
        self
    }

    pub fn intersection(&self, i: usize, c: usize) -> u64 {
        self.intersection[i * self.concepts + c]
    }

    pub fn union(&self, i: usize, c: usize) -> u64 {
        self.detector_area[i] + self.concept_area[c] - self.intersection(i, c)
    }

    pub fn to_table(&self, split: Split) -> IoUTable {
        let phi = DMatrix::from_fn(self.detectors, self.concepts, |i, c| {
            let u = self.union(i, c);
            if u == 0 {
                0.0
            } else {
                self.intersection(i, c) as f64 / u as f64
            }
        });
        IoUTable {
            phi,
            split,
            counts: self.clone(),
        }
    }
}

/// Counts for one image: detector maps at feature resolution are upsampled to the
/// mask resolution `(mask_h, mask_w)`; `masks` pairs concept indices with masks.
pub fn image_counts(
    detectors: &DetectorSet,
    features: &Tensor,
    masks: &[(usize, BinaryMask)],
    mask_h: usize,
    mask_w: usize,
    concepts: usize,
) -> Result<IoUCounts> {
    let (h, w) = check_features(features, detectors.dim())?;
    let mut counts = IoUCounts::zeros(detectors.len(), concepts);
    counts.images = 1;
    for (c, m) in masks {
        if *c >= concepts {
            return Err(Error::Reference(format!(
                "concept index {} out of range",
                c
            )));
        }
        if (m.height, m.width) != (mask_h, mask_w) {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{}, image is {}x{}",
                m.height, m.width, mask_h, mask_w
            )));
        }
        counts.concept_area[*c] += m.count() as u64;
    }
    for i in 0..detectors.len() {
        let native = binarized_map(
            features,
            &row_vec(&detectors.directions, i),
            detectors.biases[i],
        )?;
        let map = upsample_binary(&native, h, w, mask_h, mask_w)?;
        counts.detector_area[i] = map.iter().filter(|&&b| b).count() as u64;
        for (c, m) in masks {
            let inter = map.iter().zip(&m.bits).filter(|(&a, &b)| a && b).count() as u64;
            counts.intersection[i * concepts + c] += inter;
        }
    }
    Ok(counts)
}

/// Detector-by-concept IoU over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct IoUTable {
    /// `I x C`, entries in `[0, 1]`.
    pub phi: DMatrix<f64>,
    pub split: Split,
    pub counts: IoUCounts,
}

/// Accumulates counts over the annotated images of `split`, then divides.
pub fn compute_iou_table(
    detectors: &DetectorSet,
    features: &FeatureDataset,
    split: Split,
    concepts: &ConceptDataset,
) -> Result<IoUTable> {
    if features.layer_dim() != detectors.dim() {
        return Err(Error::DimensionMismatch(format!(
            "detectors have D = {}, features have D = {}",
            detectors.dim(),
            features.layer_dim()
        )));
    }
    let n_concepts = concepts.concepts().len();
    let indices: Vec<usize> = features
        .images()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == split && concepts.image_size(&r.id).is_some())
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::Empty(format!(
            "no annotated images in the {} split",
            split
        )));
    }
    let per_image: Vec<IoUCounts> = indices
        .par_iter()
        .map(|&idx| {
            let rec = &features.images()[idx];
            let (mh, mw) = concepts.image_size(&rec.id).expect("filtered above");
            let t = features.load_image(idx)?;
            let masks = concepts
                .masks_for_image(&rec.id)
                .iter()
                .map(|&m| Ok((concepts.masks()[m].concept, concepts.load_mask(m)?)))
                .collect::<Result<Vec<_>>>()?;
            image_counts(detectors, &t, &masks, mh, mw, n_concepts)
        })
        .collect::<Result<_>>()?;
    let total = per_image
        .iter()
        .fold(IoUCounts::zeros(detectors.len(), n_concepts), |acc, c| {
            acc.merge(c)
        });
    Ok(total.to_table(split))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    /// Index into the concept vocabulary (sorted by id).
    pub concept: usize,
    pub train_score: f64,
    /// Set when the detector's best train IoU is zero.
    pub degenerate: bool,
}

/// Row-wise argmax; ties go to the lowest concept index.
pub fn assign_labels(table: &IoUTable) -> Result<Vec<Label>> {
    if table.phi.nrows() == 0 || table.phi.ncols() == 0 {
        return Err(Error::Empty("IoU table is empty".into()));
    }
    Ok((0..table.phi.nrows())
        .map(|i| {
            let mut best = 0;
            for c in 1..table.phi.ncols() {
                if table.phi[(i, c)] > table.phi[(i, best)] {
                    best = c;
                }
            }
            let score = table.phi[(i, best)];
            Label {
                concept: best,
                train_score: score,
                degenerate: score == 0.0,
            }
        })
        .collect())
}

/// `phi(i, label_i)` over the val split.
pub fn validation_scores(
    detectors: &DetectorSet,
    labels: &[Label],
    features: &FeatureDataset,
    concepts: &ConceptDataset,
) -> Result<Vec<f64>> {
    if labels.len() != detectors.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} detectors",
            labels.len(),
            detectors.len()
        )));
    }
    let table = compute_iou_table(detectors, features, Split::Val, concepts)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, l)| table.phi[(i, l.concept)])
        .collect())
}

/// Labels from the train split and scores from the val split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBasis {
    pub detectors: DetectorSet,
    pub labels: Vec<Label>,
    pub val_scores: Vec<f64>,
    pub train_table: IoUTable,
}

pub fn label_and_score(
    detectors: DetectorSet,
    features: &FeatureDataset,
    concepts: &ConceptDataset,
) -> Result<LabeledBasis> {
    let train_table = compute_iou_table(&detectors, features, Split::Train, concepts)?;
    let labels = assign_labels(&train_table)?;
    let val_scores = validation_scores(&detectors, &labels, features, concepts)?;
    Ok(LabeledBasis {
        detectors,
        labels,
        val_scores,
        train_table,
    })
}

/// Type-7 quantile of sorted data at probability `p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-direction thresholds leaving the top `q` fraction of projections above them.
pub fn quantile_thresholds(
    ds: &FeatureDataset,
    directions: &DMatrix<f64>,
    q: f64,
) -> Result<Vec<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "quantile {} must lie in (0, 1)",
            q
        )));
    }
    if directions.ncols() != ds.layer_dim() {
        return Err(Error::DimensionMismatch(format!(
            "directions have D = {}, features have D = {}",
            directions.ncols(),
            ds.layer_dim()
        )));
    }
    if ds.pixel_count() == 0 {
        return Err(Error::Empty("no pixels to take quantiles over".into()));
    }
    let mut projections: Vec<Vec<f64>> =
        vec![Vec::with_capacity(ds.pixel_count()); directions.nrows()];
    for idx in 0..ds.len() {
        let t = ds.load_image(idx)?;
        for (i, proj) in projections.iter_mut().enumerate() {
            let w = row_vec(directions, i);
            proj.extend(project(t.data(), &w));
        }
    }
    Ok(projections
        .into_par_iter()
        .map(|mut p| {
            p.sort_by(f64::total_cmp);
            quantile_sorted(&p, 1.0 - q)
        })
        .collect())
}

pub fn iou_table_csv(table: &IoUTable, concepts: &[Concept]) -> String {
    let mut out = String::from("detector,concept_id,concept_name,intersection,union,iou\n");
    for i in 0..table.phi.nrows() {
        for (c, concept) in concepts.iter().enumerate().take(table.phi.ncols()) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i,
                concept.id,
                csv_field(&concept.name),
                table.counts.intersection(i, c),
                table.counts.union(i, c),
                table.phi[(i, c)]
            );
        }
    }
    out
}

pub fn labels_csv(basis: &LabeledBasis, concepts: &[Concept]) -> String {
    let mut out =
        String::from("detector,concept_id,concept_name,bias,train_iou,val_iou,degenerate\n");
    for (i, (l, v)) in basis.labels.iter().zip(&basis.val_scores).enumerate() {
        let c = &concepts[l.concept];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            i,
            c.id,
            csv_field(&c.name),
            basis.detectors.biases[i],
            l.train_score,
            v,
            l.degenerate
        );
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
