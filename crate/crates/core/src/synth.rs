//! Synthetic feature datasets with a known, hidden rotation.
//!
//! Canonical features put one active coordinate per concept group on the axis of the
//! chosen concept (axes `0..K`, groups laid out consecutively); the remaining axes carry
//! noise only. Emitted pixels are `x = R c`, so concept `k` points along column `k` of `R`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orthobasis::{cayley, param_count, skew_from_params};
use crate::tensorstore::{
    read_json, write_json, Concept, ConceptDataset, ConceptDatasetWriter, FeatureDataset,
    FeatureDatasetWriter, Split, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub dim: usize,
    pub group_sizes: Vec<usize>,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub magnitude_low: f64,
    pub magnitude_high: f64,
    pub noise_sigma: f64,
    /// Standard deviation of the skew entries fed to the Cayley transform.
    pub rotation_scale: f64,
    pub rotation_seed: u64,
    pub data_seed: u64,
    pub val_fraction: f64,
    /// Masks are written at `mask_upscale` times the feature resolution.
    pub mask_upscale: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            group_sizes: vec![4, 3],
            images: 200,
            height: 8,
            width: 8,
            magnitude_low: 1.0,
            magnitude_high: 2.0,
            noise_sigma: 0.05,
            rotation_scale: 1.0,
            rotation_seed: 0,
            data_seed: 1,
            val_fraction: 0.2,
            mask_upscale: 2,
        }
    }
}

impl SynthConfig {
    pub fn concept_count(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return bad("group_sizes must be nonempty with positive entries");
        }
        if self.concept_count() > self.dim {
            return Err(Error::InvalidConfig(format!(
                "{} concepts do not fit in {} dimensions",
                self.concept_count(),
                self.dim
            )));
        }
        if self.images == 0 || self.height == 0 || self.width == 0 || self.mask_upscale == 0 {
            return bad("images, height, width, and mask_upscale must be positive");
        }
        if !(self.magnitude_low.is_finite()
            && self.magnitude_high.is_finite()
            && 0.0 <= self.magnitude_low
            && self.magnitude_low <= self.magnitude_high)
        {
            return bad("magnitudes need 0 <= magnitude_low <= magnitude_high");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and nonnegative");
        }
        if !(self.rotation_scale.is_finite() && self.rotation_scale >= 0.0) {
            return bad("rotation_scale must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// The hidden rotation drawn from `rotation_seed`.
    pub fn rotation(&self) -> Result<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rotation_seed);
        let normal = Normal::new(0.0, self.rotation_scale.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let theta: Vec<f64> = (0..param_count(self.dim))
            .map(|_| {
                if self.rotation_scale == 0.0 {
                    0.0
                } else {
                    normal.sample(&mut rng)
                }
            })
            .collect();
        Ok(cayley(&skew_from_params(&theta, self.dim)?)?
            .matrix()
            .clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthGroundTruth {
    pub rotation: DMatrix<f64>,
    pub group_sizes: Vec<usize>,
    /// Per image, `H * W * groups` chosen concept ids, pixel-major.
    pub assignments: Vec<Vec<u32>>,
}

impl SynthGroundTruth {
    pub fn concept_count(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// `K x D` unit concept directions (columns of the rotation).
    pub fn concept_directions(&self) -> DMatrix<f64> {
        let k = self.concept_count();
        self.rotation.columns(0, k).transpose()
    }

    pub fn group_of(&self, concept: usize) -> usize {
        let mut start = 0;
        for (g, &n) in self.group_sizes.iter().enumerate() {
            if concept < start + n {
                return g;
            }
            start += n;
        }
        self.group_sizes.len()
    }
}

/// One generated image with its per-concept masks at mask resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub split: Split,
    pub features: Tensor,
    /// `(concept id, mask)` for concepts present in the image.
    pub masks: Vec<(u32, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub config: SynthConfig,
    pub images: Vec<SynthImage>,
    pub truth: SynthGroundTruth,
}

pub fn concept_name(group: usize, index: usize) -> String {
    format!("g{}_c{}", group, index)
}

/// Generates everything in memory with the configured rotation.
pub fn sample(cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    sample_with_rotation(cfg, cfg.rotation()?)
}

/// Generates with an explicit rotation; all randomness other than `R` comes from `data_seed`.
pub fn sample_with_rotation(cfg: &SynthConfig, rotation: DMatrix<f64>) -> Result<SynthSample> {
    cfg.validate()?;
    let d = cfg.dim;
    if rotation.shape() != (d, d) {
        return Err(Error::Shape(format!(
            "rotation is {:?}, expected {}x{}",
            rotation.shape(),
            d,
            d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let magnitude = Uniform::new_inclusive(cfg.magnitude_low, cfg.magnitude_high)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noise =
        Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let n_val = (cfg.images as f64 * cfg.val_fraction).round() as usize;
    if n_val >= cfg.images {
        return Err(Error::InvalidConfig(
            "val_fraction leaves no train images".into(),
        ));
    }
    let mut order: Vec<usize> = (0..cfg.images).collect();
    order.shuffle(&mut rng);
    let mut is_val = vec![false; cfg.images];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }

    let groups = cfg.group_sizes.len();
    let offsets: Vec<usize> = cfg
        .group_sizes
        .iter()
        .scan(0, |acc, &n| {
            let start = *acc;
            *acc += n;
            Some(start)
        })
        .collect();
    let (h, w) = (cfg.height, cfg.width);
    let pixels = h * w;
    let (mh, mw) = (h * cfg.mask_upscale, w * cfg.mask_upscale);
    let mut images = Vec::with_capacity(cfg.images);
    let mut assignments = Vec::with_capacity(cfg.images);
    let mut canonical = vec![0.0f64; d];

    for img in 0..cfg.images {
        let mut data = Vec::with_capacity(pixels * d);
        let mut chosen = Vec::with_capacity(pixels * groups);
        for _ in 0..pixels {
            for v in canonical.iter_mut() {
                *v = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
            }
            for g in 0..groups {
                let c = offsets[g] + rng.random_range(0..cfg.group_sizes[g]);
                canonical[c] += magnitude.sample(&mut rng);
                chosen.push(c as u32);
            }
            for r in 0..d {
                let mut acc = 0.0;
                for (k, &v) in canonical.iter().enumerate() {
                    acc += rotation[(r, k)] * v;
                }
                data.push(acc as f32);
            }
        }
        let features = Tensor::new(vec![h, w, d], data)?;

        let mut masks = Vec::new();
        for c in 0..cfg.concept_count() {
            let g = offsets.iter().rposition(|&o| o <= c).unwrap_or(0);
            let present: Vec<bool> = (0..pixels)
                .map(|p| chosen[p * groups + g] == c as u32)
                .collect();
            if !present.iter().any(|&b| b) {
                continue;
            }
            let mut m = vec![0.0f32; mh * mw];
            for y in 0..mh {
                for x in 0..mw {
                    let p = (y / cfg.mask_upscale) * w + x / cfg.mask_upscale;
                    if present[p] {
                        m[y * mw + x] = 1.0;
                    }
                }
            }
            masks.push((c as u32, Tensor::new(vec![mh, mw], m)?));
        }
        images.push(SynthImage {
            id: format!("img{:04}", img),
            split: if is_val[img] {
                Split::Val
            } else {
                Split::Train
            },
            features,
            masks,
        });
        assignments.push(chosen);
    }
    Ok(SynthSample {
        config: cfg.clone(),
        images,
        truth: SynthGroundTruth {
            rotation,
            group_sizes: cfg.group_sizes.clone(),
            assignments,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    format: String,
    version: u32,
    dim: usize,
    group_sizes: Vec<usize>,
    /// Concept `k` is column `k` of the rotation.
    concept_axes: Vec<usize>,
    rotation: String,
    config: SynthConfig,
}

pub const TRUTH_FORMAT: &str = "unibasis-synth-truth";

/// Paths of a dataset written by [`generate`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub features: FeatureDataset,
    pub concepts: ConceptDataset,
    pub truth: SynthGroundTruth,
    pub features_manifest: PathBuf,
    pub concepts_manifest: PathBuf,
}

/// Writes `features.json`, `concepts.json`, their tensors, `truth.json`, and `rotation.uibf` under `dir`.
pub fn generate(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<SynthOutput> {
    let s = sample(cfg)?;
    write_sample(&s, dir)
}

pub fn write_sample(s: &SynthSample, dir: impl AsRef<Path>) -> Result<SynthOutput> {
    let dir = dir.as_ref();
    let cfg = &s.config;
    let mut fw = FeatureDatasetWriter::new(dir, cfg.dim);
    let mut concepts = Vec::new();
    let mut id = 0u32;
    for (g, &n) in cfg.group_sizes.iter().enumerate() {
        for j in 0..n {
            concepts.push(Concept {
                id,
                name: concept_name(g, j),
                category: format!("group{}", g),
            });
            id += 1;
        }
    }
    let mut cw = ConceptDatasetWriter::new(dir, concepts);
    let (mh, mw) = (cfg.height * cfg.mask_upscale, cfg.width * cfg.mask_upscale);
    for img in &s.images {
        fw.add_image(&img.id, img.split, &img.features)?;
        cw.add_image(&img.id, mh, mw);
        for (c, m) in &img.masks {
            cw.add_mask(&img.id, *c, m)?;
        }
    }
    let meta = serde_json::json!({ "generator": "synth" });
    let features_manifest = fw.finish(Some(meta.clone()))?;
    let concepts_manifest = cw.finish(Some(meta))?;

    let rot = &s.truth.rotation;
    let data: Vec<f32> = (0..cfg.dim)
        .flat_map(|r| (0..cfg.dim).map(move |c| rot[(r, c)] as f32))
        .collect();
    Tensor::new(vec![cfg.dim, cfg.dim], data)?.write(dir.join("rotation.uibf"))?;
    write_json(
        &dir.join("truth.json"),
        &TruthFile {
            format: TRUTH_FORMAT.into(),
            version: 1,
            dim: cfg.dim,
            group_sizes: cfg.group_sizes.clone(),
            concept_axes: (0..cfg.concept_count()).collect(),
            rotation: "rotation.uibf".into(),
            config: cfg.clone(),
        },
    )?;

    let features = FeatureDataset::load(&features_manifest)?;
    let concepts = ConceptDataset::load(&concepts_manifest, &features)?;
    Ok(SynthOutput {
        features,
        concepts,
        truth: s.truth.clone(),
        features_manifest,
        concepts_manifest,
    })
}

/// Reads `truth.json` back; the rotation is reloaded at f32 precision and assignments are not stored.
pub fn load_truth(dir: impl AsRef<Path>) -> Result<SynthGroundTruth> {
    let dir = dir.as_ref();
    let path = dir.join("truth.json");
    let file: TruthFile = read_json(&path)?;
    if file.format != TRUTH_FORMAT {
        return Err(Error::manifest(
            &path,
            format!("unexpected format {:?}", file.format),
        ));
    }
    let t = Tensor::read(dir.join(&file.rotation))?;
    if t.shape() != [file.dim, file.dim] {
        return Err(Error::DimensionMismatch(format!(
            "rotation tensor has shape {:?}, expected [{}, {}]",
            t.shape(),
            file.dim,
            file.dim
        )));
    }
    let rotation =
        DMatrix::from_row_iterator(file.dim, file.dim, t.data().iter().map(|&v| f64::from(v)));
    Ok(SynthGroundTruth {
        rotation,
        group_sizes: file.group_sizes,
        assignments: Vec::new(),
    })
}

/// Optimal one-to-one matching between learned rows and ground-truth concept axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatch {
    /// `(learned row, concept)` pairs, sorted by concept.
    pub pairs: Vec<(usize, usize)>,
    /// `|cos|` per pair, aligned with `pairs`.
    pub abs_cosines: Vec<f64>,
}

impl BasisMatch {
    pub fn total(&self) -> f64 {
        self.abs_cosines.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.abs_cosines
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.abs_cosines.len().max(1) as f64
    }
}

/// `|cos|` between every learned row and every concept axis, `I x K`.
pub fn abs_cosine_matrix(rows: &DMatrix<f64>, truth: &SynthGroundTruth) -> Result<DMatrix<f64>> {
    let axes = truth.concept_directions();
    if rows.ncols() != axes.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "learned rows have width {}, ground truth has D = {}",
            rows.ncols(),
            axes.ncols()
        )));
    }
    if rows.nrows() == 0 || rows.nrows() > rows.ncols() {
        return Err(Error::Shape(format!(
            "expected 1..={} learned rows, got {}",
            rows.ncols(),
            rows.nrows()
        )));
    }
    let norms: Vec<f64> = rows.row_iter().map(|r| r.norm()).collect();
    if let Some(r) = norms.iter().position(|&n| !(n > 1e-12) || !n.is_finite()) {
        return Err(Error::Numerical(format!("learned row {} is degenerate", r)));
    }
    let axis_norms: Vec<f64> = axes.row_iter().map(|r| r.norm()).collect();
    Ok(DMatrix::from_fn(rows.nrows(), axes.nrows(), |i, k| {
        (rows.row(i).dot(&axes.row(k)) / (norms[i] * axis_norms[k])).abs()
    }))
}

/// Maximizes the summed `|cos|` over one-to-one assignments.
pub fn match_basis(rows: &DMatrix<f64>, truth: &SynthGroundTruth) -> Result<BasisMatch> {
    let cos = abs_cosine_matrix(rows, truth)?;
    let assignment = max_weight_assignment(&cos);
    let mut pairs: Vec<(usize, usize)> = assignment
        .iter()
        .enumerate()
        .filter_map(|(i, k)| k.map(|k| (i, k)))
        .collect();
    pairs.sort_by_key(|&(_, k)| k);
    let abs_cosines = pairs.iter().map(|&(i, k)| cos[(i, k)]).collect();
    Ok(BasisMatch { pairs, abs_cosines })
}

/// Hungarian algorithm on a rectangular weight matrix (maximization).
///
/// Returns, for each row, the assigned column; `min(rows, cols)` pairs are made.
pub fn max_weight_assignment(weights: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (nr, nc) = weights.shape();
    let transposed = nr > nc;
    let (n, m) = if transposed { (nc, nr) } else { (nr, nc) };
    let cost = |i: usize, j: usize| -> f64 {
        if transposed {
            -weights[(j, i)]
        } else {
            -weights[(i, j)]
        }
    };
    // Potentials and matching with 1-based indexing; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; nr];
    for j in 1..=m {
        if p[j] != 0 {
            let (row, col) = if transposed {
                (j - 1, p[j] - 1)
            } else {
                (p[j] - 1, j - 1)
            };
            out[row] = Some(col);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthobasis::orthogonality_error;

    fn small() -> SynthConfig {
        SynthConfig {
            dim: 6,
            group_sizes: vec![2, 2],
            images: 5,
            height: 3,
            width: 4,
            ..Default::default()
        }
    }

    fn brute_force_best(w: &DMatrix<f64>) -> f64 {
        fn rec(w: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == w.nrows() {
                *best = best.max(acc);
                return;
            }
            for c in 0..w.ncols() {
                if !used[c] {
                    used[c] = true;
                    rec(w, row + 1, used, acc + w[(row, c)], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        rec(w, 0, &mut vec![false; w.ncols()], 0.0, &mut best);
        best
    }

    #[test]
    fn noiseless_identity_is_one_hot_per_group() {
        let cfg = SynthConfig {
            group_sizes: vec![2],
            noise_sigma: 0.0,
            rotation_scale: 0.0,
            ..small()
        };
        let s = sample(&cfg).unwrap();
        assert_eq!(s.truth.rotation, DMatrix::identity(6, 6));
        for (img, a) in s.images.iter().zip(&s.truth.assignments) {
            for (p, px) in img.features.data().chunks(6).enumerate() {
                let support: Vec<usize> = (0..6).filter(|&k| px[k] != 0.0).collect();
                assert_eq!(support, vec![a[p] as usize]);
                assert!((1.0..=2.0).contains(&px[a[p] as usize]));
            }
        }
    }

    #[test]
    fn deterministic_in_seeds() {
        let a = sample(&small()).unwrap();
        let b = sample(&small()).unwrap();
        assert_eq!(a, b);
        let c = sample(&SynthConfig {
            data_seed: 99,
            ..small()
        })
        .unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn rotation_is_orthogonal() {
        for d in [2, 16, 32] {
            let r = SynthConfig {
                dim: d,
                group_sizes: vec![1],
                ..small()
            }
            .rotation()
            .unwrap();
            assert!(orthogonality_error(&r) < 1e-10);
        }
    }

    #[test]
    fn unrotating_recovers_sparsity() {
        let cfg = SynthConfig {
            noise_sigma: 0.01,
            ..small()
        };
        let s = sample(&cfg).unwrap();
        let rt = s.truth.rotation.transpose();
        for img in &s.images {
            for px in img.features.data().chunks(cfg.dim) {
                let x = nalgebra::DVector::from_iterator(cfg.dim, px.iter().map(|&v| f64::from(v)));
                let c = &rt * x;
                let active = c.iter().filter(|v| v.abs() > 0.5).count();
                assert_eq!(active, cfg.group_sizes.len());
            }
        }
    }

    #[test]
    fn masks_partition_each_group() {
        let cfg = SynthConfig {
            mask_upscale: 3,
            ..small()
        };
        let s = sample(&cfg).unwrap();
        let (mh, mw) = (cfg.height * 3, cfg.width * 3);
        for img in &s.images {
            for (g, &n) in cfg.group_sizes.iter().enumerate() {
                let start: usize = cfg.group_sizes[..g].iter().sum();
                let mut count = vec![0u32; mh * mw];
                for (c, m) in &img.masks {
                    let c = *c as usize;
                    if (start..start + n).contains(&c) {
                        assert_eq!(m.shape(), &[mh, mw]);
                        for (k, &v) in m.data().iter().enumerate() {
                            count[k] += v as u32;
                        }
                    }
                }
                assert!(count.iter().all(|&n| n == 1));
            }
        }
    }

    #[test]
    fn equivariant_in_rotation() {
        let cfg = small();
        let r = cfg.rotation().unwrap();
        let q = SynthConfig {
            rotation_seed: 7,
            ..cfg.clone()
        }
        .rotation()
        .unwrap();
        let a = sample_with_rotation(&cfg, r.clone()).unwrap();
        let b = sample_with_rotation(&cfg, &q * &r).unwrap();
        for (ia, ib) in a.images.iter().zip(&b.images) {
            for (pa, pb) in ia
                .features
                .data()
                .chunks(6)
                .zip(ib.features.data().chunks(6))
            {
                let x = nalgebra::DVector::from_iterator(6, pa.iter().map(|&v| f64::from(v)));
                let qx = &q * x;
                for k in 0..6 {
                    assert!((qx[k] - f64::from(pb[k])).abs() < 1e-5);
                }
            }
            assert_eq!(ia.masks, ib.masks);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                group_sizes: vec![4, 3],
                dim: 6,
                ..small()
            },
            SynthConfig {
                noise_sigma: -1.0,
                ..small()
            },
            SynthConfig {
                group_sizes: vec![],
                ..small()
            },
            SynthConfig {
                images: 0,
                ..small()
            },
            SynthConfig {
                val_fraction: 1.0,
                ..small()
            },
        ] {
            assert!(matches!(sample(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn matching_true_axes_is_perfect() {
        let s = sample(&small()).unwrap();
        let axes = s.truth.concept_directions();
        let m = match_basis(&axes, &s.truth).unwrap();
        assert!(m.abs_cosines.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        // signed and permuted
        let mut w = DMatrix::zeros(4, 6);
        for (dst, (src, sign)) in [(2, 1.0), (0, -1.0), (3, -1.0), (1, 1.0)]
            .iter()
            .enumerate()
        {
            w.row_mut(dst).copy_from(&(axes.row(*src) * *sign));
        }
        let m = match_basis(&w, &s.truth).unwrap();
        assert!(m.abs_cosines.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert_eq!(m.pairs, vec![(1, 0), (3, 1), (0, 2), (2, 3)]);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = rng.random_range(1..=6);
            let c = rng.random_range(r..=7);
            let w = DMatrix::from_fn(r, c, |_, _| rng.random_range(0.0..1.0));
            let a = max_weight_assignment(&w);
            let total: f64 = a.iter().enumerate().map(|(i, k)| w[(i, k.unwrap())]).sum();
            assert!((total - brute_force_best(&w)).abs() < 1e-12);
            let wt = w.transpose();
            let at = max_weight_assignment(&wt);
            let total_t: f64 = at
                .iter()
                .enumerate()
                .filter_map(|(i, k)| k.map(|k| wt[(i, k)]))
                .sum();
            assert!((total_t - total).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_rows_rejected() {
        let s = sample(&small()).unwrap();
        assert!(match_basis(&DMatrix::zeros(2, 6), &s.truth).is_err());
        assert!(match_basis(&DMatrix::identity(2, 5), &s.truth).is_err());
    }

    #[test]
    fn write_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&small(), dir.path()).unwrap();
        assert_eq!(out.features.len(), 5);
        assert_eq!(out.concepts.concepts().len(), 4);
        let t = load_truth(dir.path()).unwrap();
        assert!((t.rotation - &out.truth.rotation).amax() < 1e-6);
        assert_eq!(t.group_sizes, vec![2, 2]);
    }
}
