use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::codec::{read_header, Tensor};
use super::manifest::{
    ConceptEntry, ConceptImage, ConceptManifest, FeatureImage, FeatureManifest, MaskEntry, Split,
    CONCEPTS_FORMAT, FEATURES_FORMAT, MANIFEST_VERSION,
};
use crate::error::{Error, Result};

/// One image's activation cuboid, referenced lazily.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub split: Split,
}

impl ImageRecord {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-image `[H, W, D]` activation cuboids sharing one layer dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    layer_dim: usize,
    images: Vec<ImageRecord>,
    meta: Option<serde_json::Value>,
}

impl FeatureDataset {
    /// Loads and validates a `features.json` manifest. Only tensor headers are read here.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = FeatureManifest::read(manifest_path)?;
        let root = manifest_dir(manifest_path);
        if manifest.layer_dim == 0 {
            return Err(Error::manifest(manifest_path, "layer_dim must be positive"));
        }
        let mut seen = HashSet::new();
        let mut images = Vec::with_capacity(manifest.images.len());
        for entry in manifest.images {
            if !seen.insert(entry.id.clone()) {
                return Err(Error::DuplicateId(format!(
                    "image {:?} listed twice in {}",
                    entry.id,
                    manifest_path.display()
                )));
            }
            let path = root.join(&entry.path);
            let header = read_header(&path)?;
            let expected = [entry.height, entry.width, manifest.layer_dim];
            if header.shape.len() != 3 || header.shape[2] != manifest.layer_dim {
                return Err(Error::DimensionMismatch(format!(
                    "{} has shape {:?}, manifest declares D = {}",
                    path.display(),
                    header.shape,
                    manifest.layer_dim
                )));
            }
            if header.shape != expected {
                return Err(Error::DimensionMismatch(format!(
                    "{} has shape {:?}, manifest declares {:?}",
                    path.display(),
                    header.shape,
                    expected
                )));
            }
            images.push(ImageRecord {
                id: entry.id,
                path,
                height: entry.height,
                width: entry.width,
                split: entry.split,
            });
        }
        Ok(Self {
            layer_dim: manifest.layer_dim,
            images,
            meta: manifest.meta,
        })
    }

    pub fn from_records(layer_dim: usize, images: Vec<ImageRecord>) -> Self {
        Self {
            layer_dim,
            images,
            meta: None,
        }
    }

    pub fn layer_dim(&self) -> usize {
        self.layer_dim
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn meta(&self) -> Option<&serde_json::Value> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.images.iter().map(ImageRecord::pixels).sum()
    }

    /// Images of one split, in manifest order.
    pub fn split(&self, split: Split) -> Self {
        Self {
            layer_dim: self.layer_dim,
            images: self
                .images
                .iter()
                .filter(|r| r.split == split)
                .cloned()
                .collect(),
            meta: self.meta.clone(),
        }
    }

    /// Copy with images ordered by id; used to compare datasets built from permuted manifests.
    pub fn sorted_by_id(&self) -> Self {
        let mut out = self.clone();
        out.images.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn load_image(&self, index: usize) -> Result<Tensor> {
        let rec = &self.images[index];
        let t = Tensor::read(&rec.path)?;
        if t.shape() != [rec.height, rec.width, self.layer_dim] {
            return Err(Error::DimensionMismatch(format!(
                "{} changed shape to {:?} after manifest load",
                rec.path.display(),
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.images.iter().position(|r| r.id == image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub id: u32,
    pub name: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRecord {
    pub image_id: String,
    /// Index into [`ConceptDataset::concepts`], which is sorted by concept id.
    pub concept: usize,
    pub path: PathBuf,
}

/// Binary segmentation mask at image resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Per-(image, concept) segmentation masks plus the concept vocabulary.
///
/// A missing (image, concept) mask means the concept is absent from that image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDataset {
    concepts: Vec<Concept>,
    image_sizes: BTreeMap<String, (usize, usize)>,
    masks: Vec<MaskRecord>,
    by_image: HashMap<String, Vec<usize>>,
}

impl ConceptDataset {
    pub fn load(manifest_path: impl AsRef<Path>, features: &FeatureDataset) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = ConceptManifest::read(manifest_path)?;
        let root = manifest_dir(manifest_path);

        if manifest.concepts.is_empty() {
            return Err(Error::Empty(format!(
                "{} lists no concepts; labeling is impossible",
                manifest_path.display()
            )));
        }
        let mut concepts: Vec<Concept> = manifest
            .concepts
            .into_iter()
            .map(|c| Concept {
                id: c.id,
                name: c.name,
                category: c.category,
            })
            .collect();
        concepts.sort_by_key(|c| c.id);
        for pair in concepts.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(format!("concept id {}", pair[0].id)));
            }
        }
        let index_of: HashMap<u32, usize> = concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id, i))
            .collect();

        let known: HashSet<&str> = features.images().iter().map(|r| r.id.as_str()).collect();
        let mut image_sizes = BTreeMap::new();
        for img in &manifest.images {
            if !known.contains(img.id.as_str()) {
                return Err(Error::Reference(format!(
                    "concept manifest image {:?} is not in the feature dataset",
                    img.id
                )));
            }
            if img.height == 0 || img.width == 0 {
                return Err(Error::manifest(
                    manifest_path,
                    format!("image {:?} has zero size", img.id),
                ));
            }
            if image_sizes
                .insert(img.id.clone(), (img.height, img.width))
                .is_some()
            {
                return Err(Error::DuplicateId(format!("concept image {:?}", img.id)));
            }
        }

        let mut masks = Vec::with_capacity(manifest.masks.len());
        let mut seen_pairs = HashSet::new();
        for m in manifest.masks {
            let &(h, w) = image_sizes.get(&m.image).ok_or_else(|| {
                Error::Reference(format!("mask references unknown image {:?}", m.image))
            })?;
            let concept = *index_of.get(&m.concept).ok_or_else(|| {
                Error::Reference(format!(
                    "mask for image {:?} references concept {} missing from the vocabulary",
                    m.image, m.concept
                ))
            })?;
            if !seen_pairs.insert((m.image.clone(), m.concept)) {
                return Err(Error::DuplicateId(format!(
                    "mask ({:?}, {}) listed twice",
                    m.image, m.concept
                )));
            }
            let path = root.join(&m.path);
            let header = read_header(&path)?;
            if header.shape != [h, w] {
                return Err(Error::DimensionMismatch(format!(
                    "mask {} has shape {:?}, image size is [{}, {}]",
                    path.display(),
                    header.shape,
                    h,
                    w
                )));
            }
            masks.push(MaskRecord {
                image_id: m.image,
                concept,
                path,
            });
        }
        let mut by_image: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, m) in masks.iter().enumerate() {
            by_image.entry(m.image_id.clone()).or_default().push(i);
        }
        Ok(Self {
            concepts,
            image_sizes,
            masks,
            by_image,
        })
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn masks(&self) -> &[MaskRecord] {
        &self.masks
    }

    pub fn image_size(&self, image_id: &str) -> Option<(usize, usize)> {
        self.image_sizes.get(image_id).copied()
    }

    /// Indices into [`Self::masks`] for one image.
    pub fn masks_for_image(&self, image_id: &str) -> &[usize] {
        self.by_image.get(image_id).map_or(&[], Vec::as_slice)
    }

    /// Loads a mask and binarizes it with `value > 0.5`.
    pub fn load_mask(&self, index: usize) -> Result<BinaryMask> {
        let rec = &self.masks[index];
        let t = Tensor::read(&rec.path)?;
        let shape = t.shape();
        if shape.len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "mask {} is not 2-D",
                rec.path.display()
            )));
        }
        binarize_mask(shape[0], shape[1], t.data())
            .map_err(|msg| Error::Format(format!("{}: {}", rec.path.display(), msg)))
    }
}

/// Values above 0.5 become 1; values outside `[0, 1]` are rejected as non-binary.
pub fn binarize_mask(height: usize, width: usize, values: &[f32]) -> Result<BinaryMask, String> {
    let mut bits = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("mask value {} at index {} is outside [0, 1]", v, i));
        }
        bits.push(v > 0.5);
    }
    Ok(BinaryMask {
        height,
        width,
        bits,
    })
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Writes a feature dataset directory: one UIBF tensor per image plus `features.json`.
pub struct FeatureDatasetWriter {
    dir: PathBuf,
    manifest: FeatureManifest,
}

impl FeatureDatasetWriter {
    pub fn new(dir: impl Into<PathBuf>, layer_dim: usize) -> Self {
        Self {
            dir: dir.into(),
            manifest: FeatureManifest {
                format: FEATURES_FORMAT.into(),
                version: MANIFEST_VERSION,
                layer_dim,
                images: Vec::new(),
                meta: None,
            },
        }
    }

    pub fn add_image(&mut self, id: &str, split: Split, features: &Tensor) -> Result<()> {
        let shape = features.shape();
        if shape.len() != 3 || shape[2] != self.manifest.layer_dim {
            return Err(Error::DimensionMismatch(format!(
                "image {:?} has shape {:?}, dataset D = {}",
                id, shape, self.manifest.layer_dim
            )));
        }
        let rel = format!("features/{}.uibf", id);
        features.write(self.dir.join(&rel))?;
        self.manifest.images.push(FeatureImage {
            id: id.to_string(),
            path: rel,
            height: shape[0],
            width: shape[1],
            split,
        });
        Ok(())
    }

    pub fn finish(mut self, meta: Option<serde_json::Value>) -> Result<PathBuf> {
        self.manifest.meta = meta;
        let path = self.dir.join("features.json");
        self.manifest.write(&path)?;
        Ok(path)
    }
}

/// Writes a concept dataset: one UIBF mask per (image, concept) plus `concepts.json`.
pub struct ConceptDatasetWriter {
    dir: PathBuf,
    manifest: ConceptManifest,
}

impl ConceptDatasetWriter {
    pub fn new(dir: impl Into<PathBuf>, concepts: Vec<Concept>) -> Self {
        Self {
            dir: dir.into(),
            manifest: ConceptManifest {
                format: CONCEPTS_FORMAT.into(),
                version: MANIFEST_VERSION,
                concepts: concepts
                    .into_iter()
                    .map(|c| ConceptEntry {
                        id: c.id,
                        name: c.name,
                        category: c.category,
                    })
                    .collect(),
                images: Vec::new(),
                masks: Vec::new(),
                meta: None,
            },
        }
    }

    pub fn add_image(&mut self, id: &str, height: usize, width: usize) {
        self.manifest.images.push(ConceptImage {
            id: id.to_string(),
            height,
            width,
        });
    }

    pub fn add_mask(&mut self, image_id: &str, concept_id: u32, mask: &Tensor) -> Result<()> {
        let rel = format!("masks/{}_c{}.uibf", image_id, concept_id);
        mask.write(self.dir.join(&rel))?;
        self.manifest.masks.push(MaskEntry {
            image: image_id.to_string(),
            concept: concept_id,
            path: rel,
        });
        Ok(())
    }

    pub fn finish(mut self, meta: Option<serde_json::Value>) -> Result<PathBuf> {
        self.manifest.meta = meta;
        let path = self.dir.join("concepts.json");
        self.manifest.write(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cuboid(h: usize, w: usize, d: usize, offset: f32) -> Tensor {
        let data = (0..h * w * d).map(|i| i as f32 + offset).collect();
        Tensor::new(vec![h, w, d], data).unwrap()
    }

    fn two_image_dataset(dir: &Path) -> PathBuf {
        let mut w = FeatureDatasetWriter::new(dir, 8);
        w.add_image("a", Split::Train, &cuboid(2, 2, 8, 0.0))
            .unwrap();
        w.add_image("b", Split::Val, &cuboid(3, 1, 8, 1.0)).unwrap();
        w.finish(None).unwrap()
    }

    #[test]
    fn loads_two_image_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = FeatureDataset::load(two_image_dataset(dir.path())).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.layer_dim(), 8);
        assert_eq!(ds.pixel_count(), 7);
        assert_eq!(ds.split(Split::Val).len(), 1);
        assert_eq!(ds.load_image(1).unwrap().shape(), &[3, 1, 8]);
    }

    #[test]
    fn absent_tensor_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = two_image_dataset(dir.path());
        std::fs::remove_file(dir.path().join("features/b.uibf")).unwrap();
        let err = FeatureDataset::load(&manifest).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("features/b.uibf"), "{}", err);
    }

    #[test]
    fn mixed_layer_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = two_image_dataset(dir.path());
        cuboid(3, 1, 16, 0.0)
            .write(dir.path().join("features/b.uibf"))
            .unwrap();
        assert!(matches!(
            FeatureDataset::load(&manifest),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = FeatureDatasetWriter::new(dir.path(), 2);
        w.add_image("a", Split::Train, &cuboid(1, 1, 2, 0.0))
            .unwrap();
        w.add_image("a", Split::Train, &cuboid(1, 1, 2, 0.0))
            .unwrap();
        let path = w.finish(None).unwrap();
        assert!(matches!(
            FeatureDataset::load(&path),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn unknown_manifest_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.json");
        std::fs::write(
            &path,
            r#"{"format":"uibf-features","version":1,"layer_dim":2,"images":[],"bogus":1}"#,
        )
        .unwrap();
        assert!(matches!(
            FeatureDataset::load(&path),
            Err(Error::Manifest { .. })
        ));
    }

    #[test]
    fn manifest_order_does_not_matter() {
        let dir = tempfile::tempdir().unwrap();
        let path = two_image_dataset(dir.path());
        let a = FeatureDataset::load(&path).unwrap();
        let mut m = FeatureManifest::read(&path).unwrap();
        m.images.reverse();
        let permuted = dir.path().join("permuted.json");
        m.write(&permuted).unwrap();
        let b = FeatureDataset::load(&permuted).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.sorted_by_id(), b.sorted_by_id());
    }

    fn concept_fixture(dir: &Path, features: &FeatureDataset) -> ConceptDatasetWriter {
        let concepts = (0..3)
            .map(|i| Concept {
                id: i,
                name: format!("c{}", i),
                category: "object".into(),
            })
            .collect();
        let mut w = ConceptDatasetWriter::new(dir, concepts);
        for rec in features.images() {
            w.add_image(&rec.id, 4, 4);
        }
        w
    }

    #[test]
    fn concept_dataset_cross_references() {
        let dir = tempfile::tempdir().unwrap();
        let features = FeatureDataset::load(two_image_dataset(dir.path())).unwrap();
        let mut w = concept_fixture(dir.path(), &features);
        let mut mask = vec![0.0f32; 16];
        mask[3] = 1.0;
        mask[4] = 0.7;
        mask[5] = 0.2;
        let mask = Tensor::new(vec![4, 4], mask).unwrap();
        for (img, c) in [("a", 0), ("a", 1), ("b", 0), ("b", 1), ("b", 2)] {
            w.add_mask(img, c, &mask).unwrap();
        }
        let path = w.finish(None).unwrap();
        let cds = ConceptDataset::load(&path, &features).unwrap();
        assert_eq!(cds.concepts().len(), 3);
        assert_eq!(cds.masks().len(), 5);
        assert_eq!(cds.masks_for_image("b").len(), 3);
        let m = cds.load_mask(0).unwrap();
        assert_eq!(m.count(), 2);
        assert!(m.bits[3] && m.bits[4] && !m.bits[5]);
    }

    #[test]
    fn orphan_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let features = FeatureDataset::load(two_image_dataset(dir.path())).unwrap();
        let mut w = concept_fixture(dir.path(), &features);
        w.add_mask("zzz", 0, &Tensor::zeros(vec![4, 4]).unwrap())
            .unwrap();
        let path = w.finish(None).unwrap();
        assert!(matches!(
            ConceptDataset::load(&path, &features),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn unknown_concept_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let features = FeatureDataset::load(two_image_dataset(dir.path())).unwrap();
        let mut w = concept_fixture(dir.path(), &features);
        w.add_mask("a", 9, &Tensor::zeros(vec![4, 4]).unwrap())
            .unwrap();
        let path = w.finish(None).unwrap();
        assert!(matches!(
            ConceptDataset::load(&path, &features),
            Err(Error::Reference(_))
        ));
    }

    #[test]
    fn empty_vocabulary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let features = FeatureDataset::load(two_image_dataset(dir.path())).unwrap();
        let w = ConceptDatasetWriter::new(dir.path(), vec![]);
        let path = w.finish(None).unwrap();
        assert!(matches!(
            ConceptDataset::load(&path, &features),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn out_of_range_mask_values_rejected() {
        assert!(binarize_mask(1, 2, &[0.0, 2.0]).is_err());
        assert!(binarize_mask(1, 2, &[-0.1, 1.0]).is_err());
        let m = binarize_mask(1, 3, &[0.5, 0.51, 1.0]).unwrap();
        assert_eq!(m.bits, vec![false, true, true]);
    }
}
