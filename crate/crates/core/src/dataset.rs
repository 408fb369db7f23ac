//! Sample and dataset plumbing: label maps, registration samples, directory
//! serialization, manifests, and pair enumeration.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::Tensor;

/// Dense integer label volume; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    spatial: Vec<usize>,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(spatial: Vec<usize>, data: Vec<u16>) -> Result<Self> {
        let n: usize = spatial.iter().product();
        if n != data.len() {
            return Err(Error::shape_mismatch("label map", &[n], &[data.len()]));
        }
        Ok(Self { spatial, data })
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Distinct nonzero labels, ascending.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.data {
            if v != 0 {
                seen.insert(v);
            }
        }
        seen.into_iter().collect()
    }
}

/// One registration task: a moving/fixed image pair with label maps and,
/// for synthetic data, the displacement that produced the moving side.
#[derive(Debug, Clone)]
pub struct RegistrationSample {
    pub moving: Tensor<f32>,
    pub fixed: Tensor<f32>,
    pub moving_labels: LabelMap,
    pub fixed_labels: LabelMap,
    pub ground_truth: Option<Tensor<f32>>,
}

impl RegistrationSample {
    pub fn validate(&self) -> Result<()> {
        let spatial = self.fixed.spatial();
        if self.moving.shape() != self.fixed.shape() {
            return Err(Error::shape_mismatch(
                "moving vs fixed",
                self.fixed.shape(),
                self.moving.shape(),
            ));
        }
        if self.moving.channels() != 1 {
            return Err(Error::shape_mismatch(
                "image channels",
                &[1],
                &[self.moving.channels()],
            ));
        }
        for (what, lm) in [
            ("moving labels", &self.moving_labels),
            ("fixed labels", &self.fixed_labels),
        ] {
            if lm.spatial() != spatial {
                return Err(Error::shape_mismatch(what, spatial, lm.spatial()));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.spatial() != spatial || gt.channels() != spatial.len() {
                return Err(Error::shape_mismatch(
                    "ground truth field",
                    spatial,
                    gt.spatial(),
                ));
            }
        }
        Ok(())
    }

    pub fn spatial(&self) -> &[usize] {
        self.fixed.spatial()
    }

    /// Moving and fixed stacked as the 2-channel network input.
    pub fn input_pair(&self) -> Tensor<f32> {
        let spatial = self.spatial();
        let mut shape = vec![2usize];
        shape.extend_from_slice(spatial);
        let mut out = Tensor::zeros(&shape);
        out.channel_mut(0).copy_from_slice(self.moving.channel(0));
        out.channel_mut(1).copy_from_slice(self.fixed.channel(0));
        out
    }
}

fn labels_to_tensor(lm: &LabelMap) -> Tensor<f32> {
    let mut shape = vec![1usize];
    shape.extend_from_slice(lm.spatial());
    let mut t = Tensor::zeros(&shape);
    for (o, &v) in t.data_mut().iter_mut().zip(lm.data()) {
        *o = v as f32;
    }
    t
}

fn tensor_to_labels(t: &Tensor<f32>) -> Result<LabelMap> {
    let mut data = Vec::with_capacity(t.channel_len());
    for &v in t.data() {
        if v < 0.0 || v.fract() != 0.0 || v > u16::MAX as f32 {
            return Err(Error::Config(format!("label value {v} is not a small integer")));
        }
        data.push(v as u16);
    }
    LabelMap::new(t.spatial().to_vec(), data)
}

pub const MOVING_FILE: &str = "moving.ltf";
pub const FIXED_FILE: &str = "fixed.ltf";
pub const MOVING_LABELS_FILE: &str = "moving_labels.ltf";
pub const FIXED_LABELS_FILE: &str = "fixed_labels.ltf";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.ltf";

pub fn save_sample(dir: impl AsRef<Path>, sample: &RegistrationSample) -> Result<()> {
    sample.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_tensor(dir.join(MOVING_FILE), &sample.moving)?;
    write_tensor(dir.join(FIXED_FILE), &sample.fixed)?;
    write_tensor(dir.join(MOVING_LABELS_FILE), &labels_to_tensor(&sample.moving_labels))?;
    write_tensor(dir.join(FIXED_LABELS_FILE), &labels_to_tensor(&sample.fixed_labels))?;
    if let Some(gt) = &sample.ground_truth {
        write_tensor(dir.join(GROUND_TRUTH_FILE), gt)?;
    }
    Ok(())
}

pub fn load_sample(dir: impl AsRef<Path>) -> Result<RegistrationSample> {
    let dir = dir.as_ref();
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let sample = RegistrationSample {
        moving: read_tensor(dir.join(MOVING_FILE))?,
        fixed: read_tensor(dir.join(FIXED_FILE))?,
        moving_labels: tensor_to_labels(&read_tensor(dir.join(MOVING_LABELS_FILE))?)?,
        fixed_labels: tensor_to_labels(&read_tensor(dir.join(FIXED_LABELS_FILE))?)?,
        ground_truth: if gt_path.exists() {
            Some(read_tensor(gt_path)?)
        } else {
            None
        },
    };
    sample.validate()?;
    Ok(sample)
}

/// Manifest: one sample directory per line; relative paths are resolved
/// against the manifest's own directory.
pub fn write_manifest(path: impl AsRef<Path>, dirs: &[PathBuf]) -> Result<()> {
    let mut text = String::new();
    for d in dirs {
        text.push_str(&d.display().to_string());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut dirs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let p = PathBuf::from(line);
        dirs.push(if p.is_absolute() { p } else { base.join(p) });
    }
    Ok(dirs)
}

pub fn load_manifest_samples(path: impl AsRef<Path>) -> Result<Vec<RegistrationSample>> {
    let dirs = read_manifest(&path)?;
    if dirs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "manifest {} lists no samples",
            path.as_ref().display()
        )));
    }
    dirs.iter().map(load_sample).collect()
}

/// How image indices are combined into registration pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// every ordered pair (moving, fixed), n·(n−1) of them
    AllOrdered,
    /// the atlas as moving against every other image as fixed, n−1 pairs
    AtlasToSubject { atlas: usize },
}

pub fn build_pairs(n: usize, mode: PairMode) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 images, got {n}")));
    }
    match mode {
        PairMode::AllOrdered => {
            let mut pairs = Vec::with_capacity(n * (n - 1));
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        pairs.push((i, j));
                    }
                }
            }
            Ok(pairs)
        }
        PairMode::AtlasToSubject { atlas } => {
            if atlas >= n {
                return Err(Error::Config(format!(
                    "atlas index {atlas} out of range for {n} images"
                )));
            }
            Ok((0..n).filter(|&j| j != atlas).map(|j| (atlas, j)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_sample(with_gt: bool) -> RegistrationSample {
        let moving = Tensor::from_fn(&[1, 4, 4], |i| (i[1] * 4 + i[2]) as f32 / 15.0);
        let fixed = moving.map(|v| 1.0 - v);
        let labels: Vec<u16> = (0..16).map(|i| (i % 3) as u16).collect();
        RegistrationSample {
            moving,
            fixed,
            moving_labels: LabelMap::new(vec![4, 4], labels.clone()).unwrap(),
            fixed_labels: LabelMap::new(vec![4, 4], labels).unwrap(),
            ground_truth: with_gt.then(|| Tensor::full(&[2, 4, 4], 0.25f32)),
        }
    }

    #[test]
    fn all_ordered_pair_counts() {
        assert_eq!(build_pairs(3, PairMode::AllOrdered).unwrap().len(), 6);
        assert_eq!(build_pairs(201, PairMode::AllOrdered).unwrap().len(), 40_200);
        let pairs = build_pairs(3, PairMode::AllOrdered).unwrap();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn atlas_pair_counts() {
        let pairs = build_pairs(116, PairMode::AtlasToSubject { atlas: 0 }).unwrap();
        assert_eq!(pairs.len(), 115);
        assert!(pairs.iter().all(|&(m, f)| m == 0 && f != 0));
        assert!(build_pairs(4, PairMode::AtlasToSubject { atlas: 9 }).is_err());
    }

    #[test]
    fn too_few_images_rejected() {
        assert!(build_pairs(1, PairMode::AllOrdered).is_err());
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempdir().unwrap();
        let sdir = dir.path().join("s0");
        let s = toy_sample(true);
        save_sample(&sdir, &s).unwrap();
        let back = load_sample(&sdir).unwrap();
        assert_eq!(back.moving.data(), s.moving.data());
        assert_eq!(back.fixed.data(), s.fixed.data());
        assert_eq!(back.moving_labels, s.moving_labels);
        assert_eq!(back.fixed_labels, s.fixed_labels);
        assert_eq!(back.ground_truth.unwrap().data(), s.ground_truth.unwrap().data());

        let sdir2 = dir.path().join("s1");
        save_sample(&sdir2, &toy_sample(false)).unwrap();
        assert!(load_sample(&sdir2).unwrap().ground_truth.is_none());
    }

    #[test]
    fn manifest_resolves_relative_dirs() {
        let dir = tempdir().unwrap();
        let sdir = dir.path().join("samples/s0");
        save_sample(&sdir, &toy_sample(false)).unwrap();
        let manifest = dir.path().join("train.txt");
        write_manifest(&manifest, &[PathBuf::from("samples/s0")]).unwrap();
        let loaded = load_manifest_samples(&manifest).unwrap();
        assert_eq!(loaded.len(), 1);
    }

    #[test]
    fn empty_manifest_is_an_empty_dataset_error() {
        let dir = tempdir().unwrap();
        let manifest = dir.path().join("empty.txt");
        std::fs::write(&manifest, "\n\n").unwrap();
        match load_manifest_samples(&manifest).unwrap_err() {
            Error::EmptyDataset(_) => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn label_set_is_sorted_nonzero() {
        let lm = LabelMap::new(vec![2, 3], vec![0, 5, 2, 2, 0, 5]).unwrap();
        assert_eq!(lm.labels(), vec![2, 5]);
    }

    #[test]
    fn input_pair_stacks_moving_then_fixed() {
        let s = toy_sample(false);
        let pair = s.input_pair();
        assert_eq!(pair.shape(), &[2, 4, 4]);
        assert_eq!(pair.channel(0), s.moving.channel(0));
        assert_eq!(pair.channel(1), s.fixed.channel(0));
    }
}
