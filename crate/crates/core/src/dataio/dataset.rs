use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{load_depth, load_image, save_depth, save_image, DepthFormat};
use super::scene::{generate_scene, SceneConfig};
use super::ssim::{stereo_reconstruction_ssim, SSIM_THRESHOLD};
use super::{derive_seed, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn code(self) -> u64 {
        self as u64 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}")))
    }
}

/// What to generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image: [usize; 2],
    pub scene: SceneConfig,
    pub depth_format: DepthFormat,
    /// Product of focal length (pixels) and stereo baseline (meters) of the
    /// virtual stereo pair used by the quality filter.
    pub focal_baseline: f64,
    pub ssim_threshold: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 200,
            n_val: 20,
            n_test: 0,
            image: [512, 768],
            scene: SceneConfig::default(),
            depth_format: DepthFormat::Pfm,
            focal_baseline: 8.0,
            ssim_threshold: SSIM_THRESHOLD,
        }
    }
}

impl DatasetSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    pub fn sample_id(split: Split, index: usize) -> String {
        format!("{split}_{index:05}")
    }

    /// Generates sample `index` of `split`, redrawing scenes that fail the
    /// stereo-reconstruction SSIM filter. Returns the sample and the number
    /// of rejected draws.
    pub fn generate_sample(&self, split: Split, index: usize) -> Result<(Sample, usize)> {
        let [h, w] = self.image;
        for attempt in 0..100u64 {
            let seed = derive_seed(self.seed, &[split.code(), index as u64, attempt]);
            let mut sample = generate_scene(seed, h, w, &self.scene)?;
            if stereo_reconstruction_ssim(&sample.image, &sample.depth, self.focal_baseline)? >= self.ssim_threshold {
                sample.id = Self::sample_id(split, index);
                return Ok((sample, attempt as usize));
            }
        }
        Err(Error::Infeasible(format!(
            "{split} sample {index}: 100 consecutive scenes failed the SSIM filter"
        )))
    }

    /// All samples of one split, in index order.
    pub fn generate_split(&self, split: Split) -> Result<Vec<Sample>> {
        (0..self.count(split))
            .map(|i| self.generate_sample(split, i).map(|(s, _)| s))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub root: PathBuf,
    pub spec: DatasetSpec,
    pub patch: [usize; 2],
    pub splits: BTreeMap<Split, Vec<String>>,
    /// Scenes rejected by the SSIM filter, per split.
    pub excluded: BTreeMap<Split, usize>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn image_path(&self, root: &Path, split: Split, id: &str) -> PathBuf {
        root.join(split.name()).join(format!("{id}.png"))
    }

    pub fn depth_path(&self, root: &Path, split: Split, id: &str) -> PathBuf {
        let ext = match self.spec.depth_format {
            DepthFormat::Png16 => "depth.png",
            f => f.extension(),
        };
        root.join(split.name()).join(format!("{id}.{ext}"))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.splits.values().flatten() {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {id}")));
            }
        }
        let [h, w] = self.spec.image;
        let [ph, pw] = self.patch;
        if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
            return Err(Error::InvalidArgument(format!("image {h}x{w} is not tiled by patch {ph}x{pw}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the manifest JSON with the root blanked, so a dataset
    /// hashes the same wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let relocated = Self {
            root: PathBuf::new(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(relocated.to_json()?.as_bytes())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Generates every split under `root` and writes `root/manifest.json`.
pub fn generate_dataset(root: &Path, spec: &DatasetSpec) -> Result<DatasetManifest> {
    spec.scene.validate(spec.image[0], spec.image[1])?;
    let mut manifest = DatasetManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        root: root.to_path_buf(),
        spec: spec.clone(),
        patch: spec.scene.patch,
        splits: BTreeMap::new(),
        excluded: BTreeMap::new(),
    };
    for split in Split::ALL {
        let mut ids = Vec::new();
        let mut excluded = 0;
        for i in 0..spec.count(split) {
            let (sample, rejected) = spec.generate_sample(split, i)?;
            excluded += rejected;
            save_image(&sample.image, &manifest.image_path(root, split, &sample.id))?;
            save_depth(&sample.depth, &manifest.depth_path(root, split, &sample.id), spec.depth_format, None)?;
            log::debug!("generated {}", sample.id);
            ids.push(sample.id);
        }
        manifest.splits.insert(split, ids);
        manifest.excluded.insert(split, excluded);
    }
    manifest.validate()?;
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Indexed access to samples, whether in memory or on disk.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Sample> {
        <[Sample]>::get(self, index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("sample index {index}")))
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        SampleSource::get(self.as_slice(), index)
    }
}

/// One split of a dataset on disk, loaded lazily.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub split: Split,
}

impl DiskDataset {
    /// Opens the dataset whose manifest lives in `root`.
    pub fn open(root: &Path, split: Split) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Missing(format!("dataset manifest {}", path.display())));
        }
        Ok(Self {
            manifest: DatasetManifest::load(&path)?,
            root: root.to_path_buf(),
            split,
        })
    }

    pub fn ids(&self) -> &[String] {
        self.manifest.ids(self.split)
    }

    pub fn load(&self, id: &str) -> Result<Sample> {
        let image = load_image(&self.manifest.image_path(&self.root, self.split, id))?;
        let depth = load_depth(&self.manifest.depth_path(&self.root, self.split, id))?;
        Sample::new(id, image, depth)
    }
}

impl SampleSource for DiskDataset {
    fn len(&self) -> usize {
        self.ids().len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        let id = self
            .ids()
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("sample index {index}")))?
            .clone();
        self.load(&id)
    }
}
