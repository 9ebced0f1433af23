use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Image, Result};

/// Fraction of untagged slices assigned to training by [`load_dataset`].
pub const AUTO_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
        }
    }
}

/// One normalized slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceRecord {
    pub id: String,
    /// Values in `[0, 1]`.
    pub image: Image<f32>,
    pub split: Split,
}

/// Manifest line; a missing split means "assign automatically".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Records ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<SliceRecord>,
}

impl Dataset {
    /// Sorts by id and checks ids are unique and values lie in `[0, 1]`.
    pub fn new(mut records: Vec<SliceRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Data(format!("duplicate slice id '{}'", w[0].id)));
        }
        for r in &records {
            if let Some(v) = r.image.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("slice '{}' has value {v} outside [0, 1]", r.id)));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[SliceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&SliceRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Writes `root/{split}/{id}.png` (16-bit) plus `root/manifest.json`.
    pub fn write_layout(&self, root: &Path) -> Result<Vec<ManifestEntry>> {
        let mut entries = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let rel = PathBuf::from(r.split.as_str()).join(format!("{}.png", r.id));
            let path = root.join(&rel);
            let dir = path.parent().expect("file under a split directory");
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_png16(&path, &r.image)?;
            entries.push(ManifestEntry {
                id: r.id.clone(),
                path: rel,
                split: Some(r.split),
            });
        }
        let manifest = root.join("manifest.json");
        let json = serde_json::to_string_pretty(&entries)? + "\n";
        std::fs::write(&manifest, json).map_err(|e| Error::io(&manifest, e))?;
        Ok(entries)
    }
}

/// Rescales to `[0, 1]` by min-max; a constant image maps to zeros.
pub fn normalize_min_max(img: &Image<f32>) -> Image<f32> {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return img.map(|_| 0.0);
    }
    img.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Saves `[0, 1]` values as a 16-bit grayscale PNG.
pub fn write_png16(path: &Path, img: &Image<f32>) -> Result<()> {
    let (h, w) = img.dims();
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, raw).expect("extents match");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(Error::from)
}

/// Saves `[0, 1]` values as an 8-bit grayscale PNG (previews).
pub fn write_png8(path: &Path, img: &Image<f32>) -> Result<()> {
    let (h, w) = img.dims();
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, raw).expect("extents match");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(Error::from)
}

/// Reads any grayscale-convertible image and min-max normalizes it.
pub fn read_slice(path: &Path) -> Result<Image<f32>> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let luma = img.to_luma16();
    let (w, h) = luma.dimensions();
    let (h, w) = (h as usize, w as usize);
    if !h.is_power_of_two() || !w.is_power_of_two() || h != w {
        return Err(Error::Data(format!(
            "{}: slices must be square with power-of-two extents, got {h}x{w}",
            path.display()
        )));
    }
    let data = luma.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
    Ok(normalize_min_max(&Image::new(h, w, data)?))
}

fn id_rank(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Stable 64-bit seed component for a slice id.
pub fn id_seed(id: &str) -> u64 {
    let d = id_rank(id);
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

/// Loads every manifest entry relative to `root`.
///
/// Untagged entries are split 70/30 into train/valid by ranking the SHA-256
/// of their ids, so the assignment is independent of manifest order.
pub fn load_dataset(root: &Path, manifest: &[ManifestEntry]) -> Result<Dataset> {
    let mut seen_ids = HashSet::new();
    let mut path_split: HashMap<PathBuf, Split> = HashMap::new();
    for e in manifest {
        if !seen_ids.insert(e.id.as_str()) {
            return Err(Error::Data(format!("duplicate slice id '{}'", e.id)));
        }
        if e.id.is_empty() || e.id.contains(['/', '\\']) {
            return Err(Error::Data(format!("invalid slice id '{}'", e.id)));
        }
    }
    let mut untagged: Vec<&ManifestEntry> = manifest.iter().filter(|e| e.split.is_none()).collect();
    untagged.sort_by_key(|e| id_rank(&e.id));
    let n_train = (untagged.len() as f64 * AUTO_TRAIN_FRACTION).round() as usize;
    let mut assigned: HashMap<&str, Split> = HashMap::new();
    for (i, e) in untagged.iter().enumerate() {
        assigned.insert(&e.id, if i < n_train { Split::Train } else { Split::Valid });
    }

    let mut records = Vec::with_capacity(manifest.len());
    for e in manifest {
        let split = e.split.unwrap_or_else(|| assigned[e.id.as_str()]);
        if let Some(prev) = path_split.insert(e.path.clone(), split) {
            if prev != split {
                return Err(Error::Data(format!(
                    "{} appears in both the {} and {} splits",
                    e.path.display(),
                    prev.as_str(),
                    split.as_str()
                )));
            }
        }
        records.push(SliceRecord {
            id: e.id.clone(),
            image: read_slice(&root.join(&e.path))?,
            split,
        });
    }
    Dataset::new(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Builds a manifest from `root/{train,valid,test}/*.png`, ids from file stems.
pub fn scan_layout(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for split in Split::ALL {
        let dir = root.join(split.as_str());
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            entries.push(ManifestEntry {
                id: stem,
                path: PathBuf::from(split.as_str()).join(f.file_name().expect("file")),
                split: Some(split),
            });
        }
    }
    Ok(entries)
}

/// Loads `root/manifest.json` when present, otherwise scans the layout.
pub fn open_dataset(root: &Path) -> Result<Dataset> {
    let manifest = root.join("manifest.json");
    let entries = if manifest.is_file() {
        read_manifest(&manifest)?
    } else {
        scan_layout(root)?
    };
    load_dataset(root, &entries)
}
