//! Dataset ingestion, the synthetic class generator and checkpoint files.
//!
//! Image formats:
//!
//! * TNSR: `b"TNS1"`, `u32` rank, `rank × u32` dims, then row-major `f32`
//!   values. Every integer and float is little-endian.
//! * PGM: binary `P5`, 8-bit. Pixels are scaled by `1 / maxval`.
//!
//! `manifest.csv` has the header `path,label,split`; paths are relative to
//! the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EsConfig;
use crate::fitness::LabeledDataset;
use crate::model::{param_count, ArchitectureSpec, Genome};
use crate::rng::{derive_seed, Gaussian, SplitMix64};
use crate::tensor::Tensor;

pub const TNSR_MAGIC: &[u8; 4] = b"TNS1";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "path,label,split";
pub const CHECKPOINT_HEADER_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_WEIGHTS_FILE: &str = "checkpoint.weights";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub fn encode_tnsr(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(TNSR_MAGIC);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tnsr(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: String| Error::Decode(msg);
    if bytes.len() < 8 || &bytes[..4] != TNSR_MAGIC {
        return Err(bad("missing TNS1 magic".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let rank = u32_at(4) as usize;
    let header = 8 + 4 * rank;
    if rank == 0 || bytes.len() < header {
        return Err(bad(format!("truncated header for rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[header..];
    if payload.len() != count * 4 {
        return Err(bad(format!(
            "shape {shape:?} needs {} data bytes, found {}",
            count * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

/// Grayscale `P5` image as a `[1, height, width]` tensor in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::Decode(format!("pgm: {msg}"));
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after maxval"));
    }
    pos += 1;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval (1..=255) is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    let pixels = &bytes[pos..];
    if pixels.len() != width * height {
        return Err(bad(&format!(
            "{width}x{height} image needs {} pixel bytes, found {}",
            width * height,
            pixels.len()
        )));
    }
    let scale = 1.0 / maxval as f32;
    let data = pixels.iter().map(|&p| (p as f32 * scale).min(1.0)).collect();
    Tensor::new(vec![1, height, width], data)
}

/// 8-bit `P5` encoding of a `[1, H, W]` or `[H, W]` tensor with values in `[0, 1]`.
pub fn encode_pgm(tensor: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match tensor.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        other => return Err(Error::shape("pgm image", "[1, H, W]", format!("{other:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(tensor.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = match path.extension().and_then(|e| e.to_str()) {
        Some("tnsr") => decode_tnsr(&bytes),
        Some("pgm") => decode_pgm(&bytes),
        _ => Err(Error::Decode("unknown image extension (expected .tnsr or .pgm)".into())),
    };
    decoded.map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_tnsr(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, encode_tnsr(tensor)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

fn valid_manifest_path(path: &str) -> bool {
    !path.is_empty()
        && path
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'/' | b'-'))
}

impl DatasetManifest {
    /// Parses and checks a manifest: unique well-formed paths and labels
    /// covering `0..=max` without gaps.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |row: usize, reason: String| Error::Manifest {
            path: path.to_path_buf(),
            row,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
            Some((i, header)) => return Err(err(i + 1, format!("expected header {MANIFEST_HEADER:?}, found {header:?}"))),
            None => return Err(err(0, "missing header".into())),
        }
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let row_no = i + 1;
            let fields: Vec<&str> = line.trim().split(',').collect();
            let [file, label, split] = fields[..] else {
                return Err(err(row_no, format!("expected 3 fields, found {}", fields.len())));
            };
            if !valid_manifest_path(file) {
                return Err(err(row_no, format!("invalid path {file:?}")));
            }
            if !seen.insert(file.to_string()) {
                return Err(err(row_no, format!("duplicate path {file:?}")));
            }
            let label = label
                .parse()
                .map_err(|_| err(row_no, format!("bad label {label:?}")))?;
            let split = split.parse().map_err(|e: String| err(row_no, e))?;
            rows.push(ManifestRow {
                path: file.to_string(),
                label,
                split,
            });
        }
        let labels: BTreeSet<usize> = rows.iter().map(|r| r.label).collect();
        if let Some(&max) = labels.iter().next_back() {
            if labels.len() != max + 1 {
                let missing = (0..=max).find(|l| !labels.contains(l)).unwrap_or(0);
                return Err(err(0, format!("labels are not contiguous from 0: missing {missing}")));
            }
        }
        Ok(DatasetManifest {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.path, row.label, row.split.as_str()));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }
}

/// Reads the train and test splits named by a manifest. Images must
/// already have `spec.input_shape`; nothing is resampled.
pub fn load_dataset(manifest_path: &Path, spec: &ArchitectureSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let load = |split: Split| -> Result<LabeledDataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (i, row) in manifest.rows.iter().enumerate().filter(|(_, r)| r.split == split) {
            let err = |reason: String| Error::Manifest {
                path: manifest_path.to_path_buf(),
                row: i + 2,
                reason,
            };
            if row.label >= spec.num_classes {
                return Err(err(format!("label {} >= num_classes {}", row.label, spec.num_classes)));
            }
            let image = read_image(&manifest.root.join(&row.path)).map_err(|e| err(e.to_string()))?;
            if image.shape() != spec.input_shape {
                return Err(err(format!(
                    "{}: expected shape {:?}, found {:?}",
                    row.path,
                    spec.input_shape,
                    image.shape()
                )));
            }
            images.push(image);
            labels.push(row.label);
        }
        if images.is_empty() {
            return Err(Error::EmptySplit(split.as_str().into()));
        }
        LabeledDataset::new(images, labels, split.as_str(), spec.num_classes)
    };
    Ok((load(Split::Train)?, load(Split::Test)?))
}

/// Parameters of the synthetic grayscale class generator.
///
/// Class `k` has a mean intensity evenly spaced between `intensity_low` and
/// `intensity_high`, a sine texture of amplitude `texture_amplitude` with a
/// class-specific frequency vector (see [`SynthConfig::class_frequency`]),
/// and additive Gaussian pixel noise. Textures span whole cycles, so they
/// are zero-mean and the pixel mean alone separates the classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub image_size: usize,
    pub seed: u64,
    pub intensity_low: f64,
    pub intensity_high: f64,
    pub texture_amplitude: f64,
    /// Half-width of the uniform per-image texture phase jitter, in radians.
    pub phase_jitter: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            per_class_train: 20,
            per_class_test: 20,
            image_size: 32,
            seed: 0,
            intensity_low: 0.25,
            intensity_high: 0.7,
            texture_amplitude: 0.2,
            phase_jitter: 0.0,
            noise_std: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidConfig {
                field: field.into(),
                reason,
            })
        };
        if self.num_classes < 2 {
            return bad("num_classes", format!("must be >= 2, got {}", self.num_classes));
        }
        if self.per_class_train == 0 {
            return bad("per_class_train", "must be >= 1".into());
        }
        if self.per_class_test == 0 {
            return bad("per_class_test", "must be >= 1".into());
        }
        if self.image_size < 8 {
            return bad("image_size", format!("must be >= 8, got {}", self.image_size));
        }
        if self.num_classes >= self.image_size {
            return bad("num_classes", "must be smaller than image_size".into());
        }
        if !(0.0..=1.0).contains(&self.intensity_low)
            || !(0.0..=1.0).contains(&self.intensity_high)
            || self.intensity_low >= self.intensity_high
        {
            return bad("intensity_low", "need 0 <= intensity_low < intensity_high <= 1".into());
        }
        if !(self.texture_amplitude >= 0.0 && self.noise_std >= 0.0 && self.phase_jitter >= 0.0) {
            return bad("noise_std", "amplitudes must be non-negative".into());
        }
        Ok(())
    }

    pub fn class_intensity(&self, class: usize) -> f64 {
        let span = self.intensity_high - self.intensity_low;
        self.intensity_low + span * class as f64 / (self.num_classes - 1) as f64
    }

    /// Texture frequency of `class` in whole cycles per image, as
    /// `(along_x, along_y)`: `(1, 0), (0, 1), (2, 0), (0, 2), (3, 0), ...`.
    pub fn class_frequency(&self, class: usize) -> (usize, usize) {
        let cycles = class / 2 + 1;
        if class % 2 == 0 {
            (cycles, 0)
        } else {
            (0, cycles)
        }
    }

    /// One image, deterministic in `(seed, split, class, index)`.
    pub fn render(&self, split: Split, class: usize, index: usize) -> Tensor {
        let n = self.image_size;
        let seed = derive_seed(self.seed, &[split as u64, class as u64, index as u64]);
        let jitter = if self.phase_jitter > 0.0 {
            SplitMix64::new(seed).uniform(-self.phase_jitter, self.phase_jitter)
        } else {
            0.0
        };
        let mut noise = Gaussian::new(derive_seed(seed, &[1]));
        let base = self.class_intensity(class);
        let (fx, fy) = self.class_frequency(class);
        let step = std::f64::consts::TAU / n as f64;
        let mut data = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let angle = step * (fx * x + fy * y) as f64 + jitter;
                let v = base + self.texture_amplitude * angle.sin() + self.noise_std * noise.sample();
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        Tensor::new(vec![1, n, n], data).expect("square image")
    }
}

/// Writes the synthetic dataset as TNSR files plus `manifest.csv`.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let mut rows = Vec::new();
    for (split, per_class) in [(Split::Train, config.per_class_train), (Split::Test, config.per_class_test)] {
        let dir = out_dir.join(split.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for class in 0..config.num_classes {
            for index in 0..per_class {
                let rel = format!("{}/class{class}_{index:04}.tnsr", split.as_str());
                write_tnsr(&out_dir.join(&rel), &config.render(split, class, index))?;
                rows.push(ManifestRow {
                    path: rel,
                    label: class,
                    split,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        rows,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec: ArchitectureSpec,
    /// Generations completed; the weights are the parent of this generation.
    pub generation: u64,
    pub es_config: EsConfig,
    pub rng_state_seed: u64,
    pub created_utc: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: Vec<f32>,
}

impl Checkpoint {
    pub fn new(spec: ArchitectureSpec, genome: &Genome, generation: u64, es_config: EsConfig) -> Result<Self> {
        let expected = param_count(&spec)?;
        if genome.len() != expected {
            return Err(Error::WeightCount {
                expected,
                found: genome.len(),
            });
        }
        let rng_state_seed = derive_seed(es_config.master_seed, &[generation]);
        Ok(Checkpoint {
            header: CheckpointHeader {
                format_version: CHECKPOINT_FORMAT_VERSION,
                spec,
                generation,
                es_config,
                rng_state_seed,
                created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            },
            weights: genome.values().to_vec(),
        })
    }

    pub fn genome(&self) -> Result<Genome> {
        Genome::new(&self.header.spec, self.weights.clone())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `checkpoint.weights` then `checkpoint.json`, each via rename.
pub fn save_checkpoint(checkpoint: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let weights: Vec<u8> = checkpoint.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
    write_atomic(&dir.join(CHECKPOINT_WEIGHTS_FILE), &weights)?;
    let mut header = serde_json::to_vec_pretty(&checkpoint.header)?;
    header.push(b'\n');
    write_atomic(&dir.join(CHECKPOINT_HEADER_FILE), &header)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let header_path = dir.join(CHECKPOINT_HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: header_path.clone(),
        reason: e.to_string(),
    })?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
    match version {
        Some(v) if v == CHECKPOINT_FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::CheckpointVersion(v.min(u32::MAX as u64) as u32)),
        None => {
            return Err(Error::Format {
                path: header_path,
                reason: "missing format_version".into(),
            })
        }
    }
    let header: CheckpointHeader = serde_json::from_value(raw).map_err(|e| Error::Format {
        path: header_path.clone(),
        reason: e.to_string(),
    })?;
    let expected = param_count(&header.spec)?;

    let weights_path = dir.join(CHECKPOINT_WEIGHTS_FILE);
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format {
            path: weights_path,
            reason: format!("{} bytes is not a whole number of f32 values", bytes.len()),
        });
    }
    if bytes.len() / 4 != expected {
        return Err(Error::WeightCount {
            expected,
            found: bytes.len() / 4,
        });
    }
    let weights = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Checkpoint { header, weights })
}
