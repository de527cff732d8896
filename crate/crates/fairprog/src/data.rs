//! Labeled datasets: synthetic generation with a tunable spurious
//! label-demographic correlation, CSV ingestion/emission, and deterministic
//! splits.
//!
//! Feature values are quantized to 9 significant decimal digits at creation,
//! which makes the CSV round trip exact: the file format and the in-memory
//! values share one precision.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::trigger::{TriggerGeometry, TriggerPosition};

/// Feature matrix with a label and demographic group per row.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(features: Tensor, y: Vec<usize>, z: Vec<usize>, provenance: String) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::invalid("dataset must be nonempty"));
        }
        if y.len() != n || z.len() != n {
            return Err(Error::shape(
                "dataset",
                format!("{n} feature rows, {} labels, {} groups", y.len(), z.len()),
            ));
        }
        Ok(LabeledDataset { features, y, z, provenance })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.y.iter().max().map_or(0, |&m| m + 1).max(2)
    }

    pub fn group_count(&self) -> usize {
        self.z.iter().max().map_or(0, |&m| m + 1).max(2)
    }

    /// Row subset in the given index order.
    pub fn select(&self, idx: &[usize], provenance: String) -> LabeledDataset {
        let d = self.dim();
        let mut values = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            values.extend_from_slice(self.features.row(i));
        }
        LabeledDataset {
            features: Tensor::new(vec![idx.len(), d], values).unwrap(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            provenance,
        }
    }

    /// Same rows with the trigger's resting-state geometry applied: concat
    /// style triggers pad a zero block where the trigger will sit, value
    /// triggers change nothing. Models meant to accept triggered inputs are
    /// trained and evaluated on this form.
    pub fn null_padded(&self, geometry: &TriggerGeometry) -> LabeledDataset {
        let extra = geometry.output_width(self.dim()) - self.dim();
        if extra == 0 {
            return self.clone();
        }
        let position = match geometry {
            TriggerGeometry::Concat { position, .. }
            | TriggerGeometry::Soft { position, .. }
            | TriggerGeometry::Hard { position, .. } => *position,
            _ => TriggerPosition::Prefix,
        };
        let (n, d) = (self.len(), self.dim());
        let mut values = Vec::with_capacity(n * (d + extra));
        for r in 0..n {
            match position {
                TriggerPosition::Prefix => {
                    values.extend(std::iter::repeat(0.0).take(extra));
                    values.extend_from_slice(self.features.row(r));
                }
                TriggerPosition::Suffix => {
                    values.extend_from_slice(self.features.row(r));
                    values.extend(std::iter::repeat(0.0).take(extra));
                }
            }
        }
        LabeledDataset {
            features: Tensor::new(vec![n, d + extra], values).unwrap(),
            y: self.y.clone(),
            z: self.z.clone(),
            provenance: format!("{}+null-trigger", self.provenance),
        }
    }

    /// Same rows with the trigger slot filled by synthetic
    /// demographic-indicative features: each slot value is drawn around
    /// `signal * (2z - 1)` with the given noise scale, like one more
    /// demographic feature block. Models trained on this resting form learn
    /// to read the slot as demographic evidence, which is what lets a
    /// trigger written there act across models. Width-preserving triggers
    /// change nothing.
    pub fn slot_padded(&self, geometry: &TriggerGeometry, signal: f64, noise: f64, seed: u64) -> LabeledDataset {
        let extra = geometry.output_width(self.dim()) - self.dim();
        if extra == 0 {
            return self.clone();
        }
        let position = match geometry {
            TriggerGeometry::Concat { position, .. }
            | TriggerGeometry::Soft { position, .. }
            | TriggerGeometry::Hard { position, .. } => *position,
            _ => TriggerPosition::Prefix,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, "slot-features"));
        let (n, d) = (self.len(), self.dim());
        let mut values = Vec::with_capacity(n * (d + extra));
        for r in 0..n {
            let shift = signal * if self.z[r] > 0 { 1.0 } else { -1.0 };
            let slot: Vec<f64> = (0..extra).map(|_| quantize(shift + noise * normal(&mut rng))).collect();
            match position {
                TriggerPosition::Prefix => {
                    values.extend_from_slice(&slot);
                    values.extend_from_slice(self.features.row(r));
                }
                TriggerPosition::Suffix => {
                    values.extend_from_slice(self.features.row(r));
                    values.extend_from_slice(&slot);
                }
            }
        }
        LabeledDataset {
            features: Tensor::new(vec![n, d + extra], values).unwrap(),
            y: self.y.clone(),
            z: self.z.clone(),
            provenance: format!("{}+slot-features", self.provenance),
        }
    }

    /// Field-wise equality of the data (provenance excluded).
    pub fn same_data(&self, other: &LabeledDataset) -> bool {
        self.features == other.features && self.y == other.y && self.z == other.z
    }

    /// SHA-256 of the canonical CSV encoding.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(csv_string(self).as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// Shift multiple of the demographic block relative to `signal`. The
/// demographic evidence is kept stronger than the label evidence so a
/// biased model has a shortcut worth taking.
pub const Z_BLOCK_GAIN: f64 = 2.0;

/// Shift multiple of resting trigger-slot features relative to `signal`.
/// Slots are weakly group-indicative: strong enough that trained models
/// read them as demographic evidence (which is what a trigger written there
/// exploits), weak enough that zeroing them costs no label accuracy.
pub const SLOT_SHIFT_GAIN: f64 = 0.5;

/// Synthetic generator settings. `bias` is the spurious correlation between
/// the demographic group and the label: `Z = Y` with probability
/// `(1 + bias) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub d: usize,
    pub bias: f64,
    pub signal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(n: usize, d: usize, bias: f64, seed: u64) -> Result<Self> {
        let spec = GenSpec { n, d, bias, signal: 0.4, noise: 1.0, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid(format!("n and d must be positive, got n={} d={}", self.n, self.d)));
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return Err(Error::invalid(format!("bias must be in [0, 1], got {}", self.bias)));
        }
        Ok(())
    }

    /// Widths of the label-driven, demographic-driven, and pure-noise
    /// feature blocks.
    pub fn blocks(&self) -> (usize, usize, usize) {
        let dy = (self.d + 2) / 3;
        let dz = ((self.d + 2) / 3).min(self.d - dy);
        (dy, dz, self.d - dy - dz)
    }
}

/// Rounds to 9 significant decimal digits, the dataset's native precision.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.8e}").parse().unwrap()
}

/// Standard normal via Box-Muller; two uniform draws per sample keep the
/// stream layout obvious and stable.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws a dataset where the label shifts one feature block, the demographic
/// group shifts another, and the two are spuriously correlated through
/// `bias`. Deterministic per seed.
pub fn gen_synth(spec: &GenSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dy, dz, dn) = spec.blocks();
    let mut values = Vec::with_capacity(spec.n * spec.d);
    let mut ys = Vec::with_capacity(spec.n);
    let mut zs = Vec::with_capacity(spec.n);
    let p_same = (1.0 + spec.bias) / 2.0;
    for _ in 0..spec.n {
        let y = usize::from(rng.gen_bool(0.5));
        let z = if rng.gen_bool(p_same) { y } else { 1 - y };
        let y_shift = spec.signal * (2.0 * y as f64 - 1.0);
        let z_shift = Z_BLOCK_GAIN * spec.signal * (2.0 * z as f64 - 1.0);
        for _ in 0..dy {
            values.push(quantize(y_shift + spec.noise * normal(&mut rng)));
        }
        for _ in 0..dz {
            values.push(quantize(z_shift + spec.noise * normal(&mut rng)));
        }
        for _ in 0..dn {
            values.push(quantize(spec.noise * normal(&mut rng)));
        }
        ys.push(y);
        zs.push(z);
    }
    LabeledDataset::new(
        Tensor::new(vec![spec.n, spec.d], values)?,
        ys,
        zs,
        format!("synth(n={},d={},bias={},seed={})", spec.n, spec.d, spec.bias, spec.seed),
    )
}

/// Canonical CSV encoding: header `y,z,f0,...`, features at 9 significant
/// digits.
pub fn csv_string(ds: &LabeledDataset) -> String {
    let d = ds.dim();
    let mut out = String::from("y,z");
    for j in 0..d {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for r in 0..ds.len() {
        out.push_str(&format!("{},{}", ds.y[r], ds.z[r]));
        for v in ds.features.row(r) {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    crate::experiment::write_atomic(path, csv_string(ds).as_bytes())
}

pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "y" || cols[1] != "z" {
        return Err(Error::Parse { line: 1, message: format!("expected header starting `y,z,f0,...`, got `{header}`") });
    }
    for (j, name) in cols[2..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Parse { line: 1, message: format!("feature column {} named `{name}`, expected `f{j}`", j + 2) });
        }
    }
    let d = cols.len() - 2;
    let mut values = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::Parse { line: line_no, message: format!("expected {} fields, got {}", d + 2, fields.len()) });
        }
        let y: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("label `{}` is not a nonnegative integer", fields[0]) })?;
        let z: usize = fields[1]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("group `{}` is not a nonnegative integer", fields[1]) })?;
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Parse { line: line_no, message: format!("feature `{f}` is not a number") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line: line_no, message: format!("feature `{f}` is not finite") });
            }
            values.push(v);
        }
        ys.push(y);
        zs.push(z);
    }
    if ys.is_empty() {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }
    let n = ys.len();
    LabeledDataset::new(
        Tensor::new(vec![n, d], values)?,
        ys,
        zs,
        format!("csv:{}", path.display()),
    )
}

/// Train / tune / validation / test split.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub tune: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Deterministic 60/20/10/10 split after a seeded shuffle.
pub fn split_dataset(ds: &LabeledDataset, seed: u64) -> Splits {
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = n * 6 / 10;
    let n_tune = n * 2 / 10;
    let n_val = n / 10;
    let part = |range: std::ops::Range<usize>, tag: &str| {
        ds.select(&idx[range], format!("{}:{}", ds.provenance, tag))
    };
    Splits {
        train: part(0..n_train, "train"),
        tune: part(n_train..n_train + n_tune, "tune"),
        val: part(n_train + n_tune..n_train + n_tune + n_val, "val"),
        test: part(n_train + n_tune + n_val..n, "test"),
    }
}

/// Pearson correlation of two equal-length binary sequences.
pub fn binary_correlation(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<usize>() as f64 / n;
    let mb = b.iter().sum::<usize>() as f64 / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x as f64 - ma;
        let dy = y as f64 - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}
