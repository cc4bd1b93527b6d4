//! Dataset loading, standardization, fold splitting, and synthetic
//! generators.
//!
//! The canonical on-disk format is plain text: one example per row,
//! space-separated decimal floats, with the labels appended as the final
//! column (class id) or final `L` columns (binary indicators). Files written
//! by this module carry a `#dims D L kind` header; on read the header is
//! optional and, when present, must agree with the caller's schema.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Class ids in `[0, K)` or an `N x L` binary indicator matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Class { ids: Vec<usize>, k: usize },
    Multi(Array2<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Class,
    Multi,
}

impl LabelKind {
    fn name(self) -> &'static str {
        match self {
            LabelKind::Class => "class",
            LabelKind::Multi => "multi",
        }
    }
}

/// What the loader expects to find in a file.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSchema {
    pub dim: usize,
    pub kind: LabelKind,
    /// Class count or label count. For class labels, 0 means infer from data.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Labels,
    pub name: String,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("features contain non-finite entries".into()));
        }
        match &self.labels {
            Labels::Class { ids, k } => {
                if ids.len() != self.len() {
                    return Err(Error::shape("label count does not match example count"));
                }
                if let Some(&bad) = ids.iter().find(|&&id| id >= *k) {
                    return Err(Error::InvalidInput(format!(
                        "class id {bad} outside [0, {k})"
                    )));
                }
            }
            Labels::Multi(m) => {
                if m.nrows() != self.len() {
                    return Err(Error::shape("label rows do not match example count"));
                }
                if !m.iter().all(|&v| v == 0.0 || v == 1.0) {
                    return Err(Error::InvalidInput("multi-labels must be 0 or 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Rows selected by index, labels included.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let features = self.features.select(Axis(0), indices);
        let labels = match &self.labels {
            Labels::Class { ids, k } => Labels::Class {
                ids: indices.iter().map(|&i| ids[i]).collect(),
                k: *k,
            },
            Labels::Multi(m) => Labels::Multi(m.select(Axis(0), indices)),
        };
        LabeledDataset {
            features,
            labels,
            name: self.name.clone(),
        }
    }

    pub fn class_ids(&self) -> Result<(&[usize], usize)> {
        match &self.labels {
            Labels::Class { ids, k } => Ok((ids, *k)),
            Labels::Multi(_) => Err(Error::usage("dataset has multi-labels, not class ids")),
        }
    }

    pub fn multi_labels(&self) -> Result<&Array2<f64>> {
        match &self.labels {
            Labels::Multi(m) => Ok(m),
            Labels::Class { .. } => Err(Error::usage("dataset has class ids, not multi-labels")),
        }
    }
}

fn parse_header(line: &str, path: &str) -> Result<(usize, usize, LabelKind)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "#dims" {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: "header must be '#dims D L kind'".into(),
        });
    }
    let d: usize = parts[1].parse().map_err(|_| Error::Parse {
        path: path.into(),
        line: 1,
        msg: format!("bad feature dim '{}'", parts[1]),
    })?;
    let l: usize = parts[2].parse().map_err(|_| Error::Parse {
        path: path.into(),
        line: 1,
        msg: format!("bad label dim '{}'", parts[2]),
    })?;
    let kind = match parts[3] {
        "class" => LabelKind::Class,
        "multi" => LabelKind::Multi,
        other => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("unknown label kind '{other}'"),
            })
        }
    };
    Ok((d, l, kind))
}

/// Load the canonical text format.
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{path_str}: {e}"))))?;
    let reader = std::io::BufReader::new(file);

    let label_cols = match schema.kind {
        LabelKind::Class => 1,
        LabelKind::Multi => schema.width,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_ids: Vec<usize> = Vec::new();
    let mut multi_rows: Vec<Vec<f64>> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if trimmed.starts_with("#dims") {
                let (d, l, kind) = parse_header(trimmed, &path_str)?;
                if d != schema.dim || kind != schema.kind || (schema.width != 0 && l != schema.width)
                {
                    return Err(Error::Parse {
                        path: path_str,
                        line: lineno,
                        msg: format!(
                            "header ({d}, {l}, {}) disagrees with schema ({}, {}, {})",
                            kind.name(),
                            schema.dim,
                            schema.width,
                            schema.kind.name()
                        ),
                    });
                }
            }
            continue;
        }
        let mut values = Vec::with_capacity(schema.dim + label_cols);
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!("cannot parse '{tok}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: lineno,
                    msg: format!("non-finite value '{tok}'"),
                });
            }
            values.push(v);
        }
        if values.len() != schema.dim + label_cols {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!(
                    "expected {} columns, found {}",
                    schema.dim + label_cols,
                    values.len()
                ),
            });
        }
        let labels = values.split_off(schema.dim);
        match schema.kind {
            LabelKind::Class => {
                let raw = labels[0];
                if raw < 0.0 || raw.fract() != 0.0 {
                    return Err(Error::Parse {
                        path: path_str.clone(),
                        line: lineno,
                        msg: format!("class id must be a non-negative integer, got '{raw}'"),
                    });
                }
                class_ids.push(raw as usize);
            }
            LabelKind::Multi => {
                if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Parse {
                        path: path_str.clone(),
                        line: lineno,
                        msg: "multi-labels must be 0 or 1".into(),
                    });
                }
                multi_rows.push(labels);
            }
        }
        rows.push(values);
    }

    let n = rows.len();
    let mut features = Array2::zeros((n, schema.dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let labels = match schema.kind {
        LabelKind::Class => {
            let k = if schema.width != 0 {
                schema.width
            } else {
                class_ids.iter().max().map_or(0, |&m| m + 1)
            };
            Labels::Class { ids: class_ids, k }
        }
        LabelKind::Multi => {
            let mut m = Array2::zeros((n, schema.width));
            for (i, row) in multi_rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    m[[i, j]] = v;
                }
            }
            Labels::Multi(m)
        }
    };
    let ds = LabeledDataset {
        features,
        labels,
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Write the canonical text format, header included.
pub fn save_dataset(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let (l, kind) = match &ds.labels {
        Labels::Class { k, .. } => (*k, LabelKind::Class),
        Labels::Multi(m) => (m.ncols(), LabelKind::Multi),
    };
    writeln!(w, "#dims {} {} {}", ds.dim(), l, kind.name())?;
    for i in 0..ds.len() {
        let mut first = true;
        for v in ds.features.row(i).iter() {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        match &ds.labels {
            Labels::Class { ids, .. } => write!(w, " {}", ids[i])?,
            Labels::Multi(m) => {
                for v in m.row(i).iter() {
                    write!(w, " {v}")?;
                }
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-dimension affine transform fitted by [`standardize`].
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    /// Dimensions whose std fell below the degeneracy threshold; these are
    /// centered but not rescaled.
    pub degenerate: Vec<usize>,
}

impl Standardizer {
    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::shape("standardizer dim mismatch"));
        }
        let mut out = features.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            row -= &self.mean;
            row /= &self.scale;
        }
        Ok(out)
    }
}

const DEGENERATE_STD: f64 = 1e-12;

/// Center each feature dimension and rescale it to unit standard deviation.
pub fn standardize(ds: &LabeledDataset) -> Result<(LabeledDataset, Standardizer)> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::usage("standardization needs at least two examples"));
    }
    let mean = ds.features.mean_axis(Axis(0)).expect("nonempty");
    let mut var = Array1::zeros(ds.dim());
    for row in ds.features.axis_iter(Axis(0)) {
        let d = &row - &mean;
        var += &d.mapv(|v| v * v);
    }
    var /= n as f64;
    let mut degenerate = Vec::new();
    let scale = Array1::from_shape_fn(ds.dim(), |j| {
        let s = var[j].sqrt();
        if s < DEGENERATE_STD {
            degenerate.push(j);
            1.0
        } else {
            s
        }
    });
    let st = Standardizer {
        mean,
        scale,
        degenerate,
    };
    let features = st.apply(&ds.features)?;
    Ok((
        LabeledDataset {
            features,
            labels: ds.labels.clone(),
            name: ds.name.clone(),
        },
        st,
    ))
}

/// Index partition for one fold.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Randomly separate `0..n` into train/val/test per fold. Each fold is an
/// independent seeded shuffle.
pub fn split_folds(
    n: usize,
    folds: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if !(r_train > 0.0 && r_val >= 0.0 && r_test > 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::usage("fold ratios must be positive and sum to 1"));
    }
    if folds == 0 || n < folds.max(3) {
        return Err(Error::usage("not enough examples to split"));
    }
    let mut out = Vec::with_capacity(folds);
    for fold in 0..folds {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fold as u64 + 1);
        order.shuffle(&mut rng);
        let n_train = (n as f64 * r_train).round() as usize;
        let n_val = (n as f64 * r_val).round() as usize;
        let n_train = n_train.min(n);
        let n_val = n_val.min(n - n_train);
        let train = order[..n_train].to_vec();
        let val = order[n_train..n_train + n_val].to_vec();
        let test = order[n_train + n_val..].to_vec();
        if test.is_empty() {
            return Err(Error::usage("test partition is empty under these ratios"));
        }
        out.push(FoldSplit { train, val, test });
    }
    Ok(out)
}

/// Simple seeded holdout: `fraction` of the indices go to the second half.
/// A fraction of 0 (or 1) leaves everything in the first half, unshuffled.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let n_held = (n as f64 * fraction).round() as usize;
    if n_held == 0 || n_held >= n {
        return (order, Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x7777);
    order.shuffle(&mut rng);
    let held = order[..n_held].to_vec();
    let kept = order[n_held..].to_vec();
    (kept, held)
}

// ---------------------------------------------------------------------------
// Synthetic generators.
// ---------------------------------------------------------------------------

fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for item in text.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("expected key=value, got '{item}'")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_usize(v: &str, key: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::usage(format!("{key} must be an integer, got '{v}'")))
}

fn kv_f64(v: &str, key: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::usage(format!("{key} must be a number, got '{v}'")))
}

fn kv_u64(v: &str, key: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::usage(format!("{key} must be an integer, got '{v}'")))
}

/// Zero-mean classes that differ only in second- and fourth-order structure.
///
/// Dimensions are partitioned into groups by a class-specific random
/// shuffle. Each group shares a random per-sample scale (a two-point mixture
/// with unit mean square, contrast `scale_contrast`) plus a small
/// signed equicorrelation `correlation`. The class covariance is therefore
/// the identity with class-specific off-diagonal entries, all marginal
/// variances are one, and every class mean is zero, so mean-only models carry
/// essentially no class information. The strong class signal is which
/// coordinates' magnitudes rise and fall together, which is exactly what
/// multiplicative covariance models represent.
#[derive(Debug, Clone)]
pub struct SynthCovConfig {
    pub n_per_class: usize,
    pub dim: usize,
    pub classes: usize,
    /// Gaussian equicorrelation inside each group (random sign per dim).
    pub correlation: f64,
    /// Contrast of the shared group scale: squared scales are
    /// `1 - c` or `1 + c` with equal probability.
    pub scale_contrast: f64,
    /// Dimensions per shared-scale group.
    pub group: usize,
    pub seed: u64,
}

impl Default for SynthCovConfig {
    fn default() -> Self {
        SynthCovConfig {
            n_per_class: 2000,
            dim: 16,
            classes: 2,
            correlation: 0.05,
            scale_contrast: 0.98,
            group: 4,
            seed: 0,
        }
    }
}

impl SynthCovConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = SynthCovConfig::default();
        for (k, v) in parse_kv(text)? {
            match k.as_str() {
                "n" => cfg.n_per_class = kv_usize(&v, "n")?,
                "d" => cfg.dim = kv_usize(&v, "d")?,
                "k" => cfg.classes = kv_usize(&v, "k")?,
                "corr" => cfg.correlation = kv_f64(&v, "corr")?,
                "contrast" => cfg.scale_contrast = kv_f64(&v, "contrast")?,
                "group" => cfg.group = kv_usize(&v, "group")?,
                "seed" => cfg.seed = kv_u64(&v, "seed")?,
                other => return Err(Error::usage(format!("unknown generator key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::usage("covariance classes need d >= 2"));
        }
        if self.classes == 0 || self.n_per_class == 0 {
            return Err(Error::usage("class and sample counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.correlation.abs()) {
            return Err(Error::usage("correlation magnitude must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.scale_contrast) {
            return Err(Error::usage("scale contrast must lie in [0, 1)"));
        }
        if self.group < 2 {
            return Err(Error::usage("groups need at least two dimensions"));
        }
        Ok(())
    }
}

/// Shared-scale groups for one class: dim indices with their correlation signs.
fn class_grouping(cfg: &SynthCovConfig, class: usize) -> Vec<Vec<(usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ffee);
    rng.set_stream(class as u64 + 1);
    let mut dims: Vec<usize> = (0..cfg.dim).collect();
    dims.shuffle(&mut rng);
    dims.chunks(cfg.group)
        .filter(|chunk| chunk.len() >= 2)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&d| (d, if rng.gen::<bool>() { 1.0 } else { -1.0 }))
                .collect()
        })
        .collect()
}

/// The covariance matrix each class draws from.
pub fn synth_covariance_targets(cfg: &SynthCovConfig) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.classes);
    for class in 0..cfg.classes {
        let mut cov = Array2::eye(cfg.dim);
        for group in class_grouping(cfg, class) {
            for (a, &(i, si)) in group.iter().enumerate() {
                for &(j, sj) in group.iter().skip(a + 1) {
                    cov[[i, j]] = cfg.correlation * si * sj;
                    cov[[j, i]] = cov[[i, j]];
                }
            }
        }
        out.push(cov);
    }
    Ok(out)
}

pub fn synth_covariance_classes(cfg: &SynthCovConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let n = cfg.n_per_class * cfg.classes;
    let mut features = Array2::zeros((n, cfg.dim));
    let mut ids = Vec::with_capacity(n);
    let mut row = 0;
    for class in 0..cfg.classes {
        let grouping = class_grouping(cfg, class);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xdead10cc);
        rng.set_stream(class as u64 + 1);
        let n_groups = grouping.len();
        for _ in 0..cfg.n_per_class {
            // ungrouped leftovers stay independent standard normals
            for j in 0..cfg.dim {
                features[[row, j]] = rng.sample::<f64, _>(StandardNormal);
            }
            // exactly half the groups run hot per sample, so no sample is
            // globally isotropic and the scale pattern always carries class
            // information; E[s^2] = 1 still holds per dimension
            let half = n_groups / 2;
            let mut hot: Vec<bool> = Vec::with_capacity(n_groups);
            hot.extend(std::iter::repeat(true).take(half));
            hot.extend(std::iter::repeat(false).take(half));
            if n_groups % 2 == 1 {
                hot.push(rng.gen::<bool>());
            }
            hot.shuffle(&mut rng);
            for (group, &is_hot) in grouping.iter().zip(hot.iter()) {
                let s2 = if is_hot {
                    1.0 + cfg.scale_contrast
                } else {
                    1.0 - cfg.scale_contrast
                };
                let s = s2.sqrt();
                // signed common Gaussian factor gives the equicorrelation
                let z0: f64 = rng.sample(StandardNormal);
                let rho = cfg.correlation;
                for &(j, sign) in group {
                    let zj = features[[row, j]];
                    features[[row, j]] =
                        s * (sign * rho.sqrt() * z0 + (1.0 - rho).sqrt() * zj);
                }
            }
            ids.push(class);
            row += 1;
        }
    }
    Ok(LabeledDataset {
        features,
        labels: Labels::Class {
            ids,
            k: cfg.classes,
        },
        name: "synth-cov".into(),
    })
}

/// Binary labels driven by latent factors: labels come in groups that copy
/// one factor (with independent flip noise), and every feature is a noisy
/// view of one label.
#[derive(Debug, Clone)]
pub struct SynthLabelsConfig {
    pub n: usize,
    pub dim: usize,
    pub labels: usize,
    /// 1 means grouped labels always agree, 0 means labels are fair coins.
    pub strength: f64,
    /// Feature noise standard deviation.
    pub noise: f64,
    /// Fraction of channel observations hit by heavy-tailed noise
    /// (eight times the base standard deviation).
    pub outliers: f64,
    /// Labels per latent factor.
    pub group: usize,
    pub seed: u64,
}

impl Default for SynthLabelsConfig {
    fn default() -> Self {
        SynthLabelsConfig {
            n: 5000,
            dim: 16,
            labels: 8,
            strength: 1.0,
            noise: 1.0,
            outliers: 0.1,
            group: 2,
            seed: 0,
        }
    }
}

impl SynthLabelsConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = SynthLabelsConfig::default();
        for (k, v) in parse_kv(text)? {
            match k.as_str() {
                "n" => cfg.n = kv_usize(&v, "n")?,
                "d" => cfg.dim = kv_usize(&v, "d")?,
                "l" => cfg.labels = kv_usize(&v, "l")?,
                "strength" => cfg.strength = kv_f64(&v, "strength")?,
                "noise" => cfg.noise = kv_f64(&v, "noise")?,
                "outliers" => cfg.outliers = kv_f64(&v, "outliers")?,
                "group" => cfg.group = kv_usize(&v, "group")?,
                "seed" => cfg.seed = kv_u64(&v, "seed")?,
                other => return Err(Error::usage(format!("unknown generator key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels < 2 {
            return Err(Error::usage("need at least two labels"));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::usage("strength must lie in [0, 1]"));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(Error::usage("noise must be finite and non-negative"));
        }
        if self.n == 0 || self.dim == 0 {
            return Err(Error::usage("n and d must be positive"));
        }
        if self.group < 2 {
            return Err(Error::usage("label groups need at least two members"));
        }
        if !(0.0..=1.0).contains(&self.outliers) {
            return Err(Error::usage("outlier fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn synth_correlated_labels(cfg: &SynthLabelsConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let groups = cfg.labels.div_ceil(cfg.group);
    let flip_prob = (1.0 - cfg.strength) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ca1ab1e);
    // each feature is a noisy signed view of exactly one realized label
    // (factor plus its flip), assigned round-robin. Per-label evidence
    // channels keep the per-label predictor honest while the pair prior
    // stays available for structured cleanup.
    let mut mixing = Array2::zeros((cfg.dim, cfg.labels));
    for j in 0..cfg.dim {
        let l = j % cfg.labels;
        mixing[[j, l]] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    }
    let mut features = Array2::zeros((cfg.n, cfg.dim));
    let mut labels = Array2::zeros((cfg.n, cfg.labels));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ca1ab1e);
    sample_rng.set_stream(1);
    for i in 0..cfg.n {
        let z: Vec<f64> = (0..groups)
            .map(|_| if sample_rng.gen::<bool>() { 1.0 } else { 0.0 })
            .collect();
        for l in 0..cfg.labels {
            let base = z[l / cfg.group];
            let flipped = sample_rng.gen::<f64>() < flip_prob;
            labels[[i, l]] = if flipped { 1.0 - base } else { base };
        }
        for j in 0..cfg.dim {
            let mut v = 0.0;
            for l in 0..cfg.labels {
                v += mixing[[j, l]] * (2.0 * labels[[i, l]] - 1.0);
            }
            let spread = if sample_rng.gen::<f64>() < cfg.outliers {
                8.0 * cfg.noise
            } else {
                cfg.noise
            };
            features[[i, j]] = v + spread * sample_rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(LabeledDataset {
        features,
        labels: Labels::Multi(labels),
        name: "synth-labels".into(),
    })
}
