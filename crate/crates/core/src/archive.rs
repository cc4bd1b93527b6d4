//! Model persistence: a plain-text manifest followed by a raw little-endian
//! f64 payload, with an FNV-1a checksum over the payload. Round trips are
//! bit-exact.
//!
//! Layout:
//!
//! ```text
//! GAESCORE-ARCHIVE v1
//! kind cov-gae
//! activation sigmoid
//! meta key value
//! tensor wx 2 32 16 0
//! ...
//! checksum 0123456789abcdef
//! payload 16384
//! <raw bytes>
//! ```

use ndarray::{Array1, Array2};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gae::{ActivationKind, GaeParams, MeanAeParams};
use crate::structured::MlpParams;
use crate::util::fnv1a64;

const MAGIC: &str = "GAESCORE-ARCHIVE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mean,
    Gae,
    CovGae,
    MeanCov,
    Mlp,
    Ensemble,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mean => "mean",
            ModelKind::Gae => "gae",
            ModelKind::CovGae => "cov-gae",
            ModelKind::MeanCov => "mc",
            ModelKind::Mlp => "mlp",
            ModelKind::Ensemble => "ensemble",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ModelKind::Mean),
            "gae" => Ok(ModelKind::Gae),
            "cov-gae" => Ok(ModelKind::CovGae),
            "mc" => Ok(ModelKind::MeanCov),
            "mlp" => Ok(ModelKind::Mlp),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::Capability(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub kind: ModelKind,
    pub activation: Option<ActivationKind>,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<TensorEntry>,
}

impl Archive {
    pub fn new(kind: ModelKind) -> Self {
        Archive {
            kind,
            activation: None,
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push_tensor1(&mut self, name: &str, v: &Array1<f64>) {
        self.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: vec![v.len()],
            data: v.to_vec(),
        });
    }

    pub fn push_tensor2(&mut self, name: &str, m: &Array2<f64>) {
        self.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        });
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn find(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Archive(format!("missing tensor '{name}'")))
    }

    pub fn tensor1(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.find(name)?;
        if t.shape.len() != 1 {
            return Err(Error::Archive(format!("tensor '{name}' is not rank 1")));
        }
        Ok(Array1::from_vec(t.data.clone()))
    }

    pub fn tensor2(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.find(name)?;
        if t.shape.len() != 2 {
            return Err(Error::Archive(format!("tensor '{name}' is not rank 2")));
        }
        Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
            .map_err(|e| Error::Archive(format!("tensor '{name}': {e}")))
    }

    // -- typed conversions ---------------------------------------------------

    pub fn from_gae(p: &GaeParams, kind: ModelKind) -> Result<Self> {
        if !matches!(kind, ModelKind::Gae | ModelKind::CovGae) {
            return Err(Error::usage("from_gae expects a gae or cov-gae kind"));
        }
        let mut a = Archive::new(kind);
        a.activation = Some(p.activation);
        a.push_tensor2("wx", &p.wx);
        a.push_tensor2("wy", &p.wy);
        a.push_tensor2("wh", &p.wh);
        a.push_tensor1("b", &p.b);
        a.push_tensor1("ax", &p.ax);
        a.push_tensor1("ay", &p.ay);
        Ok(a)
    }

    pub fn to_gae(&self) -> Result<GaeParams> {
        if !matches!(self.kind, ModelKind::Gae | ModelKind::CovGae) {
            return Err(Error::Archive(format!(
                "archive holds '{}', not a gated auto-encoder",
                self.kind.as_str()
            )));
        }
        let activation = self
            .activation
            .ok_or_else(|| Error::Archive("gae archive lacks an activation".into()))?;
        GaeParams::new(
            self.tensor2("wx")?,
            self.tensor2("wy")?,
            self.tensor2("wh")?,
            self.tensor1("b")?,
            self.tensor1("ax")?,
            self.tensor1("ay")?,
            activation,
        )
    }

    pub fn from_mean(m: &MeanAeParams) -> Self {
        let mut a = Archive::new(ModelKind::Mean);
        a.push_tensor2("w", &m.w);
        a.push_tensor1("c", &m.c);
        a.push_tensor1("a", &m.a);
        a
    }

    pub fn to_mean(&self) -> Result<MeanAeParams> {
        if self.kind != ModelKind::Mean {
            return Err(Error::Archive(format!(
                "archive holds '{}', not a mean auto-encoder",
                self.kind.as_str()
            )));
        }
        let m = MeanAeParams {
            w: self.tensor2("w")?,
            c: self.tensor1("c")?,
            a: self.tensor1("a")?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_mean_cov(mean: &MeanAeParams, cov: &GaeParams) -> Self {
        let mut a = Archive::new(ModelKind::MeanCov);
        a.activation = Some(cov.activation);
        a.push_tensor2("mean.w", &mean.w);
        a.push_tensor1("mean.c", &mean.c);
        a.push_tensor1("mean.a", &mean.a);
        a.push_tensor2("cov.wx", &cov.wx);
        a.push_tensor2("cov.wy", &cov.wy);
        a.push_tensor2("cov.wh", &cov.wh);
        a.push_tensor1("cov.b", &cov.b);
        a.push_tensor1("cov.ax", &cov.ax);
        a.push_tensor1("cov.ay", &cov.ay);
        a
    }

    pub fn to_mean_cov(&self) -> Result<(MeanAeParams, GaeParams)> {
        if self.kind != ModelKind::MeanCov {
            return Err(Error::Archive(format!(
                "archive holds '{}', not a mean-covariance pair",
                self.kind.as_str()
            )));
        }
        let mean = MeanAeParams {
            w: self.tensor2("mean.w")?,
            c: self.tensor1("mean.c")?,
            a: self.tensor1("mean.a")?,
        };
        mean.validate()?;
        let cov = GaeParams::new(
            self.tensor2("cov.wx")?,
            self.tensor2("cov.wy")?,
            self.tensor2("cov.wh")?,
            self.tensor1("cov.b")?,
            self.tensor1("cov.ax")?,
            self.tensor1("cov.ay")?,
            self.activation.unwrap_or(ActivationKind::Sigmoid),
        )?;
        Ok((mean, cov))
    }

    pub fn from_mlp(m: &MlpParams) -> Self {
        let mut a = Archive::new(ModelKind::Mlp);
        a.push_tensor2("w1", &m.w1);
        a.push_tensor1("b1", &m.b1);
        a.push_tensor2("w2", &m.w2);
        a.push_tensor1("b2", &m.b2);
        a
    }

    pub fn to_mlp(&self) -> Result<MlpParams> {
        if self.kind != ModelKind::Mlp {
            return Err(Error::Archive(format!(
                "archive holds '{}', not an MLP",
                self.kind.as_str()
            )));
        }
        let m = MlpParams {
            w1: self.tensor2("w1")?,
            b1: self.tensor1("b1")?,
            w2: self.tensor2("w2")?,
            b2: self.tensor1("b2")?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Serialize an archive to bytes.
pub fn archive_to_bytes(a: &Archive) -> Vec<u8> {
    let mut payload: Vec<u8> = Vec::new();
    let mut manifest = String::new();
    manifest.push_str(&format!("{MAGIC} v{VERSION}\n"));
    manifest.push_str(&format!("kind {}\n", a.kind.as_str()));
    if let Some(act) = a.activation {
        manifest.push_str(&format!("activation {}\n", act.name()));
    }
    for (k, v) in &a.meta {
        manifest.push_str(&format!("meta {k} {v}\n"));
    }
    for t in &a.tensors {
        let offset = payload.len();
        for &v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push_str(&format!("tensor {} {}", t.name, t.shape.len()));
        for d in &t.shape {
            manifest.push_str(&format!(" {d}"));
        }
        manifest.push_str(&format!(" {offset}\n"));
    }
    manifest.push_str(&format!("checksum {:016x}\n", fnv1a64(&payload)));
    manifest.push_str(&format!("payload {}\n", payload.len()));
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Parse an archive from bytes.
pub fn archive_from_bytes(bytes: &[u8]) -> Result<Archive> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<String> {
        if pos >= bytes.len() {
            return Err(Error::Archive("unexpected end of manifest".into()));
        }
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Archive("manifest line without newline".into()))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::Archive("manifest is not UTF-8".into()))?
            .to_string();
        pos += end + 1;
        Ok(line)
    };

    let magic = next_line()?;
    let Some(version_str) = magic.strip_prefix(&format!("{MAGIC} v")) else {
        return Err(Error::Archive("not a model archive".into()));
    };
    let version: u32 = version_str
        .parse()
        .map_err(|_| Error::Archive(format!("bad version '{version_str}'")))?;
    if version != VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive version {version}, expected {VERSION}"
        )));
    }

    let kind_line = next_line()?;
    let kind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| Error::Archive("missing kind line".into()))
        .and_then(ModelKind::parse)?;

    let mut activation = None;
    let mut meta = Vec::new();
    struct PendingTensor {
        name: String,
        shape: Vec<usize>,
        offset: usize,
    }
    let mut pending: Vec<PendingTensor> = Vec::new();
    let mut checksum: Option<u64> = None;
    let payload_len: usize;

    loop {
        let line = next_line()?;
        if let Some(rest) = line.strip_prefix("activation ") {
            activation = Some(ActivationKind::parse(rest)?);
        } else if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| Error::Archive(format!("bad meta line '{line}'")))?;
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() < 3 {
                return Err(Error::Archive(format!("bad tensor line '{line}'")));
            }
            let name = parts[0].to_string();
            let rank: usize = parts[1]
                .parse()
                .map_err(|_| Error::Archive(format!("bad rank in '{line}'")))?;
            if parts.len() != 3 + rank {
                return Err(Error::Archive(format!("bad tensor line '{line}'")));
            }
            let mut shape = Vec::with_capacity(rank);
            for s in &parts[2..2 + rank] {
                shape.push(
                    s.parse()
                        .map_err(|_| Error::Archive(format!("bad shape in '{line}'")))?,
                );
            }
            let offset: usize = parts[2 + rank]
                .parse()
                .map_err(|_| Error::Archive(format!("bad offset in '{line}'")))?;
            pending.push(PendingTensor {
                name,
                shape,
                offset,
            });
        } else if let Some(rest) = line.strip_prefix("checksum ") {
            checksum = Some(
                u64::from_str_radix(rest, 16)
                    .map_err(|_| Error::Archive(format!("bad checksum '{rest}'")))?,
            );
        } else if let Some(rest) = line.strip_prefix("payload ") {
            payload_len = rest
                .parse()
                .map_err(|_| Error::Archive(format!("bad payload length '{rest}'")))?;
            break;
        } else {
            return Err(Error::Archive(format!("unrecognized manifest line '{line}'")));
        }
    }

    let payload = &bytes[pos..];
    if payload.len() != payload_len {
        return Err(Error::Archive(format!(
            "truncated payload: expected {payload_len} bytes, found {}",
            payload.len()
        )));
    }
    let expect = checksum.ok_or_else(|| Error::Archive("missing checksum".into()))?;
    let got = fnv1a64(payload);
    if got != expect {
        return Err(Error::Archive(format!(
            "checksum mismatch: manifest says {expect:016x}, payload hashes to {got:016x}"
        )));
    }

    let mut tensors = Vec::with_capacity(pending.len());
    for t in pending {
        let count: usize = t.shape.iter().product();
        let nbytes = count * 8;
        if t.offset + nbytes > payload.len() {
            return Err(Error::Archive(format!(
                "tensor '{}' extends past the payload",
                t.name
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let start = t.offset + i * 8;
            let chunk: [u8; 8] = payload[start..start + 8].try_into().unwrap();
            data.push(f64::from_le_bytes(chunk));
        }
        tensors.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            data,
        });
    }

    Ok(Archive {
        kind,
        activation,
        meta,
        tensors,
    })
}

pub fn save_archive(path: impl AsRef<Path>, a: &Archive) -> Result<()> {
    std::fs::write(path, archive_to_bytes(a))?;
    Ok(())
}

pub fn load_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let bytes = std::fs::read(path)?;
    archive_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gae_round_trip_is_identity() {
        let p = GaeParams::random(5, 4, 3, 6, ActivationKind::Tanh, 7);
        let a = Archive::from_gae(&p, ModelKind::Gae).unwrap();
        let bytes = archive_to_bytes(&a);
        let back = archive_from_bytes(&bytes).unwrap().to_gae().unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn mean_cov_and_mlp_round_trip() {
        let mean = MeanAeParams::random(4, 3, 1);
        let cov = GaeParams::random_covariance(4, 2, 3, 2);
        let a = Archive::from_mean_cov(&mean, &cov);
        let back = archive_from_bytes(&archive_to_bytes(&a)).unwrap();
        let (m2, c2) = back.to_mean_cov().unwrap();
        assert_eq!(mean, m2);
        assert_eq!(cov, c2);

        let mlp = MlpParams::random(4, 5, 3, 9);
        let a = Archive::from_mlp(&mlp);
        let back = archive_from_bytes(&archive_to_bytes(&a)).unwrap().to_mlp().unwrap();
        assert_eq!(mlp, back);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let p = GaeParams::random(3, 3, 2, 2, ActivationKind::Sigmoid, 3);
        let a = Archive::from_gae(&p, ModelKind::Gae).unwrap();
        let mut bytes = archive_to_bytes(&a);
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        let err = archive_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn version_and_kind_are_checked() {
        let p = GaeParams::random(3, 3, 2, 2, ActivationKind::Sigmoid, 3);
        let a = Archive::from_gae(&p, ModelKind::Gae).unwrap();
        let bytes = archive_to_bytes(&a);
        let text = String::from_utf8_lossy(&bytes[..40]).into_owned();
        assert!(text.starts_with("GAESCORE-ARCHIVE v1"));

        let bumped = String::from_utf8_lossy(&bytes).replace("ARCHIVE v1", "ARCHIVE v9");
        let err = archive_from_bytes(bumped.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        let unknown = String::from_utf8_lossy(&bytes).replace("kind gae", "kind turbo");
        let err = archive_from_bytes(unknown.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Capability(_)), "{err}");
    }

    #[test]
    fn truncated_payload_is_detected() {
        let p = GaeParams::random(3, 3, 2, 2, ActivationKind::Sigmoid, 3);
        let a = Archive::from_gae(&p, ModelKind::Gae).unwrap();
        let bytes = archive_to_bytes(&a);
        let err = archive_from_bytes(&bytes[..bytes.len() - 9]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    proptest! {
        #[test]
        fn arbitrary_mean_models_round_trip(d in 1usize..6, m in 1usize..6, seed in 0u64..500) {
            let p = MeanAeParams::random(d, m, seed);
            let a = Archive::from_mean(&p);
            let back = archive_from_bytes(&archive_to_bytes(&a)).unwrap().to_mean().unwrap();
            prop_assert_eq!(p, back);
        }
    }
}
