//! Free-energy oracles for the RBM families that gated auto-encoder energies
//! match up to a constant.
//!
//! These evaluators are written directly from the factored energy functions
//! and share no code with [`crate::energy`] beyond primitive matrix ops, so
//! agreement between the two routes is evidence, not tautology. Each analytic
//! form is itself checkable against exhaustive hidden-state enumeration for
//! small hidden layers. Visible units are Gaussian with unit variance; the
//! caller standardizes data.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::gae::{ActivationKind, GaeParams, MeanAeParams};

/// Factored gated conditional RBM with Gaussian visibles `x`, Bernoulli
/// hiddens, and conditioning input `y`.
///
/// `wx: F x Dx` projects the visibles, `wy: F x Dy` the conditioning input,
/// `wh: F x M` the hiddens (note the transposed layout relative to
/// [`GaeParams::wh`]), `a` is the visible bias and `b` the hidden bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FcrbmParams {
    pub wx: Array2<f64>,
    pub wy: Array2<f64>,
    pub wh: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl FcrbmParams {
    /// View a conditional GAE (reconstructing `y` from `x`) as an FCRBM whose
    /// visible units are the GAE's `y` side.
    pub fn from_gae(p: &GaeParams) -> Self {
        FcrbmParams {
            wx: p.wy.clone(),
            wy: p.wx.clone(),
            wh: p.wh.t().to_owned(),
            a: p.ay.clone(),
            b: p.b.clone(),
        }
    }

    /// Inverse of [`FcrbmParams::from_gae`]. The GAE's conditioning-side
    /// output bias has no FCRBM counterpart and is restored as given.
    pub fn to_gae(&self, cond_bias: Array1<f64>) -> Result<GaeParams> {
        GaeParams::new(
            self.wy.clone(),
            self.wx.clone(),
            self.wh.t().to_owned(),
            self.b.clone(),
            cond_bias,
            self.a.clone(),
            ActivationKind::Sigmoid,
        )
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }
}

/// Covariance RBM: Gaussian visibles, Bernoulli hiddens gating squared
/// projections. `p_mat: F x M`, `c_mat: F x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovRbmParams {
    pub p_mat: Array2<f64>,
    pub c_mat: Array2<f64>,
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl CovRbmParams {
    /// View a covariance GAE (tied factors) as a covariance RBM.
    pub fn from_cov_gae(p: &GaeParams) -> Result<Self> {
        if !p.factors_tied() {
            return Err(Error::usage("covariance RBM mapping requires tied factors"));
        }
        Ok(CovRbmParams {
            p_mat: p.wh.t().to_owned(),
            c_mat: p.wx.clone(),
            a: p.ax.clone(),
            b: p.b.clone(),
        })
    }

    pub fn to_cov_gae(&self) -> Result<GaeParams> {
        GaeParams::new(
            self.c_mat.clone(),
            self.c_mat.clone(),
            self.p_mat.t().to_owned(),
            self.b.clone(),
            self.a.clone(),
            self.a.clone(),
            ActivationKind::Sigmoid,
        )
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }
}

/// Classical Gaussian-Bernoulli RBM (the "mean" part of a mean-covariance
/// model). `w: M x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRbmParams {
    pub w: Array2<f64>,
    pub c: Array1<f64>,
    pub a: Array1<f64>,
}

impl MeanRbmParams {
    pub fn from_mean_ae(m: &MeanAeParams) -> Self {
        MeanRbmParams {
            w: m.w.clone(),
            c: m.c.clone(),
            a: m.a.clone(),
        }
    }

    pub fn to_mean_ae(&self) -> MeanAeParams {
        MeanAeParams {
            w: self.w.clone(),
            c: self.c.clone(),
            a: self.a.clone(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.c.len()
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Negative free energy `-F(x|y)` of the FCRBM with unit-variance visibles.
pub fn fcrbm_free_energy(q: &FcrbmParams, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<f64> {
    if x.len() != q.wx.ncols() || y.len() != q.wy.ncols() || q.a.len() != x.len() {
        return Err(Error::shape("FCRBM input dims do not match parameters"));
    }
    let m = &q.wx.dot(x) * &q.wy.dot(y); // F
    let act = q.wh.t().dot(&m) + &q.b; // M
    Ok(act.iter().map(|&v| softplus(v)).sum::<f64>() + q.a.dot(x)
        - 0.5 * x.dot(x)
        - 0.5 * q.a.dot(&q.a))
}

/// Negative free energy of the covariance RBM, additive constant dropped.
pub fn covrbm_free_energy(q: &CovRbmParams, x: &ArrayView1<f64>) -> Result<f64> {
    if x.len() != q.c_mat.ncols() || q.a.len() != x.len() {
        return Err(Error::shape("covariance RBM input dims do not match parameters"));
    }
    let sq = q.c_mat.dot(x).mapv(|v| v * v); // F
    let act = q.p_mat.t().dot(&sq) + &q.b; // M
    Ok(act.iter().map(|&v| softplus(v)).sum::<f64>() + q.a.dot(x) - x.dot(x))
}

/// Negative free energy of the classical Gaussian-Bernoulli RBM.
pub fn mean_rbm_free_energy(q: &MeanRbmParams, x: &ArrayView1<f64>) -> Result<f64> {
    if x.len() != q.w.ncols() || q.a.len() != x.len() {
        return Err(Error::shape("mean RBM input dims do not match parameters"));
    }
    let act = q.w.dot(x) + &q.c;
    Ok(act.iter().map(|&v| softplus(v)).sum::<f64>() + q.a.dot(x) - 0.5 * x.dot(x))
}

/// Mean-covariance RBM: the free energies add.
pub fn mcrbm_free_energy(
    mean: &MeanRbmParams,
    cov: &CovRbmParams,
    x: &ArrayView1<f64>,
) -> Result<f64> {
    Ok(mean_rbm_free_energy(mean, x)? + covrbm_free_energy(cov, x)?)
}

const MAX_ENUM_HIDDEN: usize = 20;

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn enumerate_free_energy(per_unit: &Array1<f64>, base: f64) -> Result<f64> {
    let m = per_unit.len();
    if m > MAX_ENUM_HIDDEN {
        return Err(Error::usage(format!(
            "exhaustive enumeration supports at most {MAX_ENUM_HIDDEN} hidden units, got {m}"
        )));
    }
    let configs = 1usize << m;
    let terms = (0..configs).map(|mask| {
        let mut s = base;
        for (k, &v) in per_unit.iter().enumerate() {
            if mask >> k & 1 == 1 {
                s += v;
            }
        }
        s
    });
    Ok(log_sum_exp(terms))
}

/// `-F(x|y)` by brute-force summation over every hidden configuration.
pub fn fcrbm_free_energy_enumerated(
    q: &FcrbmParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<f64> {
    let m = &q.wx.dot(x) * &q.wy.dot(y);
    let per_unit = q.wh.t().dot(&m) + &q.b;
    let diff = x - &q.a;
    enumerate_free_energy(&per_unit, -0.5 * diff.dot(&diff))
}

/// Covariance RBM free energy by exhaustive enumeration.
pub fn covrbm_free_energy_enumerated(q: &CovRbmParams, x: &ArrayView1<f64>) -> Result<f64> {
    let sq = q.c_mat.dot(x).mapv(|v| v * v);
    let per_unit = q.p_mat.t().dot(&sq) + &q.b;
    enumerate_free_energy(&per_unit, q.a.dot(x) - x.dot(x))
}

/// Mean RBM free energy by exhaustive enumeration.
pub fn mean_rbm_free_energy_enumerated(q: &MeanRbmParams, x: &ArrayView1<f64>) -> Result<f64> {
    let per_unit = q.w.dot(x) + &q.c;
    enumerate_free_energy(&per_unit, q.a.dot(x) - 0.5 * x.dot(x))
}
