//! Gated auto-encoder parameters, forward passes, reconstruction objectives,
//! and analytic parameter gradients.
//!
//! A gated auto-encoder relates two inputs `x` and `y` through factored
//! multiplicative interactions: both inputs are projected onto `F` factors,
//! multiplied elementwise, and mapped to `M` hidden ("mapping") units. The
//! decoder runs the same weights backwards, so encoder and decoder share one
//! copy of every matrix. Energy scoring (see [`crate::energy`]) is only
//! defined under that tying.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::util::Fnv64;

/// Elementwise hidden activation.
///
/// Every supported kind has a closed-form anti-derivative, which the energy
/// module relies on. Kinds without one (softmax, modulus, squaring) are
/// deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Linear,
    Relu,
}

impl ActivationKind {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-u).exp()),
            ActivationKind::Tanh => u.tanh(),
            ActivationKind::Linear => u,
            ActivationKind::Relu => u.max(0.0),
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => {
                let s = self.apply(u);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            ActivationKind::Linear => 1.0,
            ActivationKind::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Linear => "linear",
            ActivationKind::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            "linear" => Ok(ActivationKind::Linear),
            "relu" => Ok(ActivationKind::Relu),
            other => Err(Error::Capability(format!(
                "activation '{other}' is not supported"
            ))),
        }
    }

    pub const ALL: [ActivationKind; 4] = [
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Linear,
        ActivationKind::Relu,
    ];
}

/// Parameters of a gated auto-encoder.
///
/// `wx: F x Dx`, `wy: F x Dy`, `wh: M x F`, mapping bias `b: M`, output
/// biases `ax: Dx` and `ay: Dy`. One copy of each matrix serves both the
/// encoder and the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeParams {
    pub wx: Array2<f64>,
    pub wy: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
    pub ax: Array1<f64>,
    pub ay: Array1<f64>,
    pub activation: ActivationKind,
}

impl GaeParams {
    pub fn new(
        wx: Array2<f64>,
        wy: Array2<f64>,
        wh: Array2<f64>,
        b: Array1<f64>,
        ax: Array1<f64>,
        ay: Array1<f64>,
        activation: ActivationKind,
    ) -> Result<Self> {
        let p = GaeParams {
            wx,
            wy,
            wh,
            b,
            ax,
            ay,
            activation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per matrix, zero biases.
    pub fn random(
        dx: usize,
        dy: usize,
        factors: usize,
        mappings: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wx = uniform_matrix(&mut rng, factors, dx);
        let wy = uniform_matrix(&mut rng, factors, dy);
        let wh = uniform_matrix(&mut rng, mappings, factors);
        GaeParams {
            wx,
            wy,
            wh,
            b: Array1::zeros(mappings),
            ax: Array1::zeros(dx),
            ay: Array1::zeros(dy),
            activation,
        }
    }

    /// Covariance-model init: one factor matrix cloned into both slots,
    /// shared output bias.
    pub fn random_covariance(
        d: usize,
        factors: usize,
        mappings: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = uniform_matrix(&mut rng, factors, d);
        let wh = uniform_matrix(&mut rng, mappings, factors);
        GaeParams {
            wx: w.clone(),
            wy: w,
            wh,
            b: Array1::zeros(mappings),
            ax: Array1::zeros(d),
            ay: Array1::zeros(d),
            activation: ActivationKind::Sigmoid,
        }
    }

    pub fn dim_x(&self) -> usize {
        self.wx.ncols()
    }

    pub fn dim_y(&self) -> usize {
        self.wy.ncols()
    }

    pub fn factors(&self) -> usize {
        self.wx.nrows()
    }

    pub fn mappings(&self) -> usize {
        self.wh.nrows()
    }

    /// True when the factor matrices and output biases are bit-identical,
    /// i.e. the model can act as a covariance auto-encoder.
    pub fn factors_tied(&self) -> bool {
        self.wx == self.wy && self.ax == self.ay
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.wx.nrows();
        if self.wy.nrows() != f || self.wh.ncols() != f {
            return Err(Error::shape(format!(
                "factor dims disagree: wx has {f}, wy has {}, wh has {}",
                self.wy.nrows(),
                self.wh.ncols()
            )));
        }
        if self.b.len() != self.wh.nrows() {
            return Err(Error::shape(format!(
                "mapping bias has {} entries, wh has {} rows",
                self.b.len(),
                self.wh.nrows()
            )));
        }
        if self.ax.len() != self.wx.ncols() || self.ay.len() != self.wy.ncols() {
            return Err(Error::shape(
                "output bias length does not match factor matrix columns",
            ));
        }
        for (name, finite) in [
            ("wx", all_finite2(&self.wx)),
            ("wy", all_finite2(&self.wy)),
            ("wh", all_finite2(&self.wh)),
            ("b", all_finite1(&self.b.view())),
            ("ax", all_finite1(&self.ax.view())),
            ("ay", all_finite1(&self.ay.view())),
        ] {
            if !finite {
                return Err(Error::InvalidInput(format!("{name} contains non-finite entries")));
            }
        }
        Ok(())
    }

    /// Deterministic fingerprint over dims and weights; scores from different
    /// fingerprints are not comparable without calibration.
    pub fn model_id(&self) -> u64 {
        let mut h = Fnv64::new();
        for d in [self.dim_x(), self.dim_y(), self.factors(), self.mappings()] {
            h.write_u64(d as u64);
        }
        h.write_u64(self.activation as u64);
        for t in [&self.wx, &self.wy, &self.wh] {
            for &v in t.iter() {
                h.write_f64(v);
            }
        }
        for t in [&self.b, &self.ax, &self.ay] {
            for &v in t.iter() {
                h.write_f64(v);
            }
        }
        h.finish()
    }
}

/// Parameters of a classical ("mean") auto-encoder with sigmoid hiddens,
/// linear output, and tied weights. `w: M x D`, hidden bias `c: M`, output
/// bias `a: D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAeParams {
    pub w: Array2<f64>,
    pub c: Array1<f64>,
    pub a: Array1<f64>,
}

impl MeanAeParams {
    pub fn random(d: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MeanAeParams {
            w: uniform_matrix(&mut rng, hidden, d),
            c: Array1::zeros(hidden),
            a: Array1::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.len() != self.w.nrows() || self.a.len() != self.w.ncols() {
            return Err(Error::shape("mean AE bias lengths do not match weight matrix"));
        }
        if !all_finite2(&self.w) || !all_finite1(&self.c.view()) || !all_finite1(&self.a.view()) {
            return Err(Error::InvalidInput("mean AE parameters contain non-finite entries".into()));
        }
        Ok(())
    }

    pub fn model_id(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.dim() as u64);
        h.write_u64(self.hidden() as u64);
        for &v in self.w.iter().chain(self.c.iter()).chain(self.a.iter()) {
            h.write_f64(v);
        }
        h.finish()
    }
}

/// Mapping-unit activations with their pre-activation.
#[derive(Debug, Clone)]
pub struct MappingState {
    pub h: Array1<f64>,
    pub u: Array1<f64>,
}

/// Which reconstruction objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// Reconstruct `y` given `x` only.
    Conditional,
    /// Reconstruct both directions; the losses add.
    Symmetric,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let scale = 1.0 / (cols.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 * scale - scale)
}

fn all_finite1(v: &ArrayView1<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn all_finite2(m: &Array2<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

fn check_pair_dims(p: &GaeParams, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<()> {
    if x.len() != p.dim_x() || y.len() != p.dim_y() {
        return Err(Error::shape(format!(
            "input dims ({}, {}) do not match model dims ({}, {})",
            x.len(),
            y.len(),
            p.dim_x(),
            p.dim_y()
        )));
    }
    if !all_finite1(x) || !all_finite1(y) {
        return Err(Error::InvalidInput("encoder input contains non-finite entries".into()));
    }
    Ok(())
}

/// Mapping units for a pair: `u = wh ((wx x) * (wy y)) + b`, `h = act(u)`.
pub fn encode(p: &GaeParams, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<MappingState> {
    check_pair_dims(p, x, y)?;
    let fx = p.wx.dot(x);
    let fy = p.wy.dot(y);
    let u = p.wh.dot(&(&fx * &fy)) + &p.b;
    let h = u.mapv(|v| p.activation.apply(v));
    Ok(MappingState { h, u })
}

/// Reconstruction of `y`: `wy^T ((wx x) * (wh^T h)) + ay`. Output is linear.
pub fn decode_y(p: &GaeParams, x: &ArrayView1<f64>, state: &MappingState) -> Result<Array1<f64>> {
    if x.len() != p.dim_x() || state.h.len() != p.mappings() {
        return Err(Error::shape("decode_y: input or mapping dims do not match model"));
    }
    let fx = p.wx.dot(x);
    let g = p.wh.t().dot(&state.h);
    Ok(p.wy.t().dot(&(&fx * &g)) + &p.ay)
}

/// Reconstruction of `x`: mirror of [`decode_y`] with the roles swapped.
pub fn decode_x(p: &GaeParams, y: &ArrayView1<f64>, state: &MappingState) -> Result<Array1<f64>> {
    if y.len() != p.dim_y() || state.h.len() != p.mappings() {
        return Err(Error::shape("decode_x: input or mapping dims do not match model"));
    }
    let fy = p.wy.dot(y);
    let g = p.wh.t().dot(&state.h);
    Ok(p.wx.t().dot(&(&fy * &g)) + &p.ax)
}

/// Squared-error reconstruction objective for one pair.
pub fn reconstruction_loss(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
    mode: ReconstructionMode,
) -> Result<f64> {
    let state = encode(p, x, y)?;
    let ry = decode_y(p, x, &state)?;
    let cond = 0.5 * (&ry - y).mapv(|v| v * v).sum();
    match mode {
        ReconstructionMode::Conditional => Ok(cond),
        ReconstructionMode::Symmetric => {
            let state2 = encode(p, x, y)?;
            let rx = decode_x(p, y, &state2)?;
            Ok(cond + 0.5 * (&rx - x).mapv(|v| v * v).sum())
        }
    }
}

/// Gradient (or SGD velocity) storage shaped like [`GaeParams`].
#[derive(Debug, Clone)]
pub struct GaeGrads {
    pub wx: Array2<f64>,
    pub wy: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
    pub ax: Array1<f64>,
    pub ay: Array1<f64>,
}

impl GaeGrads {
    pub fn zeros_like(p: &GaeParams) -> Self {
        GaeGrads {
            wx: Array2::zeros(p.wx.raw_dim()),
            wy: Array2::zeros(p.wy.raw_dim()),
            wh: Array2::zeros(p.wh.raw_dim()),
            b: Array1::zeros(p.b.len()),
            ax: Array1::zeros(p.ax.len()),
            ay: Array1::zeros(p.ay.len()),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.wx *= s;
        self.wy *= s;
        self.wh *= s;
        self.b *= s;
        self.ax *= s;
        self.ay *= s;
    }
}

/// One reconstruction direction, batched.
///
/// `cond` is the conditioning input (gates the decoder), `enc` the encoder
/// input on the reconstructed side, `target` the clean reconstruction target.
/// Returns the summed loss; gradient contributions are accumulated unscaled.
struct DirectionGrads {
    d_cond_w: Array2<f64>,
    d_enc_w: Array2<f64>,
    d_wh: Array2<f64>,
    d_b: Array1<f64>,
    d_bias_out: Array1<f64>,
    loss: f64,
}

fn direction_grads(
    cond_w: &Array2<f64>,
    enc_w: &Array2<f64>,
    wh: &Array2<f64>,
    b: &Array1<f64>,
    bias_out: &Array1<f64>,
    activation: ActivationKind,
    cond_in: &ArrayView2<f64>,
    enc_in: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
) -> DirectionGrads {
    let fa = cond_in.dot(&cond_w.t()); // N x F
    let fb = enc_in.dot(&enc_w.t()); // N x F
    let m = &fa * &fb;
    let mut u = m.dot(&wh.t()); // N x M
    u += &b.view().insert_axis(Axis(0));
    let h = u.mapv(|v| activation.apply(v));
    let g = h.dot(wh); // N x F
    let d = &fa * &g;
    let mut r = d.dot(enc_w); // N x Db
    r += &bias_out.view().insert_axis(Axis(0));
    let e = &r - target;
    let loss = 0.5 * e.mapv(|v| v * v).sum();

    let dd = e.dot(&enc_w.t()); // N x F
    let dg = &fa * &dd;
    let dh = dg.dot(&wh.t()); // N x M
    let du = u.mapv(|v| activation.derivative(v)) * &dh;
    let d_b = du.sum_axis(Axis(0));
    let dm = du.dot(wh); // N x F
    let d_wh = du.t().dot(&m) + h.t().dot(&dg); // M x F
    let dfa = &fb * &dm + &g * &dd;
    let dfb = &fa * &dm;
    let d_cond_w = dfa.t().dot(cond_in); // F x Da
    let d_enc_w = dfb.t().dot(enc_in) + d.t().dot(&e); // F x Db
    let d_bias_out = e.sum_axis(Axis(0));

    DirectionGrads {
        d_cond_w,
        d_enc_w,
        d_wh,
        d_b,
        d_bias_out,
        loss,
    }
}

/// Mean-batch loss and parameter gradients where encoder inputs and
/// reconstruction targets may differ (denoising training corrupts the former
/// and keeps the latter clean).
pub fn loss_gradients_with_targets(
    p: &GaeParams,
    x_in: &ArrayView2<f64>,
    y_in: &ArrayView2<f64>,
    x_target: &ArrayView2<f64>,
    y_target: &ArrayView2<f64>,
    mode: ReconstructionMode,
) -> Result<(f64, GaeGrads)> {
    let n = x_in.nrows();
    if n == 0 {
        return Err(Error::usage("gradient of an empty batch is undefined"));
    }
    if y_in.nrows() != n || x_target.nrows() != n || y_target.nrows() != n {
        return Err(Error::shape("batch row counts disagree"));
    }
    if x_in.ncols() != p.dim_x() || y_in.ncols() != p.dim_y() {
        return Err(Error::shape(format!(
            "batch dims ({}, {}) do not match model dims ({}, {})",
            x_in.ncols(),
            y_in.ncols(),
            p.dim_x(),
            p.dim_y()
        )));
    }

    let mut grads = GaeGrads::zeros_like(p);
    let mut loss = 0.0;

    // y given x
    let dir = direction_grads(
        &p.wx, &p.wy, &p.wh, &p.b, &p.ay, p.activation, x_in, y_in, y_target,
    );
    loss += dir.loss;
    grads.wx += &dir.d_cond_w;
    grads.wy += &dir.d_enc_w;
    grads.wh += &dir.d_wh;
    grads.b += &dir.d_b;
    grads.ay += &dir.d_bias_out;

    if mode == ReconstructionMode::Symmetric {
        // x given y
        let dir = direction_grads(
            &p.wy, &p.wx, &p.wh, &p.b, &p.ax, p.activation, y_in, x_in, x_target,
        );
        loss += dir.loss;
        grads.wy += &dir.d_cond_w;
        grads.wx += &dir.d_enc_w;
        grads.wh += &dir.d_wh;
        grads.b += &dir.d_b;
        grads.ax += &dir.d_bias_out;
    }

    let inv_n = 1.0 / n as f64;
    grads.scale(inv_n);
    Ok((loss * inv_n, grads))
}

/// Mean-batch loss and gradients on clean pairs.
pub fn loss_gradients(
    p: &GaeParams,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    mode: ReconstructionMode,
) -> Result<(f64, GaeGrads)> {
    loss_gradients_with_targets(p, x, y, x, y, mode)
}

// ---------------------------------------------------------------------------
// Classical (mean) auto-encoder forward pass and gradients.
// ---------------------------------------------------------------------------

/// `r = w^T sigmoid(w x + c) + a`.
pub fn mean_forward(m: &MeanAeParams, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != m.dim() {
        return Err(Error::shape("mean AE input dim mismatch"));
    }
    let h = (m.w.dot(x) + &m.c).mapv(|v| ActivationKind::Sigmoid.apply(v));
    Ok(m.w.t().dot(&h) + &m.a)
}

/// Gradient storage shaped like [`MeanAeParams`].
#[derive(Debug, Clone)]
pub struct MeanGrads {
    pub w: Array2<f64>,
    pub c: Array1<f64>,
    pub a: Array1<f64>,
}

impl MeanGrads {
    pub fn zeros_like(m: &MeanAeParams) -> Self {
        MeanGrads {
            w: Array2::zeros(m.w.raw_dim()),
            c: Array1::zeros(m.c.len()),
            a: Array1::zeros(m.a.len()),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w *= s;
        self.c *= s;
        self.a *= s;
    }
}

/// Mean-batch squared-error loss and gradients for the classical auto-encoder.
pub fn mean_loss_gradients(
    m: &MeanAeParams,
    x_in: &ArrayView2<f64>,
    x_target: &ArrayView2<f64>,
) -> Result<(f64, MeanGrads)> {
    let n = x_in.nrows();
    if n == 0 {
        return Err(Error::usage("gradient of an empty batch is undefined"));
    }
    if x_in.ncols() != m.dim() || x_target.nrows() != n || x_target.ncols() != m.dim() {
        return Err(Error::shape("mean AE batch dims do not match model"));
    }
    let mut u = x_in.dot(&m.w.t()); // N x M
    u += &m.c.view().insert_axis(Axis(0));
    let h = u.mapv(|v| ActivationKind::Sigmoid.apply(v));
    let mut r = h.dot(&m.w); // N x D
    r += &m.a.view().insert_axis(Axis(0));
    let e = &r - x_target;
    let loss = 0.5 * e.mapv(|v| v * v).sum();

    let dh = e.dot(&m.w.t()); // N x M
    let du = &h * &(1.0 - &h) * &dh;
    let mut grads = MeanGrads {
        w: du.t().dot(x_in) + h.t().dot(&e),
        c: du.sum_axis(Axis(0)),
        a: e.sum_axis(Axis(0)),
    };
    let inv_n = 1.0 / n as f64;
    grads.scale(inv_n);
    Ok((loss * inv_n, grads))
}

/// Mean squared-error loss without gradients (validation passes).
pub fn mean_loss(m: &MeanAeParams, x_in: &ArrayView2<f64>, x_target: &ArrayView2<f64>) -> Result<f64> {
    mean_loss_gradients(m, x_in, x_target).map(|(l, _)| l)
}

/// Mean reconstruction loss over a batch of pairs without gradients.
pub fn batch_loss(
    p: &GaeParams,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    mode: ReconstructionMode,
) -> Result<f64> {
    loss_gradients_with_targets(p, x, y, x, y, mode).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn spec_model(activation: ActivationKind) -> GaeParams {
        GaeParams::new(
            arr2(&[[1.0, 0.0]]),
            arr2(&[[0.0, 1.0]]),
            arr2(&[[1.0]]),
            arr1(&[0.0]),
            arr1(&[0.0, 0.0]),
            arr1(&[0.0, 0.0]),
            activation,
        )
        .unwrap()
    }

    #[test]
    fn encode_hand_evaluation() {
        let p = spec_model(ActivationKind::Sigmoid);
        let x = arr1(&[2.0, 3.0]);
        let y = arr1(&[4.0, 5.0]);
        let s = encode(&p, &x.view(), &y.view()).unwrap();
        assert_eq!(s.u[0], 10.0);
        assert!((s.h[0] - 0.9999546021312976).abs() < 1e-12);
    }

    #[test]
    fn encode_zero_weights_sigmoid_gives_half() {
        let p = GaeParams::new(
            Array2::zeros((2, 3)),
            Array2::zeros((2, 3)),
            Array2::zeros((4, 2)),
            Array1::zeros(4),
            Array1::zeros(3),
            Array1::zeros(3),
            ActivationKind::Sigmoid,
        )
        .unwrap();
        let x = arr1(&[1.0, -2.0, 0.5]);
        let s = encode(&p, &x.view(), &x.view()).unwrap();
        assert!(s.u.iter().all(|&u| u == 0.0));
        assert!(s.h.iter().all(|&h| h == 0.5));
    }

    #[test]
    fn encode_linear_identity() {
        let p = spec_model(ActivationKind::Linear);
        let x = arr1(&[2.0, 3.0]);
        let y = arr1(&[4.0, 5.0]);
        let s = encode(&p, &x.view(), &y.view()).unwrap();
        assert_eq!(s.h[0], 10.0);
    }

    #[test]
    fn decode_y_hand_evaluation() {
        let p = spec_model(ActivationKind::Sigmoid);
        let x = arr1(&[2.0, 3.0]);
        let state = MappingState {
            h: arr1(&[1.0]),
            u: arr1(&[10.0]),
        };
        let r = decode_y(&p, &x.view(), &state).unwrap();
        assert_eq!(r, arr1(&[0.0, 2.0]));
    }

    #[test]
    fn decode_x_hand_evaluation() {
        let p = spec_model(ActivationKind::Sigmoid);
        let y = arr1(&[4.0, 5.0]);
        let state = MappingState {
            h: arr1(&[1.0]),
            u: arr1(&[10.0]),
        };
        let r = decode_x(&p, &y.view(), &state).unwrap();
        assert_eq!(r, arr1(&[5.0, 0.0]));
    }

    #[test]
    fn decode_with_zero_state_returns_bias() {
        let mut p = spec_model(ActivationKind::Sigmoid);
        p.ay = arr1(&[0.7, -0.3]);
        p.ax = arr1(&[0.1, 0.2]);
        let x = arr1(&[2.0, 3.0]);
        let y = arr1(&[4.0, 5.0]);
        let zero = MappingState {
            h: arr1(&[0.0]),
            u: arr1(&[0.0]),
        };
        assert_eq!(decode_y(&p, &x.view(), &zero).unwrap(), p.ay);
        assert_eq!(decode_x(&p, &y.view(), &zero).unwrap(), p.ax);
        // gating by a zero conditioning input also reduces to the bias
        let s = encode(&p, &Array1::zeros(2).view(), &y.view()).unwrap();
        assert_eq!(decode_y(&p, &Array1::zeros(2).view(), &s).unwrap(), p.ay);
    }

    #[test]
    fn conditional_loss_zero_weight_model() {
        let p = GaeParams::new(
            Array2::zeros((1, 2)),
            Array2::zeros((1, 2)),
            Array2::zeros((1, 1)),
            Array1::zeros(1),
            Array1::zeros(2),
            Array1::zeros(2),
            ActivationKind::Sigmoid,
        )
        .unwrap();
        let x = arr1(&[0.0, 0.0]);
        let y = arr1(&[1.0, 1.0]);
        let loss = reconstruction_loss(&p, &x.view(), &y.view(), ReconstructionMode::Conditional)
            .unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
    }

    // Straight-line reimplementation used as an oracle for the composed loss.
    fn oracle_conditional_loss(p: &GaeParams, x: &Array1<f64>, y: &Array1<f64>) -> f64 {
        let f = p.factors();
        let m = p.mappings();
        let dy = p.dim_y();
        let mut fx = vec![0.0; f];
        let mut fy = vec![0.0; f];
        for i in 0..f {
            for j in 0..p.dim_x() {
                fx[i] += p.wx[[i, j]] * x[j];
            }
            for j in 0..dy {
                fy[i] += p.wy[[i, j]] * y[j];
            }
        }
        let mut h = vec![0.0; m];
        for k in 0..m {
            let mut u = p.b[k];
            for i in 0..f {
                u += p.wh[[k, i]] * fx[i] * fy[i];
            }
            h[k] = p.activation.apply(u);
        }
        let mut loss = 0.0;
        for j in 0..dy {
            let mut r = p.ay[j];
            for i in 0..f {
                let mut g = 0.0;
                for k in 0..m {
                    g += p.wh[[k, i]] * h[k];
                }
                r += p.wy[[i, j]] * fx[i] * g;
            }
            let e = r - y[j];
            loss += 0.5 * e * e;
        }
        loss
    }

    #[test]
    fn loss_matches_independent_oracle() {
        let p = spec_model(ActivationKind::Sigmoid);
        let x = arr1(&[2.0, 3.0]);
        let y = arr1(&[4.0, 5.0]);
        let loss = reconstruction_loss(&p, &x.view(), &y.view(), ReconstructionMode::Conditional)
            .unwrap();
        let expect = oracle_conditional_loss(&p, &x, &y);
        assert!((loss - expect).abs() < 1e-12);

        // and on a bigger random model
        let p = GaeParams::random(5, 4, 3, 6, ActivationKind::Tanh, 99);
        let x = arr1(&[0.3, -1.2, 0.8, 0.1, -0.4]);
        let y = arr1(&[1.1, -0.2, 0.6, -0.9]);
        let loss = reconstruction_loss(&p, &x.view(), &y.view(), ReconstructionMode::Conditional)
            .unwrap();
        let expect = oracle_conditional_loss(&p, &x, &y);
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn symmetric_loss_is_sum_of_directions() {
        let p = GaeParams::random(4, 4, 3, 5, ActivationKind::Sigmoid, 3);
        let x = arr1(&[0.1, 0.5, -0.3, 0.9]);
        let y = arr1(&[-0.2, 0.4, 0.7, -0.8]);
        let sym =
            reconstruction_loss(&p, &x.view(), &y.view(), ReconstructionMode::Symmetric).unwrap();
        let cond_y =
            reconstruction_loss(&p, &x.view(), &y.view(), ReconstructionMode::Conditional).unwrap();
        // the x-direction loss, computed by hand from the mirrored decoder
        let state = encode(&p, &x.view(), &y.view()).unwrap();
        let rx = decode_x(&p, &y.view(), &state).unwrap();
        let cond_x = 0.5 * (&rx - &x).mapv(|v| v * v).sum();
        assert!((sym - (cond_y + cond_x)).abs() < 1e-14);
    }

    #[test]
    fn perfect_reconstruction_zeroes_loss_and_grads() {
        // zero wh makes h constant; with zero weights and ay = y the decoder
        // reproduces y exactly
        let mut p = GaeParams::new(
            Array2::zeros((2, 3)),
            Array2::zeros((2, 3)),
            Array2::zeros((2, 2)),
            Array1::zeros(2),
            Array1::zeros(3),
            Array1::zeros(3),
            ActivationKind::Sigmoid,
        )
        .unwrap();
        let y = arr1(&[0.3, -0.5, 1.1]);
        p.ay = y.clone();
        p.ax = arr1(&[0.2, 0.0, -0.1]);
        let x = p.ax.clone();
        let loss =
            reconstruction_loss(&p, &x.view(), &y.view(), ReconstructionMode::Symmetric).unwrap();
        assert!(loss < 1e-28);
        let xs = x.clone().insert_axis(Axis(0));
        let ys = y.clone().insert_axis(Axis(0));
        let (_, g) =
            loss_gradients(&p, &xs.view(), &ys.view(), ReconstructionMode::Symmetric).unwrap();
        assert!(g.wx.iter().all(|&v| v == 0.0));
        assert!(g.wy.iter().all(|&v| v == 0.0));
        assert!(g.ay.iter().all(|&v| v == 0.0));
        assert!(g.ax.iter().all(|&v| v == 0.0));
    }

    fn flatten_params(p: &GaeParams) -> Vec<f64> {
        p.wx.iter()
            .chain(p.wy.iter())
            .chain(p.wh.iter())
            .chain(p.b.iter())
            .chain(p.ax.iter())
            .chain(p.ay.iter())
            .copied()
            .collect()
    }

    fn assign_params(p: &mut GaeParams, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for v in p.wx.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in p.wy.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in p.wh.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in p.b.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in p.ax.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in p.ay.iter_mut() {
            *v = it.next().unwrap();
        }
    }

    fn flatten_grads(g: &GaeGrads) -> Vec<f64> {
        g.wx.iter()
            .chain(g.wy.iter())
            .chain(g.wh.iter())
            .chain(g.b.iter())
            .chain(g.ax.iter())
            .chain(g.ay.iter())
            .copied()
            .collect()
    }

    fn fd_check(seed: u64, mode: ReconstructionMode, activation: ActivationKind) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GaeParams::random(3, 3, 2, 2, activation, seed);
        for v in p.b.iter_mut().chain(p.ax.iter_mut()).chain(p.ay.iter_mut()) {
            *v = rng.gen::<f64>() - 0.5;
        }
        let x = Array1::from_shape_fn(3, |_| rng.gen::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(3, |_| rng.gen::<f64>() * 2.0 - 1.0);
        let xs = x.clone().insert_axis(Axis(0));
        let ys = y.clone().insert_axis(Axis(0));
        let (_, g) = loss_gradients(&p, &xs.view(), &ys.view(), mode).unwrap();
        let analytic = flatten_grads(&g);
        let base = flatten_params(&p);
        let step = 1e-5;
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = base.clone();
            plus[i] += step;
            assign_params(&mut p, &plus);
            let lp = reconstruction_loss(&p, &x.view(), &y.view(), mode).unwrap();
            let mut minus = base.clone();
            minus[i] -= step;
            assign_params(&mut p, &minus);
            let lm = reconstruction_loss(&p, &x.view(), &y.view(), mode).unwrap();
            assign_params(&mut p, &base);
            let fd = (lp - lm) / (2.0 * step);
            let denom = a.abs().max(fd.abs()).max(1e-4);
            assert!(
                (fd - a).abs() / denom <= 1e-4,
                "seed {seed} {mode:?} {activation:?}: param {i} analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            fd_check(seed, ReconstructionMode::Conditional, ActivationKind::Sigmoid);
            fd_check(seed, ReconstructionMode::Symmetric, ActivationKind::Sigmoid);
        }
        fd_check(100, ReconstructionMode::Conditional, ActivationKind::Tanh);
        fd_check(101, ReconstructionMode::Symmetric, ActivationKind::Linear);
    }

    #[test]
    fn symmetric_gradient_mirrors_on_swapped_roles() {
        // with x = y, wx = wy, ax = ay the two directions are interchangeable
        let p = GaeParams::random_covariance(4, 3, 3, 11);
        let x = arr1(&[0.4, -0.6, 0.2, 0.9]);
        let xs = x.clone().insert_axis(Axis(0));
        let (_, g) =
            loss_gradients(&p, &xs.view(), &xs.view(), ReconstructionMode::Symmetric).unwrap();
        let diff = (&g.wx - &g.wy).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12, "wx and wy gradients should agree, max diff {diff}");
        let bias_diff = (&g.ax - &g.ay).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(bias_diff < 1e-12);
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let p = GaeParams::random(2, 2, 2, 2, ActivationKind::Sigmoid, 0);
        let empty = Array2::<f64>::zeros((0, 2));
        let err = loss_gradients(
            &p,
            &empty.view(),
            &empty.view(),
            ReconstructionMode::Conditional,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = spec_model(ActivationKind::Sigmoid);
        let bad = arr1(&[1.0, 2.0, 3.0]);
        let y = arr1(&[4.0, 5.0]);
        assert!(matches!(
            encode(&p, &bad.view(), &y.view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let p = spec_model(ActivationKind::Sigmoid);
        let x = arr1(&[f64::NAN, 1.0]);
        let y = arr1(&[4.0, 5.0]);
        assert!(matches!(
            encode(&p, &x.view(), &y.view()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn tied_weights_are_structural() {
        // mutating the one weight copy moves both encoder and decoder
        let mut p = spec_model(ActivationKind::Linear);
        let x = arr1(&[2.0, 3.0]);
        let y = arr1(&[4.0, 5.0]);
        let before_state = encode(&p, &x.view(), &y.view()).unwrap();
        let before = decode_y(&p, &x.view(), &before_state).unwrap();
        p.wy[[0, 1]] = 2.0;
        let after_state = encode(&p, &x.view(), &y.view()).unwrap();
        let after = decode_y(&p, &x.view(), &after_state).unwrap();
        assert_ne!(before_state.u[0], after_state.u[0], "encoder must see the change");
        assert_ne!(before[1], after[1], "decoder must see the change");
    }

    #[test]
    fn activation_monotonicity() {
        let grid: Vec<f64> = (-40..40).map(|i| i as f64 * 0.25).collect();
        for kind in ActivationKind::ALL {
            for w in grid.windows(2) {
                assert!(
                    kind.apply(w[0]) <= kind.apply(w[1]),
                    "{kind:?} not monotone at {}",
                    w[0]
                );
            }
        }
    }
}
