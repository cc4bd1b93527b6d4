//! Multi-label post-classification: a feed-forward MLP makes a fast initial
//! prediction, then gradient steps on a gated auto-encoder's energy clean up
//! the label vector.
//!
//! Two refinement variants exist. `GaeXy` scores labels conditioned on the
//! features through a conditionally trained model; `GaeY2` scores the label
//! vector under a covariance model of the labels alone and never looks at
//! the features.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use std::time::Instant;

use crate::data::{FoldSplit, LabeledDataset};
use crate::energy::{energy_conditional_value, vector_field};
use crate::error::{Error, Result};
use crate::gae::{ActivationKind, GaeParams};
use crate::train::{
    train_gae, CorruptTarget, CorruptionKind, TrainConfig, TrainReport,
};
use crate::util::parallel_map;

/// Two-layer perceptron with sigmoid hiddens and sigmoid outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scale1 = 1.0 / (input.max(1) as f64).sqrt();
        let w1 = Array2::from_shape_fn((hidden, input), |_| rng.gen::<f64>() * 2.0 * scale1 - scale1);
        let scale2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let w2 = Array2::from_shape_fn((output, hidden), |_| rng.gen::<f64>() * 2.0 * scale2 - scale2);
        MlpParams {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.b1.len() != self.w1.nrows()
            || self.w2.ncols() != self.w1.nrows()
            || self.b2.len() != self.w2.nrows()
        {
            return Err(Error::shape("MLP layer dims do not line up"));
        }
        let finite = self
            .w1
            .iter()
            .chain(self.w2.iter())
            .chain(self.b1.iter())
            .chain(self.b2.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("MLP parameters contain non-finite entries".into()));
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// `y0 = sigmoid(w2 sigmoid(w1 x + b1) + b2)`.
pub fn mlp_forward(m: &MlpParams, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != m.input_dim() {
        return Err(Error::shape("MLP input dim mismatch"));
    }
    let h = (m.w1.dot(x) + &m.b1).mapv(sigmoid);
    Ok((m.w2.dot(&h) + &m.b2).mapv(sigmoid))
}

struct MlpGrads {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

/// Mean elementwise cross-entropy over all `N x L` output entries, with
/// gradients. Computed from logits for stability.
fn mlp_loss_gradients(
    m: &MlpParams,
    xs: &ArrayView2<f64>,
    ts: &ArrayView2<f64>,
) -> Result<(f64, MlpGrads)> {
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::usage("gradient of an empty batch is undefined"));
    }
    let mut z1 = xs.dot(&m.w1.t());
    z1 += &m.b1.view().insert_axis(Axis(0));
    let h1 = z1.mapv(sigmoid);
    let mut z2 = h1.dot(&m.w2.t());
    z2 += &m.b2.view().insert_axis(Axis(0));

    let entries = (n * m.output_dim()) as f64;
    let mut loss = 0.0;
    for (&z, &t) in z2.iter().zip(ts.iter()) {
        loss += softplus(z) - t * z;
    }
    loss /= entries;

    let dz2 = (z2.mapv(sigmoid) - ts) / entries;
    let dw2 = dz2.t().dot(&h1);
    let db2 = dz2.sum_axis(Axis(0));
    let dh1 = dz2.dot(&m.w2);
    let dz1 = &h1 * &(1.0 - &h1) * &dh1;
    let dw1 = dz1.t().dot(xs);
    let db1 = dz1.sum_axis(Axis(0));
    Ok((
        loss,
        MlpGrads {
            w1: dw1,
            b1: db1,
            w2: dw2,
            b2: db2,
        },
    ))
}

/// Train the MLP by mini-batch SGD on mean elementwise cross-entropy.
/// Labels must be 0/1.
pub fn mlp_train(
    xs: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    cfg: &TrainConfig,
    init: MlpParams,
) -> Result<(MlpParams, TrainReport)> {
    cfg.validate()?;
    init.validate()?;
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::usage("training set is empty"));
    }
    if targets.nrows() != n || targets.ncols() != init.output_dim() || xs.ncols() != init.input_dim() {
        return Err(Error::shape("MLP training dims do not match"));
    }
    if !targets.iter().all(|&t| t == 0.0 || t == 1.0) {
        return Err(Error::usage("MLP targets must be binary"));
    }
    let start = Instant::now();
    let mut p = init;
    let mut vw1 = Array2::<f64>::zeros(p.w1.raw_dim());
    let mut vb1 = Array1::<f64>::zeros(p.b1.len());
    let mut vw2 = Array2::<f64>::zeros(p.w2.raw_dim());
    let mut vb2 = Array1::<f64>::zeros(p.b2.len());
    let mut trace = Vec::with_capacity(cfg.epochs);

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.batch_size < n {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(0x200_0000 + epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = xs.select(Axis(0), chunk);
            let bt = targets.select(Axis(0), chunk);
            let (loss, g) = mlp_loss_gradients(&p, &bx.view(), &bt.view())?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "MLP loss is not finite".into(),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let lr = cfg.learning_rate;
            let wd = cfg.weight_decay;
            let mom = cfg.momentum;
            macro_rules! step {
                ($theta:expr, $vel:expr, $grad:expr) => {
                    ndarray::Zip::from(&mut $vel)
                        .and(&$grad)
                        .and(&$theta)
                        .for_each(|v, &g, &t| *v = mom * *v - lr * (g + wd * t));
                    $theta += &$vel;
                };
            }
            step!(p.w1, vw1, g.w1);
            step!(p.b1, vb1, g.b1);
            step!(p.w2, vw2, g.w2);
            step!(p.b2, vb2, g.b2);
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok((
        p,
        TrainReport {
            train_loss: trace,
            val_loss: Vec::new(),
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Which energy the label refinement climbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelOptVariant {
    /// Score `y` conditioned on the features.
    GaeXy,
    /// Score `y` under a label-covariance model; features are ignored.
    GaeY2,
}

impl LabelOptVariant {
    pub fn name(self) -> &'static str {
        match self {
            LabelOptVariant::GaeXy => "xy",
            LabelOptVariant::GaeY2 => "y2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(LabelOptVariant::GaeXy),
            "y2" => Ok(LabelOptVariant::GaeY2),
            other => Err(Error::usage(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabelOptConfig {
    /// Step size; halved per example whenever a step moves the score the
    /// wrong way, up to 20 times.
    pub step: f64,
    /// Stop once the energy changes by no more than this.
    pub tol: f64,
    pub max_iter: usize,
    pub variant: LabelOptVariant,
    /// Climb the score (the default sign convention). `false` descends.
    pub ascend: bool,
    /// Gaussian noise added to the y input while training the refinement
    /// model; useful for the xy variant, harmful for y2.
    pub train_noise_std: f64,
}

impl Default for LabelOptConfig {
    fn default() -> Self {
        LabelOptConfig {
            step: 0.1,
            tol: 1e-6,
            max_iter: 100,
            variant: LabelOptVariant::GaeY2,
            ascend: true,
            train_noise_std: 0.0,
        }
    }
}

impl LabelOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.step.is_finite() || self.step < 0.0 {
            return Err(Error::usage("step must be finite and non-negative"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::usage("tolerance must be positive"));
        }
        if !self.train_noise_std.is_finite() || self.train_noise_std < 0.0 {
            return Err(Error::usage("train noise std must be finite and non-negative"));
        }
        Ok(())
    }
}

const MAX_HALVINGS: u32 = 20;

fn refine_energy(g: &GaeParams, cond: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<f64> {
    energy_conditional_value(g, cond, y)
}

fn refine_gradient(
    g: &GaeParams,
    cond: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    vector_field(g, cond, y)
}

/// First-order refinement of an initial label vector. Returns the final
/// labels (clamped to `[0,1]`) and the energy trace, starting at the initial
/// point's energy.
pub fn refine_labels(
    g: &GaeParams,
    x: &ArrayView1<f64>,
    y0: &ArrayView1<f64>,
    cfg: &LabelOptConfig,
) -> Result<(Array1<f64>, Vec<f64>)> {
    cfg.validate()?;
    if y0.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::usage("initial labels must lie in [0, 1]"));
    }
    match cfg.variant {
        LabelOptVariant::GaeXy => {
            if x.len() != g.dim_x() || y0.len() != g.dim_y() {
                return Err(Error::shape("refinement dims do not match model"));
            }
        }
        LabelOptVariant::GaeY2 => {
            if y0.len() != g.dim_x() || y0.len() != g.dim_y() {
                return Err(Error::shape("y2 refinement needs a square model over labels"));
            }
        }
    }

    let sign = if cfg.ascend { 1.0 } else { -1.0 };
    // the conditioning input is held fixed for the whole run: the features
    // for the xy variant, the initial labels for y2
    let cond_owned: Array1<f64> = match cfg.variant {
        LabelOptVariant::GaeXy => x.to_owned(),
        LabelOptVariant::GaeY2 => y0.to_owned(),
    };
    let cond = &cond_owned.view();
    let mut y = y0.to_owned();
    let mut energy = refine_energy(g, cond, &y.view())?;
    let mut trace = vec![energy];
    if !energy.is_finite() {
        return Err(Error::NonFiniteEnergy { trace });
    }
    let mut lam = cfg.step;

    for _ in 0..cfg.max_iter {
        let grad = refine_gradient(g, cond, &y.view())?;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = (&y + &(sign * lam * &grad)).mapv(|v| v.clamp(0.0, 1.0));
            let e_new = refine_energy(g, cond, &cand.view())?;
            if !e_new.is_finite() {
                return Err(Error::NonFiniteEnergy { trace });
            }
            if sign * (e_new - energy) >= 0.0 {
                accepted = Some((cand, e_new));
                break;
            }
            lam *= 0.5;
        }
        let Some((cand, e_new)) = accepted else {
            break; // step size exhausted; keep the best point found
        };
        y = cand;
        trace.push(e_new);
        let delta = (e_new - energy).abs();
        energy = e_new;
        if delta <= cfg.tol {
            break;
        }
    }
    Ok((y, trace))
}

/// Mean disagreement after thresholding probabilities at 0.5 (ties count as 1).
pub fn multilabel_error(pred: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<f64> {
    if pred.raw_dim() != truth.raw_dim() {
        return Err(Error::shape("prediction and truth shapes differ"));
    }
    if pred.is_empty() {
        return Err(Error::usage("cannot score an empty prediction set"));
    }
    let mut wrong = 0usize;
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        let hard = if p >= 0.5 { 1.0 } else { 0.0 };
        if hard != t {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / pred.len() as f64)
}

/// Settings for one full train-refine-score pass.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mlp_hidden: usize,
    pub mlp_cfg: TrainConfig,
    pub gae_hidden: usize,
    pub gae_factors: usize,
    pub gae_cfg: TrainConfig,
    pub opt: LabelOptConfig,
    /// Alternative refinement intensities tried on the validation split;
    /// the winner (including `opt` itself) refines the test split.
    pub opt_menu: Vec<LabelOptConfig>,
    /// Refinement models trained from this many init seeds; validation
    /// error picks the one to keep. At least 1.
    pub gae_candidates: usize,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub mlp_error: f64,
    pub refined_error: f64,
    /// Per-example refined probabilities for the fold's test split.
    pub refined: Array2<f64>,
}

/// Train on the fold's train split, refine the test split, and report both
/// error rates. With `max_iter = 0` the refined error equals the MLP error.
pub fn run_multilabel_fold(
    ds: &LabeledDataset,
    split: &FoldSplit,
    cfg: &PipelineConfig,
) -> Result<FoldOutcome> {
    let labels = ds.multi_labels()?;
    let train = ds.subset(&split.train);
    let val = ds.subset(&split.val);
    let test = ds.subset(&split.test);
    let (train_std, st) = crate::data::standardize(&train)?;
    let val_x = st.apply(&val.features)?;
    let test_x = st.apply(&test.features)?;
    let train_y = train.multi_labels()?.clone();
    let val_y = val.multi_labels()?.clone();
    let test_y = test.multi_labels()?.clone();
    let d = ds.dim();
    let l = labels.ncols();

    let mlp_init = MlpParams::random(d, cfg.mlp_hidden, l, cfg.mlp_cfg.seed ^ 0x31);
    let (mlp, _) = mlp_train(&train_std.features.view(), &train_y.view(), &cfg.mlp_cfg, mlp_init)?;

    // the y2 refiner learns to reconstruct clean labels gated by the
    // MLP's own (imperfect) predictions, which is what it sees at test time
    let mut train_y0 = Array2::zeros((train_std.features.nrows(), l));
    for (i, x) in train_std.features.axis_iter(Axis(0)).enumerate() {
        train_y0.row_mut(i).assign(&mlp_forward(&mlp, &x)?);
    }

    let train_refiner = |seed: u64| -> Result<GaeParams> {
        match cfg.opt.variant {
            LabelOptVariant::GaeY2 => {
                let init = GaeParams::random(
                    l,
                    l,
                    cfg.gae_factors,
                    cfg.gae_hidden,
                    ActivationKind::Sigmoid,
                    seed,
                );
                let mut gcfg = cfg.gae_cfg.clone();
                gcfg.seed = seed;
                gcfg.mode = crate::gae::ReconstructionMode::Conditional;
                if cfg.opt.train_noise_std > 0.0 {
                    gcfg.corruption_kind = CorruptionKind::Gaussian;
                    gcfg.corruption_level = cfg.opt.train_noise_std;
                }
                // both encoder slots see the predictions, the target is clean
                Ok(crate::train::train_gae_with_targets(
                    &train_y0.view(),
                    &train_y0.view(),
                    &train_y0.view(),
                    &train_y.view(),
                    &gcfg,
                    init,
                )?
                .0)
            }
            LabelOptVariant::GaeXy => {
                let init = GaeParams::random(
                    d,
                    l,
                    cfg.gae_factors,
                    cfg.gae_hidden,
                    ActivationKind::Sigmoid,
                    seed,
                );
                let mut gcfg = cfg.gae_cfg.clone();
                gcfg.seed = seed;
                if cfg.opt.train_noise_std > 0.0 {
                    gcfg.corruption_kind = CorruptionKind::Gaussian;
                    gcfg.corruption_level = cfg.opt.train_noise_std;
                    gcfg.corrupt_target = CorruptTarget::YOnly;
                }
                Ok(train_gae(&train_std.features.view(), &train_y.view(), None, &gcfg, init)?.0)
            }
        }
    };

    let refine_batch = |gae: &GaeParams,
                        xs: &Array2<f64>,
                        opt: &LabelOptConfig|
     -> Result<(Array2<f64>, Array2<f64>)> {
        let rows: Vec<usize> = (0..xs.nrows()).collect();
        let outputs = parallel_map(rows, cfg.threads, |i| -> Result<(Array1<f64>, Array1<f64>)> {
            let x = xs.row(i);
            let y0 = mlp_forward(&mlp, &x)?;
            let refined = if opt.max_iter == 0 {
                y0.clone()
            } else {
                refine_labels(gae, &x, &y0.view(), opt)?.0
            };
            Ok((y0, refined))
        });
        let mut base = Array2::zeros((xs.nrows(), l));
        let mut refined = Array2::zeros((xs.nrows(), l));
        for (i, r) in outputs.into_iter().enumerate() {
            let (y0, yr) = r?;
            base.row_mut(i).assign(&y0);
            refined.row_mut(i).assign(&yr);
        }
        Ok((base, refined))
    };

    // a zero-iteration run is the MLP baseline; no refiner is trained at all
    if cfg.opt.max_iter == 0 && cfg.opt_menu.is_empty() {
        let mut mlp_pred = Array2::zeros((test_x.nrows(), l));
        for (i, x) in test_x.axis_iter(Axis(0)).enumerate() {
            mlp_pred.row_mut(i).assign(&mlp_forward(&mlp, &x)?);
        }
        let err = multilabel_error(&mlp_pred.view(), &test_y.view())?;
        return Ok(FoldOutcome {
            mlp_error: err,
            refined_error: err,
            refined: mlp_pred,
        });
    }

    // candidate refinement models and intensities compete on the validation
    // split; the winner handles the test split
    let candidates = cfg.gae_candidates.max(1);
    let mut menu: Vec<&LabelOptConfig> = vec![&cfg.opt];
    menu.extend(cfg.opt_menu.iter());
    let mut best: Option<(GaeParams, LabelOptConfig, f64)> = None;
    for c in 0..candidates {
        let gae = train_refiner(cfg.gae_cfg.seed ^ 0x32 ^ (c as u64 * 7919))?;
        for opt in &menu {
            let (_, val_refined) = refine_batch(&gae, &val_x, opt)?;
            let err = multilabel_error(&val_refined.view(), &val_y.view())?;
            if best.as_ref().map_or(true, |(_, _, e)| err < *e) {
                best = Some((gae.clone(), (*opt).clone(), err));
            }
        }
    }
    let (gae, opt, _) = best.expect("at least one candidate");

    let (mlp_pred, ref_pred) = refine_batch(&gae, &test_x, &opt)?;
    Ok(FoldOutcome {
        mlp_error: multilabel_error(&mlp_pred.view(), &test_y.view())?,
        refined_error: multilabel_error(&ref_pred.view(), &test_y.view())?,
        refined: ref_pred,
    })
}
