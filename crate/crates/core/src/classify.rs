//! Class-specific model ensembles with calibrated softmax scoring.
//!
//! One generative model (mean, covariance, or both) is trained per class;
//! per-class energies plus learned calibration biases feed a softmax over
//! classes. The biases absorb the additive constants that the individual
//! energies are only defined up to.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::archive::{Archive, ModelKind};
use crate::energy::{energy_covariance_value, energy_mean_value};
use crate::error::{Error, Result};
use crate::gae::{ActivationKind, GaeParams, MeanAeParams};
use crate::train::{train_cov_gae, train_mean_ae, TrainConfig};
use crate::util::parallel_map;

/// One class's generative model.
#[derive(Debug, Clone, PartialEq)]
pub enum Member {
    Mean(MeanAeParams),
    Cov(GaeParams),
    MeanCov { mean: MeanAeParams, cov: GaeParams },
}

impl Member {
    pub fn input_dim(&self) -> usize {
        match self {
            Member::Mean(m) => m.dim(),
            Member::Cov(c) => c.dim_x(),
            Member::MeanCov { mean, .. } => mean.dim(),
        }
    }

    pub fn energy(&self, x: &ArrayView1<f64>) -> Result<f64> {
        match self {
            Member::Mean(m) => energy_mean_value(m, x),
            Member::Cov(c) => energy_covariance_value(c, x),
            Member::MeanCov { mean, cov } => {
                Ok(energy_mean_value(mean, x)? + energy_covariance_value(cov, x)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEnsemble {
    pub members: Vec<Member>,
    pub biases: Array1<f64>,
}

impl ClassifierEnsemble {
    pub fn new(members: Vec<Member>) -> Result<Self> {
        let k = members.len();
        let ens = ClassifierEnsemble {
            members,
            biases: Array1::zeros(k),
        };
        ens.validate()?;
        Ok(ens)
    }

    pub fn classes(&self) -> usize {
        self.members.len()
    }

    pub fn input_dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.input_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::usage("an ensemble needs at least two classes"));
        }
        let d = self.members[0].input_dim();
        if self.members.iter().any(|m| m.input_dim() != d) {
            return Err(Error::shape("ensemble members disagree on input dim"));
        }
        if self.biases.len() != self.members.len() {
            return Err(Error::shape("bias count does not match member count"));
        }
        if !self.biases.iter().all(|b| b.is_finite()) {
            return Err(Error::InvalidInput("biases contain non-finite entries".into()));
        }
        Ok(())
    }

    // -- persistence ----------------------------------------------------------

    pub fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::new(ModelKind::Ensemble);
        a.meta.push(("k".into(), self.classes().to_string()));
        let member_kind = match &self.members[0] {
            Member::Mean(_) => "mean",
            Member::Cov(_) => "cov-gae",
            Member::MeanCov { .. } => "mc",
        };
        a.meta.push(("member_kind".into(), member_kind.into()));
        for (i, m) in self.members.iter().enumerate() {
            match m {
                Member::Mean(p) => {
                    a.push_tensor2(&format!("m{i}.w"), &p.w);
                    a.push_tensor1(&format!("m{i}.c"), &p.c);
                    a.push_tensor1(&format!("m{i}.a"), &p.a);
                }
                Member::Cov(p) => push_cov(&mut a, i, p),
                Member::MeanCov { mean, cov } => {
                    a.push_tensor2(&format!("m{i}.w"), &mean.w);
                    a.push_tensor1(&format!("m{i}.c"), &mean.c);
                    a.push_tensor1(&format!("m{i}.a"), &mean.a);
                    push_cov(&mut a, i, cov);
                }
            }
        }
        a.push_tensor1("biases", &self.biases);
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != ModelKind::Ensemble {
            return Err(Error::Archive(format!(
                "archive holds '{}', not an ensemble",
                a.kind.as_str()
            )));
        }
        let k: usize = a
            .meta_value("k")
            .ok_or_else(|| Error::Archive("ensemble archive lacks 'k'".into()))?
            .parse()
            .map_err(|_| Error::Archive("bad 'k' in ensemble archive".into()))?;
        let member_kind = a
            .meta_value("member_kind")
            .ok_or_else(|| Error::Archive("ensemble archive lacks 'member_kind'".into()))?
            .to_string();
        let mut members = Vec::with_capacity(k);
        for i in 0..k {
            let member = match member_kind.as_str() {
                "mean" => Member::Mean(read_mean(a, i)?),
                "cov-gae" => Member::Cov(read_cov(a, i)?),
                "mc" => Member::MeanCov {
                    mean: read_mean(a, i)?,
                    cov: read_cov(a, i)?,
                },
                other => {
                    return Err(Error::Capability(format!(
                        "unknown ensemble member kind '{other}'"
                    )))
                }
            };
            members.push(member);
        }
        let ens = ClassifierEnsemble {
            members,
            biases: a.tensor1("biases")?,
        };
        ens.validate()?;
        Ok(ens)
    }
}

fn push_cov(a: &mut Archive, i: usize, p: &GaeParams) {
    a.push_tensor2(&format!("m{i}.wx"), &p.wx);
    a.push_tensor2(&format!("m{i}.wh"), &p.wh);
    a.push_tensor1(&format!("m{i}.b"), &p.b);
    a.push_tensor1(&format!("m{i}.ax"), &p.ax);
}

fn read_cov(a: &Archive, i: usize) -> Result<GaeParams> {
    let wx = a.tensor2(&format!("m{i}.wx"))?;
    let bias = a.tensor1(&format!("m{i}.ax"))?;
    GaeParams::new(
        wx.clone(),
        wx,
        a.tensor2(&format!("m{i}.wh"))?,
        a.tensor1(&format!("m{i}.b"))?,
        bias.clone(),
        bias,
        ActivationKind::Sigmoid,
    )
}

fn read_mean(a: &Archive, i: usize) -> Result<MeanAeParams> {
    let m = MeanAeParams {
        w: a.tensor2(&format!("m{i}.w"))?,
        c: a.tensor1(&format!("m{i}.c"))?,
        a: a.tensor1(&format!("m{i}.a"))?,
    };
    m.validate()?;
    Ok(m)
}

/// Per-class energies plus calibration biases.
pub fn class_scores(ens: &ClassifierEnsemble, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != ens.input_dim() {
        return Err(Error::shape("input dim does not match ensemble"));
    }
    let mut scores = Array1::zeros(ens.classes());
    for (i, m) in ens.members.iter().enumerate() {
        scores[i] = m.energy(x)? + ens.biases[i];
    }
    Ok(scores)
}

fn softmax(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = scores.mapv(|s| (s - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Softmax over class scores.
pub fn posterior(ens: &ClassifierEnsemble, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
    Ok(softmax(&class_scores(ens, x)?))
}

/// Predicted class: argmax of the posterior, ties toward the lowest index.
pub fn predict(ens: &ClassifierEnsemble, x: &ArrayView1<f64>) -> Result<usize> {
    let scores = class_scores(ens, x)?;
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct CalibrateOpts {
    /// Also ascend on member parameters through the energy functions.
    pub tune_members: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 runs full-batch ascent; otherwise seeded mini-batches.
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for CalibrateOpts {
    fn default() -> Self {
        CalibrateOpts {
            tune_members: false,
            learning_rate: 0.5,
            epochs: 300,
            batch_size: 0,
            momentum: 0.0,
            seed: 0,
        }
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Row-wise member energies.
fn member_energy_batch(m: &Member, xs: &ArrayView2<f64>) -> Result<Array1<f64>> {
    let row_sq = xs.map_axis(Axis(1), |r| r.dot(&r));
    match m {
        Member::Mean(p) => {
            let mut u = xs.dot(&p.w.t());
            u += &p.c.view().insert_axis(Axis(0));
            let act = u.mapv(softplus).sum_axis(Axis(1));
            Ok(act + xs.dot(&p.a) - 0.5 * &row_sq)
        }
        Member::Cov(p) => {
            if !p.factors_tied() {
                return Err(Error::usage(
                    "covariance energy requires tied factor matrices (wx == wy, ax == ay)",
                ));
            }
            let f2 = xs.dot(&p.wx.t()).mapv(|v| v * v);
            let mut u = f2.dot(&p.wh.t());
            u += &p.b.view().insert_axis(Axis(0));
            let act = u.mapv(softplus).sum_axis(Axis(1));
            Ok(act + xs.dot(&p.ax) - &row_sq)
        }
        Member::MeanCov { mean, cov } => {
            let a = member_energy_batch(&Member::Mean(mean.clone()), xs)?;
            let b = member_energy_batch(&Member::Cov(cov.clone()), xs)?;
            Ok(a + b)
        }
    }
}

/// Scores for a whole batch: one row of per-class scores per example.
pub fn class_scores_batch(ens: &ClassifierEnsemble, xs: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if xs.ncols() != ens.input_dim() {
        return Err(Error::shape("input dim does not match ensemble"));
    }
    let mut scores = Array2::zeros((xs.nrows(), ens.classes()));
    for (i, m) in ens.members.iter().enumerate() {
        let e = member_energy_batch(m, xs)?;
        scores.column_mut(i).assign(&(e + ens.biases[i]));
    }
    Ok(scores)
}

/// Row-wise softmax of the batch scores.
pub fn posterior_batch(ens: &ClassifierEnsemble, xs: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut scores = class_scores_batch(ens, xs)?;
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|s| (s - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|s| s / sum);
    }
    Ok(scores)
}

/// Per-member gradient (and momentum) storage.
#[derive(Debug, Clone)]
enum MemberGrad {
    Mean {
        w: Array2<f64>,
        c: Array1<f64>,
        a: Array1<f64>,
    },
    Cov {
        w: Array2<f64>,
        wh: Array2<f64>,
        b: Array1<f64>,
        a: Array1<f64>,
    },
    Both(Box<MemberGrad>, Box<MemberGrad>),
}

impl MemberGrad {
    fn zeros(m: &Member) -> Self {
        match m {
            Member::Mean(p) => MemberGrad::Mean {
                w: Array2::zeros(p.w.raw_dim()),
                c: Array1::zeros(p.c.len()),
                a: Array1::zeros(p.a.len()),
            },
            Member::Cov(p) => MemberGrad::Cov {
                w: Array2::zeros(p.wx.raw_dim()),
                wh: Array2::zeros(p.wh.raw_dim()),
                b: Array1::zeros(p.b.len()),
                a: Array1::zeros(p.ax.len()),
            },
            Member::MeanCov { mean, cov } => MemberGrad::Both(
                Box::new(MemberGrad::zeros(&Member::Mean(mean.clone()))),
                Box::new(MemberGrad::zeros(&Member::Cov(cov.clone()))),
            ),
        }
    }

    /// Batched gradient of `sum_n coeff_n * E(x_n)` with respect to the
    /// member parameters.
    fn compute(m: &Member, xs: &ArrayView2<f64>, coeff: &Array1<f64>) -> Self {
        match m {
            Member::Mean(p) => {
                let mut u = xs.dot(&p.w.t());
                u += &p.c.view().insert_axis(Axis(0));
                let h = u.mapv(sigmoid);
                let ch = &h * &coeff.view().insert_axis(Axis(1));
                MemberGrad::Mean {
                    w: ch.t().dot(xs),
                    c: ch.sum_axis(Axis(0)),
                    a: xs.t().dot(coeff),
                }
            }
            Member::Cov(p) => {
                let fm = xs.dot(&p.wx.t());
                let f2 = fm.mapv(|v| v * v);
                let mut u = f2.dot(&p.wh.t());
                u += &p.b.view().insert_axis(Axis(0));
                let h = u.mapv(sigmoid);
                let ch = &h * &coeff.view().insert_axis(Axis(1));
                let g = 2.0 * &fm * &h.dot(&p.wh) * &coeff.view().insert_axis(Axis(1));
                MemberGrad::Cov {
                    w: g.t().dot(xs),
                    wh: ch.t().dot(&f2),
                    b: ch.sum_axis(Axis(0)),
                    a: xs.t().dot(coeff),
                }
            }
            Member::MeanCov { mean, cov } => MemberGrad::Both(
                Box::new(MemberGrad::compute(&Member::Mean(mean.clone()), xs, coeff)),
                Box::new(MemberGrad::compute(&Member::Cov(cov.clone()), xs, coeff)),
            ),
        }
    }

    /// Heavy-ball accumulation: `vel = momentum * vel + grad`.
    fn roll(&mut self, grad: &MemberGrad, momentum: f64) {
        match (self, grad) {
            (MemberGrad::Mean { w, c, a }, MemberGrad::Mean { w: gw, c: gc, a: ga }) => {
                w.mapv_inplace(|v| v * momentum);
                *w += gw;
                c.mapv_inplace(|v| v * momentum);
                *c += gc;
                a.mapv_inplace(|v| v * momentum);
                *a += ga;
            }
            (
                MemberGrad::Cov { w, wh, b, a },
                MemberGrad::Cov { w: gw, wh: gwh, b: gb, a: ga },
            ) => {
                w.mapv_inplace(|v| v * momentum);
                *w += gw;
                wh.mapv_inplace(|v| v * momentum);
                *wh += gwh;
                b.mapv_inplace(|v| v * momentum);
                *b += gb;
                a.mapv_inplace(|v| v * momentum);
                *a += ga;
            }
            (MemberGrad::Both(sm, sc), MemberGrad::Both(gm, gc)) => {
                sm.roll(gm, momentum);
                sc.roll(gc, momentum);
            }
            _ => unreachable!("velocity/gradient shapes fixed at construction"),
        }
    }

    fn apply(&self, m: &mut Member, lr: f64) {
        match (self, m) {
            (MemberGrad::Mean { w, c, a }, Member::Mean(p)) => {
                p.w += &(lr * w);
                p.c += &(lr * c);
                p.a += &(lr * a);
            }
            (MemberGrad::Cov { w, wh, b, a }, Member::Cov(p)) => {
                p.wx += &(lr * w);
                p.wy.assign(&p.wx);
                p.wh += &(lr * wh);
                p.b += &(lr * b);
                p.ax += &(lr * a);
                let tied = p.ax.clone();
                p.ay.assign(&tied);
            }
            (MemberGrad::Both(gm, gc), Member::MeanCov { mean, cov }) => {
                let mut mm = Member::Mean(mean.clone());
                gm.apply(&mut mm, lr);
                if let Member::Mean(p) = mm {
                    *mean = p;
                }
                let mut mc = Member::Cov(cov.clone());
                gc.apply(&mut mc, lr);
                if let Member::Cov(p) = mc {
                    *cov = p;
                }
            }
            _ => unreachable!("grad/member pairing fixed at construction"),
        }
    }
}

/// Maximize the mean log posterior of the true class by gradient ascent on
/// the biases (and, with `tune_members`, on member parameters through the
/// energy functions). Full-batch by default; mini-batch with momentum when
/// `batch_size` is nonzero. Deterministic given the options' seed.
pub fn calibrate(
    ens: &ClassifierEnsemble,
    features: &ArrayView2<f64>,
    labels: &[usize],
    opts: &CalibrateOpts,
) -> Result<ClassifierEnsemble> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::usage("calibration needs at least one example"));
    }
    if labels.len() != n {
        return Err(Error::shape("label count does not match example count"));
    }
    let k = ens.classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::usage(format!("label {bad} outside [0, {k})")));
    }
    if !(0.0..1.0).contains(&opts.momentum) {
        return Err(Error::usage("calibration momentum must lie in [0, 1)"));
    }
    let mut out = ens.clone();
    let batch = if opts.batch_size == 0 { n } else { opts.batch_size };
    let mut vel_b = Array1::<f64>::zeros(k);
    let mut vel_members: Vec<MemberGrad> = out.members.iter().map(MemberGrad::zeros).collect();

    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(0x300_0000 + epoch as u64);
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let xs = features.select(Axis(0), chunk);
            let p = posterior_batch(&out, &xs.view())?;
            let inv = 1.0 / chunk.len() as f64;
            // coeff[n][i] = 1[i == label_n] - p[n][i]
            let mut coeff = -p;
            for (r, &idx) in chunk.iter().enumerate() {
                coeff[[r, labels[idx]]] += 1.0;
            }
            coeff *= inv;
            let bias_grad = coeff.sum_axis(Axis(0));
            vel_b.mapv_inplace(|v| v * opts.momentum);
            vel_b += &bias_grad;
            out.biases += &(opts.learning_rate * &vel_b);
            if opts.tune_members {
                for i in 0..k {
                    let g = MemberGrad::compute(&out.members[i], &xs.view(), &coeff.column(i).to_owned());
                    vel_members[i].roll(&g, opts.momentum);
                    vel_members[i].apply(&mut out.members[i], opts.learning_rate);
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Calibrate in chunks, tracking error on a held-out split and returning the
/// best ensemble seen. Guards the discriminative member tuning against
/// overfitting. Returns the winner and its held-out error.
pub fn calibrate_early_stopping(
    ens: &ClassifierEnsemble,
    train_x: &ArrayView2<f64>,
    train_labels: &[usize],
    val_x: &ArrayView2<f64>,
    val_labels: &[usize],
    opts: &CalibrateOpts,
    chunk_epochs: usize,
) -> Result<(ClassifierEnsemble, f64)> {
    if chunk_epochs == 0 {
        return Err(Error::usage("chunk size must be positive"));
    }
    let rounds = opts.epochs.div_ceil(chunk_epochs);
    let mut current = ens.clone();
    let mut best = ens.clone();
    let mut best_err = evaluate_error(&current, val_x, val_labels)?;
    for _ in 0..rounds {
        let mut o = opts.clone();
        o.epochs = chunk_epochs;
        current = calibrate(&current, train_x, train_labels, &o)?;
        let err = evaluate_error(&current, val_x, val_labels)?;
        if err < best_err {
            best_err = err;
            best = current.clone();
        }
    }
    Ok((best, best_err))
}

/// Fraction of argmax-posterior mispredictions.
pub fn evaluate_error(
    ens: &ClassifierEnsemble,
    features: &ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::usage("cannot evaluate on an empty set"));
    }
    if labels.len() != n {
        return Err(Error::shape("label count does not match example count"));
    }
    let scores = class_scores_batch(ens, features)?;
    let mut wrong = 0usize;
    for (row, &label) in scores.axis_iter(Axis(0)).zip(labels.iter()) {
        let mut best = 0;
        for i in 1..row.len() {
            if row[i] > row[best] {
                best = i;
            }
        }
        if best != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / n as f64)
}

/// Which members [`fit_ensemble`] trains per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    Mean,
    Cov,
    MeanCov,
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub kind: MemberKind,
    pub mean_hidden: usize,
    pub cov_hidden: usize,
    pub cov_factors: usize,
}

/// Train one member per class; biases start at zero and are calibrated
/// separately. Classes train independently, possibly in parallel.
pub fn fit_ensemble(
    features: &ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    spec: &EnsembleSpec,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<ClassifierEnsemble> {
    if k < 2 {
        return Err(Error::usage("need at least two classes"));
    }
    if labels.len() != features.nrows() {
        return Err(Error::shape("label count does not match example count"));
    }
    let d = features.ncols();
    let jobs: Vec<usize> = (0..k).collect();
    let results = parallel_map(jobs, threads, |class| -> Result<Member> {
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| i)
            .collect();
        if rows.is_empty() {
            return Err(Error::usage(format!("class {class} has no examples")));
        }
        let sub = features.select(Axis(0), &rows);
        let mut class_cfg = cfg.clone();
        class_cfg.seed = cfg.seed.wrapping_add(7919 * (class as u64 + 1));
        let mean = || -> Result<MeanAeParams> {
            let init = MeanAeParams::random(d, spec.mean_hidden, class_cfg.seed ^ 0x11);
            Ok(train_mean_ae(&sub.view(), None, &class_cfg, init)?.0)
        };
        let cov = || -> Result<GaeParams> {
            let init =
                GaeParams::random_covariance(d, spec.cov_factors, spec.cov_hidden, class_cfg.seed ^ 0x22);
            Ok(train_cov_gae(&sub.view(), None, &class_cfg, init)?.0)
        };
        Ok(match spec.kind {
            MemberKind::Mean => Member::Mean(mean()?),
            MemberKind::Cov => Member::Cov(cov()?),
            MemberKind::MeanCov => Member::MeanCov {
                mean: mean()?,
                cov: cov()?,
            },
        })
    });
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;
    ClassifierEnsemble::new(members)
}
