//! L∞ first-order attacks: initialization schemes, the single FGSM step,
//! multi-step PGD, and a margin-loss PGD used as the C&W-style evaluation
//! attack.
//!
//! Every perturbation returned here satisfies `‖δ‖∞ ≤ ε` and `x+δ ∈ [0,1]`:
//! each coordinate is clamped to `[max(−ε, −x), min(ε, 1−x)]`, which is the
//! ε-ball projection followed by valid-range clipping.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::regularizer::{BaseLoss, CompositeLoss, LossInputs, RegularizerSpec, Want};
use crate::tensor::{one_hot, sign, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// η = 0 (plain FGSM).
    Zero,
    /// η = (ε/2)·N(0,1), clipped to the ε-ball.
    NormalHalf,
    /// η = ε·U(−1,1).
    UniformFull,
    /// η = (ε/2)·{−1,+1} with equal probability.
    BernoulliHalf,
    /// η = the sample's perturbation from the previous epoch.
    AttaPrior,
    /// η = the sample's momentum-guided prior perturbation.
    PgiMomentum,
}

impl InitScheme {
    pub const ALL: [InitScheme; 6] = [
        InitScheme::Zero,
        InitScheme::NormalHalf,
        InitScheme::UniformFull,
        InitScheme::BernoulliHalf,
        InitScheme::AttaPrior,
        InitScheme::PgiMomentum,
    ];

    /// Training step size each scheme is used with: ε/2 for normal, 1.25ε
    /// for uniform, ε otherwise.
    pub fn default_alpha(self, epsilon: f64) -> f64 {
        match self {
            InitScheme::NormalHalf => epsilon / 2.0,
            InitScheme::UniformFull => 1.25 * epsilon,
            _ => epsilon,
        }
    }

    pub fn uses_prior(self) -> bool {
        matches!(self, InitScheme::AttaPrior | InitScheme::PgiMomentum)
    }

    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Zero => "zero",
            InitScheme::NormalHalf => "normal_half",
            InitScheme::UniformFull => "uniform_full",
            InitScheme::BernoulliHalf => "bernoulli_half",
            InitScheme::AttaPrior => "atta_prior",
            InitScheme::PgiMomentum => "pgi_momentum",
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitScheme::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown init scheme '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub init: InitScheme,
    pub loss: BaseLoss,
}

impl AttackConfig {
    /// Single FGSM step with the scheme's default step size.
    pub fn fgsm(epsilon: f64, init: InitScheme) -> Self {
        Self {
            epsilon,
            alpha: init.default_alpha(epsilon),
            steps: 1,
            init,
            loss: BaseLoss::CrossEntropy,
        }
    }

    /// PGD with `steps` steps of size `alpha` from a uniform start.
    pub fn pgd(epsilon: f64, alpha: f64, steps: usize) -> Self {
        Self {
            epsilon,
            alpha,
            steps,
            init: InitScheme::UniformFull,
            loss: BaseLoss::CrossEntropy,
        }
    }

    /// Margin-loss PGD: 20 steps of ε/10 from a uniform start.
    pub fn margin(epsilon: f64) -> Self {
        Self {
            epsilon,
            alpha: epsilon / 10.0,
            steps: 20,
            init: InitScheme::UniformFull,
            loss: BaseLoss::Margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("attack needs at least one step".into()));
        }
        if self.steps == 1 && self.epsilon > 0.0 && self.alpha > 2.0 * self.epsilon {
            return Err(Error::InvalidArgument(format!(
                "single-step alpha {} exceeds 2·epsilon {}",
                self.alpha,
                2.0 * self.epsilon
            )));
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `pgd10` or `margin20`.
    pub fn label(&self) -> String {
        match (self.loss, self.steps) {
            (BaseLoss::Margin, s) => format!("margin{s}"),
            (BaseLoss::CrossEntropy, 1) => "fgsm".to_string(),
            (BaseLoss::CrossEntropy, s) => format!("pgd{s}"),
        }
    }
}

/// Per-sample memory for the prior-based schemes.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorState<T: Real = f64> {
    dim: usize,
    epsilon: T,
    alpha: T,
    mu: T,
    /// Stored initialization per sample, row-major `n × dim`.
    eta: Vec<T>,
    /// Signed-gradient momentum per sample (PGI only).
    momentum: Vec<T>,
}

/// Momentum coefficient used for the PGI signed-gradient accumulator.
pub const DEFAULT_PGI_MU: f64 = 0.3;

impl<T: Real> PriorState<T> {
    /// Cold start: zero perturbation and zero momentum for every sample.
    pub fn new(samples: usize, dim: usize, epsilon: f64, alpha: f64, mu: f64) -> Self {
        Self {
            dim,
            epsilon: T::from_f64_lossy(epsilon),
            alpha: T::from_f64_lossy(alpha),
            mu: T::from_f64_lossy(mu),
            eta: vec![T::zero(); samples * dim],
            momentum: vec![T::zero(); samples * dim],
        }
    }

    pub fn samples(&self) -> usize {
        self.eta.len() / self.dim.max(1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let n = self.samples();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "sample id {bad} out of range for prior state of {n} samples"
            )));
        }
        Ok(())
    }

    /// Stored perturbations for `ids`, as a `len(ids) × dim` tensor.
    pub fn eta_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        self.check_ids(ids)?;
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(&self.eta[i * self.dim..(i + 1) * self.dim]);
        }
        Tensor::new(vec![ids.len(), self.dim], data)
    }

    pub fn momentum_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        self.check_ids(ids)?;
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(&self.momentum[i * self.dim..(i + 1) * self.dim]);
        }
        Tensor::new(vec![ids.len(), self.dim], data)
    }

    pub fn max_abs_eta(&self) -> T {
        self.eta.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Records this epoch's attack outcome for the prior-based schemes.
///
/// ATTA stores `δ` verbatim. PGI updates the momentum `g ← μ·g + sign(∇)` and
/// then the stored initialization `η ← Π_ε[η + α·sign(g)]`. Other schemes
/// leave the state untouched. Stored values are always re-projected onto the
/// ε-ball.
pub fn update_prior_state<T: Real>(
    state: &mut PriorState<T>,
    sample_ids: &[usize],
    delta: &Tensor<T>,
    signed_grad: &Tensor<T>,
    scheme: InitScheme,
) -> Result<()> {
    state.check_ids(sample_ids)?;
    let dim = state.dim;
    if delta.rows() != sample_ids.len() || delta.cols() != dim || signed_grad.shape() != delta.shape() {
        return Err(Error::Shape(format!(
            "prior update with {} ids, delta {:?}, grad {:?}, dim {dim}",
            sample_ids.len(),
            delta.shape(),
            signed_grad.shape()
        )));
    }
    let eps = state.epsilon;
    match scheme {
        InitScheme::AttaPrior => {
            for (r, &id) in sample_ids.iter().enumerate() {
                for (s, &d) in state.eta[id * dim..(id + 1) * dim].iter_mut().zip(delta.row(r)) {
                    *s = d.max(-eps).min(eps);
                }
            }
        }
        InitScheme::PgiMomentum => {
            let (mu, alpha) = (state.mu, state.alpha);
            for (r, &id) in sample_ids.iter().enumerate() {
                let range = id * dim..(id + 1) * dim;
                for ((g, e), &gc) in state.momentum[range.clone()]
                    .iter_mut()
                    .zip(state.eta[range].iter_mut())
                    .zip(signed_grad.row(r))
                {
                    *g = mu * *g + gc;
                    *e = (*e + alpha * sign(*g)).max(-eps).min(eps);
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Draws the initial perturbation η for a batch of `shape = [rows, dim]`.
/// Prior-based schemes read the stored state for `sample_ids` and fall back to
/// zeros when no state is supplied.
pub fn sample_init<T: Real, R: Rng + ?Sized>(
    scheme: InitScheme,
    epsilon: f64,
    shape: &[usize],
    prior: Option<&PriorState<T>>,
    sample_ids: &[usize],
    rng: &mut R,
) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let eps = T::from_f64_lossy(epsilon);
    let half = T::from_f64_lossy(epsilon / 2.0);
    let data: Vec<T> = match scheme {
        InitScheme::Zero => vec![T::zero(); n],
        InitScheme::NormalHalf => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (half * T::from_f64_lossy(z)).max(-eps).min(eps)
            })
            .collect(),
        InitScheme::UniformFull => {
            let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            (0..n).map(|_| eps * T::from_f64_lossy(u.sample(rng))).collect()
        }
        InitScheme::BernoulliHalf => {
            let b = Bernoulli::new(0.5).expect("valid probability");
            (0..n)
                .map(|_| if b.sample(rng) { half } else { -half })
                .collect()
        }
        InitScheme::AttaPrior | InitScheme::PgiMomentum => match prior {
            Some(state) => {
                let t = state.eta_rows(sample_ids)?;
                if t.len() != n {
                    return Err(Error::Shape(format!(
                        "prior rows {:?} do not match requested shape {shape:?}",
                        t.shape()
                    )));
                }
                t.into_data()
            }
            None => vec![T::zero(); n],
        },
    };
    Tensor::new(shape.to_vec(), data)
}

/// Anything whose input gradient can drive an attack step.
pub trait AttackObjective<T: Real> {
    /// Objective value and its gradient w.r.t. the perturbed input `x + η`.
    fn value_and_input_grad(&mut self, x: &Tensor<T>, eta: &Tensor<T>) -> Result<(T, Tensor<T>)>;
}

/// Model loss at `x + η`: cross-entropy or margin, plus the regularizer when
/// its placement is min-max (reference = the clean input).
pub struct ModelObjective<'a, T: Real> {
    params: &'a ModelParams<T>,
    targets: Tensor<T>,
    loss: CompositeLoss<T>,
}

impl<'a, T: Real> ModelObjective<'a, T> {
    /// Plain attack loss on hard labels.
    pub fn new(params: &'a ModelParams<T>, labels: &[usize], loss: BaseLoss) -> Result<Self> {
        Self::with_targets(params, labels_to_targets(labels, params.spec().num_classes, loss), loss, RegularizerSpec::none())
    }

    /// Attack loss on precomputed targets (one-hot/mixed rows for
    /// cross-entropy, label indices for margin). The regularizer is included
    /// only when it is placed in the inner maximization.
    pub fn with_targets(
        params: &'a ModelParams<T>,
        targets: Tensor<T>,
        loss: BaseLoss,
        reg: RegularizerSpec,
    ) -> Result<Self> {
        let reg = if reg.shapes_attack() { reg } else { RegularizerSpec::none() };
        Ok(Self {
            params,
            targets,
            loss: CompositeLoss::new(params.spec(), loss, reg)?,
        })
    }
}

/// Converts labels into the target tensor a [`BaseLoss`] expects.
pub fn labels_to_targets<T: Real>(labels: &[usize], classes: usize, loss: BaseLoss) -> Tensor<T> {
    match loss {
        BaseLoss::CrossEntropy => one_hot(labels, classes),
        BaseLoss::Margin => Tensor::new(
            vec![labels.len()],
            labels.iter().map(|&y| T::from_usize(y).unwrap()).collect(),
        )
        .expect("sized"),
    }
}

impl<T: Real> AttackObjective<T> for ModelObjective<'_, T> {
    fn value_and_input_grad(&mut self, x: &Tensor<T>, eta: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let shifted = x.add(eta)?;
        let zero;
        let lip = if self.loss.regularizer().kind == crate::regularizer::RegularizerKind::Lipschitz {
            zero = Tensor::zeros(eta.shape().to_vec());
            Some((eta, &zero))
        } else {
            None
        };
        let eval = self.loss.evaluate(
            self.params,
            LossInputs {
                x_main: &shifted,
                targets: &self.targets,
                x_ref: Some(x),
                perturbations: lip,
            },
            Want {
                input_grad: true,
                param_grads: false,
            },
        )?;
        Ok((eval.total, eval.input_grad.expect("requested")))
    }
}

/// Result of one projected sign step.
#[derive(Clone, Debug)]
pub struct StepOutput<T: Real> {
    pub delta: Tensor<T>,
    /// `sign(∇)` at the evaluation point `x + η` (after clipping η).
    pub signed_grad: Tensor<T>,
    /// Objective value at the evaluation point.
    pub objective: T,
}

fn bounds<T: Real>(x: T, eps: T) -> (T, T) {
    ((-eps).max(-x), eps.min(T::one() - x))
}

/// Clamps `eta` so that `‖η‖∞ ≤ ε` and `x + η ∈ [0,1]`.
pub fn project<T: Real>(x: &Tensor<T>, eta: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    let eps = T::from_f64_lossy(epsilon);
    x.zip_map(eta, |xv, e| {
        let (lo, hi) = bounds(xv, eps);
        e.max(lo).min(hi)
    })
}

/// `δ = Π[η + α·sign(∇ₓ L(x+η))]` with the combined ε-ball / valid-range
/// projection. The sign is applied to a detached gradient.
pub fn fgsm_step_with<T: Real, O: AttackObjective<T> + ?Sized>(
    objective: &mut O,
    x: &Tensor<T>,
    eta: &Tensor<T>,
    alpha: f64,
    epsilon: f64,
) -> Result<StepOutput<T>> {
    if x.shape() != eta.shape() {
        return Err(Error::Shape(format!(
            "input {:?} vs perturbation {:?}",
            x.shape(),
            eta.shape()
        )));
    }
    let start = project(x, eta, epsilon)?;
    let (objective_value, grad) = objective.value_and_input_grad(x, &start)?;
    if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite input gradient at coordinate {i} (row {})",
            i / x.cols().max(1)
        )));
    }
    let signed = grad.map(sign);
    let a = T::from_f64_lossy(alpha);
    let eps = T::from_f64_lossy(epsilon);
    let mut delta = start;
    for ((d, &s), &xv) in delta.data_mut().iter_mut().zip(signed.data()).zip(x.data()) {
        let (lo, hi) = bounds(xv, eps);
        *d = (*d + a * s).max(lo).min(hi);
    }
    Ok(StepOutput {
        delta,
        signed_grad: signed,
        objective: objective_value,
    })
}

/// One FGSM step against the model's cross-entropy (or margin) loss.
#[allow(clippy::too_many_arguments)]
pub fn fgsm_step<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    eta: &Tensor<T>,
    alpha: f64,
    epsilon: f64,
    loss: BaseLoss,
) -> Result<Tensor<T>> {
    let mut obj = ModelObjective::new(params, labels, loss)?;
    Ok(fgsm_step_with(&mut obj, x, eta, alpha, epsilon)?.delta)
}

/// Iterated projected sign steps starting from `eta`. Returns the final
/// perturbation and the objective value seen at the start of every step.
pub fn pgd_from<T: Real, O: AttackObjective<T> + ?Sized>(
    objective: &mut O,
    x: &Tensor<T>,
    eta: Tensor<T>,
    config: &AttackConfig,
) -> Result<(Tensor<T>, Vec<T>)> {
    config.validate()?;
    let mut delta = eta;
    let mut trace = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let step = fgsm_step_with(objective, x, &delta, config.alpha, config.epsilon)?;
        trace.push(step.objective);
        delta = step.delta;
    }
    Ok((delta, trace))
}

/// PGD with the configured initialization, loss, and step count.
pub fn pgd<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    config.validate()?;
    let eta = sample_init(config.init, config.epsilon, x.shape(), None, &[], rng)?;
    let mut obj = ModelObjective::new(params, labels, config.loss)?;
    Ok(pgd_from(&mut obj, x, eta, config)?.0)
}

/// PGD on the margin loss `max_{j≠y} z_j − z_y`.
pub fn margin_pgd<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let config = AttackConfig {
        loss: BaseLoss::Margin,
        ..*config
    };
    pgd(params, x, labels, &config, rng)
}
