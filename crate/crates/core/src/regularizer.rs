//! Output-smoothness regularizers and the composite training objective.
//!
//! Three penalties compare the model's response at an adversarial input with a
//! reference input:
//!
//! * guided: `λ · mean_b ‖f(x+δ) − f(x)‖²`
//! * nuclear: `λ · ‖f(x+δ) − f(x)‖_*` over the batch logit matrix
//! * lipschitz: `mean_b λ/‖δ_b−η_b‖² · (‖f(x+δ)_b − f(x+η)_b‖² + ‖f_F(x+δ)_b − f_F(x+η)_b‖²)`
//!
//! where `f_F` is the penultimate feature map. The Lipschitz denominator is
//! floored at `norm_floor` and enters as a constant, so no gradient flows
//! through it.
//!
//! [`CompositeLoss`] assembles `base_loss(f(x_main)) + penalty` on one graph.
//! With [`Placement::MinMax`] the attack maximizes the same composite scalar;
//! with [`Placement::MinOnly`] the attack sees the plain base loss.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, TensorMap};
use crate::error::{Error, Result};
use crate::model::{build_mlp, declare_params, ModelParams, ModelSpec};
use crate::tensor::{one_hot, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    Guided,
    Nuclear,
    Lipschitz,
}

/// Where the penalty enters the min-max problem: `MinOnly` is the outer
/// minimization alone, `MinMax` also shapes the inner attack objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    MinOnly,
    MinMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub lambda: f64,
    pub placement: Placement,
    pub norm_floor: f64,
}

pub const DEFAULT_NORM_FLOOR: f64 = 1e-8;

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl RegularizerSpec {
    pub fn none() -> Self {
        Self {
            kind: RegularizerKind::None,
            lambda: 0.0,
            placement: Placement::MinOnly,
            norm_floor: DEFAULT_NORM_FLOOR,
        }
    }

    /// Lipschitz penalty with λ = 12 in the outer minimization only.
    pub fn lipschitz_default() -> Self {
        Self {
            kind: RegularizerKind::Lipschitz,
            lambda: 12.0,
            placement: Placement::MinOnly,
            norm_floor: DEFAULT_NORM_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "regularizer lambda must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        if !(self.norm_floor > 0.0) || !self.norm_floor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "norm_floor must be > 0, got {}",
                self.norm_floor
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != RegularizerKind::None
    }

    /// True when the attack objective includes the penalty.
    pub fn shapes_attack(&self) -> bool {
        self.is_active() && self.placement == Placement::MinMax
    }
}

fn check_same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Appends `λ · mean_b ‖a_b − c_b‖²` to `graph`.
pub fn guided_node<T: Real>(graph: &mut Graph<T>, adv: NodeId, reference: NodeId, lambda: f64) -> NodeId {
    let d = graph.sub(adv, reference);
    let rows = graph.row_sq_norm(d);
    let m = graph.mean(rows);
    graph.scale(m, lambda)
}

/// Appends `λ · mean_b w_b (‖Δlogits_b‖² + ‖Δfeatures_b‖²)` to `graph`, with
/// `w` bound from [`lipschitz_weights`].
pub fn lipschitz_node<T: Real>(
    graph: &mut Graph<T>,
    logits: (NodeId, NodeId),
    features: (NodeId, NodeId),
    inv_denominator: NodeId,
    lambda: f64,
) -> NodeId {
    let dl = graph.sub(logits.0, logits.1);
    let df = graph.sub(features.0, features.1);
    let nl = graph.row_sq_norm(dl);
    let nf = graph.row_sq_norm(df);
    let s = graph.add(nl, nf);
    let w = graph.mul(s, inv_denominator);
    let m = graph.mean(w);
    graph.scale(m, lambda)
}

/// Per-row `1 / max(‖δ_b − η_b‖², floor)`.
pub fn lipschitz_weights<T: Real>(delta: &Tensor<T>, eta: &Tensor<T>, norm_floor: f64) -> Result<Tensor<T>> {
    check_same_shape(delta, eta, "lipschitz perturbations")?;
    let floor = T::from_f64_lossy(norm_floor);
    let w = (0..delta.rows())
        .map(|r| {
            let d2: T = delta
                .row(r)
                .iter()
                .zip(eta.row(r))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            T::one() / d2.max(floor)
        })
        .collect();
    Tensor::new(vec![delta.rows()], w)
}

/// Guided regularizer value and its gradient w.r.t. `logits_adv`.
pub fn guided_reg<T: Real>(
    logits_adv: &Tensor<T>,
    logits_clean: &Tensor<T>,
    lambda: f64,
) -> Result<(T, Tensor<T>)> {
    check_same_shape(logits_adv, logits_clean, "guided regularizer")?;
    let mut g = Graph::new();
    let a = g.input("adv");
    let c = g.input("clean");
    let r = guided_node(&mut g, a, c, lambda);
    g.output("reg", r);
    let out = g.forward([("adv", logits_adv), ("clean", logits_clean)])?;
    let grads = g.backward_wrt("reg", &["adv"])?;
    Ok((out["reg"].data()[0], grads["adv"].clone()))
}

/// Lipschitz regularizer value and its gradient w.r.t. `logits_adv` and
/// `feat_adv` (in that order).
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_reg<T: Real>(
    logits_adv: &Tensor<T>,
    logits_eta: &Tensor<T>,
    feat_adv: &Tensor<T>,
    feat_eta: &Tensor<T>,
    delta: &Tensor<T>,
    eta: &Tensor<T>,
    lambda: f64,
    norm_floor: f64,
) -> Result<(T, Tensor<T>, Tensor<T>)> {
    check_same_shape(logits_adv, logits_eta, "lipschitz logits")?;
    check_same_shape(feat_adv, feat_eta, "lipschitz features")?;
    if logits_adv.rows() != feat_adv.rows() || delta.rows() != logits_adv.rows() {
        return Err(Error::Shape(format!(
            "lipschitz batch sizes differ: logits {:?}, features {:?}, delta {:?}",
            logits_adv.shape(),
            feat_adv.shape(),
            delta.shape()
        )));
    }
    let w = lipschitz_weights(delta, eta, norm_floor)?;
    let mut g = Graph::new();
    let la = g.input("la");
    let le = g.input("le");
    let fa = g.input("fa");
    let fe = g.input("fe");
    let wn = g.input("w");
    let r = lipschitz_node(&mut g, (la, le), (fa, fe), wn, lambda);
    g.output("reg", r);
    let out = g.forward([
        ("la", logits_adv),
        ("le", logits_eta),
        ("fa", feat_adv),
        ("fe", feat_eta),
        ("w", &w),
    ])?;
    let mut grads = g.backward_wrt("reg", &["la", "fa"])?;
    Ok((
        out["reg"].data()[0],
        grads.remove("la").unwrap(),
        grads.remove("fa").unwrap(),
    ))
}

pub const SVD_MAX_ITERATIONS: usize = 10_000;

/// Nuclear norm of a matrix and the subgradient `U·Vᵀ` (singular directions
/// with non-negligible singular value only).
pub fn nuclear_norm<T: Real>(a: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (rows, cols) = (a.rows(), a.cols());
    let m = DMatrix::from_row_iterator(rows, cols, a.data().iter().map(|v| v.as_f64()));
    let svd = m
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITERATIONS)
        .ok_or(Error::SvdNoConvergence {
            rows,
            cols,
            iterations: SVD_MAX_ITERATIONS,
        })?;
    let sigma = &svd.singular_values;
    let norm: f64 = sigma.iter().sum();
    let smax = sigma.iter().fold(0.0_f64, |m, &s| m.max(s));
    let tol = smax * rows.max(cols) as f64 * f64::EPSILON;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut sub = vec![T::zero(); rows * cols];
    for (k, &s) in sigma.iter().enumerate() {
        if s <= tol {
            continue;
        }
        for i in 0..rows {
            let ui = u[(i, k)];
            for j in 0..cols {
                let idx = i * cols + j;
                sub[idx] = sub[idx] + T::from_f64_lossy(ui * v_t[(k, j)]);
            }
        }
    }
    Ok((norm, Tensor::new(vec![rows, cols], sub)?))
}

/// Nuclear regularizer `λ‖A‖_*` with `A = logits_adv − logits_clean`, and its
/// subgradient w.r.t. `logits_adv`.
pub fn nuclear_reg<T: Real>(
    logits_adv: &Tensor<T>,
    logits_clean: &Tensor<T>,
    lambda: f64,
) -> Result<(T, Tensor<T>)> {
    check_same_shape(logits_adv, logits_clean, "nuclear regularizer")?;
    let a = logits_adv.sub(logits_clean)?;
    let (norm, sub) = nuclear_norm(&a)?;
    let l = T::from_f64_lossy(lambda);
    Ok((T::from_f64_lossy(lambda * norm), sub.map(|v| v * l)))
}

/// Base loss on the main logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    CrossEntropy,
    Margin,
}

/// Tensors bound into a [`CompositeLoss`] evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a, T: Real> {
    /// Input whose loss is minimized (training) or maximized (attack).
    pub x_main: &'a Tensor<T>,
    /// Cross-entropy: target rows `B×C` (one-hot or mixed). Margin: labels `B`.
    pub targets: &'a Tensor<T>,
    /// Reference input for the penalty: `x` (guided, nuclear) or `x+η` (lipschitz).
    pub x_ref: Option<&'a Tensor<T>>,
    /// Lipschitz only: perturbation at `x_main` and at `x_ref`.
    pub perturbations: Option<(&'a Tensor<T>, &'a Tensor<T>)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Want {
    pub input_grad: bool,
    pub param_grads: bool,
}

#[derive(Clone, Debug)]
pub struct LossEval<T: Real> {
    pub total: T,
    pub base: T,
    pub penalty: T,
    pub logits_main: Tensor<T>,
    pub logits_ref: Option<Tensor<T>>,
    pub input_grad: Option<Tensor<T>>,
    pub param_grads: Option<ModelParams<T>>,
}

/// `base_loss(f(x_main)) + penalty(x_main, x_ref)` on a reusable graph.
#[derive(Clone, Debug)]
pub struct CompositeLoss<T: Real> {
    spec: ModelSpec,
    reg: RegularizerSpec,
    base: BaseLoss,
    graph: Graph<T>,
    logits_main: NodeId,
    logits_ref: Option<NodeId>,
    nuclear_diff: Option<NodeId>,
}

impl<T: Real> CompositeLoss<T> {
    pub fn new(spec: &ModelSpec, base: BaseLoss, reg: RegularizerSpec) -> Result<Self> {
        reg.validate()?;
        let mut g = Graph::new();
        let layers = declare_params(&mut g, spec);
        let x = g.input("x_main");
        let targets = g.input("targets");
        let (logits, feats) = build_mlp(&mut g, x, &layers);
        let base_node = match base {
            BaseLoss::CrossEntropy => g.softmax_cross_entropy(logits, targets),
            BaseLoss::Margin => g.margin_loss(logits, targets),
        };
        g.output("base", base_node);
        let mut logits_ref = None;
        let mut nuclear_diff = None;
        let total = if reg.is_active() {
            let xr = g.input("x_ref");
            let (lr, fr) = build_mlp(&mut g, xr, &layers);
            logits_ref = Some(lr);
            let penalty = match reg.kind {
                RegularizerKind::Guided => Some(guided_node(&mut g, logits, lr, reg.lambda)),
                RegularizerKind::Lipschitz => {
                    let w = g.input("lip_w");
                    Some(lipschitz_node(&mut g, (logits, lr), (feats, fr), w, reg.lambda))
                }
                RegularizerKind::Nuclear => {
                    nuclear_diff = Some(g.sub(logits, lr));
                    None
                }
                RegularizerKind::None => unreachable!(),
            };
            match penalty {
                Some(p) => {
                    g.output("penalty", p);
                    g.add(base_node, p)
                }
                None => base_node,
            }
        } else {
            base_node
        };
        g.output("total", total);
        Ok(Self {
            spec: spec.clone(),
            reg,
            base,
            graph: g,
            logits_main: logits,
            logits_ref,
            nuclear_diff,
        })
    }

    pub fn regularizer(&self) -> &RegularizerSpec {
        &self.reg
    }

    pub fn base_loss(&self) -> BaseLoss {
        self.base
    }

    pub fn evaluate(
        &mut self,
        params: &ModelParams<T>,
        inputs: LossInputs<'_, T>,
        want: Want,
    ) -> Result<LossEval<T>> {
        if params.spec() != &self.spec {
            return Err(Error::SpecMismatch(format!(
                "loss built for {} evaluated with {}",
                self.spec,
                params.spec()
            )));
        }
        let weights = match (self.reg.kind, inputs.perturbations) {
            (RegularizerKind::Lipschitz, Some((d, e))) => {
                Some(lipschitz_weights(d, e, self.reg.norm_floor)?)
            }
            (RegularizerKind::Lipschitz, None) => {
                return Err(Error::InvalidArgument(
                    "lipschitz penalty needs both perturbations".into(),
                ))
            }
            _ => None,
        };
        let mut bindings: Vec<(&str, &Tensor<T>)> = params.bindings().collect();
        bindings.push(("x_main", inputs.x_main));
        bindings.push(("targets", inputs.targets));
        if self.reg.is_active() {
            let xr = inputs.x_ref.ok_or_else(|| {
                Error::InvalidArgument("regularized loss needs a reference input".into())
            })?;
            check_same_shape(inputs.x_main, xr, "reference input")?;
            bindings.push(("x_ref", xr));
        }
        if let Some(w) = &weights {
            bindings.push(("lip_w", w));
        }
        self.graph.evaluate(bindings)?;

        let base = self.graph.output_value("base").expect("evaluated").data()[0];
        let mut penalty = self
            .graph
            .output_value("penalty")
            .map(|t| t.data()[0])
            .unwrap_or_else(T::zero);
        let mut total = self.graph.output_value("total").expect("evaluated").data()[0];
        let mut seeds = Vec::new();
        if let Some(diff) = self.nuclear_diff {
            let a = self.graph.value(diff).expect("evaluated");
            let (norm, sub) = nuclear_norm(a)?;
            let l = T::from_f64_lossy(self.reg.lambda);
            penalty = T::from_f64_lossy(self.reg.lambda * norm);
            total = total + penalty;
            seeds.push((diff, sub.map(|v| v * l)));
        }

        let logits_main = self.graph.value(self.logits_main).expect("evaluated").clone();
        let logits_ref = self
            .logits_ref
            .map(|id| self.graph.value(id).expect("evaluated").clone());

        let mut input_grad = None;
        let mut param_grads = None;
        if want.input_grad || want.param_grads {
            let mut wrt: Vec<&str> = Vec::new();
            let names: Vec<String> = params.names().to_vec();
            if want.input_grad {
                wrt.push("x_main");
            }
            if want.param_grads {
                wrt.extend(names.iter().map(String::as_str));
            }
            let mut grads = self.graph.backward_seeded(Some("total"), seeds, Some(&wrt))?;
            if want.input_grad {
                input_grad = grads.remove("x_main");
            }
            if want.param_grads {
                param_grads = Some(params_from_grads(params.spec(), params.names(), &mut grads)?);
            }
        }
        Ok(LossEval {
            total,
            base,
            penalty,
            logits_main,
            logits_ref,
            input_grad,
            param_grads,
        })
    }
}

fn params_from_grads<T: Real>(
    spec: &ModelSpec,
    names: &[String],
    grads: &mut TensorMap<T>,
) -> Result<ModelParams<T>> {
    let mut out = ModelParams::zeros(spec);
    for (slot, name) in out.tensors_mut().iter_mut().zip(names) {
        let g = grads
            .remove(name)
            .ok_or_else(|| Error::Backward(format!("missing gradient for {name}")))?;
        slot.data_mut().copy_from_slice(g.data());
    }
    Ok(out)
}

/// `1 − cos(∇ₓCE(x), ∇ₓCE(x+η))` over the flattened batch. A diagnostic of
/// local linearity; never part of a training loss.
pub fn grad_alignment_metric<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    eta: &Tensor<T>,
) -> Result<f64> {
    check_same_shape(x, eta, "grad alignment")?;
    let mut loss = CompositeLoss::new(params.spec(), BaseLoss::CrossEntropy, RegularizerSpec::none())?;
    let targets = one_hot(labels, params.spec().num_classes);
    let want = Want {
        input_grad: true,
        param_grads: false,
    };
    let g_clean = loss
        .evaluate(params, LossInputs { x_main: x, targets: &targets, x_ref: None, perturbations: None }, want)?
        .input_grad
        .expect("requested");
    let shifted = x.add(eta)?;
    let g_shift = loss
        .evaluate(params, LossInputs { x_main: &shifted, targets: &targets, x_ref: None, perturbations: None }, want)?
        .input_grad
        .expect("requested");
    Ok(one_minus_cosine(g_clean.data(), g_shift.data()))
}

/// `1 − cos(a, b)`; a zero-norm operand counts as orthogonal (returns 1).
pub fn one_minus_cosine<T: Real>(a: &[T], b: &[T]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(b) {
        let (u, v) = (u.as_f64(), v.as_f64());
        dot += u * v;
        na += u * u;
        nb += v * v;
    }
    if na == 0.0 || nb == 0.0 {
        warn!("gradient alignment with a zero-norm gradient; reporting 1");
        return 1.0;
    }
    if a == b {
        return 0.0;
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}
