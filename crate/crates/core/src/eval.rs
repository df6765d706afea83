//! Robustness evaluation, the two-direction loss landscape, and the
//! attack-strength sweep.
//!
//! Work is split into fixed chunks of [`EVAL_CHUNK`] samples and every sample
//! draws its attack initialization from its own key, so results do not depend
//! on the execution mode or thread count.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{labels_to_targets, pgd_from, project, sample_init, AttackConfig, ModelObjective};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{predict, ModelParams};
use crate::regularizer::{BaseLoss, CompositeLoss, LossInputs, RegularizerSpec, Want};
use crate::rng::{Purpose, RngKey};
use crate::tensor::{one_hot, sign, Real, Tensor};

/// Samples per evaluation work item.
pub const EVAL_CHUNK: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub clean_acc: f64,
    /// Mean clean cross-entropy.
    pub clean_ce: f64,
    pub robust_acc: BTreeMap<String, f64>,
    pub attacks: Vec<AttackConfig>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(EVAL_CHUNK))
        .map(|c| (c * EVAL_CHUNK, ((c + 1) * EVAL_CHUNK).min(n)))
        .collect()
}

/// Per-sample initialization for rows `start..end`, keyed by `(attack, sample)`.
fn keyed_init<T: Real>(
    config: &AttackConfig,
    key: RngKey,
    attack_index: usize,
    start: usize,
    end: usize,
    dim: usize,
) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity((end - start) * dim);
    for i in start..end {
        let mut rng = key.stream(&[attack_index as u64, i as u64]);
        data.extend(sample_init::<T, _>(config.init, config.epsilon, &[1, dim], None, &[], &mut rng)?.into_data());
    }
    Tensor::new(vec![end - start, dim], data)
}

fn correct(pred: &[usize], labels: &[usize]) -> Vec<bool> {
    pred.iter().zip(labels).map(|(p, y)| p == y).collect()
}

/// Sum of per-sample cross-entropy over a chunk.
fn ce_sum<T: Real>(params: &ModelParams<T>, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let mut loss = CompositeLoss::new(params.spec(), BaseLoss::CrossEntropy, RegularizerSpec::none())?;
    let targets = one_hot(labels, params.spec().num_classes);
    let eval = loss.evaluate(
        params,
        LossInputs {
            x_main: x,
            targets: &targets,
            x_ref: None,
            perturbations: None,
        },
        Want::default(),
    )?;
    Ok(eval.base.as_f64() * labels.len() as f64)
}

/// Mean cross-entropy over `x`, chunked exactly as [`evaluate`] chunks.
pub fn mean_ce<T: Real>(params: &ModelParams<T>, x: &Tensor<T>, labels: &[usize], exec: Exec) -> Result<f64> {
    let parts = exec.map(chunks(labels.len()), |(s, e)| {
        let ids: Vec<usize> = (s..e).collect();
        ce_sum(params, &x.select_rows(&ids), &labels[s..e])
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / labels.len() as f64)
}

/// Per-sample correctness under `config`, starting each sample from its
/// keyed initialization (or from `start` when given).
fn attack_chunk<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    start: Tensor<T>,
) -> Result<(Vec<bool>, Tensor<T>)> {
    let start = project(x, &start, config.epsilon)?;
    let mut obj = ModelObjective::new(params, labels, config.loss)?;
    let (delta, _) = pgd_from(&mut obj, x, start, config)?;
    let pred = predict(params, &x.add(&delta)?)?;
    Ok((correct(&pred, labels), delta))
}

/// Clean accuracy, clean cross-entropy and robust accuracy under each attack.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset,
    attacks: &[AttackConfig],
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    if dataset.dim() != params.spec().input_dim {
        return Err(Error::SpecMismatch(format!(
            "model expects {} input features, dataset has {}",
            params.spec().input_dim,
            dataset.dim()
        )));
    }
    for a in attacks {
        a.validate()?;
    }
    let key = RngKey::new(seed, Purpose::EvalAttack);
    let n = dataset.len();
    let dim = dataset.dim();
    let per_chunk = exec.map(chunks(n), |(s, e)| -> Result<(usize, f64, Vec<usize>)> {
        let ids: Vec<usize> = (s..e).collect();
        let (x, y) = dataset.batch::<T>(&ids);
        let clean = correct(&predict(params, &x)?, &y).iter().filter(|&&c| c).count();
        let ce = ce_sum(params, &x, &y)?;
        let mut robust = Vec::with_capacity(attacks.len());
        for (k, a) in attacks.iter().enumerate() {
            let init = keyed_init(a, key, k, s, e, dim)?;
            let (ok, _) = attack_chunk(params, &x, &y, a, init)?;
            robust.push(ok.iter().filter(|&&c| c).count());
        }
        Ok((clean, ce, robust))
    });
    let mut clean = 0;
    let mut ce = 0.0;
    let mut robust = vec![0usize; attacks.len()];
    for part in per_chunk {
        let (c, l, r) = part?;
        clean += c;
        ce += l;
        for (acc, v) in robust.iter_mut().zip(r) {
            *acc += v;
        }
    }
    let mut robust_acc = BTreeMap::new();
    for (a, r) in attacks.iter().zip(robust) {
        let mut name = a.label();
        let mut k = 2;
        while robust_acc.contains_key(&name) {
            name = format!("{}_{k}", a.label());
            k += 1;
        }
        robust_acc.insert(name, r as f64 / n as f64);
    }
    Ok(EvalReport {
        n_samples: n,
        clean_acc: clean as f64 / n as f64,
        clean_ce: ce / n as f64,
        robust_acc,
        attacks: attacks.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub robust_acc: f64,
}

/// Robust accuracy at each ε of `eps_list` (ascending) under `template` with
/// the step size scaled by ε/ε_template.
///
/// Attacks are replayed in a nested fashion: each sample's attack at ε_k
/// starts from its perturbation at ε_{k−1}, and a sample already broken at a
/// smaller budget stays broken, since that perturbation is still feasible.
/// This makes the curve exactly non-increasing.
pub fn strength_sweep<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset,
    eps_list: &[f64],
    template: &AttackConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<SweepPoint>> {
    if eps_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(format!("epsilon list must be ascending: {eps_list:?}")));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot sweep an empty dataset".into()));
    }
    if !(template.epsilon > 0.0) {
        return Err(Error::InvalidArgument("sweep template needs epsilon > 0 to scale alpha".into()));
    }
    let key = RngKey::new(seed, Purpose::EvalAttack);
    let n = dataset.len();
    let dim = dataset.dim();
    let configs: Vec<AttackConfig> = eps_list
        .iter()
        .map(|&eps| AttackConfig {
            epsilon: eps,
            // a zero budget still needs a positive step to be a valid config
            alpha: if eps > 0.0 { template.alpha * eps / template.epsilon } else { template.alpha },
            ..*template
        })
        .collect();
    let per_chunk = exec.map(chunks(n), |(s, e)| -> Result<Vec<usize>> {
        let ids: Vec<usize> = (s..e).collect();
        let (x, y) = dataset.batch::<T>(&ids);
        let mut alive = vec![true; y.len()];
        let mut prev: Option<Tensor<T>> = None;
        let mut counts = Vec::with_capacity(configs.len());
        for c in &configs {
            let init = match prev.take() {
                Some(d) => d,
                None => keyed_init(c, key, 0, s, e, dim)?,
            };
            let (ok, delta) = attack_chunk(params, &x, &y, c, init)?;
            for (a, o) in alive.iter_mut().zip(ok) {
                *a = *a && o;
            }
            counts.push(alive.iter().filter(|&&a| a).count());
            prev = Some(delta);
        }
        Ok(counts)
    });
    let mut totals = vec![0usize; configs.len()];
    for part in per_chunk {
        for (t, v) in totals.iter_mut().zip(part?) {
            *t += v;
        }
    }
    Ok(eps_list
        .iter()
        .zip(totals)
        .map(|(&epsilon, c)| SweepPoint {
            epsilon,
            robust_acc: c as f64 / n as f64,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    /// Rademacher direction, `±eta_mag` per coordinate.
    pub r1: Tensor<f64>,
    /// Adversarial direction `eta_mag · sign(∇ₓ CE)`.
    pub r2: Tensor<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `grid[i][j]` = mean CE at `clip(x + a_i·r1 + b_j·r2)`.
    pub grid: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn center(&self) -> f64 {
        self.grid[self.a.len() / 2][self.b.len() / 2]
    }

    /// CSV with the axes in two header rows followed by one row per `a_i`.
    pub fn to_csv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let mut out = format!("# a (rows),{}\n# b (cols),{}\na,b,loss\n", join(&self.a), join(&self.b));
        for (i, row) in self.grid.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("{:e},{:e},{v:e}\n", self.a[i], self.b[j]));
            }
        }
        out
    }
}

fn axis(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Loss surface over the plane spanned by a Rademacher and an adversarial
/// direction, each scaled by `eta_mag`.
pub fn landscape_grid<T: Real>(
    params: &ModelParams<T>,
    samples: &Dataset,
    eta_mag: f64,
    n1: usize,
    n2: usize,
    seed: u64,
    exec: Exec,
) -> Result<LandscapeGrid> {
    if !(eta_mag > 0.0) || n1.is_multiple_of(2) || n2.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "landscape needs eta_mag > 0 and odd grid sides, got {eta_mag}, {n1}x{n2}"
        )));
    }
    if samples.dim() != params.spec().input_dim || samples.is_empty() {
        return Err(Error::SpecMismatch(format!(
            "model expects {} input features, samples have {} ({} rows)",
            params.spec().input_dim,
            samples.dim(),
            samples.len()
        )));
    }
    let all: Vec<usize> = (0..samples.len()).collect();
    let (x, labels) = samples.batch::<T>(&all);
    let mut rng = RngKey::new(seed, Purpose::Landscape).stream(&[]);
    let mag = T::from_f64_lossy(eta_mag);
    let r1 = Tensor::new(
        x.shape().to_vec(),
        (0..x.len()).map(|_| if rng.random::<bool>() { mag } else { -mag }).collect(),
    )?;
    let mut loss = CompositeLoss::new(params.spec(), BaseLoss::CrossEntropy, RegularizerSpec::none())?;
    let targets = labels_to_targets(&labels, params.spec().num_classes, BaseLoss::CrossEntropy);
    let grad = loss
        .evaluate(
            params,
            LossInputs {
                x_main: &x,
                targets: &targets,
                x_ref: None,
                perturbations: None,
            },
            Want {
                input_grad: true,
                param_grads: false,
            },
        )?
        .input_grad
        .expect("requested");
    let r2 = grad.map(|g| sign(g) * mag);
    let (a, b) = (axis(n1), axis(n2));
    let cells: Vec<(usize, usize)> = (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect();
    let values = exec.map(cells, |(i, j)| -> Result<f64> {
        let (ai, bj) = (T::from_f64_lossy(a[i]), T::from_f64_lossy(b[j]));
        let mut p = x.clone();
        for ((v, &d1), &d2) in p.data_mut().iter_mut().zip(r1.data()).zip(r2.data()) {
            *v = (*v + ai * d1 + bj * d2).max(T::zero()).min(T::one());
        }
        mean_ce(params, &p, &labels, Exec::Sequential)
    });
    let mut grid = vec![vec![0.0; n2]; n1];
    for (k, v) in values.into_iter().enumerate() {
        grid[k / n2][k % n2] = v?;
    }
    Ok(LandscapeGrid {
        r1: r1.cast(),
        r2: r2.cast(),
        a,
        b,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_blobs, BlobsConfig};
    use crate::model::ModelSpec;

    fn setup() -> (ModelParams, Dataset) {
        let d = synthetic_blobs(&BlobsConfig::new(300, 2, 2, 0.3, 1)).unwrap();
        (ModelParams::init(&ModelSpec::blobs_default(), 3), d)
    }

    #[test]
    fn empty_attack_list_and_zero_budget() {
        let (p, d) = setup();
        let r = evaluate(&p, &d, &[], 0, Exec::Sequential).unwrap();
        assert!(r.robust_acc.is_empty());
        let zero = AttackConfig::pgd(0.0, 0.01, 10);
        let r = evaluate(&p, &d, &[zero], 0, Exec::Sequential).unwrap();
        assert_eq!(r.robust_acc["pgd10"], r.clean_acc);
    }

    #[test]
    fn modes_agree() {
        let (p, d) = setup();
        let a = [AttackConfig::pgd(0.1, 0.025, 10), AttackConfig::margin(0.1)];
        assert_eq!(
            evaluate(&p, &d, &a, 5, Exec::Sequential).unwrap(),
            evaluate(&p, &d, &a, 5, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn sweep_single_point_matches_evaluate() {
        let (p, d) = setup();
        let a = AttackConfig::pgd(0.1, 0.025, 10);
        let s = strength_sweep(&p, &d, &[0.1], &a, 9, Exec::Sequential).unwrap();
        let r = evaluate(&p, &d, &[a], 9, Exec::Sequential).unwrap();
        assert_eq!(s[0].robust_acc, r.robust_acc["pgd10"]);
    }

    #[test]
    fn landscape_center_and_degenerate_grid() {
        let (p, d) = setup();
        let g = landscape_grid(&p, &d, 0.05, 3, 5, 0, Exec::Sequential).unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        let (x, y) = d.batch::<f64>(&all);
        assert_eq!(g.center(), mean_ce(&p, &x, &y, Exec::Sequential).unwrap());
        let one = landscape_grid(&p, &d, 0.05, 1, 1, 0, Exec::Sequential).unwrap();
        assert_eq!(one.grid, vec![vec![g.center()]]);
        assert!(landscape_grid(&p, &d, 0.05, 2, 3, 0, Exec::Sequential).is_err());
    }
}
