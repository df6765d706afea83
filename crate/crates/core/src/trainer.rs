//! The single-step adversarial training loop.
//!
//! Each batch runs augment → init → FGSM → composite loss → backward → SGD →
//! quality ratio → weight averaging → prior update. After every epoch the
//! model (or its average, when averaging is on) is evaluated on a held-out
//! subset and the catastrophic-overfitting monitor is updated.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{
    fgsm_step_with, project, sample_init, update_prior_state, AttackConfig, InitScheme, ModelObjective, PriorState,
    DEFAULT_PGI_MU,
};
use crate::augment::{augment_batch, AugmentSpec};
use crate::averaging::{auto_ema_update, ema_update, EmaState, GateDirection, QualitySnapshot, DEFAULT_TAU, DEFAULT_THRESHOLD};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::exec::Exec;
use crate::model::{model_forward, ModelParams, ModelSpec};
use crate::optim::{lr_at, sgd_step, LrSchedule};
use crate::regularizer::{BaseLoss, CompositeLoss, LossInputs, RegularizerKind, RegularizerSpec, Want};
use crate::rng::{Purpose, RngKey};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WaConfig {
    None,
    Ema { tau: f64 },
    AutoEma { tau: f64, threshold: f64, gate: GateDirection },
}

impl WaConfig {
    pub fn auto_default() -> Self {
        WaConfig::AutoEma {
            tau: DEFAULT_TAU,
            threshold: DEFAULT_THRESHOLD,
            gate: GateDirection::AtMost,
        }
    }

    pub fn is_on(&self) -> bool {
        !matches!(self, WaConfig::None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoMonitorConfig {
    pub eval_attack: AttackConfig,
    /// Collapse when robust accuracy drops below this fraction of its peak.
    pub collapse_fraction: f64,
    /// Held-out samples evaluated after every epoch.
    pub holdout: usize,
}

impl CoMonitorConfig {
    /// PGD-10 with step ε/4 on 1000 held-out samples, collapse below 20% of
    /// peak.
    pub fn pgd10(epsilon: f64) -> Self {
        Self {
            eval_attack: AttackConfig::pgd(epsilon, epsilon / 4.0, 10),
            collapse_fraction: 0.2,
            holdout: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub attack: AttackConfig,
    pub pgi_mu: f64,
    pub regularizer: RegularizerSpec,
    pub augment: AugmentSpec,
    pub wa: WaConfig,
    pub seed: u64,
    pub co_monitor: CoMonitorConfig,
    pub precision: Precision,
    pub exec: Exec,
}

impl TrainConfig {
    /// Bernoulli-half init with α=ε, Lipschitz penalty (λ=12, min only),
    /// Cutout, and Auto-EMA (τ=0.999, T=0.82) under SGD momentum 0.9 and
    /// weight decay 5e-4.
    pub fn fgsm_law(epsilon: f64, epochs: usize) -> Self {
        Self {
            epochs,
            batch_size: 128,
            lr_schedule: LrSchedule::Multistep {
                base: 0.1,
                milestones: Vec::new(),
                factor: 0.1,
            },
            momentum: 0.9,
            weight_decay: 5e-4,
            attack: AttackConfig::fgsm(epsilon, InitScheme::BernoulliHalf),
            pgi_mu: DEFAULT_PGI_MU,
            regularizer: RegularizerSpec::lipschitz_default(),
            augment: AugmentSpec::cutout(),
            wa: WaConfig::auto_default(),
            seed: 0,
            co_monitor: CoMonitorConfig::pgd10(epsilon),
            precision: Precision::F64,
            exec: Exec::Parallel,
        }
    }

    /// Uniform init with α=1.25ε, no penalty, no augmentation, no averaging.
    pub fn fgsm_rs(epsilon: f64, epochs: usize) -> Self {
        Self {
            attack: AttackConfig::fgsm(epsilon, InitScheme::UniformFull),
            regularizer: RegularizerSpec::none(),
            augment: AugmentSpec::default(),
            wa: WaConfig::None,
            ..Self::fgsm_law(epsilon, epochs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs and batch_size must be ≥ 1, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        self.lr_schedule.validate(self.epochs)?;
        self.attack.validate()?;
        self.co_monitor.eval_attack.validate()?;
        self.regularizer.validate()?;
        if !(0.0..=1.0).contains(&self.co_monitor.collapse_fraction) {
            return Err(Error::InvalidArgument(format!(
                "collapse_fraction must lie in [0, 1], got {}",
                self.co_monitor.collapse_fraction
            )));
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay), ("pgi_mu", self.pgi_mu)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One row of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_clean_acc: f64,
    pub train_robust_acc: f64,
    pub delta_ratio_mean: f64,
    pub eval_clean_acc: f64,
    pub eval_attack: String,
    pub eval_robust_acc: f64,
    pub ce_loss: f64,
    pub reg_loss: f64,
    pub wa_updates_applied: u64,
    pub wa_updates_skipped: u64,
    /// Wall-clock seconds since training started. Not persisted with the
    /// records so they stay replayable.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunRecord {
    pub const CSV_COLUMNS: [&'static str; 12] = [
        "epoch",
        "lr",
        "train_clean_acc",
        "train_robust_acc",
        "delta_ratio_mean",
        "eval_clean_acc",
        "eval_attack",
        "eval_robust_acc",
        "ce_loss",
        "reg_loss",
        "wa_updates_applied",
        "wa_updates_skipped",
    ];

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{},{}",
            self.epoch,
            self.lr,
            self.train_clean_acc,
            self.train_robust_acc,
            self.delta_ratio_mean,
            self.eval_clean_acc,
            self.eval_attack,
            self.eval_robust_acc,
            self.ce_loss,
            self.reg_loss,
            self.wa_updates_applied,
            self.wa_updates_skipped
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CoStatus {
    Healthy,
    /// First epoch (1-based) whose robust accuracy fell below the threshold.
    Collapsed { epoch: usize },
}

/// Flags the first epoch whose robust accuracy is below
/// `collapse_fraction × running peak`.
pub fn co_monitor(history: &[f64], collapse_fraction: f64) -> CoStatus {
    let mut peak = f64::NEG_INFINITY;
    for (i, &r) in history.iter().enumerate() {
        peak = peak.max(r);
        if r < collapse_fraction * peak {
            return CoStatus::Collapsed { epoch: i + 1 };
        }
    }
    CoStatus::Healthy
}

/// What a single batch's attack produced.
#[derive(Clone, Debug)]
pub struct BatchAttack<T: Real> {
    pub x: Tensor<T>,
    pub targets: Tensor<T>,
    pub labels: Vec<usize>,
    pub eta: Tensor<T>,
    pub delta: Tensor<T>,
    pub signed_grad: Tensor<T>,
}

/// Per-epoch milestones a caller may want to persist.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EpochEvents {
    pub lr_milestone: bool,
    pub best_robust: bool,
    pub last: bool,
}

pub struct Trainer<T: Real> {
    config: TrainConfig,
    params: ModelParams<T>,
    velocity: ModelParams<T>,
    ema: Option<EmaState<T>>,
    prior: Option<PriorState<T>>,
    loss: CompositeLoss<T>,
    history: Vec<RunRecord>,
    epoch: usize,
    best_robust: f64,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, spec: &ModelSpec, train_samples: usize) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let params: ModelParams<T> = ModelParams::<f64>::init(spec, config.seed).cast();
        let ema = match config.wa {
            WaConfig::None => None,
            WaConfig::Ema { tau } => Some(EmaState::new(&params, tau, 1.0)?),
            WaConfig::AutoEma { tau, threshold, gate } => Some(EmaState::new(&params, tau, threshold)?.with_gate(gate)),
        };
        let prior = config.attack.init.uses_prior().then(|| {
            PriorState::new(
                train_samples,
                spec.input_dim,
                config.attack.epsilon,
                config.attack.alpha,
                config.pgi_mu,
            )
        });
        Ok(Self {
            loss: CompositeLoss::new(spec, BaseLoss::CrossEntropy, config.regularizer)?,
            velocity: ModelParams::zeros(spec),
            config,
            params,
            ema,
            prior,
            history: Vec::new(),
            epoch: 0,
            best_robust: f64::NEG_INFINITY,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn ema(&self) -> Option<&EmaState<T>> {
        self.ema.as_ref()
    }

    pub fn prior(&self) -> Option<&PriorState<T>> {
        self.prior.as_ref()
    }

    /// The parameters that are evaluated: the average when averaging is on.
    pub fn eval_params(&self) -> &ModelParams<T> {
        self.ema.as_ref().map_or(&self.params, |e| &e.theta_avg)
    }

    pub fn history(&self) -> &[RunRecord] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn co_status(&self) -> CoStatus {
        let h: Vec<f64> = self.history.iter().map(|r| r.eval_robust_acc).collect();
        co_monitor(&h, self.config.co_monitor.collapse_fraction)
    }

    /// Augments batch `batch` of `epoch` and crafts its training perturbation
    /// against the current parameters.
    pub fn attack_batch(&self, dataset: &Dataset, ids: &[usize], epoch: usize, batch: usize) -> Result<BatchAttack<T>> {
        let cfg = &self.config;
        let (x, labels) = dataset.batch::<T>(ids);
        let coords = [epoch as u64, batch as u64];
        let mut aug_rng = RngKey::new(cfg.seed, Purpose::Augment).stream(&coords);
        let aug = augment_batch(&cfg.augment, dataset.geom(), &x, &labels, dataset.classes(), &mut aug_rng)?;
        let mut init_rng = RngKey::new(cfg.seed, Purpose::AttackInit).stream(&coords);
        let eta = sample_init(cfg.attack.init, cfg.attack.epsilon, aug.x.shape(), self.prior.as_ref(), ids, &mut init_rng)?;
        let eta = project(&aug.x, &eta, cfg.attack.epsilon)?;
        let mut objective =
            ModelObjective::with_targets(&self.params, aug.targets.clone(), BaseLoss::CrossEntropy, cfg.regularizer)?;
        let first = fgsm_step_with(&mut objective, &aug.x, &eta, cfg.attack.alpha, cfg.attack.epsilon)?;
        let mut delta = first.delta;
        for _ in 1..cfg.attack.steps {
            delta = fgsm_step_with(&mut objective, &aug.x, &delta, cfg.attack.alpha, cfg.attack.epsilon)?.delta;
        }
        Ok(BatchAttack {
            x: aug.x,
            targets: aug.targets,
            labels: aug.labels,
            eta,
            delta,
            signed_grad: first.signed_grad,
        })
    }

    /// Runs one epoch over `train`, then evaluates on `holdout`.
    pub fn train_epoch(&mut self, train: &Dataset, holdout: &Dataset) -> Result<(RunRecord, EpochEvents)> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if train.dim() != self.params.spec().input_dim {
            return Err(Error::SpecMismatch(format!(
                "model expects {} input features, dataset has {}",
                self.params.spec().input_dim,
                train.dim()
            )));
        }
        let epoch = self.epoch;
        let cfg = self.config.clone();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut RngKey::new(cfg.seed, Purpose::Shuffle).stream(&[epoch as u64]));
        let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
        let total_steps = steps_per_epoch * cfg.epochs;
        let epoch_lr = lr_at(&cfg.lr_schedule, epoch, 0, steps_per_epoch, total_steps);

        let (mut clean_ok, mut robust_ok, mut seen) = (0usize, 0usize, 0usize);
        let (mut ce_sum, mut reg_sum, mut delta_sum) = (0.0, 0.0, 0.0);
        for (b, ids) in order.chunks(cfg.batch_size).enumerate() {
            let atk = self.attack_batch(train, ids, epoch, b)?;
            let adv = atk.x.add(&atk.delta)?;
            let at_eta;
            let mut lip = None;
            let x_ref = match cfg.regularizer.kind {
                RegularizerKind::None => None,
                RegularizerKind::Lipschitz => {
                    at_eta = atk.x.add(&atk.eta)?;
                    lip = Some((&atk.delta, &atk.eta));
                    Some(&at_eta)
                }
                _ => Some(&atk.x),
            };
            let eval = self.loss.evaluate(
                &self.params,
                LossInputs {
                    x_main: &adv,
                    targets: &atk.targets,
                    x_ref,
                    perturbations: lip,
                },
                Want {
                    input_grad: false,
                    param_grads: true,
                },
            )?;
            if !eval.total.is_finite() {
                return Err(Error::Diverged { what: "loss", batch: b });
            }
            ce_sum += eval.base.as_f64() * ids.len() as f64;
            reg_sum += eval.penalty.as_f64() * ids.len() as f64;

            let clean_logits = match (cfg.regularizer.kind, &eval.logits_ref) {
                (RegularizerKind::Guided | RegularizerKind::Nuclear, Some(l)) => l.clone(),
                _ => model_forward(&self.params, &atk.x)?.0,
            };
            let count = |logits: &Tensor<T>| {
                logits
                    .argmax_rows()
                    .iter()
                    .zip(&atk.labels)
                    .filter(|(p, y)| p == y)
                    .count()
            };
            let snapshot = QualitySnapshot::new(count(&clean_logits), count(&eval.logits_main), ids.len())?;
            clean_ok += snapshot.clean_correct;
            robust_ok += snapshot.robust_correct;
            seen += ids.len();
            delta_sum += snapshot.delta_ratio;

            let lr = lr_at(&cfg.lr_schedule, epoch, b, steps_per_epoch, total_steps);
            let grads = eval.param_grads.expect("requested");
            sgd_step(&mut self.params, &grads, &mut self.velocity, lr, cfg.momentum, cfg.weight_decay)
                .map_err(|_| Error::Diverged { what: "gradient", batch: b })?;
            if !self.params.is_finite() {
                return Err(Error::Diverged { what: "parameters", batch: b });
            }
            match (&mut self.ema, cfg.wa) {
                (Some(state), WaConfig::Ema { .. }) => ema_update(state, &self.params)?,
                (Some(state), WaConfig::AutoEma { .. }) => {
                    auto_ema_update(state, &self.params, &snapshot)?;
                }
                _ => {}
            }
            if let Some(prior) = &mut self.prior {
                update_prior_state(prior, ids, &atk.delta, &atk.signed_grad, cfg.attack.init)?;
            }
        }

        let report = evaluate(
            self.eval_params(),
            holdout,
            &[cfg.co_monitor.eval_attack],
            cfg.seed,
            cfg.exec,
        )?;
        let robust = report.robust_acc.values().next().copied().unwrap_or(report.clean_acc);
        let batches = steps_per_epoch as f64;
        let (applied, skipped) = self.ema.as_ref().map_or((0, 0), |e| (e.updates_applied, e.updates_skipped));
        let record = RunRecord {
            epoch: epoch + 1,
            lr: epoch_lr,
            train_clean_acc: clean_ok as f64 / seen as f64,
            train_robust_acc: robust_ok as f64 / seen as f64,
            delta_ratio_mean: delta_sum / batches,
            eval_clean_acc: report.clean_acc,
            eval_attack: cfg.co_monitor.eval_attack.label(),
            eval_robust_acc: robust,
            ce_loss: ce_sum / seen as f64,
            reg_loss: reg_sum / seen as f64,
            wa_updates_applied: applied,
            wa_updates_skipped: skipped,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        let events = EpochEvents {
            lr_milestone: cfg.lr_schedule.milestones().contains(&self.epoch),
            best_robust: robust > self.best_robust,
            last: self.epoch == cfg.epochs,
        };
        self.best_robust = self.best_robust.max(robust);
        self.history.push(record.clone());
        Ok((record, events))
    }

    /// Trains for the configured number of epochs, calling `on_epoch` after
    /// each one.
    pub fn run<F>(&mut self, train: &Dataset, holdout: &Dataset, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Self, &RunRecord, EpochEvents) -> Result<()>,
    {
        while self.epoch < self.config.epochs {
            let (record, events) = self.train_epoch(train, holdout)?;
            on_epoch(self, &record, events)?;
        }
        Ok(())
    }
}
