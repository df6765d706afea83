//! Experiment configuration: sectioned `key = value` text.
//!
//! ```text
//! [attack]
//! epsilon = 8/255
//! init = bernoulli_half
//! ```
//!
//! Every key is optional and defaults to the FGSM-LAW recipe at ε = 8/255 on
//! synthetic blobs. Unknown sections or keys are errors. [`ExperimentConfig::to_text`]
//! writes every key, resolved, in a form that parses back to an identical
//! configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::attack::{AttackConfig, InitScheme};
use crate::augment::AugmentKind;
use crate::averaging::{GateDirection, DEFAULT_TAU, DEFAULT_THRESHOLD};
use crate::data::{BlobsConfig, DatasetDescriptor, GlyphsConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::optim::LrSchedule;
use crate::regularizer::{BaseLoss, Placement, RegularizerKind};
use crate::trainer::{Precision, TrainConfig, WaConfig};

/// Settings for `eval`, `landscape` and `sweep`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub attacks: Vec<AttackConfig>,
    pub samples: usize,
    pub seed: u64,
    pub landscape_eta: f64,
    pub landscape_grid: usize,
    pub sweep_eps: Vec<f64>,
    pub sweep_template: AttackConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetDescriptor,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub output_dir: PathBuf,
}

const EPS_DEFAULT: f64 = 8.0 / 255.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut train = TrainConfig::fgsm_law(EPS_DEFAULT, 30);
        train.co_monitor.holdout = 200;
        Self {
            dataset: DatasetDescriptor::SyntheticBlobs(BlobsConfig::new(1000, 2, 2, 0.3, 7)),
            hidden: vec![64, 64],
            train,
            eval: EvalSettings {
                attacks: vec![AttackConfig::pgd(EPS_DEFAULT, EPS_DEFAULT / 4.0, 50), AttackConfig::margin(EPS_DEFAULT)],
                samples: 1000,
                seed: 0,
                landscape_eta: EPS_DEFAULT,
                landscape_grid: 21,
                sweep_eps: (1..=8).map(|k| 2.0 * k as f64 / 255.0).collect(),
                sweep_template: AttackConfig::pgd(EPS_DEFAULT, EPS_DEFAULT / 4.0, 10),
            },
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Raw `(section, key) → (value, line)` table.
struct Table {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                    line: line_no,
                    message: format!("malformed section header '{line}'"),
                })?;
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(Error::Config {
                        line: line_no,
                        message: format!("unknown section [{section}]"),
                    });
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            if section.is_empty() {
                return Err(Error::Config {
                    line: line_no,
                    message: "key outside of any [section]".into(),
                });
            }
            let key = (section.clone(), k.trim().to_string());
            if let Some((_, first)) = entries.get(&key) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key '{}' (first set on line {first})", key.1),
                });
            }
            entries.insert(key, (v.trim().to_string(), line_no));
        }
        Ok(Self { entries })
    }

    fn take<T>(&mut self, section: &str, key: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
        match self.entries.remove(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((v, line)) => parse(&v).map(Some).map_err(|e| Error::Config {
                line,
                message: format!("[{section}] {key}: {e}"),
            }),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some(((s, k), (_, line))) => Err(Error::Config {
                line,
                message: format!("unknown key '{k}' in [{s}]"),
            }),
        }
    }
}

const SECTIONS: [&str; 9] = ["run", "dataset", "model", "train", "attack", "regularizer", "augment", "wa", "eval"];

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Parses a real, accepting fractions such as `8/255`.
pub fn parse_real(s: &str) -> Result<f64> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b) = (f64::from_str(a.trim()), f64::from_str(b.trim()));
            match (a, b) {
                (Ok(a), Ok(b)) if b != 0.0 => a / b,
                _ => return Err(bad(format!("'{s}' is not a number or fraction"))),
            }
        }
        None => f64::from_str(s).map_err(|_| bad(format!("'{s}' is not a number")))?,
    };
    if !v.is_finite() {
        return Err(bad(format!("'{s}' is not finite")));
    }
    Ok(v)
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse().map_err(|_| bad(format!("'{s}' is not a non-negative integer")))
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse().map_err(|_| bad(format!("'{s}' is not a non-negative integer")))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(format!("'{s}' is not true or false"))),
    }
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| item(p.trim())).collect()
}

fn parse_choice<T: Copy>(s: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == s).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        bad(format!("'{s}' is not one of {}", names.join(", ")))
    })
}

const LOSSES: [(&str, BaseLoss); 2] = [("cross_entropy", BaseLoss::CrossEntropy), ("margin", BaseLoss::Margin)];
const REG_KINDS: [(&str, RegularizerKind); 4] = [
    ("none", RegularizerKind::None),
    ("guided", RegularizerKind::Guided),
    ("nuclear", RegularizerKind::Nuclear),
    ("lipschitz", RegularizerKind::Lipschitz),
];
const PLACEMENTS: [(&str, Placement); 2] = [("min_only", Placement::MinOnly), ("min_max", Placement::MinMax)];
const GATES: [(&str, GateDirection); 2] = [("at_most", GateDirection::AtMost), ("above", GateDirection::Above)];
const PRECISIONS: [(&str, Precision); 2] = [("f64", Precision::F64), ("f32", Precision::F32)];
const EXECS: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn name_of<T: PartialEq + Copy>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, o)| *o == v).map(|(n, _)| *n).expect("listed")
}

/// Parses an evaluation attack name: `pgdN` (α = ε/4), `marginN` (α = ε/10)
/// or `fgsm` (zero init, α = ε).
pub fn parse_attack_name(name: &str, epsilon: f64) -> Result<AttackConfig> {
    let steps = |rest: &str| parse_usize(rest).ok().filter(|&s| s > 0);
    if name == "fgsm" {
        return Ok(AttackConfig {
            alpha: epsilon.max(f64::MIN_POSITIVE),
            ..AttackConfig::fgsm(epsilon, InitScheme::Zero)
        });
    }
    if let Some(n) = name.strip_prefix("pgd").and_then(steps) {
        return Ok(AttackConfig::pgd(epsilon, epsilon / 4.0, n));
    }
    if let Some(n) = name.strip_prefix("margin").and_then(steps) {
        return Ok(AttackConfig {
            steps: n,
            ..AttackConfig::margin(epsilon)
        });
    }
    Err(bad(format!("unknown attack '{name}' (expected fgsm, pgdN or marginN)")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::parse(text)?;
        let mut c = ExperimentConfig::default();

        if let Some(v) = t.take("run", "output_dir", |s| Ok(PathBuf::from(s)))? {
            c.output_dir = v;
        }
        if let Some(v) = t.take("run", "seed", parse_u64)? {
            c.train.seed = v;
        }
        if let Some(v) = t.take("run", "precision", |s| parse_choice(s, &PRECISIONS))? {
            c.train.precision = v;
        }
        if let Some(v) = t.take("run", "exec", |s| parse_choice(s, &EXECS))? {
            c.train.exec = v;
        }

        let source = t.take("dataset", "source", |s| Ok(s.to_string()))?;
        let n = t.take("dataset", "n", parse_usize)?;
        let data_seed = t.take("dataset", "seed", parse_u64)?;
        let dim = t.take("dataset", "dim", parse_usize)?;
        let classes = t.take("dataset", "classes", parse_usize)?;
        let margin = t.take("dataset", "margin", parse_real)?;
        let amplitude = t.take("dataset", "amplitude", parse_real)?;
        let noise = t.take("dataset", "noise", parse_real)?;
        let crisp = t.take("dataset", "crisp", parse_bool)?;
        let images = t.take("dataset", "images", |s| Ok(PathBuf::from(s)))?;
        let labels = t.take("dataset", "labels", |s| Ok(PathBuf::from(s)))?;
        if let Some(v) = t.take("dataset", "holdout", parse_usize)? {
            c.train.co_monitor.holdout = v;
        }
        let kind = source.as_deref().unwrap_or(match &c.dataset {
            DatasetDescriptor::SyntheticBlobs(_) => "synthetic_blobs",
            DatasetDescriptor::SyntheticGlyphs(_) => "synthetic_glyphs",
            DatasetDescriptor::IdxFiles { .. } => "idx_files",
        });
        let stray = |present: bool, key: &str| -> Result<()> {
            if present {
                Err(Error::Config {
                    line: 0,
                    message: format!("[dataset] {key} does not apply to source '{kind}'"),
                })
            } else {
                Ok(())
            }
        };
        c.dataset = match kind {
            "synthetic_blobs" => {
                stray(amplitude.is_some() || noise.is_some() || crisp.is_some(), "amplitude/noise/crisp")?;
                stray(images.is_some() || labels.is_some(), "images/labels")?;
                let mut b = BlobsConfig::new(1000, 2, 2, 0.3, 7);
                b.n = n.unwrap_or(b.n);
                b.dim = dim.unwrap_or(b.dim);
                b.classes = classes.unwrap_or(b.classes);
                b.margin = margin.unwrap_or(b.margin);
                b.seed = data_seed.unwrap_or(b.seed);
                DatasetDescriptor::SyntheticBlobs(b)
            }
            "synthetic_glyphs" => {
                stray(dim.is_some() || classes.is_some() || margin.is_some(), "dim/classes/margin")?;
                stray(images.is_some() || labels.is_some(), "images/labels")?;
                let mut g = GlyphsConfig::new(n.unwrap_or(11_000), data_seed.unwrap_or(0));
                g.amplitude = amplitude.unwrap_or(g.amplitude);
                g.noise = noise.unwrap_or(g.noise);
                g.crisp = crisp.unwrap_or(g.crisp);
                DatasetDescriptor::SyntheticGlyphs(g)
            }
            "idx_files" => {
                stray(
                    n.is_some() || dim.is_some() || classes.is_some() || margin.is_some() || data_seed.is_some(),
                    "n/dim/classes/margin/seed",
                )?;
                stray(amplitude.is_some() || noise.is_some() || crisp.is_some(), "amplitude/noise/crisp")?;
                match (images, labels) {
                    (Some(images), Some(labels)) => DatasetDescriptor::IdxFiles { images, labels },
                    _ => {
                        return Err(Error::Config {
                            line: 0,
                            message: "[dataset] idx_files needs both images and labels".into(),
                        })
                    }
                }
            }
            other => {
                return Err(Error::Config {
                    line: 0,
                    message: format!(
                        "[dataset] source '{other}' is not one of synthetic_blobs, synthetic_glyphs, idx_files"
                    ),
                })
            }
        };

        if let Some(v) = t.take("model", "hidden", |s| parse_list(s, parse_usize))? {
            c.hidden = v;
        }

        let tr = &mut c.train;
        if let Some(v) = t.take("train", "epochs", parse_usize)? {
            tr.epochs = v;
        }
        if let Some(v) = t.take("train", "batch_size", parse_usize)? {
            tr.batch_size = v;
        }
        if let Some(v) = t.take("train", "momentum", parse_real)? {
            tr.momentum = v;
        }
        if let Some(v) = t.take("train", "weight_decay", parse_real)? {
            tr.weight_decay = v;
        }
        let schedule = t.take("train", "lr_schedule", |s| Ok(s.to_string()))?;
        let lr = t.take("train", "lr", parse_real)?;
        let milestones = t.take("train", "milestones", |s| parse_list(s, parse_usize))?;
        let factor = t.take("train", "lr_factor", parse_real)?;
        let max_lr = t.take("train", "max_lr", parse_real)?;
        tr.lr_schedule = match schedule.as_deref().unwrap_or("multistep") {
            "multistep" => {
                if max_lr.is_some() {
                    return Err(Error::Config { line: 0, message: "[train] max_lr applies only to cyclic".into() });
                }
                LrSchedule::Multistep {
                    base: lr.unwrap_or(0.1),
                    milestones: milestones.unwrap_or_default(),
                    factor: factor.unwrap_or(0.1),
                }
            }
            "cyclic" => {
                if lr.is_some() || milestones.is_some() || factor.is_some() {
                    return Err(Error::Config {
                        line: 0,
                        message: "[train] lr/milestones/lr_factor apply only to multistep".into(),
                    });
                }
                LrSchedule::Cyclic { max_lr: max_lr.unwrap_or(0.2) }
            }
            other => {
                return Err(Error::Config {
                    line: 0,
                    message: format!("[train] lr_schedule '{other}' is not multistep or cyclic"),
                })
            }
        };

        let eps = t.take("attack", "epsilon", parse_real)?.unwrap_or(tr.attack.epsilon);
        let init = t.take("attack", "init", InitScheme::from_str)?.unwrap_or(tr.attack.init);
        let alpha = t.take("attack", "alpha", parse_real)?.unwrap_or(init.default_alpha(eps));
        tr.attack = AttackConfig {
            epsilon: eps,
            alpha,
            init,
            steps: t.take("attack", "steps", parse_usize)?.unwrap_or(tr.attack.steps),
            loss: t.take("attack", "loss", |s| parse_choice(s, &LOSSES))?.unwrap_or(tr.attack.loss),
        };
        if let Some(v) = t.take("attack", "pgi_mu", parse_real)? {
            tr.pgi_mu = v;
        }
        let eval_steps = t.take("attack", "eval_steps", parse_usize)?.unwrap_or(tr.co_monitor.eval_attack.steps);
        let eval_alpha = t.take("attack", "eval_alpha", parse_real)?.unwrap_or(eps / 4.0);
        tr.co_monitor.eval_attack = AttackConfig::pgd(eps, eval_alpha, eval_steps);
        if let Some(v) = t.take("attack", "collapse_fraction", parse_real)? {
            tr.co_monitor.collapse_fraction = v;
        }

        let r = &mut tr.regularizer;
        if let Some(v) = t.take("regularizer", "kind", |s| parse_choice(s, &REG_KINDS))? {
            r.kind = v;
        }
        if let Some(v) = t.take("regularizer", "lambda", parse_real)? {
            r.lambda = v;
        }
        if let Some(v) = t.take("regularizer", "placement", |s| parse_choice(s, &PLACEMENTS))? {
            r.placement = v;
        }
        if let Some(v) = t.take("regularizer", "norm_floor", parse_real)? {
            r.norm_floor = v;
        }

        let a = &mut tr.augment;
        if let Some(v) = t.take("augment", "kind", AugmentKind::from_str)? {
            a.kind = v;
        }
        if let Some(v) = t.take("augment", "cutout_size", |s| {
            if s == "auto" { Ok(None) } else { parse_usize(s).map(Some) }
        })? {
            a.cutout_size = v;
        }
        if let Some(v) = t.take("augment", "mixup_alpha", parse_real)? {
            a.mixup_alpha = v;
        }

        let wa_kind = t.take("wa", "kind", |s| Ok(s.to_string()))?;
        let tau = t.take("wa", "tau", parse_real)?;
        let threshold = t.take("wa", "threshold", parse_real)?;
        let gate = t.take("wa", "gate", |s| parse_choice(s, &GATES))?;
        tr.wa = match wa_kind.as_deref().unwrap_or("auto_ema") {
            "none" => WaConfig::None,
            "ema" => WaConfig::Ema { tau: tau.unwrap_or(DEFAULT_TAU) },
            "auto_ema" => WaConfig::AutoEma {
                tau: tau.unwrap_or(DEFAULT_TAU),
                threshold: threshold.unwrap_or(DEFAULT_THRESHOLD),
                gate: gate.unwrap_or_default(),
            },
            other => {
                return Err(Error::Config {
                    line: 0,
                    message: format!("[wa] kind '{other}' is not none, ema or auto_ema"),
                })
            }
        };
        if !matches!(tr.wa, WaConfig::AutoEma { .. }) && (threshold.is_some() || gate.is_some())
            || matches!(tr.wa, WaConfig::None) && tau.is_some()
        {
            return Err(Error::Config {
                line: 0,
                message: "[wa] tau/threshold/gate do not apply to this kind".into(),
            });
        }

        let e = &mut c.eval;
        let eval_eps = t.take("eval", "epsilon", parse_real)?.unwrap_or(eps);
        let names = t.take("eval", "attacks", |s| parse_list(s, |n| Ok(n.to_string())))?;
        e.attacks = match names {
            Some(ns) => ns.iter().map(|n| parse_attack_name(n, eval_eps)).collect::<Result<_>>()?,
            None => vec![parse_attack_name("pgd50", eval_eps)?, parse_attack_name("margin20", eval_eps)?],
        };
        if let Some(v) = t.take("eval", "samples", parse_usize)? {
            e.samples = v;
        }
        if let Some(v) = t.take("eval", "seed", parse_u64)? {
            e.seed = v;
        }
        e.landscape_eta = t.take("eval", "landscape_eta", parse_real)?.unwrap_or(eval_eps);
        if let Some(v) = t.take("eval", "landscape_grid", parse_usize)? {
            e.landscape_grid = v;
        }
        if let Some(v) = t.take("eval", "sweep_eps", |s| parse_list(s, parse_real))? {
            e.sweep_eps = v;
        }
        let sweep_attack = t.take("eval", "sweep_attack", |s| Ok(s.to_string()))?;
        e.sweep_template = parse_attack_name(sweep_attack.as_deref().unwrap_or("pgd10"), eval_eps)?;
        t.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config { line: 0, message: e.to_string() };
        self.train.validate().map_err(wrap)?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config {
                line: 0,
                message: format!("[model] hidden must list at least one positive width, got {:?}", self.hidden),
            });
        }
        for a in &self.eval.attacks {
            a.validate().map_err(wrap)?;
        }
        if self.eval.landscape_grid.is_multiple_of(2) {
            return Err(Error::Config {
                line: 0,
                message: format!("[eval] landscape_grid must be odd, got {}", self.eval.landscape_grid),
            });
        }
        if self.eval.sweep_eps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config { line: 0, message: "[eval] sweep_eps must be ascending".into() });
        }
        Ok(())
    }

    /// Attack name as written in the config for an evaluation attack.
    fn attack_name(a: &AttackConfig) -> String {
        match (a.loss, a.steps) {
            (BaseLoss::Margin, s) => format!("margin{s}"),
            (BaseLoss::CrossEntropy, 1) if a.init == InitScheme::Zero => "fgsm".into(),
            (BaseLoss::CrossEntropy, s) => format!("pgd{s}"),
        }
    }

    /// Fully resolved configuration text. Reals use the shortest exact
    /// representation so the output parses back bit-identically.
    pub fn to_text(&self) -> String {
        let tr = &self.train;
        let mut o = String::new();
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let reals = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        writeln!(o, "[run]").ok();
        writeln!(o, "output_dir = {}", self.output_dir.display()).ok();
        writeln!(o, "seed = {}", tr.seed).ok();
        writeln!(o, "precision = {}", name_of(&PRECISIONS, tr.precision)).ok();
        writeln!(o, "exec = {}", name_of(&EXECS, tr.exec)).ok();
        writeln!(o, "\n[dataset]").ok();
        match &self.dataset {
            DatasetDescriptor::SyntheticBlobs(b) => {
                writeln!(o, "source = synthetic_blobs\nn = {}\ndim = {}\nclasses = {}\nmargin = {:?}\nseed = {}", b.n, b.dim, b.classes, b.margin, b.seed).ok();
            }
            DatasetDescriptor::SyntheticGlyphs(g) => {
                writeln!(o, "source = synthetic_glyphs\nn = {}\nseed = {}\namplitude = {:?}\nnoise = {:?}\ncrisp = {}", g.n, g.seed, g.amplitude, g.noise, g.crisp).ok();
            }
            DatasetDescriptor::IdxFiles { images, labels } => {
                writeln!(o, "source = idx_files\nimages = {}\nlabels = {}", images.display(), labels.display()).ok();
            }
        }
        writeln!(o, "holdout = {}", tr.co_monitor.holdout).ok();
        writeln!(o, "\n[model]\nhidden = {}", list(&self.hidden)).ok();
        writeln!(o, "\n[train]\nepochs = {}\nbatch_size = {}\nmomentum = {:?}\nweight_decay = {:?}", tr.epochs, tr.batch_size, tr.momentum, tr.weight_decay).ok();
        match &tr.lr_schedule {
            LrSchedule::Multistep { base, milestones, factor } => {
                writeln!(o, "lr_schedule = multistep\nlr = {base:?}\nmilestones = {}\nlr_factor = {factor:?}", list(milestones)).ok();
            }
            LrSchedule::Cyclic { max_lr } => {
                writeln!(o, "lr_schedule = cyclic\nmax_lr = {max_lr:?}").ok();
            }
        }
        let a = &tr.attack;
        writeln!(
            o,
            "\n[attack]\nepsilon = {:?}\nalpha = {:?}\nsteps = {}\ninit = {}\nloss = {}\npgi_mu = {:?}\neval_steps = {}\neval_alpha = {:?}\ncollapse_fraction = {:?}",
            a.epsilon,
            a.alpha,
            a.steps,
            a.init.name(),
            name_of(&LOSSES, a.loss),
            tr.pgi_mu,
            tr.co_monitor.eval_attack.steps,
            tr.co_monitor.eval_attack.alpha,
            tr.co_monitor.collapse_fraction
        )
        .ok();
        let r = &tr.regularizer;
        writeln!(
            o,
            "\n[regularizer]\nkind = {}\nlambda = {:?}\nplacement = {}\nnorm_floor = {:?}",
            name_of(&REG_KINDS, r.kind),
            r.lambda,
            name_of(&PLACEMENTS, r.placement),
            r.norm_floor
        )
        .ok();
        let g = &tr.augment;
        let size = g.cutout_size.map_or("auto".to_string(), |s| s.to_string());
        writeln!(o, "\n[augment]\nkind = {}\ncutout_size = {size}\nmixup_alpha = {:?}", g.kind.name(), g.mixup_alpha).ok();
        match tr.wa {
            WaConfig::None => writeln!(o, "\n[wa]\nkind = none").ok(),
            WaConfig::Ema { tau } => writeln!(o, "\n[wa]\nkind = ema\ntau = {tau:?}").ok(),
            WaConfig::AutoEma { tau, threshold, gate } => writeln!(
                o,
                "\n[wa]\nkind = auto_ema\ntau = {tau:?}\nthreshold = {threshold:?}\ngate = {}",
                name_of(&GATES, gate)
            )
            .ok(),
        };
        let e = &self.eval;
        let eval_eps = e.attacks.first().map_or(a.epsilon, |x| x.epsilon);
        let names: Vec<String> = e.attacks.iter().map(Self::attack_name).collect();
        writeln!(
            o,
            "\n[eval]\nepsilon = {eval_eps:?}\nattacks = {}\nsamples = {}\nseed = {}\nlandscape_eta = {:?}\nlandscape_grid = {}\nsweep_eps = {}\nsweep_attack = {}",
            names.join(","),
            e.samples,
            e.seed,
            e.landscape_eta,
            e.landscape_grid,
            reals(&e.sweep_eps),
            Self::attack_name(&e.sweep_template)
        )
        .ok();
        o
    }

    /// Loads and parses a configuration file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
