//! Teacher/student bookkeeping for semi-supervised training: pseudo-label
//! filtering, EMA teacher updates and the step schedules. No network code
//! lives here; parameters are opaque vectors.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};
use crate::reconstruction::nms;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self { conf_threshold: 0.9, nms_iou: 0.5 }
    }
}

/// NMS, then keep boxes scoring at least `conf_threshold`. Scores are dropped.
pub fn filter_pseudo_labels<T: Scalar>(
    teacher_dets: &[Detection<T>],
    cfg: &PseudoLabelConfig,
) -> Result<Vec<BoundingBox<T>>> {
    let thr = T::lit(cfg.conf_threshold);
    Ok(nms(teacher_dets, T::lit(cfg.nms_iou))?
        .into_iter()
        .filter(|d| d.score() >= thr)
        .map(|d| d.bbox)
        .collect())
}

/// Flat model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(pub Vec<T>);

/// `decay * teacher + (1 - decay) * student`, elementwise.
pub fn ema_update<T: Scalar>(
    teacher: &ParamVector<T>,
    student: &ParamVector<T>,
    decay: T,
) -> Result<ParamVector<T>> {
    if teacher.0.len() != student.0.len() {
        return Err(Error::Shape { left: teacher.0.len(), right: student.0.len() });
    }
    if !(decay >= T::zero() && decay <= T::one()) {
        return Err(Error::Invalid(format!("ema decay {decay} outside [0, 1]")));
    }
    Ok(ParamVector(
        teacher
            .0
            .iter()
            .zip(&student.0)
            .map(|(&t, &s)| decay * t + (T::one() - decay) * s)
            .collect(),
    ))
}

/// Training schedule. Momentum and weight decay are carried for completeness;
/// nothing here optimizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub total_steps: u64,
    pub lr0: f64,
    pub lr_drops: Vec<u64>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ratio0: f64,
    pub ratio_decay_span: u64,
    pub batch_size: usize,
    pub ema_decay: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            lr0: 0.001,
            lr_drops: vec![60_000, 80_000],
            lr_drop_factor: 10.0,
            momentum: 0.9,
            weight_decay: 0.0001,
            ratio0: 0.2,
            ratio_decay_span: 5_500,
            batch_size: 10,
            ema_decay: 0.999,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let increasing = self.lr_drops.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.lr_drops.last().is_some_and(|&d| d >= self.total_steps) {
            return Err(Error::Invalid(format!(
                "lr drops {:?} must increase strictly and stay below {}",
                self.lr_drops, self.total_steps
            )));
        }
        if !(self.ratio0 > 0.0 && self.ratio0 < 1.0) {
            return Err(Error::Invalid(format!("ratio0 {} must be in (0, 1)", self.ratio0)));
        }
        if self.ratio_decay_span >= self.total_steps {
            return Err(Error::Invalid(format!(
                "ratio decay span {} must be below total steps {}",
                self.ratio_decay_span, self.total_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Invalid(format!("ema decay {} outside [0, 1]", self.ema_decay)));
        }
        if self.batch_size == 0 || self.lr0 <= 0.0 || self.lr_drop_factor <= 0.0 {
            return Err(Error::Invalid("batch size, lr0 and drop factor must be positive".into()));
        }
        Ok(())
    }

    fn check_step(&self, step: u64) -> Result<()> {
        if step >= self.total_steps {
            return Err(Error::OutOfRange { step, total: self.total_steps });
        }
        Ok(())
    }

    /// `lr0` divided by the drop factor once per drop at or before `step`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        self.check_step(step)?;
        let drops = self.lr_drops.iter().filter(|&&d| d <= step).count() as i32;
        Ok(self.lr0 / self.lr_drop_factor.powi(drops))
    }

    /// Constant `ratio0`, then a linear ramp reaching 0 on the final step.
    pub fn ratio_at(&self, step: u64) -> Result<f64> {
        self.check_step(step)?;
        let start = self.total_steps - self.ratio_decay_span;
        let last = self.total_steps - 1;
        if step < start {
            return Ok(self.ratio0);
        }
        if last == start {
            return Ok(0.0);
        }
        Ok(self.ratio0 * ((last - step) as f64 / (last - start) as f64))
    }
}

/// Indices into the labeled and unlabeled pools for one batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Labeled slot count for a batch. A positive ratio gets
/// `max(1, round(batch * ratio))` labeled slots; ratio 0 means the unlabeled
/// stream is off and the whole batch is labeled.
pub fn labeled_slots(ratio: f64, batch_size: usize) -> usize {
    if ratio <= 0.0 {
        batch_size
    } else {
        ((batch_size as f64 * ratio).round() as usize).clamp(1, batch_size)
    }
}

/// Uniform sampling without replacement from each pool, reproducible from `seed`.
pub fn compose_batch(
    labeled_pool: usize,
    unlabeled_pool: usize,
    ratio: f64,
    batch_size: usize,
    seed: u64,
) -> Result<BatchManifest> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Invalid(format!("sampling ratio {ratio} outside [0, 1]")));
    }
    let n_lab = labeled_slots(ratio, batch_size);
    let n_unl = batch_size - n_lab;
    if labeled_pool < n_lab {
        return Err(Error::PoolExhausted { pool: "labeled", available: labeled_pool, needed: n_lab });
    }
    if unlabeled_pool < n_unl {
        return Err(Error::PoolExhausted { pool: "unlabeled", available: unlabeled_pool, needed: n_unl });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(BatchManifest {
        labeled: sample(&mut rng, labeled_pool, n_lab).into_vec(),
        unlabeled: sample(&mut rng, unlabeled_pool, n_unl).into_vec(),
    })
}
