//! The schedule/nonlinearity/topology comparison on synthetic data.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::ScheduleKind;
use crate::model::{evaluate, resolve_loopy, train, EvalReport, LoopySpec, ModelConfig, PoseModel, TauKind, TrainConfig};
use crate::synth::FigureSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    SerialSoftmax,
    SerialRelu,
    Flooding1,
    Flooding2,
    Flooding2Loopy,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::SerialSoftmax, Variant::SerialRelu, Variant::Flooding1, Variant::Flooding2, Variant::Flooding2Loopy];

    pub fn label(self) -> &'static str {
        match self {
            Variant::SerialSoftmax => "serial tree, scaled softmax",
            Variant::SerialRelu => "serial tree, ReLU",
            Variant::Flooding1 => "flooding 1 iteration, tree",
            Variant::Flooding2 => "flooding 2 iterations, tree",
            Variant::Flooding2Loopy => "flooding 2 iterations, loopy",
        }
    }

    /// `base` with this variant's schedule, nonlinearity and topology applied.
    pub fn configure(self, base: &ModelConfig, train_set: &[FigureSample], loopy: LoopySpec) -> Result<ModelConfig> {
        let mut c = base.clone();
        let (schedule, iterations, tau) = match self {
            Variant::SerialSoftmax => (ScheduleKind::Serial, 1, TauKind::ScaledSoftmax),
            Variant::SerialRelu => (ScheduleKind::Serial, 1, TauKind::Relu),
            Variant::Flooding1 => (ScheduleKind::Flooding, 1, TauKind::ScaledSoftmax),
            Variant::Flooding2 | Variant::Flooding2Loopy => (ScheduleKind::Flooding, 2, TauKind::ScaledSoftmax),
        };
        c.schedule = schedule;
        c.iterations = iterations;
        c.tau = tau;
        c.extra_edges.clear();
        if self == Variant::Flooding2Loopy {
            resolve_loopy(&mut c, train_set, loopy)?;
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub seed: u64,
    pub final_train_loss: f64,
    pub report: EvalReport,
}

/// Trains one variant from a seed-derived initialization and evaluates it on `test`.
pub fn run_variant(
    variant: Variant,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    loopy: LoopySpec,
    train_set: &[FigureSample],
    test_set: &[FigureSample],
) -> Result<VariantResult> {
    let model = PoseModel::new(variant.configure(base, train_set, loopy)?)?;
    let mut params = model.init_params(train_cfg.seed);
    let log = train(&model, &mut params, train_set, None, train_cfg, |_, _| Ok(()))?;
    Ok(VariantResult {
        variant,
        seed: train_cfg.seed,
        final_train_loss: log.last().map_or(f64::NAN, |m| m.loss),
        report: evaluate(&model, &params, test_set)?,
    })
}
