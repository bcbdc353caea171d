use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transient::StabilityIndices;

/// Rotor-angle instability: the largest separation exceeds π.
pub const TSI_UNSTABLE_BELOW: f64 = 0.0;
/// Voltage instability threshold on the severity integral, p.u.·s.
pub const V_SEVERITY_UNSTABLE_ABOVE: f64 = 0.5;

/// Ground-truth class of one index profile. Angle instability counts as
/// coupled whether or not the voltage threshold is also crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    VoltageOnly,
    Coupled,
}

impl StabilityClass {
    pub fn classify(ix: &StabilityIndices) -> Self {
        if ix.tsi < TSI_UNSTABLE_BELOW {
            Self::Coupled
        } else if ix.v_severity > V_SEVERITY_UNSTABLE_ABOVE {
            Self::VoltageOnly
        } else {
            Self::Stable
        }
    }

    pub fn is_unstable(self) -> bool {
        self != Self::Stable
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stable => "stable",
            Self::VoltageOnly => "voltage_only",
            Self::Coupled => "coupled",
        }
    }

    /// Most frequent class; ties go to the more severe one.
    pub fn majority(classes: impl IntoIterator<Item = Self>) -> Self {
        let mut counts = [0usize; 3];
        for c in classes {
            counts[c as usize] += 1;
        }
        [Self::Stable, Self::VoltageOnly, Self::Coupled]
            .into_iter()
            .max_by_key(|c| (counts[*c as usize], *c))
            .expect("three classes")
    }
}

/// Binary confusion counts with precision and recall; an empty denominator
/// leaves the metric `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

impl StageMetrics {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision: ratio(tp, fp),
            recall: ratio(tp, fn_),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Stage 1: unstable (positive) vs stable over every scenario. Stage 2:
/// coupled (positive) vs voltage-only over scenarios that are unstable both
/// in truth and in prediction — the second link only runs once the first
/// has flagged a scenario, and stage-1 misses are already counted there.
pub fn evaluate_predictions(
    predicted: &[StabilityClass],
    truth: &[StabilityClass],
) -> Result<(StageMetrics, StageMetrics)> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} ground-truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    let pairs = || predicted.iter().zip(truth);
    let stage1 = StageMetrics::from_pairs(pairs().map(|(p, t)| (p.is_unstable(), t.is_unstable())));
    let stage2 = StageMetrics::from_pairs(
        pairs()
            .filter(|(p, t)| p.is_unstable() && t.is_unstable())
            .map(|(p, t)| (*p == StabilityClass::Coupled, *t == StabilityClass::Coupled)),
    );
    Ok((stage1, stage2))
}
