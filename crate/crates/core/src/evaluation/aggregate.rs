use serde::{Deserialize, Serialize};

use crate::class::{argmax_with_priority, Class, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    /// Vote with each frame's argmax.
    Majority,
    /// Argmax of the mean probability vector.
    MeanProb,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 2] = [AggregationMethod::Majority, AggregationMethod::MeanProb];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMethod::Majority => "majority",
            AggregationMethod::MeanProb => "mean_prob",
        }
    }
}

impl std::fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(AggregationMethod::Majority),
            "mean_prob" | "mean" => Ok(AggregationMethod::MeanProb),
            other => Err(Error::Validation(format!("unknown aggregation method {other:?}"))),
        }
    }
}

pub fn mean_probabilities(frame_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    check(frame_probs)?;
    let mut mean = vec![0.0; NUM_CLASSES];
    for p in frame_probs {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = frame_probs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

fn check(frame_probs: &[Vec<f64>]) -> Result<()> {
    if frame_probs.is_empty() {
        return Err(Error::Validation("cannot aggregate a video with no frames".into()));
    }
    if let Some(bad) = frame_probs.iter().find(|p| p.len() != NUM_CLASSES) {
        return Err(Error::Validation(format!("expected {NUM_CLASSES} class scores, got {}", bad.len())));
    }
    Ok(())
}

/// Video-level class from per-frame probabilities. Ties go to the class
/// earlier in class order (covid19, then pneumonia, then healthy).
pub fn aggregate_video(frame_probs: &[Vec<f64>], method: AggregationMethod) -> Result<Class> {
    check(frame_probs)?;
    let scores = match method {
        AggregationMethod::Majority => {
            let mut votes = vec![0.0; NUM_CLASSES];
            for p in frame_probs {
                votes[argmax_with_priority(p)] += 1.0;
            }
            votes
        }
        AggregationMethod::MeanProb => mean_probabilities(frame_probs)?,
    };
    Ok(Class::from_index(argmax_with_priority(&scores)).expect("index within class order"))
}
