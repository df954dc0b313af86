use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// "Which of A and B looks more like the reference?" with vote counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeComparison {
    #[serde(rename = "ref")]
    pub reference_id: String,
    #[serde(rename = "a")]
    pub option_a_id: String,
    #[serde(rename = "b")]
    pub option_b_id: String,
    pub votes_a: u32,
    pub votes_b: u32,
}

impl RelativeComparison {
    pub fn validate(&self) -> Result<()> {
        if self.votes_a + self.votes_b == 0 {
            return Err(Error::invalid(format!("comparison for {} has no votes", self.reference_id)));
        }
        if self.reference_id == self.option_a_id || self.reference_id == self.option_b_id || self.option_a_id == self.option_b_id {
            return Err(Error::invalid(format!(
                "comparison ids must be distinct: {} / {} / {}",
                self.reference_id, self.option_a_id, self.option_b_id
            )));
        }
        Ok(())
    }

    /// `None` on a tied vote.
    pub fn majority(&self) -> Option<Choice> {
        match self.votes_a.cmp(&self.votes_b) {
            std::cmp::Ordering::Greater => Some(Choice::A),
            std::cmp::Ordering::Less => Some(Choice::B),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn votes_for(&self, choice: Choice) -> u32 {
        match choice {
            Choice::A => self.votes_a,
            Choice::B => self.votes_b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn other(self) -> Self {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Raw,
    Majority,
}

pub fn distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "distance",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    Ok(crate::training::squared_distance(a, b).sqrt())
}

/// s = 1 / (1 + 𝒟).
pub fn similarity(distance: f64) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {distance}")));
    }
    Ok(1.0 / (1.0 + distance))
}

/// ℙ(x) = s_x / (s_x + s_other).
pub fn choice_probability(s_chosen: f64, s_other: f64) -> Result<f64> {
    if !(s_chosen >= 0.0 && s_other >= 0.0) || s_chosen + s_other == 0.0 {
        return Err(Error::invalid(format!(
            "similarities must be non-negative and not both zero: {s_chosen}, {s_other}"
        )));
    }
    Ok(s_chosen / (s_chosen + s_other))
}

/// Raw: every vote is a trial. Majority: one trial per comparison against
/// its majority; tied comparisons are left out.
pub fn precision(comparisons: &[RelativeComparison], choices: &[Choice], criterion: Criterion) -> Result<f64> {
    if comparisons.is_empty() {
        return Err(Error::invalid("precision of an empty comparison set"));
    }
    if comparisons.len() != choices.len() {
        return Err(Error::invalid("one model choice per comparison required"));
    }
    let (mut hits, mut trials) = (0u64, 0u64);
    for (c, &choice) in comparisons.iter().zip(choices) {
        match criterion {
            Criterion::Raw => {
                hits += c.votes_for(choice) as u64;
                trials += (c.votes_a + c.votes_b) as u64;
            }
            Criterion::Majority => {
                if let Some(m) = c.majority() {
                    hits += (m == choice) as u64;
                    trials += 1;
                }
            }
        }
    }
    if trials == 0 {
        return Err(Error::Degenerate("no comparisons with a majority".into()));
    }
    Ok(hits as f64 / trials as f64)
}

/// 𝒬 = 2^(−mean log₂ ℙ).
pub fn perplexity(probabilities: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::invalid("perplexity of an empty set"));
    }
    let mut sum = 0.0;
    for &p in probabilities {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("probability {p} outside (0,1]")));
        }
        sum += p.log2();
    }
    Ok((-sum / probabilities.len() as f64).exp2())
}
