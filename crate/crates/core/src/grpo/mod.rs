//! Group-relative policy optimization: advantages, the clipped surrogate,
//! the per-token KL estimator and the full objective over one group of
//! sampled responses.

pub mod toy;

use serde::{Deserialize, Serialize};

pub use toy::{toy_train, CurvePoint, ToyEnv, ToyPolicy, TrainOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("group of size {size} has no relative advantage (need at least 2)")]
    DegenerateGroup { size: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub beta: f64,
    pub std_epsilon: f64,
    pub group_size: usize,
    pub max_response_len: usize,
    pub reward_correct: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.04,
            std_epsilon: 1e-8,
            group_size: 5,
            max_response_len: 4096,
            reward_correct: 2.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(GrpoError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(GrpoError::InvalidConfig(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.group_size < 2 {
            return Err(GrpoError::InvalidConfig(format!("group_size must be at least 2, got {}", self.group_size)));
        }
        Ok(())
    }
}

/// One sampled response with per-token log-probabilities under the current,
/// sampling and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub token_count: usize,
    pub reward: f64,
    pub logprob_new: Vec<f64>,
    pub logprob_old: Vec<f64>,
    pub logprob_ref: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub query_id: String,
    pub responses: Vec<Response>,
}

impl GroupBatch {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.responses.len() < 2 {
            return Err(GrpoError::DegenerateGroup {
                size: self.responses.len(),
            });
        }
        for (i, r) in self.responses.iter().enumerate() {
            if r.token_count == 0 {
                return Err(GrpoError::InvalidBatch(format!("response {i} has no tokens")));
            }
            if !r.reward.is_finite() {
                return Err(GrpoError::InvalidBatch(format!("response {i} has a non-finite reward")));
            }
            for (name, lps) in [("new", &r.logprob_new), ("old", &r.logprob_old), ("ref", &r.logprob_ref)] {
                if lps.len() != r.token_count {
                    return Err(GrpoError::InvalidBatch(format!(
                        "response {i}: {} logprob_{name} values for {} tokens",
                        lps.len(),
                        r.token_count
                    )));
                }
                if let Some(bad) = lps.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
                    return Err(GrpoError::InvalidBatch(format!("response {i}: logprob_{name} value {bad} is not a finite log-probability")));
                }
            }
        }
        Ok(())
    }
}

/// Binary outcome reward: full credit only for a correct answer that stays
/// within the response length limit.
pub fn reward(answer_correct: bool, response_len: usize, config: &GrpoConfig) -> f64 {
    if answer_correct && response_len <= config.max_response_len {
        config.reward_correct
    } else {
        0.0
    }
}

/// Standardize rewards within the group using the population standard
/// deviation. A group whose spread is below `std_epsilon` carries no signal
/// and gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::DegenerateGroup { size: g });
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < std_epsilon {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn ratio(logprob_new: f64, logprob_old: f64) -> f64 {
    (logprob_new - logprob_old).exp()
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(logprob_new: f64, logprob_old: f64, advantage: f64, epsilon: f64) -> f64 {
    let r = ratio(logprob_new, logprob_old);
    let clipped = r.clamp(1.0 - epsilon, 1.0 + epsilon);
    (r * advantage).min(clipped * advantage)
}

/// Whether the clipped branch is strictly smaller, i.e. the token's gradient
/// is cut off.
pub fn clip_binds(logprob_new: f64, logprob_old: f64, advantage: f64, epsilon: f64) -> bool {
    let r = ratio(logprob_new, logprob_old);
    r.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage < r * advantage
}

/// Per-token KL estimator `exp(d) - d - 1`, `d = logprob_ref - logprob_new`.
pub fn kl_penalty(logprob_new: f64, logprob_ref: f64) -> f64 {
    let d = logprob_ref - logprob_new;
    // exp_m1 keeps precision when d is tiny.
    d.exp_m1() - d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub objective: f64,
    pub advantages: Vec<f64>,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub token_count: usize,
}

/// `(1/G) sum_i (1/|o_i|) sum_t [surrogate(i, t) - beta * kl(i, t)]`.
/// Diagnostics are plain averages over all tokens of the group.
pub fn grpo_objective(batch: &GroupBatch, config: &GrpoConfig) -> Result<ObjectiveReport, GrpoError> {
    batch.validate()?;
    let rewards: Vec<f64> = batch.responses.iter().map(|r| r.reward).collect();
    let advantages = group_advantages(&rewards, config.std_epsilon)?;
    let mut total = 0.0;
    let (mut ratio_sum, mut kl_sum, mut clipped, mut tokens) = (0.0, 0.0, 0usize, 0usize);
    for (resp, &adv) in batch.responses.iter().zip(&advantages) {
        let mut per_response = 0.0;
        for t in 0..resp.token_count {
            let (new, old, reference) = (resp.logprob_new[t], resp.logprob_old[t], resp.logprob_ref[t]);
            let kl = kl_penalty(new, reference);
            per_response += clipped_surrogate(new, old, adv, config.epsilon) - config.beta * kl;
            ratio_sum += ratio(new, old);
            kl_sum += kl;
            clipped += clip_binds(new, old, adv, config.epsilon) as usize;
            tokens += 1;
        }
        total += per_response / resp.token_count as f64;
    }
    Ok(ObjectiveReport {
        objective: total / batch.responses.len() as f64,
        advantages,
        mean_ratio: ratio_sum / tokens as f64,
        clip_fraction: clipped as f64 / tokens as f64,
        mean_kl: kl_sum / tokens as f64,
        token_count: tokens,
    })
}

/// Derivative of one token's objective term with respect to `logprob_new`.
pub fn token_term_grad(logprob_new: f64, logprob_old: f64, logprob_ref: f64, advantage: f64, config: &GrpoConfig) -> f64 {
    let r = ratio(logprob_new, logprob_old);
    let surrogate = if clip_binds(logprob_new, logprob_old, advantage, config.epsilon) {
        0.0
    } else {
        r * advantage
    };
    // d/dx of exp(ref - x) - (ref - x) - 1 is 1 - exp(ref - x).
    surrogate - config.beta * (1.0 - (logprob_ref - logprob_new).exp())
}
