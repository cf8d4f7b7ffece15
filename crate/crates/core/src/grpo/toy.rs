//! A desk-scale policy for exercising the objective end to end.
//!
//! Each query offers a handful of answer alternatives, some correct, some
//! too long to earn reward. The policy is an independent softmax per query
//! and a response is a short sequence of draws from it (one draw in the
//! training environment), so log-probabilities and their gradients are exact.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{group_advantages, grpo_objective, reward, token_term_grad, GroupBatch, GrpoConfig, GrpoError, Response};
use crate::rng::{rng_from, StageRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternative {
    pub correct: bool,
    /// Length of the response this alternative stands for, in tokens.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEnv {
    pub queries: Vec<Vec<Alternative>>,
}

impl ToyEnv {
    /// `n_queries` queries with four alternatives each: a short correct
    /// answer, a short wrong one, and two verbose answers past the length
    /// limit, one of them correct. A uniform policy earns an expected reward
    /// of a quarter of full credit and is overlong half of the time.
    pub fn standard(n_queries: usize, max_response_len: usize) -> Self {
        let queries = (0..n_queries)
            .map(|q| {
                let short = 120 + 40 * q;
                vec![
                    Alternative { correct: true, length: short },
                    Alternative { correct: false, length: short + 30 },
                    Alternative { correct: true, length: max_response_len + 900 + q },
                    Alternative { correct: false, length: max_response_len + 1900 + q },
                ]
            })
            .collect();
        Self { queries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl ToyPolicy {
    pub fn uniform(env: &ToyEnv) -> Self {
        Self {
            logits: env.queries.iter().map(|alts| vec![0.0; alts.len()]).collect(),
        }
    }

    pub fn log_probs(&self, query: usize) -> Vec<f64> {
        let z = &self.logits[query];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        z.iter().map(|x| x - lse).collect()
    }

    pub fn probs(&self, query: usize) -> Vec<f64> {
        self.log_probs(query).into_iter().map(f64::exp).collect()
    }

    fn sample(&self, query: usize, rng: &mut StageRng) -> usize {
        let p = self.probs(query);
        let mut u: f64 = rng.random();
        for (k, pk) in p.iter().enumerate() {
            if u < *pk {
                return k;
            }
            u -= pk;
        }
        p.len() - 1
    }

    /// Exact expected reward and overlength probability, averaged over queries.
    pub fn expectations(&self, env: &ToyEnv, config: &GrpoConfig) -> (f64, f64) {
        let (mut r, mut over) = (0.0, 0.0);
        for (q, alts) in env.queries.iter().enumerate() {
            for (p, alt) in self.probs(q).iter().zip(alts) {
                r += p * reward(alt.correct, alt.length, config);
                over += p * (alt.length > config.max_response_len) as u8 as f64;
            }
        }
        let n = env.queries.len() as f64;
        (r / n, over / n)
    }
}

/// Responses sampled for one query. Each response is a sequence of token
/// choices; its reward is fixed at sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledGroup {
    pub query: usize,
    pub responses: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
}

fn group_batch(group: &SampledGroup, policy: &ToyPolicy, old: &ToyPolicy, reference: &ToyPolicy) -> GroupBatch {
    let (new_lp, old_lp, ref_lp) = (policy.log_probs(group.query), old.log_probs(group.query), reference.log_probs(group.query));
    GroupBatch {
        query_id: format!("q{}", group.query),
        responses: group
            .responses
            .iter()
            .zip(&group.rewards)
            .map(|(tokens, &reward)| Response {
                token_count: tokens.len(),
                reward,
                logprob_new: tokens.iter().map(|&k| new_lp[k]).collect(),
                logprob_old: tokens.iter().map(|&k| old_lp[k]).collect(),
                logprob_ref: tokens.iter().map(|&k| ref_lp[k]).collect(),
            })
            .collect(),
    }
}

/// Mean over groups of the group objective, with mean clip fraction and KL.
pub fn toy_objective(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[SampledGroup],
    config: &GrpoConfig,
) -> Result<(f64, f64, f64), GrpoError> {
    let (mut obj, mut clip, mut kl) = (0.0, 0.0, 0.0);
    for g in groups {
        let rep = grpo_objective(&group_batch(g, policy, old, reference), config)?;
        obj += rep.objective;
        clip += rep.clip_fraction;
        kl += rep.mean_kl;
    }
    let n = groups.len() as f64;
    Ok((obj / n, clip / n, kl / n))
}

/// Analytic gradient of [`toy_objective`] with respect to every logit.
///
/// For a softmax, `d log p_a / d z_k = [k = a] - p_k`; the chain rule through
/// each token term supplies the outer factor.
pub fn toy_gradient(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[SampledGroup],
    config: &GrpoConfig,
) -> Result<Vec<Vec<f64>>, GrpoError> {
    let mut grad: Vec<Vec<f64>> = policy.logits.iter().map(|z| vec![0.0; z.len()]).collect();
    let n_groups = groups.len() as f64;
    for g in groups {
        group_batch(g, policy, old, reference).validate()?;
        let adv = group_advantages(&g.rewards, config.std_epsilon)?;
        let (new_lp, old_lp, ref_lp) = (policy.log_probs(g.query), old.log_probs(g.query), reference.log_probs(g.query));
        let p: Vec<f64> = new_lp.iter().map(|x| x.exp()).collect();
        let scale = 1.0 / (n_groups * g.responses.len() as f64);
        for (tokens, &a) in g.responses.iter().zip(&adv) {
            let w = scale / tokens.len() as f64;
            for &t in tokens {
                let outer = w * token_term_grad(new_lp[t], old_lp[t], ref_lp[t], a, config);
                for (k, gk) in grad[g.query].iter_mut().enumerate() {
                    *gk += outer * ((k == t) as u8 as f64 - p[k]);
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Gradient steps taken on each sampled batch before resampling.
    pub inner_steps: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 1.0,
            inner_steps: 4,
            seed: 0,
        }
    }
}

/// Statistics of one iteration's sampled responses and the last inner step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_len: f64,
    pub overlength_frac: f64,
    pub clip_frac: f64,
    pub mean_kl: f64,
}

pub const CURVE_HEADER: &str = "iter,mean_reward,mean_len,overlength_frac,clip_frac,mean_kl";

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for c in curve {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.iter, c.mean_reward, c.mean_len, c.overlength_frac, c.clip_frac, c.mean_kl
        ));
    }
    out
}

/// Train from a uniform policy, which also serves as the reference. Every
/// iteration samples one group per query from the current policy, then takes
/// `inner_steps` ascent steps on the objective with that policy frozen as
/// the sampling policy.
pub fn toy_train(env: &ToyEnv, config: &GrpoConfig, options: &TrainOptions) -> Result<(Vec<CurvePoint>, ToyPolicy), GrpoError> {
    config.validate()?;
    let reference = ToyPolicy::uniform(env);
    let mut policy = reference.clone();
    let mut rng = rng_from(options.seed);
    let mut curve = Vec::with_capacity(options.iterations);
    for iter in 0..options.iterations {
        let old = policy.clone();
        let mut groups = Vec::with_capacity(env.queries.len());
        let (mut r_sum, mut len_sum, mut over) = (0.0, 0.0, 0usize);
        for (q, alts) in env.queries.iter().enumerate() {
            let picks: Vec<usize> = (0..config.group_size).map(|_| old.sample(q, &mut rng)).collect();
            let rewards: Vec<f64> = picks
                .iter()
                .map(|&k| reward(alts[k].correct, alts[k].length, config))
                .collect();
            for &k in &picks {
                len_sum += alts[k].length as f64;
                over += (alts[k].length > config.max_response_len) as usize;
            }
            r_sum += rewards.iter().sum::<f64>();
            groups.push(SampledGroup {
                query: q,
                responses: picks.into_iter().map(|k| vec![k]).collect(),
                rewards,
            });
        }
        let (mut clip, mut kl) = (0.0, 0.0);
        for _ in 0..options.inner_steps {
            let grad = toy_gradient(&policy, &old, &reference, &groups, config)?;
            if grad.iter().flatten().any(|g| !g.is_finite()) {
                return Err(GrpoError::NonFiniteGradient { iteration: iter });
            }
            for (z, g) in policy.logits.iter_mut().zip(&grad) {
                for (zk, gk) in z.iter_mut().zip(g) {
                    *zk += options.learning_rate * gk;
                }
            }
            if policy.logits.iter().flatten().any(|z| !z.is_finite()) {
                return Err(GrpoError::NonFiniteGradient { iteration: iter });
            }
            let (_, c, k) = toy_objective(&policy, &old, &reference, &groups, config)?;
            (clip, kl) = (c, k);
        }
        let n = (env.queries.len() * config.group_size) as f64;
        curve.push(CurvePoint {
            iter,
            mean_reward: r_sum / n,
            mean_len: len_sum / n,
            overlength_frac: over as f64 / n,
            clip_frac: clip,
            mean_kl: kl,
        });
    }
    Ok((curve, policy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_start_expectations() {
        let cfg = GrpoConfig::default();
        let env = ToyEnv::standard(4, cfg.max_response_len);
        let (r, over) = ToyPolicy::uniform(&env).expectations(&env, &cfg);
        assert!((r - 0.5).abs() < 1e-12);
        assert!((over - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curve_csv_shape() {
        let cfg = GrpoConfig::default();
        let env = ToyEnv::standard(2, cfg.max_response_len);
        let opts = TrainOptions { iterations: 3, ..TrainOptions::default() };
        let (curve, _) = toy_train(&env, &cfg, &opts).unwrap();
        let csv = curve_csv(&curve);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CURVE_HEADER);
        assert!(lines[3].starts_with("2,"));
    }

    #[test]
    fn same_seed_same_curve() {
        let cfg = GrpoConfig::default();
        let env = ToyEnv::standard(3, cfg.max_response_len);
        let opts = TrainOptions { iterations: 20, seed: 9, ..TrainOptions::default() };
        assert_eq!(toy_train(&env, &cfg, &opts).unwrap(), toy_train(&env, &cfg, &opts).unwrap());
    }

    #[test]
    fn divergent_step_is_reported() {
        let cfg = GrpoConfig::default();
        let env = ToyEnv::standard(2, cfg.max_response_len);
        let opts = TrainOptions { iterations: 50, learning_rate: f64::INFINITY, ..TrainOptions::default() };
        match toy_train(&env, &cfg, &opts) {
            Err(GrpoError::NonFiniteGradient { iteration }) => assert!(iteration < 50),
            other => panic!("{other:?}"),
        }
    }
}
