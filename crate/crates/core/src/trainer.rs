//! Toy policy and its two-stage optimization: token-level cross-entropy on
//! aggregated traces, then group-relative policy optimization with a clipped
//! ratio and an exact KL penalty to a frozen reference.
//!
//! The policy reads a feature vector derived from the query tables and scores
//! the eight semantic causes; the answer distribution over display labels is
//! obtained through the query's catalog, so the policy never sees label
//! positions. Trajectories are action sequences over causes; the minimal
//! policy emits a single `\boxed{..}` token, but every sum below is written
//! for sequences of any length.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{CauseId, RootCauseCatalog};
use crate::error::{RcaError, Result};
use crate::oracle;
use crate::promptkit::{answer_token, parse_answer, parse_query, vocab_hash, DatasetRecord, RenderedQuery, Trajectory};
use crate::seeding::derive_seed;

pub const NUM_ACTIONS: usize = 8;
/// Per-cause scaled margin followed by per-cause fired flag.
pub const FEATURE_DIM: usize = 2 * NUM_ACTIONS;
const FEATURE_CLIP: f64 = 5.0;
const FEATURE_VERSION: &str = "margins+flags/v1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Scale mapping each rule margin to roughly unit range.
pub fn feature_scale(cause: CauseId) -> f64 {
    match cause {
        CauseId::SpeedGt40 => 10.0,
        CauseId::ExcessDowntilt => 0.25,
        CauseId::OvershootGt1km => 250.0,
        CauseId::NoncolocatedOverlap => 0.25,
        CauseId::PciMod30Conflict => 0.5,
        CauseId::FrequentHandover => 1.0,
        CauseId::HandoverThresholdMisconfig => 1.0,
        CauseId::InsufficientRb => 20.0,
    }
}

pub fn feature_spec_hash() -> String {
    let mut h = Sha256::new();
    h.update(FEATURE_VERSION.as_bytes());
    for c in CauseId::ALL {
        h.update(format!("|{}:{}", c.name(), feature_scale(c)).as_bytes());
    }
    h.update(format!("|clip:{FEATURE_CLIP}").as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

/// Reads the query tables and turns every rule's margin into a feature.
pub fn extract_features(query: &RenderedQuery) -> Result<FeatureVector> {
    let parsed = parse_query(&query.text)?;
    let symptom = oracle::detect_symptom(&parsed.trace)?
        .ok_or_else(|| RcaError::Validation(format!("{}: query shows no symptom", query.instance_id)))?;
    let carriers = vec![0; parsed.cells.len()];
    let evidence = oracle::evaluate_rules_on(&parsed.cells, &carriers, &parsed.trace, &symptom)?;
    let mut x = vec![0.0; FEATURE_DIM];
    for ev in &evidence {
        let k = ev.cause.index();
        x[k] = (ev.margin / feature_scale(ev.cause)).clamp(-FEATURE_CLIP, FEATURE_CLIP);
        x[NUM_ACTIONS + k] = if ev.triggered { 1.0 } else { 0.0 };
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RcaError::NumericalGuard(format!("{}: non-finite feature", query.instance_id)));
    }
    Ok(FeatureVector(x))
}

/// Linear scores over causes followed by a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Row-major weights `[cause][feature]`, then one bias per cause.
    pub theta: Vec<f64>,
}

impl Policy {
    pub const NUM_PARAMS: usize = NUM_ACTIONS * (FEATURE_DIM + 1);

    pub fn zeros() -> Self {
        Self { theta: vec![0.0; Self::NUM_PARAMS] }
    }

    /// Small Gaussian initialization, the untrained starting point.
    pub fn init(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale.abs()).expect("finite scale");
        Self { theta: (0..Self::NUM_PARAMS).map(|_| normal.sample(&mut rng)).collect() }
    }

    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        if theta.len() != Self::NUM_PARAMS {
            return Err(RcaError::Validation(format!("expected {} parameters, got {}", Self::NUM_PARAMS, theta.len())));
        }
        Ok(Self { theta })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != FEATURE_DIM {
            return Err(RcaError::Validation(format!("expected {FEATURE_DIM} features, got {}", x.len())));
        }
        if self.theta.len() != Self::NUM_PARAMS {
            return Err(RcaError::Validation("parameter vector has the wrong length".into()));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> [f64; NUM_ACTIONS] {
        let bias = NUM_ACTIONS * FEATURE_DIM;
        std::array::from_fn(|k| {
            let row = &self.theta[k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.theta[bias + k]
        })
    }

    /// Next-token log-probabilities; the distribution does not depend on the prefix.
    pub fn log_probs(&self, x: &[f64]) -> [f64; NUM_ACTIONS] {
        log_softmax(&self.logits(x), 1.0)
    }

    pub fn probs(&self, x: &[f64]) -> [f64; NUM_ACTIONS] {
        self.log_probs(x).map(f64::exp)
    }

    /// Display-label answer distribution under a catalog.
    pub fn label_probs(&self, x: &[f64], catalog: &RootCauseCatalog) -> Vec<(String, f64)> {
        let p = self.probs(x);
        catalog.entries.iter().map(|e| (e.label.clone(), p[e.cause.index()])).collect()
    }

    /// Adds `scale * d logit_k` chained through the linear layer.
    fn accumulate(grad: &mut [f64], x: &[f64], dlogits: &[f64; NUM_ACTIONS], scale: f64) {
        let bias = NUM_ACTIONS * FEATURE_DIM;
        for k in 0..NUM_ACTIONS {
            let d = scale * dlogits[k];
            if d == 0.0 {
                continue;
            }
            for (f, v) in x.iter().enumerate() {
                grad[k * FEATURE_DIM + f] += d * v;
            }
            grad[bias + k] += d;
        }
    }
}

fn log_softmax(z: &[f64; NUM_ACTIONS], temperature: f64) -> [f64; NUM_ACTIONS] {
    let scaled = z.map(|v| v / temperature);
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scaled.map(|v| v - lse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SnapshotRole {
    Reference,
    Old,
}

/// Frozen copy of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    policy: Policy,
}

impl PolicySnapshot {
    pub fn new(policy: &Policy, role: SnapshotRole) -> Self {
        Self { role, policy: policy.clone() }
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

/// Cause index emitted at each step of a trajectory.
pub fn actions_from_trajectory(t: &Trajectory, catalog: &RootCauseCatalog) -> Option<Vec<usize>> {
    let label = t.terminal_answer.as_deref()?;
    Some(vec![catalog.cause_of(label)?.index()])
}

/// Renders emitted causes as answer tokens under a catalog.
pub fn trajectory_for_actions(actions: &[usize], catalog: &RootCauseCatalog) -> Result<Trajectory> {
    let text = actions
        .iter()
        .map(|&a| {
            let cause = CauseId::from_index(a).ok_or_else(|| RcaError::Validation(format!("bad action {a}")))?;
            Ok(answer_token(catalog.label_of(cause)))
        })
        .collect::<Result<Vec<_>>>()?
        .join(" ");
    Trajectory::from_text(text)
}

pub fn reward(trajectory: &Trajectory, truth_label: &str) -> f64 {
    reward_text(&trajectory.text, truth_label)
}

pub fn reward_text(text: &str, truth_label: &str) -> f64 {
    if parse_answer(text).as_deref() == Some(truth_label) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub features: Vec<f64>,
    pub targets: Vec<usize>,
}

impl SftExample {
    /// Targets come from the aggregated trace's answer, mapped to its cause.
    pub fn from_record(record: &DatasetRecord) -> Result<Self> {
        let trace = record
            .trace
            .as_ref()
            .ok_or_else(|| RcaError::Validation(format!("{}: record has no trace", record.instance_id)))?;
        let cause = record
            .query
            .catalog
            .cause_of(&trace.answer_label)
            .ok_or_else(|| RcaError::Validation(format!("{}: trace answer not in catalog", record.instance_id)))?;
        Ok(Self { features: extract_features(&record.query)?.0, targets: vec![cause.index()] })
    }
}

/// Mean over records of the per-token negative log-likelihood.
pub fn sft_loss(policy: &Policy, batch: &[SftExample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(RcaError::Validation("empty SFT batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; Policy::NUM_PARAMS];
    for ex in batch {
        policy.check(&ex.features)?;
        if ex.targets.is_empty() {
            return Err(RcaError::Validation("zero-length trace".into()));
        }
        let lp = policy.log_probs(&ex.features);
        let p = lp.map(f64::exp);
        let weight = 1.0 / (ex.targets.len() as f64 * batch.len() as f64);
        for &t in &ex.targets {
            if t >= NUM_ACTIONS {
                return Err(RcaError::Validation(format!("target {t} outside the action set")));
            }
            loss -= weight * lp[t];
            let d: [f64; NUM_ACTIONS] = std::array::from_fn(|k| p[k] - if k == t { 1.0 } else { 0.0 });
            Policy::accumulate(&mut grad, &ex.features, &d, weight);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlExample {
    pub instance_id: String,
    pub features: Vec<f64>,
    pub catalog: RootCauseCatalog,
    pub truth_label: String,
}

impl RlExample {
    pub fn from_record(record: &DatasetRecord) -> Result<Self> {
        Ok(Self {
            instance_id: record.instance_id.clone(),
            features: extract_features(&record.query)?.0,
            catalog: record.query.catalog.clone(),
            truth_label: record.ground_truth_label.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledTrajectory {
    pub actions: Vec<usize>,
    /// log pi_old of each emitted token.
    pub old_log_probs: Vec<f64>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRollout {
    pub query: RlExample,
    pub samples: Vec<SampledTrajectory>,
    pub rewards: Vec<f64>,
    /// One advantage per trajectory, shared by all of its tokens.
    pub advantages: Vec<f64>,
}

/// Inverse-CDF draw over causes in canonical order; temperature 0 is argmax.
fn draw(log_probs: &[f64; NUM_ACTIONS], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    if temperature <= 0.0 {
        let mut best = 0;
        for k in 1..NUM_ACTIONS {
            if log_probs[k] > log_probs[best] {
                best = k;
            }
        }
        return best;
    }
    let p = log_softmax(log_probs, temperature).map(f64::exp);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    NUM_ACTIONS - 1
}

/// Samples causes for answers from a policy; deterministic given `seed`.
pub fn sample_actions(policy: &Policy, features: &[f64], n: usize, temperature: f64, seed: u64) -> Vec<usize> {
    let lp = policy.log_probs(features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw(&lp, temperature, &mut rng)).collect()
}

/// Draws `n` answers from the OLD snapshot and scores them; advantages are
/// left empty for [`group_advantages`].
pub fn sample_group(old: &PolicySnapshot, query: &RlExample, n: usize, temperature: f64, seed: u64) -> Result<GroupRollout> {
    if n < 2 {
        return Err(RcaError::Validation("group size must be at least 2".into()));
    }
    old.policy.check(&query.features)?;
    let lp = old.policy.log_probs(&query.features);
    let mut samples = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for a in sample_actions(&old.policy, &query.features, n, temperature, seed) {
        let trajectory = trajectory_for_actions(&[a], &query.catalog)?;
        rewards.push(reward(&trajectory, &query.truth_label));
        samples.push(SampledTrajectory { actions: vec![a], old_log_probs: vec![lp[a]], trajectory });
    }
    Ok(GroupRollout { query: query.clone(), samples, rewards, advantages: Vec::new() })
}

/// Group-standardized rewards with population std; all zero when the group
/// carries no signal.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < std_floor {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// min(eta * A, clip(eta, 1 - eps, 1 + eps) * A) and whether the unclipped
/// branch is the one selected (so it carries gradient).
pub fn clipped_surrogate(eta: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = eta * advantage;
    let clipped = eta.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Exact KL(p || r) over the action set and its gradient w.r.t. p's logits.
pub fn categorical_kl(lp: &[f64; NUM_ACTIONS], lr: &[f64; NUM_ACTIONS]) -> (f64, [f64; NUM_ACTIONS]) {
    let p = lp.map(f64::exp);
    let kl: f64 = (0..NUM_ACTIONS).map(|k| if p[k] > 0.0 { p[k] * (lp[k] - lr[k]) } else { 0.0 }).sum();
    let grad = std::array::from_fn(|k| if p[k] > 0.0 { p[k] * (lp[k] - lr[k] - kl) } else { 0.0 });
    (kl, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoEvaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// Share of tokens whose gradient was cut by the clipped branch.
    pub clip_fraction: f64,
    /// Mean exact KL to the reference across rollouts.
    pub kl: f64,
    pub mean_ratio: f64,
}

/// Clipped surrogate minus beta times KL, averaged over tokens, trajectories
/// and queries; returned with its analytic gradient (for ascent).
pub fn grpo_objective(
    policy: &Policy,
    old: &PolicySnapshot,
    reference: &PolicySnapshot,
    rollouts: &[GroupRollout],
    config: &TrainConfig,
) -> Result<GrpoEvaluation> {
    let _ = old;
    if rollouts.is_empty() {
        return Err(RcaError::Validation("no rollouts".into()));
    }
    let mut objective = 0.0;
    let mut gradient = vec![0.0; Policy::NUM_PARAMS];
    let (mut tokens, mut clipped, mut kl_sum, mut ratio_sum) = (0usize, 0usize, 0.0, 0.0);
    let q = rollouts.len() as f64;
    for ro in rollouts {
        let x = &ro.query.features;
        policy.check(x)?;
        if ro.advantages.len() != ro.samples.len() {
            return Err(RcaError::Validation("rollout advantages missing".into()));
        }
        let n = ro.samples.len() as f64;
        let lp = policy.log_probs(x);
        let p = lp.map(f64::exp);
        let lr = reference.policy.log_probs(x);
        let (kl, dkl) = categorical_kl(&lp, &lr);
        kl_sum += kl;
        for (s, &adv) in ro.samples.iter().zip(&ro.advantages) {
            if s.actions.is_empty() || s.actions.len() != s.old_log_probs.len() {
                return Err(RcaError::Validation("trajectory without tokens".into()));
            }
            let per_token = 1.0 / (s.actions.len() as f64 * n * q);
            for (&a, &old_lp) in s.actions.iter().zip(&s.old_log_probs) {
                if !old_lp.is_finite() {
                    return Err(RcaError::NumericalGuard(format!(
                        "{}: token with zero probability under the old policy",
                        ro.query.instance_id
                    )));
                }
                let eta = (lp[a] - old_lp).exp();
                let (rho, active) = clipped_surrogate(eta, adv, config.clip_eps);
                objective += per_token * (rho - config.kl_beta * kl);
                tokens += 1;
                ratio_sum += eta;
                if !active {
                    clipped += 1;
                }
                if active && adv != 0.0 {
                    let d: [f64; NUM_ACTIONS] =
                        std::array::from_fn(|k| adv * eta * (if k == a { 1.0 } else { 0.0 } - p[k]));
                    Policy::accumulate(&mut gradient, x, &d, per_token);
                }
                Policy::accumulate(&mut gradient, x, &dkl, -per_token * config.kl_beta);
            }
        }
    }
    Ok(GrpoEvaluation {
        objective,
        gradient,
        clip_fraction: clipped as f64 / tokens.max(1) as f64,
        kl: kl_sum / q,
        mean_ratio: ratio_sum / tokens.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    /// GRPO step size.
    pub learning_rate: f64,
    pub sft_learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub sft_max_epochs: usize,
    /// Epochs without validation improvement before SFT stops.
    pub sft_patience: usize,
    pub sft_min_delta: f64,
    pub val_fraction: f64,
    pub rl_steps: usize,
    /// Gradient updates per GRPO step against the same OLD snapshot.
    pub inner_updates: usize,
    pub temperature: f64,
    pub seed: u64,
    pub adv_std_floor: f64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.01,
            learning_rate: 1e-3,
            sft_learning_rate: 1e-3,
            momentum: 0.0,
            batch_size: 32,
            sft_max_epochs: 10,
            sft_patience: 2,
            sft_min_delta: 1e-4,
            val_fraction: 0.1,
            rl_steps: 100,
            inner_updates: 2,
            temperature: 1.0,
            seed: 0,
            adv_std_floor: 1e-8,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RcaError::Validation(format!("train config: {m}")));
        if self.group_size < 2 {
            return bad("group size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip epsilon must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0) {
            return bad("KL weight must be non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.sft_learning_rate >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.inner_updates == 0 {
            return bad("batch size and inner updates must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Deterministic epoch-shuffled minibatches.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self { n, batch: batch.max(1), rng: ChaCha8Rng::seed_from_u64(seed), order: Vec::new(), pos: n }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch.min(self.n) {
            if self.pos >= self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Plain gradient step with optional heavy-ball momentum.
#[derive(Debug, Clone)]
struct Optimizer {
    lr: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Optimizer {
    fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: vec![0.0; Policy::NUM_PARAMS] }
    }

    /// `direction` is +1 for ascent, -1 for descent.
    fn step(&mut self, policy: &mut Policy, grad: &[f64], direction: f64) {
        for ((t, v), g) in policy.theta.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *t += direction * self.lr * *v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

/// GRPO loop state: current policy, frozen reference and the data sampler.
pub struct GrpoTrainer<'a> {
    pub policy: Policy,
    reference: PolicySnapshot,
    data: &'a [RlExample],
    sampler: BatchSampler,
    optimizer: Optimizer,
    config: TrainConfig,
    step: usize,
}

impl<'a> GrpoTrainer<'a> {
    pub fn new(policy: Policy, reference: PolicySnapshot, data: &'a [RlExample], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(RcaError::Validation("empty RL dataset".into()));
        }
        Ok(Self {
            policy,
            reference,
            data,
            sampler: BatchSampler::new(data.len(), config.batch_size, derive_seed(config.seed, 0x5EED)),
            optimizer: Optimizer::new(config.learning_rate, config.momentum),
            config: config.clone(),
            step: 0,
        })
    }

    pub fn reference(&self) -> &PolicySnapshot {
        &self.reference
    }

    /// Refresh OLD, sample groups, score, and ascend the objective.
    pub fn grpo_step(&mut self) -> Result<StepMetrics> {
        let old = PolicySnapshot::new(&self.policy, SnapshotRole::Old);
        let batch = self.sampler.next_batch();
        let mut rollouts = Vec::with_capacity(batch.len());
        for (q, &i) in batch.iter().enumerate() {
            let seed = derive_seed(derive_seed(self.config.seed, self.step as u64 + 1), q as u64);
            let mut ro = sample_group(&old, &self.data[i], self.config.group_size, self.config.temperature, seed)?;
            ro.advantages = group_advantages(&ro.rewards, self.config.adv_std_floor);
            rollouts.push(ro);
        }
        let mut clip = 0.0;
        let mut kl = 0.0;
        for _ in 0..self.config.inner_updates {
            let eval = grpo_objective(&self.policy, &old, &self.reference, &rollouts, &self.config)?;
            if eval.gradient.iter().any(|g| !g.is_finite()) {
                return Err(RcaError::NumericalGuard("non-finite GRPO gradient".into()));
            }
            self.optimizer.step(&mut self.policy, &eval.gradient, 1.0);
            clip += eval.clip_fraction;
            kl = eval.kl;
        }
        let total: usize = rollouts.iter().map(|r| r.rewards.len()).sum();
        let metrics = StepMetrics {
            step: self.step,
            mean_reward: rollouts.iter().flat_map(|r| &r.rewards).sum::<f64>() / total as f64,
            mean_abs_advantage: rollouts.iter().flat_map(|r| &r.advantages).map(|a| a.abs()).sum::<f64>() / total as f64,
            clip_fraction: clip / self.config.inner_updates as f64,
            kl,
        };
        self.step += 1;
        Ok(metrics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftLog {
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_on_plateau: bool,
}

/// Minibatch descent on the SFT loss until the validation loss plateaus.
pub fn train_sft(base: &Policy, data: &[SftExample], config: &TrainConfig) -> Result<(Policy, SftLog)> {
    config.validate()?;
    if data.is_empty() {
        return Err(RcaError::Validation("empty SFT dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5F7)));
    }
    let n_val = ((data.len() as f64 * config.val_fraction) as usize).min(data.len() - 1);
    let val: Vec<SftExample> = order[..n_val].iter().map(|&i| data[i].clone()).collect();
    let train: Vec<SftExample> = order[n_val..].iter().map(|&i| data[i].clone()).collect();
    let monitor = if val.is_empty() { &train } else { &val };

    let mut policy = base.clone();
    let mut optimizer = Optimizer::new(config.sft_learning_rate, config.momentum);
    let mut sampler = BatchSampler::new(train.len(), config.batch_size, derive_seed(config.seed, 0xBA7C));
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let mut log = SftLog { epochs: 0, train_loss: Vec::new(), val_loss: Vec::new(), stopped_on_plateau: false };
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..config.sft_max_epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let batch: Vec<SftExample> = sampler.next_batch().into_iter().map(|i| train[i].clone()).collect();
            let (loss, grad) = sft_loss(&policy, &batch)?;
            optimizer.step(&mut policy, &grad, -1.0);
            epoch_loss += loss / steps_per_epoch as f64;
        }
        let (val_loss, _) = sft_loss(&policy, monitor)?;
        log.epochs += 1;
        log.train_loss.push(epoch_loss);
        log.val_loss.push(val_loss);
        if val_loss < best - config.sft_min_delta {
            best = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.sft_patience {
                log.stopped_on_plateau = true;
                break;
            }
        }
    }
    Ok((policy, log))
}

/// Runs `steps` GRPO steps from `start` against `reference`.
pub fn train_grpo(
    start: &Policy,
    reference: &PolicySnapshot,
    data: &[RlExample],
    config: &TrainConfig,
    steps: usize,
) -> Result<(Policy, Vec<StepMetrics>)> {
    let mut trainer = GrpoTrainer::new(start.clone(), reference.clone(), data, config)?;
    let mut metrics = Vec::with_capacity(steps);
    for _ in 0..steps {
        metrics.push(trainer.grpo_step()?);
    }
    Ok((trainer.policy, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageLog {
    pub sft: SftLog,
    pub rl: Vec<StepMetrics>,
}

pub struct TwoStageResult {
    pub sft_policy: Policy,
    pub rl_policy: Policy,
    /// The snapshot GRPO regularized toward; parameters equal `sft_policy`.
    pub reference: PolicySnapshot,
    pub log: TwoStageLog,
}

pub fn train_two_stage(
    base: &Policy,
    sft_data: &[SftExample],
    rl_data: &[RlExample],
    config: &TrainConfig,
) -> Result<TwoStageResult> {
    if rl_data.is_empty() {
        return Err(RcaError::Validation("empty RL dataset".into()));
    }
    let (sft_policy, sft_log) = train_sft(base, sft_data, config)?;
    let reference = PolicySnapshot::new(&sft_policy, SnapshotRole::Reference);
    let (rl_policy, rl_log) = train_grpo(&sft_policy, &reference, rl_data, config, config.rl_steps)?;
    Ok(TwoStageResult { sft_policy, rl_policy, reference, log: TwoStageLog { sft: sft_log, rl: rl_log } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub role: String,
    pub theta: Vec<f64>,
    pub vocab_hash: String,
    pub feature_hash: String,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(policy: &Policy, role: &str, config: &TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            role: role.to_string(),
            theta: policy.theta.clone(),
            vocab_hash: vocab_hash(),
            feature_hash: feature_spec_hash(),
            config: config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Loads a checkpoint, refusing files written for another vocabulary or
    /// feature layout.
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ck.verify()?;
        Ok(ck)
    }

    pub fn verify(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(RcaError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.vocab_hash != vocab_hash() {
            return Err(RcaError::Checkpoint("vocabulary hash mismatch".into()));
        }
        if self.feature_hash != feature_spec_hash() {
            return Err(RcaError::Checkpoint("feature spec hash mismatch".into()));
        }
        Policy::from_theta(self.theta.clone()).map(|_| ()).map_err(|e| RcaError::Checkpoint(e.to_string()))
    }

    pub fn policy(&self) -> Policy {
        Policy { theta: self.theta.clone() }
    }
}
