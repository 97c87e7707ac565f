//! SOM-based online request management: one neuron per feasible
//! (node, action) pair of a queue, carrying a normalized
//! (latency, penalty) feature tuple.
//!
//! The best matching unit is the neuron closest to the ideal point (0, 0)
//! under the weighted Euclidean discriminant; executing it pulls the map
//! toward the observed outcome through a Gaussian neighborhood. Violations
//! bump a neuron's penalty count, re-normalized into [0, 1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    action_legs, feasible_actions, transform_cost, transform_executor, Action, ActionTree,
    DecisionContext,
};
use crate::workload::RequestEvent;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("neuron set is empty")]
    EmptyNeuronSet,
    #[error("learning rate sigma must be positive")]
    BadSigma,
}

/// One (node, action) candidate with its learned feature tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub node_id: String,
    pub action_variant: u8,
    /// Normalized fetching-plus-transcoding latency estimate, in [0, 1].
    pub latency_norm: f64,
    /// Normalized accumulated penalty, in [0, 1).
    pub penalty_norm: f64,
    pub penalty_count: u64,
}

impl Neuron {
    pub fn new(node_id: &str, action_variant: u8, latency_norm: f64) -> Self {
        Self {
            node_id: node_id.to_string(),
            action_variant,
            latency_norm: latency_norm.clamp(0.0, 1.0),
            penalty_norm: 0.0,
            penalty_count: 0,
        }
    }

    fn features(&self) -> (f64, f64) {
        (self.latency_norm, self.penalty_norm)
    }
}

/// Learning rate and feature weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub sigma: f64,
    pub w_latency: f64,
    pub w_penalty: f64,
    /// Penalty re-normalization scale: count / (count + scale).
    pub penalty_scale: f64,
}

impl Default for SomConfig {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            w_latency: 0.5,
            w_penalty: 0.5,
            penalty_scale: 10.0,
        }
    }
}

/// Weighted Euclidean distance between two feature tuples.
fn feature_distance(a: (f64, f64), b: (f64, f64), w: (f64, f64)) -> f64 {
    (w.0 * (a.0 - b.0).powi(2) + w.1 * (a.1 - b.1).powi(2)).sqrt()
}

/// Index of the best matching unit: minimum weighted distance to the ideal
/// (0, 0) tuple; ties go to the lowest node id, then action variant.
pub fn bmu(neurons: &[Neuron], weights: (f64, f64)) -> Result<usize, LearningError> {
    if neurons.is_empty() {
        return Err(LearningError::EmptyNeuronSet);
    }
    let mut best = 0;
    let mut best_d = feature_distance(neurons[0].features(), (0.0, 0.0), weights);
    for (i, n) in neurons.iter().enumerate().skip(1) {
        let d = feature_distance(n.features(), (0.0, 0.0), weights);
        let key = (&n.node_id, n.action_variant);
        let best_key = (&neurons[best].node_id, neurons[best].action_variant);
        if d < best_d || (d == best_d && key < best_key) {
            best = i;
            best_d = d;
        }
    }
    Ok(best)
}

/// Gaussian neighborhood factor `exp(-d^2 / (2 sigma^2))`.
pub fn neighborhood(distance: f64, sigma: f64) -> Result<f64, LearningError> {
    if !(sigma > 0.0) {
        return Err(LearningError::BadSigma);
    }
    Ok((-(distance * distance) / (2.0 * sigma * sigma)).exp())
}

/// Pulls every neuron toward the observed (latency, penalty) outcome of the
/// executed unit, scaled by the learning rate and the neighborhood of its
/// feature distance to the BMU. Features stay clamped to [0, 1].
pub fn som_update(
    neurons: &mut [Neuron],
    bmu_index: usize,
    observed: (f64, f64),
    config: &SomConfig,
) -> Result<(), LearningError> {
    let bmu_features = neurons
        .get(bmu_index)
        .ok_or(LearningError::EmptyNeuronSet)?
        .features();
    let w = (config.w_latency, config.w_penalty);
    for neuron in neurons.iter_mut() {
        let h = neighborhood(feature_distance(bmu_features, neuron.features(), w), config.sigma)?;
        let rate = config.sigma * h;
        neuron.latency_norm =
            (neuron.latency_norm + rate * (observed.0 - neuron.latency_norm)).clamp(0.0, 1.0);
        neuron.penalty_norm =
            (neuron.penalty_norm + rate * (observed.1 - neuron.penalty_norm)).clamp(0.0, 1.0);
    }
    Ok(())
}

/// Folds fresh monitored latency estimates into the map, one pull per neuron
/// at full neighborhood. The manager module runs this between serving
/// intervals so stale neurons cannot pin the BMU forever.
pub fn refresh_from_monitoring(
    neurons: &mut [Neuron],
    estimates: &[f64],
    config: &SomConfig,
) -> Result<(), LearningError> {
    if !(config.sigma > 0.0) {
        return Err(LearningError::BadSigma);
    }
    for (neuron, est) in neurons.iter_mut().zip(estimates) {
        neuron.latency_norm =
            (neuron.latency_norm + config.sigma * (est.clamp(0.0, 1.0) - neuron.latency_norm))
                .clamp(0.0, 1.0);
    }
    Ok(())
}

/// One violation: bump the count and re-normalize the penalty feature to
/// `count / (count + scale)`.
pub fn penalize(neuron: &mut Neuron, penalty_scale: f64) {
    neuron.penalty_count += 1;
    neuron.penalty_norm =
        neuron.penalty_count as f64 / (neuron.penalty_count as f64 + penalty_scale);
}

/// One row of the agent's output: serve up to `max_requests` through
/// (node, action); `violates` marks tuples the downstream must skip.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTuple {
    pub node_id: String,
    pub action_variant: u8,
    pub max_requests: u64,
    pub violates: bool,
    /// The concrete action to execute, when one is currently feasible.
    pub action: Option<Action>,
}

/// Builds the ordered output list for one queue: tuples sorted ascending by
/// latency feature, each carrying how many queued requests its (node,
/// action) can serve before a bandwidth, compute, or power budget runs out.
/// Zero capacity (or a currently infeasible pair) raises the violation flag.
pub fn som_decide(
    queue: &[RequestEvent],
    neurons: &[Neuron],
    ctx: &DecisionContext,
    tree: ActionTree,
) -> Vec<DecisionTuple> {
    if queue.is_empty() {
        return Vec::new();
    }
    let prototype = &queue[0];
    let feasible = feasible_actions(ctx, prototype, tree);
    let mut order: Vec<usize> = (0..neurons.len()).collect();
    order.sort_by(|&a, &b| {
        let na = &neurons[a];
        let nb = &neurons[b];
        na.latency_norm
            .partial_cmp(&nb.latency_norm)
            .expect("features are finite")
            .then_with(|| (&na.node_id, na.action_variant).cmp(&(&nb.node_id, nb.action_variant)))
    });
    let mut out = Vec::with_capacity(order.len());
    for i in order {
        let neuron = &neurons[i];
        let action = feasible
            .iter()
            .find(|a| a.source_node == neuron.node_id && a.variant == neuron.action_variant)
            .cloned();
        let capacity = action
            .as_ref()
            .map(|a| servable_requests(ctx, a, prototype, queue.len() as u64))
            .unwrap_or(0);
        out.push(DecisionTuple {
            node_id: neuron.node_id.clone(),
            action_variant: neuron.action_variant,
            max_requests: capacity,
            violates: capacity == 0,
            action,
        });
    }
    out
}

/// How many identical requests the action can serve before some budget is
/// exhausted, capped at the queue length.
fn servable_requests(
    ctx: &DecisionContext,
    action: &Action,
    prototype: &RequestEvent,
    cap: u64,
) -> u64 {
    let mut limit = cap;
    for leg in action_legs(ctx, action, prototype) {
        let demand = ctx.ladder.bitrate(leg.rep_index);
        let bw = ctx.bandwidth_between(&leg.from, &leg.to).unwrap_or(0.0);
        if demand > 0.0 {
            limit = limit.min((bw / demand).floor() as u64);
        }
    }
    if let Some(executor) = transform_executor(ctx, action, prototype) {
        if let Ok(Some(tc)) = transform_cost(ctx, action, prototype) {
            if tc.cpu_s > 0.0 {
                let cpu = ctx.cpu_remaining.get(&executor).copied().unwrap_or(0.0);
                limit = limit.min((cpu / tc.cpu_s).floor() as u64);
            }
            let is_peer = ctx.kind(&executor).map(|k| k.is_peer()).unwrap_or(false);
            if is_peer && tc.power_mah > 0.0 {
                let power = ctx.power_remaining.get(&executor).copied().unwrap_or(0.0);
                limit = limit.min((power / tc.power_mah).floor() as u64);
            }
        }
    }
    limit
}
