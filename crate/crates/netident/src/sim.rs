//! Simulation of the network dynamics and generation of noisy sampled
//! measurements.
//!
//! The flow `dx_i/dt = sum_j f_ij(x_j) + u_i` is integrated with classical
//! fixed-step fourth-order Runge–Kutta. A fixed step keeps every run
//! bit-reproducible from its seed; the dynamics handled here are smooth and
//! non-stiff, so adaptivity buys nothing. Measurements are the states of
//! chosen nodes on a uniform sampling grid, corrupted by additive Gaussian
//! noise drawn from counter-style streams keyed by (seed, experiment, node,
//! sample) — experiments can therefore run in any order, on any number of
//! threads, without changing a single drawn value.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dict::EdgeFunction;
use crate::graph::{NetworkSpec, NodeId};
use crate::rng::{self, Domain};

/// Magnitude beyond which a state is reported as diverged.
const STATE_BOUND: f64 = 1e12;

/// How a batch of experiments is generated: initial-condition ranges,
/// constant inputs, sampling grid, noise level, and the seed that makes all
/// of it reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    /// Number of experiments (independent trajectories).
    pub experiments: usize,
    /// Closed interval from which each node's initial condition is drawn.
    pub intervals: Vec<(f64, f64)>,
    /// Constant input added to each node's rate.
    pub inputs: Vec<f64>,
    /// Time between consecutive samples.
    pub sample_period: f64,
    /// Samples per experiment (the first is taken at `t = 0`).
    pub samples: usize,
    /// Standard deviation of the additive measurement noise.
    pub noise_sigma: f64,
    /// Master seed; every random quantity is derived from it.
    pub seed: u64,
    /// Integrator steps per sample period.
    pub substeps: usize,
}

impl ExperimentPlan {
    /// A plan drawing every initial condition uniformly from `[-1, 1]`,
    /// with zero inputs and the default integrator resolution.
    pub fn uniform(
        spec: &NetworkSpec,
        experiments: usize,
        sample_period: f64,
        samples: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        ExperimentPlan {
            experiments,
            intervals: vec![(-1.0, 1.0); spec.node_count],
            inputs: vec![0.0; spec.node_count],
            sample_period,
            samples,
            noise_sigma,
            seed,
            substeps: 50,
        }
    }

    /// Integrator step implied by the plan.
    pub fn integrator_step(&self) -> f64 {
        self.sample_period / self.substeps as f64
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<(), SimError> {
        let fail = |message: String| Err(SimError::InvalidPlan { message });
        if self.experiments == 0 {
            return fail("the plan needs at least one experiment".into());
        }
        if self.intervals.len() != spec.node_count {
            return fail(format!(
                "{} initial-condition intervals for {} nodes",
                self.intervals.len(),
                spec.node_count
            ));
        }
        if self.inputs.len() != spec.node_count {
            return fail(format!(
                "{} inputs for {} nodes",
                self.inputs.len(),
                spec.node_count
            ));
        }
        for (i, &(lo, hi)) in self.intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return fail(format!(
                    "initial-condition interval for node {} is not an ordered finite pair: [{lo}, {hi}]",
                    i + 1
                ));
            }
        }
        if self.inputs.iter().any(|u| !u.is_finite()) {
            return fail("inputs must be finite".into());
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return fail(format!("sample period must be positive, got {}", self.sample_period));
        }
        if self.samples == 0 {
            return fail("the plan needs at least one sample".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.substeps == 0 {
            return fail("the integrator needs at least one substep per sample".into());
        }
        Ok(())
    }
}

/// Simulation failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state of node {node} left the integration domain near t = {time:.6}")]
    NonFiniteState { node: NodeId, time: f64 },
    #[error("experiment plan: {message}")]
    InvalidPlan { message: String },
}

/// Dense fixed-step trajectory: the state of every node at every
/// integrator step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Integrator step between consecutive stored states.
    pub step: f64,
    /// `states[i]` is the full state vector at `t = i * step`.
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.step
    }

    /// One node's values across all stored steps.
    pub fn node_series(&self, node: NodeId) -> Vec<f64> {
        self.states.iter().map(|s| s[node.index()]).collect()
    }
}

/// Noisy uniform samples of a single node over one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub node: NodeId,
    pub period: f64,
    pub values: Vec<f64>,
}

/// Everything produced by one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub x0: Vec<f64>,
    pub trajectory: Trajectory,
    pub samples: Vec<SampleSet>,
}

/// Evaluates the vector field into `out`.
pub fn rhs(
    spec: &NetworkSpec,
    functions: &[EdgeFunction],
    state: &[f64],
    inputs: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(functions.len(), spec.edges.len());
    out.copy_from_slice(inputs);
    for (edge, f) in spec.edges.iter().zip(functions) {
        out[edge.head.index()] += f.eval(state[edge.tail.index()]);
    }
}

/// Integrates the network with classical RK4 at fixed step `step` for
/// `round(t_end / step)` steps, returning the dense trajectory. The state
/// at `t = 0` equals `x0` exactly.
pub fn simulate(
    spec: &NetworkSpec,
    functions: &[EdgeFunction],
    x0: &[f64],
    inputs: &[f64],
    t_end: f64,
    step: f64,
) -> Result<Trajectory, SimError> {
    assert!(step > 0.0, "integrator step must be positive");
    assert_eq!(x0.len(), spec.node_count);
    assert_eq!(inputs.len(), spec.node_count);
    let steps = (t_end / step).round() as usize;
    let n = spec.node_count;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut work = vec![0.0; n];

    for i in 0..steps {
        let current = states.last().expect("at least the initial state");
        rhs(spec, functions, current, inputs, &mut k1);
        for j in 0..n {
            work[j] = current[j] + 0.5 * step * k1[j];
        }
        rhs(spec, functions, &work, inputs, &mut k2);
        for j in 0..n {
            work[j] = current[j] + 0.5 * step * k2[j];
        }
        rhs(spec, functions, &work, inputs, &mut k3);
        for j in 0..n {
            work[j] = current[j] + step * k3[j];
        }
        rhs(spec, functions, &work, inputs, &mut k4);
        let next: Vec<f64> = (0..n)
            .map(|j| current[j] + step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect();
        let time = (i + 1) as f64 * step;
        for (j, &value) in next.iter().enumerate() {
            if !value.is_finite() || value.abs() > STATE_BOUND {
                return Err(SimError::NonFiniteState {
                    node: NodeId::from_index(j),
                    time,
                });
            }
        }
        states.push(next);
    }
    Ok(Trajectory { step, states })
}

/// Draws the initial state for one experiment. Components are uniform on
/// the plan's per-node intervals; nodes in `zeroed` are forced to zero.
/// The draw is a pure function of `(plan.seed, experiment, retry, node)`,
/// so experiments are reproducible in isolation and `retry` lets a caller
/// reject and redraw without disturbing other experiments.
pub fn draw_initial_state(
    plan: &ExperimentPlan,
    experiment: usize,
    retry: usize,
    zeroed: &BTreeSet<NodeId>,
) -> Vec<f64> {
    (0..plan.intervals.len())
        .map(|i| {
            let node = NodeId::from_index(i);
            if zeroed.contains(&node) {
                return 0.0;
            }
            let (lo, hi) = plan.intervals[i];
            if lo == hi {
                return lo;
            }
            let mut stream = rng::stream(
                Domain::InitialState,
                &[plan.seed, experiment as u64, retry as u64, i as u64],
            );
            stream.gen_range(lo..=hi)
        })
        .collect()
}

/// Samples one node of a trajectory on the plan's uniform grid and adds
/// Gaussian noise of standard deviation `plan.noise_sigma`. Each sample's
/// noise comes from a stream keyed by `(seed, experiment, node, sample)`.
pub fn sample(
    trajectory: &Trajectory,
    node: NodeId,
    plan: &ExperimentPlan,
    experiment: usize,
) -> Result<SampleSet, SimError> {
    let ratio = plan.sample_period / trajectory.step;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 {
        return Err(SimError::InvalidPlan {
            message: format!(
                "sample period {} is not a whole number of integrator steps of {}",
                plan.sample_period, trajectory.step
            ),
        });
    }
    let available = (trajectory.states.len() - 1) / stride + 1;
    if available < plan.samples {
        return Err(SimError::InvalidPlan {
            message: format!(
                "trajectory supports {available} samples but the plan asks for {}",
                plan.samples
            ),
        });
    }
    let values = (0..plan.samples)
        .map(|s| {
            let clean = trajectory.states[s * stride][node.index()];
            if plan.noise_sigma == 0.0 {
                return clean;
            }
            let mut stream = rng::stream(
                Domain::Noise,
                &[plan.seed, experiment as u64, node.index() as u64, s as u64],
            );
            let draw: f64 = StandardNormal.sample(&mut stream);
            clean + plan.noise_sigma * draw
        })
        .collect();
    Ok(SampleSet {
        node,
        period: plan.sample_period,
        values,
    })
}

/// Runs one experiment of the plan: draw the initial state, integrate over
/// the sampling horizon, and sample every measured node.
pub fn run_experiment(
    spec: &NetworkSpec,
    functions: &[EdgeFunction],
    plan: &ExperimentPlan,
    experiment: usize,
    retry: usize,
    zeroed: &BTreeSet<NodeId>,
) -> Result<ExperimentRecord, SimError> {
    let x0 = draw_initial_state(plan, experiment, retry, zeroed);
    run_experiment_from(spec, functions, plan, experiment, x0)
}

/// Like [`run_experiment`] but with the initial state supplied by the
/// caller (used after gating has accepted a draw).
pub fn run_experiment_from(
    spec: &NetworkSpec,
    functions: &[EdgeFunction],
    plan: &ExperimentPlan,
    experiment: usize,
    x0: Vec<f64>,
) -> Result<ExperimentRecord, SimError> {
    let t_end = plan.sample_period * (plan.samples - 1) as f64;
    let trajectory = simulate(spec, functions, &x0, &plan.inputs, t_end, plan.integrator_step())?;
    let samples = spec
        .measured
        .iter()
        .map(|&node| sample(&trajectory, node, plan, experiment))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentRecord {
        x0,
        trajectory,
        samples,
    })
}

/// Runs the whole plan, experiments in parallel, output ordered by
/// experiment index regardless of thread count.
pub fn run_batch(
    spec: &NetworkSpec,
    functions: &[EdgeFunction],
    plan: &ExperimentPlan,
    zeroed: &BTreeSet<NodeId>,
) -> Result<Vec<ExperimentRecord>, SimError> {
    plan.validate(spec)?;
    (0..plan.experiments)
        .into_par_iter()
        .map(|k| run_experiment(spec, functions, plan, k, 0, zeroed))
        .collect()
}

/// Renders one experiment as CSV: time, every node's true state at the
/// sample instants, then the noisy measurement columns.
pub fn experiment_csv(spec: &NetworkSpec, plan: &ExperimentPlan, record: &ExperimentRecord) -> String {
    let mut out = String::from("t");
    for i in 1..=spec.node_count {
        out.push_str(&format!(",node_{i}"));
    }
    for set in &record.samples {
        out.push_str(&format!(",meas_{}", set.node));
    }
    out.push('\n');
    let stride = (plan.sample_period / record.trajectory.step).round() as usize;
    for s in 0..plan.samples {
        out.push_str(&format!("{}", s as f64 * plan.sample_period));
        let state = &record.trajectory.states[s * stride];
        for value in state {
            out.push_str(&format!(",{value}"));
        }
        for set in &record.samples {
            out.push_str(&format!(",{}", set.values[s]));
        }
        out.push('\n');
    }
    out
}
