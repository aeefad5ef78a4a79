//! Staged recovery of the edge functions from sink measurements.
//!
//! Each stage of the schedule regresses one edge dictionary (or a parallel
//! family of them) against estimates of one sink derivative at `t = 0`:
//!
//! 1. initial conditions are drawn, gated, and simulated;
//! 2. the stage-order sink derivative is estimated from the samples (or
//!    taken from exact Taylor expansion when requested);
//! 3. a least-squares design is built by propagating Taylor jets with unit
//!    probes on the unknown coefficients — valid because the sink
//!    derivative at the scheduled order is affine in those coefficients;
//! 4. the minimum-norm solution becomes the edge's estimate and feeds every
//!    later stage.
//!
//! The design matrix is assembled by jet propagation rather than hand-coded
//! chain-rule formulas, so one mechanism covers every topology and order;
//! the classic closed forms for short paths are kept as test oracles.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::deriv::{self, DerivError, FitConfig};
use crate::dict::{BasisFunction, EdgeFunction};
use crate::graph::{EdgeId, GraphError, NetworkSpec, NodeId, Stage};
use crate::rng;
use crate::sim::{self, ExperimentPlan, SimError};

/// Numerical policy of the identification run.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyOptions {
    /// Experiments per stage. `None` uses three times the stage's
    /// coefficient count, which keeps the regression comfortably
    /// overdetermined.
    pub experiments: Option<usize>,
    /// Minimum |x0| for nodes a stage requires away from zero.
    pub zero_tolerance: f64,
    /// Minimum |g'(x0)| for known downstream edges along the designated
    /// paths; below it the regression signal is annihilated.
    pub gate_tolerance: f64,
    /// Redraw attempts per experiment before giving up.
    pub max_retries: usize,
    /// Largest acceptable design-matrix condition number.
    pub cond_limit: f64,
    /// Use exact Taylor derivatives of the true system as targets instead
    /// of estimating them from noisy samples (debugging / oracle mode).
    pub exact_derivatives: bool,
    /// Start-point polynomial fit used on sampled measurements.
    pub fit: FitConfig,
    /// Keep every (initial state, derivative target) pair in the report.
    pub collect_jets: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            experiments: None,
            zero_tolerance: 1e-2,
            gate_tolerance: 1e-2,
            max_retries: 100,
            cond_limit: 1e12,
            exact_derivatives: false,
            fit: FitConfig::default(),
            collect_jets: false,
        }
    }
}

/// Identification failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Plan(#[from] SimError),
    #[error("stage {stage}: {source}")]
    Simulation { stage: usize, source: SimError },
    #[error("stage {stage}: {source}")]
    Derivatives { stage: usize, source: DerivError },
    #[error(
        "stage {stage}, experiment {experiment}: no initial condition passed the gates \
         after {retries} retries; widen the initial-condition intervals or relax the thresholds"
    )]
    GatingExhausted {
        stage: usize,
        experiment: usize,
        retries: usize,
    },
    #[error(
        "stage {stage} solves {needed} coefficients but only {got} experiments are \
         provided; raise the experiment count"
    )]
    InsufficientExperiments {
        stage: usize,
        needed: usize,
        got: usize,
    },
    #[error("{}", rank_deficient_message(.stage, .condition, .linearity_flagged))]
    RankDeficient {
        stage: usize,
        condition: f64,
        linearity_flagged: bool,
    },
    #[error("estimates carry {got} coefficients where the truth carries {expected}")]
    DictionaryMismatch { expected: usize, got: usize },
}

fn rank_deficient_message(stage: &usize, condition: &f64, linearity_flagged: &bool) -> String {
    let base = format!(
        "stage {stage}: the regression design is rank deficient (condition number {condition:.3e})"
    );
    if *linearity_flagged {
        format!(
            "{base}; the parallel branches merge through linear-only dictionaries, so their \
             edge functions cannot be told apart — run a structural check to see the hazard"
        )
    } else {
        format!(
            "{base}; the initial conditions may be too few or too poorly spread — raise the \
             experiment count or widen the intervals"
        )
    }
}

/// One stage's least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    /// K × L design; row per experiment, column per (edge, basis) pair.
    pub design: DMatrix<f64>,
    /// Derivative estimates minus the known-offset, one per experiment.
    pub targets: DVector<f64>,
    /// Column labels, aligned with the design columns.
    pub labels: Vec<(EdgeId, usize)>,
    /// Condition number of the design (sigma_max / sigma_min).
    pub condition: f64,
    /// Whether the stage overlaps a linear-merge hazard; used to phrase
    /// rank-deficiency errors.
    pub linearity_flagged: bool,
}

/// Output of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub coefficients: Vec<f64>,
    pub condition: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

/// Per-stage bookkeeping kept in the report.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    pub derivative_order: usize,
    pub sink: NodeId,
    pub edges: Vec<EdgeId>,
    pub experiments: usize,
    pub condition: f64,
    pub residual: f64,
    /// Total gate redraws across the stage's experiments.
    pub retries: usize,
}

/// One retained (initial state, derivative target) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct JetDump {
    pub stage: usize,
    pub experiment: usize,
    pub x0: Vec<f64>,
    pub target: f64,
}

/// Everything the identification produced.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationReport {
    /// Estimated function per edge, aligned with the spec's edge list.
    pub estimates: Vec<EdgeFunction>,
    pub stages: Vec<StageDiagnostics>,
    /// Root mean squared coefficient error against the spec's true
    /// coefficients (all dictionary entries, zero-truth ones included).
    pub rmse: Option<f64>,
    /// Populated when [`IdentifyOptions::collect_jets`] is set.
    pub jet_dumps: Vec<JetDump>,
}

/// Accepts an initial condition when every node the stage requires nonzero
/// clears `zero_tolerance` and every known downstream edge on the
/// designated paths has derivative magnitude at least `gate_tolerance` at
/// its tail's initial value. Edges not yet in `known` (none, once the
/// schedule is respected) are skipped.
pub fn gate_initial_conditions(
    spec: &NetworkSpec,
    stage: &Stage,
    known: &[Option<EdgeFunction>],
    x0: &[f64],
    options: &IdentifyOptions,
) -> bool {
    for node in stage.required_nonzero() {
        if x0[node.index()].abs() < options.zero_tolerance {
            return false;
        }
    }
    for path in &stage.paths {
        for pair in path.windows(2).skip(1) {
            let edge = spec
                .find_edge(pair[0], pair[1])
                .expect("designated path follows edges");
            if let Some(g) = &known[edge.index()] {
                if g.deriv_k(x0[pair[0].index()], 1).abs() < options.gate_tolerance {
                    return false;
                }
            }
        }
    }
    true
}

fn unit_probe(basis: &[BasisFunction], index: usize) -> EdgeFunction {
    let mut coeffs = vec![0.0; basis.len()];
    coeffs[index] = 1.0;
    EdgeFunction::new(basis.to_vec(), coeffs).expect("lengths match by construction")
}

/// Builds the stage's regression problem from gated observations.
///
/// For experiment `k` with initial state `x0_k` and derivative estimate
/// `y_k`: the offset is the exact stage-order sink derivative with all
/// stage-edge coefficients zero (known edges at their estimates, unscheduled
/// unknowns at zero — their contribution at this order vanishes
/// identically under the stage's zeroing); the target is `y_k - offset`;
/// and column `(e, l)` holds the same derivative with a unit coefficient
/// on basis `l` of edge `e`, minus the offset. Affinity of the derivative
/// in the stage coefficients makes this construction exact.
pub fn stage_design(
    spec: &NetworkSpec,
    stage: &Stage,
    known: &[Option<EdgeFunction>],
    observations: &[(Vec<f64>, f64)],
    inputs: &[f64],
) -> RegressionProblem {
    assert_eq!(known.len(), spec.edges.len());
    let m = stage.derivative_order;
    let labels: Vec<(EdgeId, usize)> = stage
        .edges
        .iter()
        .flat_map(|&e| (0..spec.edges[e.index()].basis.len()).map(move |l| (e, l)))
        .collect();
    let base: Vec<EdgeFunction> = spec
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| match &known[i] {
            Some(f) if !stage.edges.contains(&EdgeId(i)) => f.clone(),
            _ => EdgeFunction::zero(e.basis.clone()),
        })
        .collect();

    let rows: Vec<(Vec<f64>, f64)> = observations
        .par_iter()
        .map(|(x0, y)| {
            let offset = deriv::propagate(spec, &base, x0, inputs, m).derivative(stage.sink, m);
            let mut probe = base.clone();
            let mut row = Vec::with_capacity(labels.len());
            for &(e, l) in &labels {
                let resting = std::mem::replace(
                    &mut probe[e.index()],
                    unit_probe(&spec.edges[e.index()].basis, l),
                );
                let value =
                    deriv::propagate(spec, &probe, x0, inputs, m).derivative(stage.sink, m);
                probe[e.index()] = resting;
                row.push(value - offset);
            }
            (row, y - offset)
        })
        .collect();

    let design = DMatrix::from_fn(rows.len(), labels.len(), |r, c| rows[r].0[c]);
    let targets = DVector::from_fn(rows.len(), |r, _| rows[r].1);
    let condition = condition_number(&design);
    let linearity_flagged = spec
        .linearity_hazard()
        .iter()
        .any(|h| h.ambiguous_edges.iter().any(|e| stage.edges.contains(e)));
    RegressionProblem {
        design,
        targets,
        labels,
        condition,
        linearity_flagged,
    }
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return f64::INFINITY;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Minimum-norm least-squares solve with a condition guard.
pub fn solve(
    problem: &RegressionProblem,
    cond_limit: f64,
    stage: usize,
) -> Result<StageSolution, IdentError> {
    let k = problem.design.nrows();
    let l = problem.design.ncols();
    if k < l {
        return Err(IdentError::InsufficientExperiments {
            stage,
            needed: l,
            got: k,
        });
    }
    let svd = problem.design.clone().svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !condition.is_finite() || condition > cond_limit {
        return Err(IdentError::RankDeficient {
            stage,
            condition,
            linearity_flagged: problem.linearity_flagged,
        });
    }
    let coefficients = svd
        .solve(&problem.targets, 0.0)
        .expect("SVD computed with both factors");
    let residual = (&problem.design * &coefficients - &problem.targets).norm()
        / (k as f64).sqrt();
    Ok(StageSolution {
        coefficients: coefficients.iter().copied().collect(),
        condition,
        residual,
    })
}

/// Root mean squared error over all dictionary coefficients of all edges.
pub fn rmse(estimates: &[EdgeFunction], truth: &[EdgeFunction]) -> Result<f64, IdentError> {
    let flatten =
        |fs: &[EdgeFunction]| fs.iter().flat_map(|f| f.coeffs().to_vec()).collect::<Vec<_>>();
    let e = flatten(estimates);
    let t = flatten(truth);
    if estimates.len() != truth.len() || e.len() != t.len() {
        return Err(IdentError::DictionaryMismatch {
            expected: t.len(),
            got: e.len(),
        });
    }
    let sum: f64 = e.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / e.len() as f64).sqrt())
}

/// Runs the full staged identification against the spec's true dynamics.
///
/// Stages execute sequentially (later stages consume earlier estimates);
/// within a stage the experiments run in parallel, each reproducible from
/// `(plan.seed, stage, experiment, retry)` alone, so the result does not
/// depend on thread count.
pub fn identify(
    spec: &NetworkSpec,
    plan: &ExperimentPlan,
    options: &IdentifyOptions,
) -> Result<IdentificationReport, IdentError> {
    let schedule = spec.identification_schedule()?;
    plan.validate(spec)?;
    let truth = spec.truth_functions()?;
    let mut known: Vec<Option<EdgeFunction>> = vec![None; spec.edges.len()];
    let mut stages = Vec::with_capacity(schedule.len());
    let mut jet_dumps = Vec::new();

    for (stage_index, stage) in schedule.iter().enumerate() {
        let needed = stage.dictionary_len(spec);
        let experiments = options.experiments.unwrap_or(3 * needed);
        if experiments < needed {
            return Err(IdentError::InsufficientExperiments {
                stage: stage_index,
                needed,
                got: experiments,
            });
        }
        let mut stage_plan = plan.clone();
        stage_plan.seed = rng::derive_seed(plan.seed, stage_index as u64);
        stage_plan.experiments = experiments;

        let gathered: Vec<Result<(Vec<f64>, f64, usize), IdentError>> = (0..experiments)
            .into_par_iter()
            .map(|experiment| {
                gather_observation(
                    spec,
                    &truth,
                    &known,
                    stage,
                    stage_index,
                    &stage_plan,
                    experiment,
                    options,
                )
            })
            .collect();
        let mut observations = Vec::with_capacity(experiments);
        let mut retries_total = 0;
        for item in gathered {
            let (x0, y, retries) = item?;
            retries_total += retries;
            observations.push((x0, y));
        }
        if options.collect_jets {
            for (experiment, (x0, target)) in observations.iter().enumerate() {
                jet_dumps.push(JetDump {
                    stage: stage_index,
                    experiment,
                    x0: x0.clone(),
                    target: *target,
                });
            }
        }

        let problem = stage_design(spec, stage, &known, &observations, &plan.inputs);
        let solution = solve(&problem, options.cond_limit, stage_index)?;

        let mut cursor = 0;
        for &edge in &stage.edges {
            let basis = spec.edges[edge.index()].basis.clone();
            let len = basis.len();
            let coeffs = solution.coefficients[cursor..cursor + len].to_vec();
            cursor += len;
            known[edge.index()] =
                Some(EdgeFunction::new(basis, coeffs).expect("aligned by construction"));
        }
        stages.push(StageDiagnostics {
            stage: stage_index,
            derivative_order: stage.derivative_order,
            sink: stage.sink,
            edges: stage.edges.clone(),
            experiments,
            condition: solution.condition,
            residual: solution.residual,
            retries: retries_total,
        });
    }

    let estimates: Vec<EdgeFunction> = known
        .into_iter()
        .map(|f| f.expect("every edge is scheduled exactly once"))
        .collect();
    let error = rmse(&estimates, &truth)?;
    Ok(IdentificationReport {
        estimates,
        stages,
        rmse: Some(error),
        jet_dumps,
    })
}

#[allow(clippy::too_many_arguments)]
fn gather_observation(
    spec: &NetworkSpec,
    truth: &[EdgeFunction],
    known: &[Option<EdgeFunction>],
    stage: &Stage,
    stage_index: usize,
    stage_plan: &ExperimentPlan,
    experiment: usize,
    options: &IdentifyOptions,
) -> Result<(Vec<f64>, f64, usize), IdentError> {
    let m = stage.derivative_order;
    for retry in 0..=options.max_retries {
        let x0 = sim::draw_initial_state(stage_plan, experiment, retry, &stage.zeroed_nodes);
        if !gate_initial_conditions(spec, stage, known, &x0, options) {
            continue;
        }
        let target = if options.exact_derivatives {
            deriv::propagate(spec, truth, &x0, &stage_plan.inputs, m).derivative(stage.sink, m)
        } else {
            let record = sim::run_experiment_from(spec, truth, stage_plan, experiment, x0.clone())
                .map_err(|source| IdentError::Simulation {
                    stage: stage_index,
                    source,
                })?;
            let sink_samples = record
                .samples
                .iter()
                .find(|s| s.node == stage.sink)
                .expect("sinks are measured");
            let derivatives = deriv::fit_start_derivatives(
                &sink_samples.values,
                stage_plan.sample_period,
                options.fit,
                m,
            )
            .map_err(|source| IdentError::Derivatives {
                stage: stage_index,
                source,
            })?;
            derivatives[m]
        };
        return Ok((x0, target, retry));
    }
    Err(IdentError::GatingExhausted {
        stage: stage_index,
        experiment,
        retries: options.max_retries,
    })
}

impl IdentificationReport {
    /// Coefficient table: `edge,basis,alpha_true,alpha_hat,abs_err`.
    pub fn coefficient_csv(&self, spec: &NetworkSpec) -> String {
        let mut out = String::from("edge,basis,alpha_true,alpha_hat,abs_err\n");
        for (i, estimate) in self.estimates.iter().enumerate() {
            let edge = &spec.edges[i];
            for (l, basis) in edge.basis.iter().enumerate() {
                let alpha_hat = estimate.coeffs()[l];
                let truth = edge.true_coeffs.as_ref().map(|c| c[l]);
                let (alpha_true, abs_err) = match truth {
                    Some(t) => (format!("{t}"), format!("{}", (alpha_hat - t).abs())),
                    None => (String::new(), String::new()),
                };
                out.push_str(&format!(
                    "{},{basis},{alpha_true},{alpha_hat},{abs_err}\n",
                    edge.label()
                ));
            }
        }
        out
    }

    /// Stage summary: `stage,order,sink,edges,experiments,condition,residual,retries`.
    pub fn stage_csv(&self, spec: &NetworkSpec) -> String {
        let mut out = String::from("stage,order,sink,edges,experiments,condition,residual,retries\n");
        for s in &self.stages {
            let edges = s
                .edges
                .iter()
                .map(|e| spec.edges[e.index()].label())
                .collect::<Vec<_>>()
                .join("+");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.stage,
                s.derivative_order,
                s.sink,
                edges,
                s.experiments,
                s.condition,
                s.residual,
                s.retries
            ));
        }
        out
    }

    /// Aligned text rendering for terminals.
    pub fn human_table(&self, spec: &NetworkSpec) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<10} {:>12} {:>12} {:>10}\n",
            "edge", "basis", "true", "estimate", "|err|"
        ));
        for (i, estimate) in self.estimates.iter().enumerate() {
            let edge = &spec.edges[i];
            for (l, basis) in edge.basis.iter().enumerate() {
                let alpha_hat = estimate.coeffs()[l];
                let (alpha_true, abs_err) = match edge.true_coeffs.as_ref().map(|c| c[l]) {
                    Some(t) => (
                        format!("{t:.4}"),
                        format!("{:.2e}", (alpha_hat - t).abs()),
                    ),
                    None => ("-".into(), "-".into()),
                };
                out.push_str(&format!(
                    "{:<8} {:<10} {:>12} {:>12.4} {:>10}\n",
                    edge.label(),
                    basis.to_string(),
                    alpha_true,
                    alpha_hat,
                    abs_err
                ));
            }
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<6} {:<6} {:<5} {:<14} {:>4} {:>10} {:>10} {:>8}\n",
            "stage", "order", "sink", "edges", "K", "cond", "residual", "retries"
        ));
        for s in &self.stages {
            let edges = s
                .edges
                .iter()
                .map(|e| spec.edges[e.index()].label())
                .collect::<Vec<_>>()
                .join("+");
            out.push_str(&format!(
                "{:<6} {:<6} {:<5} {:<14} {:>4} {:>10.3e} {:>10.3e} {:>8}\n",
                s.stage, s.derivative_order, s.sink, edges, s.experiments, s.condition, s.residual, s.retries
            ));
        }
        if let Some(rmse) = self.rmse {
            out.push_str(&format!("\nRMSE over all coefficients: {rmse:.6}\n"));
        }
        out
    }
}
