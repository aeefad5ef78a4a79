//! Simulation and identification of nonlinear dynamics on directed acyclic
//! networks.
//!
//! A network couples scalar node states through nonlinear functions sitting
//! on directed edges: the state of node `i` evolves as the sum of the edge
//! functions applied to its in-neighbors plus a constant input,
//!
//! ```text
//! dx_i/dt = sum over in-edges (j -> i) of f_ij(x_j)  +  u_i
//! ```
//!
//! Edge functions vanish at the origin and are drawn from a dictionary of
//! analytic basis functions ([`dict`]). Given measurements of the sink nodes
//! only, the edge functions can be recovered one layer at a time: an edge
//! that sits `k` steps upstream of a sink shows up in the `k`-th time
//! derivative of that sink at the start of an experiment. The [`ident`]
//! module turns that observation into a sequence of linear least-squares
//! problems over the dictionary coefficients.
//!
//! The crate is organized around the pipeline:
//!
//! * [`graph`] — network structure, validation, measurement requirements,
//!   and the stage-by-stage identification schedule.
//! * [`dict`] — basis functions with exact derivatives of every order.
//! * [`sim`] — fixed-step integration of experiments, sampling, and
//!   reproducible measurement noise.
//! * [`deriv`] — derivative estimation from samples and exact Taylor jets
//!   propagated through the network.
//! * [`ident`] — gating of initial conditions, design-matrix assembly,
//!   least-squares solving, and the full staged recovery.
//! * [`specfile`] — the plain-text network description format used by the
//!   `netident` command-line tool.
//!
//! # Example
//!
//! Recover both edge functions of a three-node chain from exact sink
//! derivatives:
//!
//! ```
//! use netident::specfile;
//! use netident::ident::{identify, IdentifyOptions};
//! use netident::sim::ExperimentPlan;
//!
//! let spec = specfile::parse_str(
//!     "nodes 3\n\
//!      class F_ZNL\n\
//!      edge 1 2 basis=mono:1,mono:2 coeff=-2,1.25\n\
//!      edge 2 3 basis=mono:1,mono:2,mono:3 coeff=-1,0.7,-0.6\n\
//!      measured 3\n",
//! )?;
//! let plan = ExperimentPlan::uniform(&spec, 12, 0.4, 10, 0.0, 7);
//! let mut options = IdentifyOptions::default();
//! options.exact_derivatives = true;
//!
//! let report = identify(&spec, &plan, &options)?;
//! assert!(report.rmse.unwrap() < 1e-8);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

#![forbid(unsafe_code)]

pub mod deriv;
pub mod dict;
pub mod graph;
pub mod ident;
mod rng;
pub mod sim;
pub mod specfile;

pub use graph::{Edge, EdgeId, FunctionClass, NetworkSpec, NodeId, Stage};

// Every fenced Rust block in the guide compiles and runs as a doc-test, so
// the book cannot drift from the library. One module per chapter keeps test
// failures attributable to a single file.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network-model.md")]
    mod network_model {}
    #[doc = include_str!("../../../book/src/measurements.md")]
    mod measurements {}
    #[doc = include_str!("../../../book/src/dictionaries.md")]
    mod dictionaries {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/derivatives.md")]
    mod derivatives {}
    #[doc = include_str!("../../../book/src/identification.md")]
    mod identification {}
    #[doc = include_str!("../../../book/src/noise-sweeps.md")]
    mod noise_sweeps {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
