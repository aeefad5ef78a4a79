//! Plain-text network descriptions.
//!
//! A spec file is line oriented. Blank lines and lines starting with `#`
//! are ignored. The directives are:
//!
//! ```text
//! nodes 4
//! class F_ZNL
//! edge 1 2 basis=mono:1,mono:2 coeff=-2,1.25
//! edge 2 3 basis=mono:1,sin:5
//! measured 3,4
//! ```
//!
//! * `nodes N` — number of nodes, ids `1..=N`. Required, exactly once.
//! * `class F_Z | F_ZNL` — assumed function class (default `F_Z`).
//! * `edge TAIL HEAD basis=<list> [coeff=<list>]` — a directed edge with a
//!   comma-separated dictionary (no spaces inside the list) and optional
//!   true coefficients for simulation. File order defines the edge ids.
//! * `measured <comma-separated node ids>` — measured nodes; repeated
//!   directives accumulate.
//!
//! Parsing also runs the structural validation of
//! [`NetworkSpec::validate`], so a successfully parsed network is acyclic,
//! weakly connected, and carries well-formed dictionaries.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dict::parse_basis_list;
use crate::graph::{Edge, FunctionClass, GraphError, NetworkSpec, NodeId};

/// Error while interpreting spec-file text.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing '{0}' directive")]
    MissingDirective(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Error while loading a spec file from disk.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },
    #[error("{path}: {cause}")]
    Parse {
        path: PathBuf,
        cause: ParseError,
    },
}

/// Reads and parses a spec file.
pub fn load(path: impl AsRef<Path>) -> Result<NetworkSpec, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|cause| LoadError::Io {
        path: path.to_path_buf(),
        cause,
    })?;
    parse_str(&text).map_err(|cause| LoadError::Parse {
        path: path.to_path_buf(),
        cause,
    })
}

/// Parses a network description and validates it structurally.
pub fn parse_str(input: &str) -> Result<NetworkSpec, ParseError> {
    let syntax = |line: usize, message: String| ParseError::Syntax { line, message };
    let mut node_count: Option<usize> = None;
    let mut class: Option<FunctionClass> = None;
    let mut edges: Vec<Edge> = Vec::new();
    let mut measured: BTreeSet<NodeId> = BTreeSet::new();

    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut tokens = text.split_whitespace();
        let directive = tokens.next().expect("non-empty line has a first token");
        let rest: Vec<&str> = tokens.collect();
        match directive {
            "nodes" => {
                if node_count.is_some() {
                    return Err(syntax(line, "'nodes' declared twice".into()));
                }
                let [value] = rest.as_slice() else {
                    return Err(syntax(line, "expected 'nodes N'".into()));
                };
                let n: usize = value
                    .parse()
                    .map_err(|_| syntax(line, format!("invalid node count '{value}'")))?;
                if n == 0 {
                    return Err(syntax(line, "a network needs at least one node".into()));
                }
                node_count = Some(n);
            }
            "class" => {
                if class.is_some() {
                    return Err(syntax(line, "'class' declared twice".into()));
                }
                let [value] = rest.as_slice() else {
                    return Err(syntax(line, "expected 'class F_Z' or 'class F_ZNL'".into()));
                };
                class = Some(match *value {
                    "F_Z" => FunctionClass::Analytic,
                    "F_ZNL" => FunctionClass::Nonlinear,
                    other => {
                        return Err(syntax(
                            line,
                            format!("unknown class '{other}' (expected F_Z or F_ZNL)"),
                        ))
                    }
                });
            }
            "edge" => {
                if rest.len() < 3 {
                    return Err(syntax(
                        line,
                        "expected 'edge TAIL HEAD basis=<list> [coeff=<list>]'".into(),
                    ));
                }
                let tail = parse_node(rest[0], line)?;
                let head = parse_node(rest[1], line)?;
                let mut basis = None;
                let mut coeff = None;
                for field in &rest[2..] {
                    let (key, value) = field.split_once('=').ok_or_else(|| {
                        syntax(line, format!("expected KEY=VALUE, found '{field}'"))
                    })?;
                    match key {
                        "basis" => {
                            if basis.is_some() {
                                return Err(syntax(line, "'basis' given twice".into()));
                            }
                            basis = Some(parse_basis_list(value).map_err(|e| {
                                syntax(line, e.to_string())
                            })?);
                        }
                        "coeff" => {
                            if coeff.is_some() {
                                return Err(syntax(line, "'coeff' given twice".into()));
                            }
                            let values: Result<Vec<f64>, _> = value
                                .split(',')
                                .map(|v| {
                                    v.parse::<f64>().map_err(|_| {
                                        syntax(line, format!("invalid coefficient '{v}'"))
                                    })
                                })
                                .collect();
                            coeff = Some(values?);
                        }
                        other => {
                            return Err(syntax(line, format!("unknown edge field '{other}'")));
                        }
                    }
                }
                let basis = basis
                    .ok_or_else(|| syntax(line, "edge is missing its basis=<list> field".into()))?;
                edges.push(Edge {
                    tail,
                    head,
                    basis,
                    true_coeffs: coeff,
                });
            }
            "measured" => {
                let [value] = rest.as_slice() else {
                    return Err(syntax(line, "expected 'measured <ids>'".into()));
                };
                for part in value.split(',') {
                    measured.insert(parse_node(part, line)?);
                }
            }
            other => {
                return Err(syntax(line, format!("unknown directive '{other}'")));
            }
        }
    }

    let node_count = node_count.ok_or(ParseError::MissingDirective("nodes"))?;
    let spec = NetworkSpec::new(
        node_count,
        edges,
        measured,
        class.unwrap_or(FunctionClass::Analytic),
    );
    spec.validate()?;
    Ok(spec)
}

fn parse_node(token: &str, line: usize) -> Result<NodeId, ParseError> {
    let id: usize = token.parse().map_err(|_| ParseError::Syntax {
        line,
        message: format!("invalid node id '{token}'"),
    })?;
    if id == 0 {
        return Err(ParseError::Syntax {
            line,
            message: "node ids start at 1".into(),
        });
    }
    Ok(NodeId(id))
}
