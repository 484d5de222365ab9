//! Built-in benchmark problems shared by the test suite and the CLI.
//!
//! Each entry bundles a system, at least one CLF that passes the sampled
//! check, default weights, suggested initial states, and the analytically
//! known reference quantities with their provenance. Derived references are
//! recomputed from their closed forms at test time.

use crate::care::LinearSystem;
use crate::expr::Expression;
use crate::model::{ClfCandidate, SystemModel, Weights};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("unknown catalog entry `{name}`; available: {available:?}")]
    UnknownEntry {
        name: String,
        available: Vec<&'static str>,
    },
}

/// Where a reference number comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Asserted in the source literature; verified numerically here.
    Literature,
    /// Immediate arithmetic, no derivation needed.
    Elementary,
    /// Derived by hand from a closed form; regenerated by the test oracle.
    Derived,
}

/// A named reference quantity with provenance and its closed form as text.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceValue {
    pub key: &'static str,
    pub value: f64,
    pub provenance: Provenance,
    pub note: &'static str,
}

/// A named CLF candidate of an entry; the first one listed is the primary.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedClf {
    pub name: &'static str,
    pub clf: ClfCandidate,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub system: SystemModel,
    /// Candidate CLFs; at least the first passes `check_clf`.
    pub clfs: Vec<NamedClf>,
    pub weights: Weights,
    pub references: Vec<ReferenceValue>,
    pub default_initial_states: Vec<Vec<f64>>,
    /// Exact linear form `(A, B)` when the system is linear.
    pub linear: Option<LinearSystem>,
}

impl CatalogEntry {
    pub fn primary_clf(&self) -> &NamedClf {
        &self.clfs[0]
    }

    pub fn reference(&self, key: &str) -> Option<&ReferenceValue> {
        self.references.iter().find(|r| r.key == key)
    }
}

const NAMES: [&str; 4] = ["cubic1d", "damped1d", "double_integrator", "integrator1d"];

/// Entry names in deterministic alphabetical order.
pub fn list_entries() -> Vec<&'static str> {
    NAMES.to_vec()
}

/// Look up a benchmark problem by name.
pub fn get_entry(name: &str) -> Result<CatalogEntry, CatalogError> {
    match name {
        "cubic1d" => Ok(cubic1d()),
        "damped1d" => Ok(damped1d()),
        "double_integrator" => Ok(double_integrator()),
        "integrator1d" => Ok(integrator1d()),
        _ => Err(CatalogError::UnknownEntry {
            name: name.to_owned(),
            available: list_entries(),
        }),
    }
}

fn expr(src: &str, dim: usize) -> Expression {
    Expression::parse(src, dim).expect("catalog expression")
}

fn clf(name: &'static str, src: &str, dim: usize) -> NamedClf {
    NamedClf {
        name,
        clf: ClfCandidate::new(expr(src, dim)).expect("catalog CLF"),
    }
}

fn scalar_linear(a: f64, b: f64) -> LinearSystem {
    LinearSystem::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, b),
    )
    .expect("scalar linear system")
}

fn integrator1d() -> CatalogEntry {
    let system =
        SystemModel::new(vec![expr("0", 1)], vec![vec![expr("1", 1)]]).expect("catalog system");
    CatalogEntry {
        name: "integrator1d",
        description: "pure integrator x' = u",
        system,
        clfs: vec![
            clf("canonical", "0.5*x1^2", 1),
            clf("steep", "x1^2", 1),
        ],
        weights: Weights::identity(1, 1),
        references: vec![
            ReferenceValue {
                key: "lambda.anywhere",
                value: 1.0,
                provenance: Provenance::Derived,
                note: "sqrt(q/beta) with q = beta = x^2 under unit weights",
            },
            ReferenceValue {
                key: "feedback.at_1",
                value: -1.0,
                provenance: Provenance::Elementary,
                note: "u = -x",
            },
            ReferenceValue {
                key: "cost.j4_from_1",
                value: 0.5,
                provenance: Provenance::Derived,
                note: "J4 = V(x0) = x0^2/2",
            },
        ],
        default_initial_states: vec![vec![1.0]],
        linear: Some(scalar_linear(0.0, 1.0)),
    }
}

fn cubic1d() -> CatalogEntry {
    let system =
        SystemModel::new(vec![expr("x1^3", 1)], vec![vec![expr("1", 1)]]).expect("catalog system");
    CatalogEntry {
        name: "cubic1d",
        description: "unstable cubic drift x' = x^3 + u",
        system,
        clfs: vec![
            clf("canonical", "0.5*x1^2", 1),
            clf("quartic", "0.25*x1^4", 1),
        ],
        weights: Weights::identity(1, 1),
        references: vec![
            ReferenceValue {
                key: "lambda.at_1",
                value: 1.0 + std::f64::consts::SQRT_2,
                provenance: Provenance::Derived,
                note: "lambda(x) = x^2 + sqrt(x^4 + 1) at x = 1",
            },
            ReferenceValue {
                key: "feedback.at_1",
                value: -(1.0 + std::f64::consts::SQRT_2),
                provenance: Provenance::Derived,
                note: "u(x) = -(x^3 + x sqrt(x^4 + 1)) at x = 1",
            },
            ReferenceValue {
                key: "vdot.at_1",
                value: -std::f64::consts::SQRT_2,
                provenance: Provenance::Derived,
                note: "a + b u = 1 - (1 + sqrt2)",
            },
            ReferenceValue {
                key: "cost.j4_from_1",
                value: 0.5,
                provenance: Provenance::Derived,
                note: "J4 = V(x0) = x0^2/2",
            },
        ],
        default_initial_states: vec![vec![1.0]],
        linear: None,
    }
}

fn damped1d() -> CatalogEntry {
    let system =
        SystemModel::new(vec![expr("-x1", 1)], vec![vec![expr("1", 1)]]).expect("catalog system");
    CatalogEntry {
        name: "damped1d",
        description: "stable drift x' = -x + u; lambda is constant",
        system,
        clfs: vec![
            clf("canonical", "0.5*x1^2", 1),
            clf("steep", "x1^2", 1),
        ],
        weights: Weights::identity(1, 1),
        references: vec![
            ReferenceValue {
                key: "lambda.anywhere",
                value: std::f64::consts::SQRT_2 - 1.0,
                provenance: Provenance::Derived,
                note: "(-x^2 + sqrt(2) x^2) / x^2, independent of x",
            },
            ReferenceValue {
                key: "feedback.at_1",
                value: 1.0 - std::f64::consts::SQRT_2,
                provenance: Provenance::Derived,
                note: "u = -lambda x at x = 1",
            },
        ],
        default_initial_states: vec![vec![1.0]],
        linear: Some(scalar_linear(-1.0, 1.0)),
    }
}

fn double_integrator() -> CatalogEntry {
    let system = SystemModel::new(
        vec![expr("x2", 2), expr("0", 2)],
        vec![vec![expr("0", 2)], vec![expr("1", 2)]],
    )
    .expect("catalog system");
    let s3 = 3f64.sqrt();
    let riccati_v = format!("0.5*({s3:?}*x1^2 + 2*x1*x2 + {s3:?}*x2^2)");
    let linear = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    )
    .expect("double integrator");
    CatalogEntry {
        name: "double_integrator",
        description: "x1' = x2, x2' = u with the Riccati CLF x'Px/2",
        system,
        clfs: vec![
            NamedClf {
                name: "riccati",
                clf: ClfCandidate::new(expr(&riccati_v, 2)).expect("catalog CLF"),
            },
            clf("quadratic_alt", "0.5*(2*x1^2 + 2*x1*x2 + 2*x2^2)", 2),
        ],
        weights: Weights::identity(2, 1),
        references: vec![
            ReferenceValue {
                key: "care.p11",
                value: s3,
                provenance: Provenance::Derived,
                note: "P = ((sqrt3, 1), (1, sqrt3)) zeroes the Riccati residual",
            },
            ReferenceValue {
                key: "care.p12",
                value: 1.0,
                provenance: Provenance::Derived,
                note: "off-diagonal entry of the hand CARE solution",
            },
            ReferenceValue {
                key: "gain.k1",
                value: 1.0,
                provenance: Provenance::Derived,
                note: "K = R^-1 B'P = (1, sqrt3)",
            },
            ReferenceValue {
                key: "gain.k2",
                value: s3,
                provenance: Provenance::Derived,
                note: "K = R^-1 B'P = (1, sqrt3)",
            },
            ReferenceValue {
                key: "lambda.riccati_clf",
                value: 1.0,
                provenance: Provenance::Literature,
                note: "the distortion factor is identically one for the value-function CLF",
            },
            ReferenceValue {
                key: "cost.j4_from_(1,0)",
                value: s3 / 2.0,
                provenance: Provenance::Derived,
                note: "J4 = J5 = x0'P x0 / 2 = sqrt3/2",
            },
            ReferenceValue {
                key: "feedback.at_(1,1)",
                value: -(1.0 + s3),
                provenance: Provenance::Derived,
                note: "u = -Kx at (1, 1)",
            },
        ],
        default_initial_states: vec![vec![1.0, 0.0]],
        linear: Some(linear),
    }
}
