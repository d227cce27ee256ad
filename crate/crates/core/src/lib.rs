//! Fairness-aware DC load shedding.
//!
//! The crate builds the load-shedding quadratic program for a grid case,
//! solves it with an interior-point method, learns which inequality rows bind
//! as a function of nodal demand, and answers new demands by solving the
//! reduced KKT system of the predicted binding pattern.

pub mod case_file;
pub mod error;
pub mod grid;
pub mod kkt;
pub mod learn;
pub mod linalg;
pub mod qp;
pub mod risk;
pub mod solver;
pub mod synthetic;

pub use case_file::{load_case, parse_case, write_case};
pub use error::{BindingError, CaseError, KktError, LearnError, QpError, RiskError};
pub use grid::GridCase;
pub use qp::{build, LoadVector, QuadraticProgram};
pub use solver::{
    binding_status, solve, BindingPattern, BindingSource, PrimalDualSolution, SolveStatus,
    SolverOptions,
};

#[cfg(test)]
pub(crate) mod testing {
    use crate::grid::{Bus, FairnessParams, Generator, GridCase, Line, LoadPoint};

    pub fn three_bus() -> GridCase {
        crate::synthetic::three_bus()
    }

    /// Three buses in a triangle, generators at buses 1 and 2, a load at
    /// every bus.
    pub fn triangle_case() -> GridCase {
        let bus = |id: i64| Bus {
            id,
            theta_min: -std::f64::consts::FRAC_PI_2,
            theta_max: std::f64::consts::FRAC_PI_2,
            is_reference: id == 1,
        };
        let line = |from: i64, to: i64, f_max: f64| Line {
            from,
            to,
            b: 10.0,
            f_min: -f_max,
            f_max,
        };
        let gen = |bus: i64, a: f64, g_max: f64| Generator {
            bus,
            a,
            b_lin: 5.0,
            c: 1.0,
            g_min: 0.0,
            g_max,
        };
        let load = |bus: i64, d: f64| LoadPoint { bus, d, s_max: 0.5 };
        GridCase {
            name: "triangle".into(),
            base_mva: 100.0,
            buses: (1..=3).map(bus).collect(),
            lines: vec![line(1, 2, 40.0), line(2, 3, 40.0), line(1, 3, 40.0)],
            generators: vec![gen(1, 0.02, 60.0), gen(2, 0.05, 40.0)],
            loads: vec![load(1, 30.0), load(2, 25.0), load(3, 55.0)],
            features: vec![vec![0.2, 0.9, 0.4]],
            fairness: FairnessParams {
                gamma: 2.0,
                delta: None,
                epsilon: 1.0,
            },
            lambda: 1000.0,
            copper_plate: false,
        }
    }
}
