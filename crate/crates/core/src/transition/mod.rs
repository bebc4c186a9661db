//! The two-chart problem: maps on the two domains related by a chart transition on the overlap.

pub mod chart;
pub mod glue;
pub mod hatq;
pub mod pair;
pub mod runge;
pub mod vekua;

pub use chart::{ChartMap, ChartTransition, Pullback};
pub use glue::{glue_pair, seed_chart_pair, PairDiagnostics};
pub use hatq::{compatible_probes, corrected_pair_inverse, HatQ, HatQDefect, HatQParts, PairInverse};
pub use pair::{pair_lp, pair_w1p, preglue_pair, PairPreglue, PairState};
pub use runge::{runge_polynomial, RungePolynomial};
pub use vekua::{vekua_solve, VekuaSolution};
