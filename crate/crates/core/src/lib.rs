//! Distributionally robust portfolio selection with loss aversion and a
//! cardinality constraint.

pub mod backtest;
pub mod dynamics;
pub mod market_data;
pub mod miqp;
pub mod model;
mod par;
pub mod qp;
pub mod rng;
pub mod search;
pub mod synthetic;
pub mod worst_case;
