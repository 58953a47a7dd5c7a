//! Mobile data trading with rollover.
//!
//! Users on a capped monthly data plan trade data with the operator every slot.
//! Short-term data expires at month end; unused long-term data rolls over into
//! the next month. [`policy`] solves each user's optimal trading thresholds,
//! [`market`] aggregates them into curves and picks revenue-maximizing clearing
//! prices, and [`sim`] runs whole contracts over a population.

pub mod demand;
pub mod error;
pub mod market;
pub mod model;
pub mod policy;
pub mod sim;

pub use error::{DemandError, MarketError, ModelError, PolicyError, SimError};
