//! Portfolio optimization when volatility moves on a slow time scale.
//!
//! The building blocks are the Merton solution for a constant Sharpe ratio
//! ([`merton`]), the first-order correction in the slow time scale
//! ([`expansion`]), a Monte Carlo engine for checking both against the full
//! model ([`dynamics`], [`montecarlo`]) and the Riccati equations behind the
//! exact moments of the CIR factor ([`riccati`]).

pub mod dynamics;
pub mod error;
pub mod expansion;
pub mod merton;
pub mod montecarlo;
pub mod numdiff;
pub mod quadrature;
pub mod riccati;
pub mod roots;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
pub use merton::{merton_value, MertonMethod, MertonSolution};
pub use utility::{Utility, UtilityClass};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/utility.md")]
    mod utility {}
    #[doc = include_str!("../../../book/src/merton.md")]
    mod merton {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/expansion.md")]
    mod expansion {}
    #[doc = include_str!("../../../book/src/montecarlo.md")]
    mod montecarlo {}
    #[doc = include_str!("../../../book/src/riccati.md")]
    mod riccati {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
