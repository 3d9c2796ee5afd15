pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod prior;
pub mod params;
pub mod attention;
pub mod relgraph;
pub mod fusion;
pub mod model;
pub mod eval;
pub mod data;
pub mod config;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/prior.md")]
    mod prior {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
