pub mod agent;
pub mod env;
pub mod harness;
pub mod error;
pub mod kg;
pub mod memory;
pub mod neural;
pub mod oracle;
pub mod policies;
pub mod rl;
pub mod seed;

pub use error::{Error, ParseKindError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
}
