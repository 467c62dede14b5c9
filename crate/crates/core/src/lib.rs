pub mod agreement;
pub mod corpus;
pub mod error;
pub mod ensemble;
pub mod explain;
pub mod faithfulness;
pub mod features;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/explanations.md")]
    mod explanations {}
    #[doc = include_str!("../../../book/src/faithfulness.md")]
    mod faithfulness {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
