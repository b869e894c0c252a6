//! The guide in `book/` compiled as documentation, so that `cargo test` runs
//! every Rust snippet in it. One module per chapter keeps failures traceable
//! to their chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}
#[doc = include_str!("../../../book/src/audio.md")]
pub mod audio {}
#[doc = include_str!("../../../book/src/encoders.md")]
pub mod encoders {}
#[doc = include_str!("../../../book/src/feature-store.md")]
pub mod feature_store {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
