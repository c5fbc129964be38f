//! Compiles and runs the code blocks of the user guide under `book/` as
//! doc-tests. One module per chapter so a failure names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/coefficients.md")]
pub mod coefficients {}

#[doc = include_str!("../../../book/src/ledger.md")]
pub mod ledger {}

#[doc = include_str!("../../../book/src/solving.md")]
pub mod solving {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
