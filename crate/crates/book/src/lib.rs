//! Compiles the guide's snippets as doc tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/groups.md")]
mod groups {}

#[doc = include_str!("../../../book/src/fourier.md")]
mod fourier {}

#[doc = include_str!("../../../book/src/networks.md")]
mod networks {}

#[doc = include_str!("../../../book/src/analysis.md")]
mod analysis {}

#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
