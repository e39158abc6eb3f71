//! Each chapter of the guide in `book/src` becomes a module so `cargo test`
//! runs its snippets as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/fields.md")]
pub mod fields {}
#[doc = include_str!("../../../book/src/flow.md")]
pub mod flow {}
#[doc = include_str!("../../../book/src/scale_monitor.md")]
pub mod scale_monitor {}
#[doc = include_str!("../../../book/src/neck_decay.md")]
pub mod neck_decay {}
#[doc = include_str!("../../../book/src/bubble_tree.md")]
pub mod bubble_tree {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
