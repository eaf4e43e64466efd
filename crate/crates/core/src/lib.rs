#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod consistency;
pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod marginal;
pub mod pipeline;
pub mod privacy;
pub mod selection;
pub mod synthesis;
