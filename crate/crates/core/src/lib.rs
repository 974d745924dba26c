#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod explain;
pub mod ndcore;
pub mod nn;
pub mod seed;
pub mod train;
