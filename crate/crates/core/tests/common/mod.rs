#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]
//! Checks shared between the unit-style suites and the acceptance binary.

pub mod brute;
pub mod grad;
