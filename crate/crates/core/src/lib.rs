// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpf;
pub mod certificate;
pub mod expr;
pub mod inner;
pub mod lagrangian;
pub mod lp;
pub mod model;
pub mod problems;
