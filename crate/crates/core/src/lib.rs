//! Certification of almost-Lyapunov functions.

pub mod expr;
pub mod field;
pub mod linalg;
pub mod badset;
pub mod bounds;
pub mod grid;
pub mod num;
pub mod rate;
pub mod certificate;
pub mod guas;
pub mod tube;
pub mod trajectory;
