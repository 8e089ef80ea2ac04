//! Exact first- and second-order derivatives of scalar functions `φ(λ, θ)`.
//!
//! Second-order products use forward-over-reverse: input tangents are seeded
//! while the function is recorded, and the reverse sweep propagates dual
//! adjoints. One sweep costs a small constant times one evaluation and
//! yields `∇φ` together with one Hessian-vector product. Neither the θ×θ
//! nor the λ×θ block of the Hessian is ever materialized.

mod dual;
mod field;
mod tape;

pub use dual::Dual;
pub use field::{ScalarField, Sweep};
pub use tape::{Tape, Var};
