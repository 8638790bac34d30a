//! Velocity fields, condition checks and the switched/averaged integrators.

mod conditions;
mod field;
mod integrate;

pub use conditions::{check_conditions, ConditionReport};
pub use field::{FieldKind, VelocityField};
pub use integrate::{
    integrate_averaged, integrate_drift, integrate_switched, sup_deviation, AveragedPath, SwitchedPath,
};
