//! Parameter-space reduction for affine linear parameter-varying (LPV) models.
//!
//! The crate covers the model container ([`model`]), parameter-dependent
//! Gramians from linear matrix inequalities ([`gramians`]), system norms
//! ([`norms`]), Hankel-based projection search ([`reduce`]) and the
//! sensitivity-based projections ([`sensitivity`]).

pub mod error;
pub mod gramians;
pub mod linalg;
pub mod model;
pub mod norms;
pub mod reduce;
pub mod sdp;
pub mod sensitivity;

pub use error::{Error, Result};
pub use model::{AffineLpvModel, LtiRealization, ParameterBox, ParameterProjection, TimeKind};
