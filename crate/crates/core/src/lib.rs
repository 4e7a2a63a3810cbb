//! Interactive room and location inference for ambiguous object descriptions.
//!
//! A knowledge backend scores candidate rooms and locations from known object
//! features. When the top candidate is not confident enough, the engine asks
//! about the feature type whose answer is expected to reduce the entropy of
//! the prediction the most, then predicts the room and, conditioned on it,
//! the location.

pub mod backend;
pub mod clarify;
pub mod controller;
pub mod corpus;
pub mod eval;
pub mod parsing;
pub mod schema;
pub mod synth;
