//! Multiview geolocation of social-media users.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod geo;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod text;
pub mod util;
