//! Model-free image-based navigation of a magnetically steered flexible endoscope.

pub mod geometry;
pub mod magnetics;
pub mod mosaic;
pub mod plant;
pub mod scene;
pub mod servo;
pub mod sim;
pub mod vision;
pub mod workspace;
