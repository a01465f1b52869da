//! Promptable 3D tumor segmentation.

pub mod evalkit;
pub mod promptsim;
pub mod segnet;
pub mod session;
pub mod synthgen;
pub mod volgrid;
