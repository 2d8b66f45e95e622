//! Command line verbs and the HTTP service of drivelab.

pub mod api;
pub mod commands;
