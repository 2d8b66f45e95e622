//! Deterministic driving environment that produces exactly labeled
//! direct-perception affordance datasets, a small bounded-output regressor
//! trained on them, and corner-case scenario analysis (occlusion and
//! time-to-collision under parameter sweeps).

pub mod affordance;
pub mod control;
pub mod dataset;
pub mod geom;
pub mod ingest;
pub mod learn;
pub mod raster;
pub mod rng;
pub mod sim;
pub mod road;
pub mod scenario;
pub mod world;
