//! File-backed front end for progressive multi-object image generation:
//! backend specs, the run directory layout, trajectory blobs, manifest
//! validation, replay verification, and questionnaire scoring. The `easel`
//! binary is a thin clap wrapper over these modules.

pub mod blob;
pub mod cmdport;
pub mod config;
pub mod evalcmd;
pub mod imageio;
pub mod manifest;
pub mod persist;
pub mod replay;
pub mod specs;
