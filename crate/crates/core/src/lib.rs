//! Core building blocks of the aviscape bird-monitoring platform.
//!
//! - [`audio`]: clip representation, WAV codec, mel analysis, band-pass
//!   filtering, augmentation and the synthetic species registry.
//! - [`classifier`]: template-matching species recognition, event detection,
//!   ranking metrics and the recognition-service wire contract.
//! - [`geo`]: the detection repository with its tile index, content-addressed
//!   clip store and trajectory extraction.
//! - [`soundscape`]: scene construction, constant-power panning, adaptive
//!   real/virtual mixing and offline rendering.
//! - [`game`]: quests, points and badges as an event-sourced profile.

pub mod audio;
pub mod classifier;
pub mod corpus;
pub mod game;
pub mod geo;
pub mod soundscape;
mod species;

pub use species::SpeciesId;
