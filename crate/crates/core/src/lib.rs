//! Desk-scale FNH-TTS.

pub mod acoustic;
pub mod cli;
pub mod audio;
pub mod data;
pub mod discriminators;
pub mod evaluation;
pub mod moe_dp;
mod error;
pub mod nn;
pub mod plot;
pub mod signal;
pub mod textgrid;
pub mod training;
pub mod vocoder;

pub use error::{Result, TtsError};
