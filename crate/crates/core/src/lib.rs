#![allow(clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod data;
pub mod datagen;
pub mod divergence;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod split;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
