//! Firm-level technology diffusion mapping from company websites.
//!
//! The crate is organised as a chain of stages, each usable on its own:
//!
//! * [`registry`] loads the firm population and derives size, age and sector classes.
//! * [`fetcher`] retrieves website pages, live or from an offline archive.
//! * [`extractor`] zones HTML into paragraphs and emits keyword-in-context data points.
//! * [`embedder`] turns data points into fixed-length semantic vectors.
//! * [`classifier`] trains and applies the 10-model voting ensemble.
//! * [`aggregator`] lifts point predictions to company labels and tabulates them.
//! * [`geo`] computes regional intensity, hotspots, heat grids and GeoJSON layers.
//!
//! Data-parallel loops go through [`exec::Execution`], which falls back to
//! sequential iteration when the `parallel` feature is disabled.

pub mod aggregator;
pub mod classifier;
pub mod embedder;
pub mod exec;
pub mod extractor;
pub mod fetcher;
pub mod geo;
pub mod labels;
pub mod ndjson;
pub mod registry;

pub use exec::Execution;
pub use labels::{FinalLabel, InitialLabel};
