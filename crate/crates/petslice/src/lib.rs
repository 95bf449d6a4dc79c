//! petslice: a leakage-aware experimental pipeline for binary classification of
//! axial PET/CT slices (tumor-intercepting vs. not) on synthetic multi-center
//! phantom cohorts.
//!
//! The crate is organized around the experiment stages:
//!
//! - [`nn`] — minimal tensor/layer library with hand-derived backward passes
//!   and an Adam optimizer (the numerical substrate for the classifier).
//! - [`phantom`] — synthetic multi-center PET/CT cohort generation with planted
//!   tumors, multi-rater mask simulation, and STAPLE label fusion.
//! - [`preprocess`] — resampling, 3D median filtering, clipping/normalization,
//!   resizing, and channel stacking that turn volumes into labeled 2D inputs.
//! - [`datasplit`] — slice-level vs. patient-level splits, CAW/CAG regimes,
//!   and leakage auditing.
//! - [`classifier`] — model assembly, focal loss, the training loop with
//!   best-validation checkpointing, and scoring.
//! - [`metrics`] — exact ROC/AUROC, PR/AUPRC, confusion matrices, binary
//!   metrics at set and patient level, SUVmax histograms, and the
//!   sensitivity-vs-SUVmax sweep.
//! - [`experiment`] — config-driven orchestration of the full grid with
//!   deterministic, cached stage artifacts.
//!
//! Everything is deterministic for a given master seed: stage seeds are derived
//! via [`seed::derive_seed`], all randomness flows through ChaCha8, and float
//! accumulation orders are fixed.

pub mod classifier;
pub mod datasplit;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod seed;

pub use error::{Error, Result};
