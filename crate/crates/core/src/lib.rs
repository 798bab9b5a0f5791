//! Dipole-shift data augmentation for EEG motor-imagery classification.
//!
//! A recording is split into oscillatory sources with spatio-spectral
//! decomposition ([`ssd`]), each source pattern is localized as a single
//! current dipole in a three-shell spherical head model ([`headmodel`],
//! [`dipolefit`]), and the dipoles are moved to neighbouring grid voxels to
//! synthesize recordings of imaginary participants ([`augment`]). The
//! [`classify`] and [`harness`] modules provide the log-variance/shrinkage-LDA
//! pipeline and a leave-one-participant-out comparison, run on ground-truth
//! scenes from [`synthscene`].

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod classify;
pub mod dipolefit;
pub mod error;
pub mod harness;
pub mod headmodel;
pub mod io;
pub mod linmodel;
pub mod montage;
pub mod rng;
pub mod ssd;
pub mod synthscene;

pub use error::{Error, Result};
