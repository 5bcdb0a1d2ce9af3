//! Spectra of the correlation operator K and of P^(0), Dirichlet-form and
//! spectral-gap estimators, the trial-function decomposition and the gap
//! ladder.

pub mod autocorr;
pub mod basis;
pub mod decompose;
pub mod dirichlet;
pub mod kspec;
pub mod ladder;
pub mod report;
pub mod trial;
pub mod variational;

pub use basis::SingleParticleBasis;
pub use trial::{SumForm, TrialFunction};
