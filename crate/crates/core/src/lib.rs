//! Trial-based cost-effectiveness analysis with repeated utility and cost measurements
//! that are missing at random.
//!
//! The pipeline: load long-format data ([`data`]), fit one repeated-measures mixed model
//! per outcome by maximum likelihood ([`mmrm`]), turn the coefficients into QALYs and
//! total costs ([`contrasts`]), and bootstrap the whole thing for the cost-effectiveness
//! plane and acceptability curve ([`cea`]). Complete-case and multiple-imputation
//! analyses ([`comparators`]) and a simulator with known truth ([`simulate`]) sit
//! alongside for comparison and validation.

pub mod cea;
pub mod comparators;
pub mod contrasts;
pub mod data;
pub mod linalg;
pub mod mmrm;
pub mod rng;
pub mod simulate;

pub use data::{Arm, Outcome, SubjectRecord, TrialDataset};
pub use mmrm::{fit, CovarianceStructure, FittedMmrm, MmrmSpec};
