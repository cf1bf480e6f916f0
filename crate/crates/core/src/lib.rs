//! Non-negative matrix factorization of hourly air-quality station data,
//! rank selection by consensus clustering, and classification of each latent
//! feature as a domestic or transboundary pollution source from its
//! pollution-weighted wind rose.
//!
//! Typical pipeline:
//!
//! 1. [`ingest::parse_records`] + [`ingest::assemble`] + [`ingest::impute`]
//! 2. [`rank::select_rank`] to pick `k`
//! 3. [`nmf::factorize`]
//! 4. [`apportion::apportion`] to classify features and total their shares

pub mod apportion;
pub mod error;
pub mod ingest;
pub mod matrix;
pub mod meteorology;
pub mod nmf;
pub mod rank;
pub mod synth;

pub use apportion::{
    apportion, classify_feature, contribution_shares, validate_against, ApportionmentReport, ClassifierConfig,
    FeatureLabel, FeatureProfile, ReferenceRatios, Verdict,
};
pub use error::{Error, Result};
pub use ingest::{assemble, impute, parse_records, DataMatrix, ImputePolicy, Pollutant, WindRecord};
pub use matrix::{frobenius_sq_diff, matmul, Matrix};
pub use meteorology::{classify_speed, season_of, Season, SpeedClass, WindField, WindRose};
pub use nmf::{factorize, FactorModel, NmfConfig, NmfMode};
pub use rank::{consensus, select_rank, ConsensusResult, RankSelection};
pub use synth::{gen_dataset, gen_factors, Scenario, SourceRegime, SyntheticDataset};
