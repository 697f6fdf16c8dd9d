//! HTTP screening service: averages the fold models' predictions for uploaded
//! images or recordings and collects labelled contributions for review.

pub mod api;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod media;
pub mod store;

pub use api::{router, serve, AppState};
pub use config::ServiceConfig;
pub use ensemble::{load_ensemble, Ensemble, MemberOutput, PredictionResult};
pub use error::{ApiError, ServiceError};
pub use store::{ClaimedLabel, ContributionRecord, ContributionStore, NewContribution, ReviewDecision, ReviewStatus};

/// Reported as `version` in every response body.
pub const API_VERSION: &str = env!("CARGO_PKG_VERSION");
