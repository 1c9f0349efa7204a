//! Library for simulating federated screening of beta-thalassemia carriers
//! from complete blood count records.
//!
//! The pipeline: ingest raw CBC measurements ([`ingest`]), normalize them
//! into discrete bins ([`preprocess`]), train local models on per-client
//! shards ([`learners`]), and combine the clients' models into a global one
//! over a message transport ([`federation`]). [`synthgen`] produces synthetic
//! raw datasets with the marginals of the reference screening cohort, and
//! [`metrics`] evaluates and reports model quality.

pub mod domain;
pub mod federation;
pub mod ingest;
pub mod learners;
pub mod metrics;
pub mod preprocess;
pub mod synthgen;
