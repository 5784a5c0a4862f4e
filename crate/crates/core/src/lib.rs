//! Federated spatiotemporal forecasting at desk scale.
//!
//! The crate trains a graph-recurrent forecaster (LSTM encoder, multihead
//! temporal attention, dynamic-embedding adaptive graph-convolutional
//! recurrent network) on per-client spatiotemporal datasets and federates
//! the clients with uniform FedAvg aggregation plus a client-side
//! validation step that adopts aggregated parameters module by module only
//! when they improve local validation loss.
//!
//! Layers, bottom up:
//! - [`scalar`] / [`tensor`]: dense tensors with tape-based reverse-mode
//!   differentiation and a finite-difference gradient checker.
//! - [`model`]: the forecaster, its parameter bundle and payload accounting.
//! - [`data`]: synthetic generation, CSV ingestion, calendar features,
//!   chronological splits, standardization, sliding windows.
//! - [`training`]: MAE/MSE loss, Adam, mini-batch training with early
//!   stopping, evaluation metrics and the seasonal-naive baseline.
//! - [`federation`]: round loop, FedAvg, client-side validation, parameter
//!   codec and in-process/socket transports.
//! - [`config`] / [`report`] / [`runner`]: run configuration, report
//!   emission and the command entry points used by the `fedcast` binary.

pub mod config;
pub mod data;
pub mod federation;
pub mod model;
pub mod report;
pub mod runner;
pub mod scalar;
pub mod tensor;
pub mod training;
