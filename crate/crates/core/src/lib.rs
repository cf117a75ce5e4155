//! Weekly pork price forecasting under data-lag scenarios.
//!
//! The numerical layer (`linalg`, the regression, tree and neural models,
//! `analysis` and the metrics in `evaluation`) is generic over [`Scalar`].
//! Seasonal ARIMA and the pipeline layer run on `f64`; the aliases below
//! name the concrete types.

pub mod analysis;
pub mod domain;
pub mod evaluation;
pub mod families;
pub mod ingest;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod tuning;
pub mod windowing;

pub use domain::{IsoWeek, LagScenario, MarketId, MarketSeries, Price, PriceObservation, PublicationCalendar};
pub use ingest::PricePanel;
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Dataset = windowing::SupervisedDataset<f64>;
pub type LinearModel = models::regression::LinearModel<f64>;
pub type EnsembleModel = models::trees::EnsembleModel<f64>;
pub type NetworkModel = models::neural::NetworkModel<f64>;
pub type Sequences = models::neural::Sequences<f64>;

pub use evaluation::{EvaluationReport, ReportOptions};
pub use families::{Forecaster, SeriesContext, TrainedModel};
