//! Locality-constrained analysis dictionary learning.
//!
//! The pipeline learns an analysis dictionary `Ω` whose products `Ω·y` are
//! close to sparse codes that vary smoothly over a supervised k-nearest
//! neighbor graph of the training samples. Codes are obtained by a synthesis
//! K-SVD sweep over an augmented system that folds the graph Laplacian into
//! the signals, and the dictionary has a closed-form ridge update. A
//! hard-threshold encoder and a ridge-regression head turn the dictionary
//! into a classifier.
//!
//! Matrices are `nalgebra::DMatrix<f64>` with samples stored as columns.
//!
//! ```
//! use skladl::{dataset, trainer::{self, TrainConfig}, classifier};
//!
//! let data = dataset::synth_dataset(3, 12, 6, 8.0, 1.0, 1);
//! let config = TrainConfig { dict_size: 8, t0: 3, max_iter: 5, ..TrainConfig::default() };
//! let model = trainer::train(&data, &config).unwrap();
//! let report = classifier::evaluate(&model, &data.features, &data.labels).unwrap();
//! assert!(report.accuracy > 0.9);
//! ```

pub mod classifier;
pub mod cli;
pub mod dataset;
mod error;
pub mod exec;
pub mod graph;
pub mod model_file;
pub mod sparse_coding;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
