//! Sensor-array imaging in random media: dictionary learning of the sensing
//! matrix and recovery of the grid geometry from the learned atoms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub mod config;
pub mod datagen;
pub mod dictlearn;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod mdsmap;
pub mod physics;
pub mod pipeline;
pub mod seed;

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;
pub type CVector = DVector<Complex64>;

pub use config::ExperimentConfig;
pub use dictlearn::{L1SolverParams, LearnedDictionary, RecoveryReport};
pub use error::{Error, Result};
pub use imaging::ImageField;
pub use mdsmap::{ConnectivityGraph, EmbeddedGrid, ProxyDistanceMatrix};
pub use pipeline::RunManifest;
pub use geometry::{ArrayGeometry, FrequencySet, ImageGrid, SensingMatrix};
pub use physics::{MediumSpec, Point, RandomField, ScalarField};
