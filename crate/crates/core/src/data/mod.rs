//! Dataset ingestion, calendar covariates, synthetic generators and the
//! factor-recovery diagnostic.

mod dataset;
mod subspace;
mod synthetic;

pub use dataset::{
    format_timestamp, load_csv, parse_timestamp, write_csv, Series, TimeFeatures, TimeSeriesDataset,
    TIMESTAMP_FORMAT, TIME_FEATURE_DIM,
};
pub use subspace::subspace_distance;
pub use synthetic::{
    default_start, emit, fourier_factors, generate, generate_fourier_factors, generate_rotating_lds, sample_poisson,
    FourierData, FourierFactorsSpec, LocalNoise, RotatingLdsData, RotatingLdsSpec, SyntheticData, SyntheticSpec,
};
