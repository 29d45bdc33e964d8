//! Fixtures shared by the benchmarks.

use evsync::runner::{self, build_estimator};
use evsync::{DoubleDouble, RunConfig};

pub use evsync::destimator::EstimatorSetup;

/// The bundled four-sensor ring example.
pub fn example_config() -> RunConfig {
    runner::preset("ring_example").expect("bundled preset is valid")
}

pub fn example_setup() -> EstimatorSetup<DoubleDouble> {
    build_estimator(&example_config()).expect("bundled preset designs")
}
