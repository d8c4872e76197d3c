//! Fixtures shared by the benchmarks in `benches/`.

use std::sync::Arc;

use homoclinic_core::systems::SystemFamily;
use homoclinic_core::{CircleGrid, Paper7Config, Paper7Family, ProjectionBoundary};

pub fn example(coupling: f64) -> Arc<dyn SystemFamily> {
    Arc::new(
        Paper7Family::new(Paper7Config {
            coupling,
            ..Default::default()
        })
        .expect("valid parameters"),
    )
}

pub fn example_boundary(coupling: f64, grid_m: usize) -> Arc<ProjectionBoundary> {
    let grid = CircleGrid::uniform(grid_m).expect("grid");
    Arc::new(
        ProjectionBoundary::new(example(coupling), &grid, 1e-6, &Default::default())
            .expect("boundary"),
    )
}
