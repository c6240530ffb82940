//! Shared helpers for the criterion benches: canonical grids and settings
//! so the two bench binaries measure the same configurations.

use p2eig_core::{EnergySetting, Field, Grid};

/// Unit-interval grid at the size the kernel benches use.
#[must_use]
pub fn bench_interval(cells: usize) -> Grid {
    Grid::new(1, &[0.0, 1.0], &[cells]).expect("valid interval grid")
}

/// Unit-square grid at the size the kernel benches use.
#[must_use]
pub fn bench_square(cells: usize) -> Grid {
    Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[cells, cells]).expect("valid square grid")
}

/// A smooth nonzero field every kernel bench can share.
#[must_use]
pub fn bench_field(grid: &Grid) -> Field {
    Field::from_fn(grid, |[x, y]| {
        let sx = (std::f64::consts::PI * x).sin();
        if grid.dim() == 1 {
            sx
        } else {
            sx * (std::f64::consts::PI * y).sin()
        }
    })
}

/// The default superquadratic setting the solve benches use.
#[must_use]
pub fn bench_setting_super() -> EnergySetting {
    EnergySetting::new(3.0, 15.0, 0.0).expect("valid setting")
}

/// The default subquadratic setting the solve benches use.
#[must_use]
pub fn bench_setting_sub() -> EnergySetting {
    EnergySetting::new(1.5, 15.0, 0.0).expect("valid setting")
}
