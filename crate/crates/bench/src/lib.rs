//! Shared fixtures for the kernel benchmarks.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectrasweep_core::cube::{BandGrid, GrayscaleImage, SpectralCube};
use spectrasweep_core::optics::{AcquisitionGeometry, LensConfig};

pub fn bench_lens() -> LensConfig {
    LensConfig {
        aperture_mm: 0.5,
        ..LensConfig::default()
    }
}

pub fn bench_geometry() -> AcquisitionGeometry {
    AcquisitionGeometry {
        pixel_pitch_um: 25.0,
        z0_mm: 70.0,
        z1_mm: 170.0,
        ..AcquisitionGeometry::default()
    }
}

pub fn random_cube(seed: u64, bands: usize, size: usize) -> SpectralCube {
    let grid = BandGrid::uniform(470.0, 900.0, bands).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array3::zeros((bands, size, size));
    for v in data.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    SpectralCube::new(grid, data).unwrap()
}

pub fn random_tensor(seed: u64, channels: usize, size: usize) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array3::zeros((channels, size, size));
    for v in data.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    data
}

pub fn random_image(seed: u64, size: usize) -> GrayscaleImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Array2<f64> = Array2::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            data[[i, j]] = 0.3 + 0.1 * ((i as f64 * 0.13).sin() + (j as f64 * 0.17).cos());
        }
    }
    for _ in 0..size / 2 {
        let cy = rng.random_range(4..size - 4);
        let cx = rng.random_range(4..size - 4);
        let half = rng.random_range(2..6);
        let v: f64 = rng.random_range(0.05..0.3);
        for i in cy.saturating_sub(half)..(cy + half).min(size) {
            for j in cx.saturating_sub(half)..(cx + half).min(size) {
                data[[i, j]] = (data[[i, j]] + v).min(1.0);
            }
        }
    }
    GrayscaleImage::new(data).unwrap()
}
