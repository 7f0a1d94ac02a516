//! Property tests over the container formats, the focal law, PSF kernels,
//! and descriptor distances.

use ndarray::{Array2, Array3};
use proptest::prelude::*;

use spectrasweep_core::cube::{BandGrid, GrayscaleImage, GrayscaleStack, SpectralCube};
use spectrasweep_core::io::{read_cube, read_stack, write_cube, write_stack};
use spectrasweep_core::optics::{
    focal_length, focused_wavelength, position_for_wavelength, psf_kernel, FocusSchedule,
    LensConfig,
};
use spectrasweep_core::registration::{hamming, BinaryDescriptor};

fn temp_path(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("spectrasweep-prop-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(format!("{tag}-{}.bin", std::process::id()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cube_files_round_trip_bit_exactly(
        l in 1usize..=8,
        h in 8usize..=32,
        w in 8usize..=32,
        seed in any::<u32>(),
    ) {
        let bands = BandGrid::uniform(470.0, 900.0, l).unwrap();
        let mut data = Array3::zeros((l, h, w));
        let mut state = seed as u64 | 1;
        for v in data.iter_mut() {
            // xorshift into an exactly f32-representable value in [0, 1)
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *v = ((state >> 40) as f32 / (1u32 << 24) as f32) as f64;
        }
        let cube = SpectralCube::new(bands, data).unwrap();
        let path = temp_path("cube");
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        prop_assert_eq!(&back, &cube);
    }

    #[test]
    fn stack_files_round_trip_bit_exactly(
        k in 1usize..=5,
        h in 8usize..=24,
        w in 8usize..=24,
        seed in any::<u32>(),
    ) {
        let mut state = seed as u64 | 1;
        let frames: Vec<GrayscaleImage> = (0..k)
            .map(|_| {
                let mut data = Array2::zeros((h, w));
                for v in data.iter_mut() {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    *v = ((state >> 40) as f32 / (1u32 << 24) as f32) as f64;
                }
                GrayscaleImage::new(data).unwrap()
            })
            .collect();
        let positions = (1..=k).map(|i| i as f64 * 7.5).collect();
        let stack = GrayscaleStack::new(frames, positions).unwrap();
        let path = temp_path("stack");
        write_stack(&stack, &path).unwrap();
        let back = read_stack(&path).unwrap();
        prop_assert_eq!(&back, &stack);
    }

    #[test]
    fn focal_law_conserves_the_f_lambda_product(
        f0 in 10.0f64..500.0,
        lambda0 in 200.0f64..2000.0,
        lambda in 200.0f64..2000.0,
    ) {
        let lens = LensConfig { f0_mm: f0, lambda0_nm: lambda0, ..LensConfig::default() };
        let f = focal_length(&lens, lambda).unwrap();
        let product = f * lambda;
        let want = f0 * lambda0;
        prop_assert!(((product - want) / want).abs() < 1e-12);
    }

    #[test]
    fn position_and_wavelength_invert_each_other(
        z0 in 10.0f64..1000.0,
        lambda0 in 200.0f64..2000.0,
        lambda in 200.0f64..2000.0,
    ) {
        let schedule = FocusSchedule::new(z0, lambda0, vec![z0]).unwrap();
        let z = position_for_wavelength(&schedule, lambda).unwrap();
        let back = focused_wavelength(&schedule, z).unwrap();
        prop_assert!(((back - lambda) / lambda).abs() < 1e-12);
    }

    #[test]
    fn focused_frequency_is_linear_in_position(
        z0 in 10.0f64..1000.0,
        lambda0 in 200.0f64..2000.0,
        alpha in 0.2f64..5.0,
    ) {
        let schedule = FocusSchedule::new(z0, lambda0, vec![z0]).unwrap();
        let z = 0.7 * z0;
        let nu_z = 1.0 / focused_wavelength(&schedule, z).unwrap();
        let nu_az = 1.0 / focused_wavelength(&schedule, alpha * z).unwrap();
        prop_assert!((nu_az / nu_z - alpha).abs() < 1e-12 * alpha);
    }

    #[test]
    fn psf_kernels_are_normalized_symmetric_and_nonnegative(r in 0.0f64..12.0) {
        let k = psf_kernel(r);
        let n = k.dim().0;
        prop_assert_eq!(k.dim().0, k.dim().1);
        prop_assert!((k.sum() - 1.0).abs() < 1e-9);
        for i in 0..n {
            for j in 0..n {
                prop_assert!(k[[i, j]] >= 0.0);
                // quarter-turn symmetry
                prop_assert!((k[[i, j]] - k[[j, n - 1 - i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hamming_is_a_metric(
        a in prop::array::uniform4(any::<u64>()),
        b in prop::array::uniform4(any::<u64>()),
        c in prop::array::uniform4(any::<u64>()),
    ) {
        let da = BinaryDescriptor { bits: a };
        let db = BinaryDescriptor { bits: b };
        let dc = BinaryDescriptor { bits: c };
        prop_assert_eq!(hamming(&da, &da), 0);
        prop_assert_eq!(hamming(&da, &db), hamming(&db, &da));
        prop_assert!(hamming(&da, &dc) <= hamming(&da, &db) + hamming(&db, &dc));
        prop_assert!(hamming(&da, &db) <= 256);
    }
}
