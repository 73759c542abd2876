mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{complex, max_rel, random_geometry, random_set, SetShape};
use gabor_cine::analysis::{frequency_decompose, numerical_rank, weight_singular_values};
use gabor_cine::forward::{CineImage, CoilMaps, ForwardModel, PatternKind, SamplingPattern};
use gabor_cine::gradcheck::adjoint_check;
use gabor_cine::io;
use gabor_cine::metrics::{band_masks, psnr, ssim, ssim_image, PSNR_CAP_DB};
use gabor_cine::phantom::{make_coils, make_mask, MaskKind, MaskSpec};
use gabor_cine::primitive::{
    eval_primitive, pixel_center, spectrum_closed_form, support_box, Covariance2, FrameGeometry, Modulation, CULL_SIGMA,
};
use gabor_cine::raster::{rasterize, RasterOptions};
use gabor_cine::temporal::{geometry_at, GeometryLimits};
use gabor_cine::Complex64;

fn geometry() -> impl Strategy<Value = FrameGeometry> {
    (
        -0.4f64..0.4,
        -0.4f64..0.4,
        0.0f64..PI,
        -4.0f64..-1.0,
        -4.0f64..-1.0,
        -30.0f64..30.0,
        -30.0f64..30.0,
    )
        .prop_map(|(mx, my, theta, l0, l1, x0, x1)| FrameGeometry {
            mu: [mx, my],
            cov: Covariance2 { theta, log_s: [l0, l1] },
            xi: [x0, x1],
            w: Complex64::new(1.0, 0.0),
        })
}

fn shape(n: usize, frames: usize, rank_geom: usize, rank_contrast: usize, modulation: Modulation) -> SetShape {
    SetShape {
        n,
        frames,
        rank_geom,
        rank_contrast,
        height: 24,
        width: 20,
        modulation,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn primitive_is_unit_at_its_center(g in geometry()) {
        prop_assert_eq!(eval_primitive(&g, g.mu).norm(), 1.0);
    }

    #[test]
    fn zero_carrier_is_real(g in geometry(), rx in -0.5f64..0.5, ry in -0.5f64..0.5) {
        let g = FrameGeometry { xi: [0.0; 2], ..g };
        prop_assert_eq!(eval_primitive(&g, [rx, ry]).im, 0.0);
    }

    #[test]
    fn translation_multiplies_spectrum_by_phase(
        g in geometry(),
        dx in -0.2f64..0.2,
        dy in -0.2f64..0.2,
        kx in -20.0f64..20.0,
        ky in -20.0f64..20.0,
    ) {
        let moved = FrameGeometry { mu: [g.mu[0] + dx, g.mu[1] + dy], ..g };
        let expected = spectrum_closed_form(&g, [kx, ky]) * Complex64::from_polar(1.0, -2.0 * PI * (kx * dx + ky * dy));
        let got = spectrum_closed_form(&moved, [kx, ky]);
        prop_assert!((got - expected).norm() <= 1e-12 * expected.norm().max(1e-300));
    }

    #[test]
    fn rotation_rotates_spectral_envelope(
        g in geometry(),
        phi in -PI..PI,
        kx in -20.0f64..20.0,
        ky in -20.0f64..20.0,
    ) {
        let (s, c) = phi.sin_cos();
        let rot = |v: [f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let rotated = FrameGeometry {
            mu: [0.0; 2],
            cov: Covariance2 { theta: g.cov.theta + phi, ..g.cov },
            xi: rot(g.xi),
            ..g
        };
        let a = spectrum_closed_form(&FrameGeometry { mu: [0.0; 2], ..g }, [kx, ky]).norm();
        let b = spectrum_closed_form(&rotated, rot([kx, ky])).norm();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300), "{} vs {}", a, b);
    }

    #[test]
    fn rasterization_is_linear(seed in any::<u64>(), split in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame: Vec<FrameGeometry> = (0..12).map(|_| random_geometry(&mut rng)).collect();
        let opts = RasterOptions { tile: 8, ..RasterOptions::default() };
        let all = rasterize(&frame, 30, 26, opts);
        let a = rasterize(&frame[..split], 30, 26, opts);
        let b = rasterize(&frame[split..], 30, 26, opts);
        let sum: Vec<Complex64> = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        prop_assert!(max_rel(&sum, &all.data) <= 1e-12);
    }

    #[test]
    fn culling_error_is_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame: Vec<FrameGeometry> = (0..8).map(|_| random_geometry(&mut rng)).collect();
        let (h, w) = (28, 28);
        let culled = rasterize(&frame, h, w, RasterOptions::default());
        let bound = (-CULL_SIGMA * CULL_SIGMA / 2.0).exp() * frame.iter().map(|g| g.w.norm()).sum::<f64>();
        for p in 0..h * w {
            let r = [pixel_center(p % w, w), pixel_center(p / w, w)];
            let full: Complex64 = frame.iter().map(|g| g.w * eval_primitive(g, r)).sum();
            prop_assert!((culled.data[p] - full).norm() <= bound * (1.0 + 1e-12) + 1e-14);
        }
    }

    #[test]
    fn weight_rank_is_bounded(
        seed in any::<u64>(),
        rank_geom in 1usize..4,
        rank_contrast in 1usize..4,
        extra_frames in 1usize..8,
        n in 5usize..30,
    ) {
        let frames = rank_geom + 1 + extra_frames;
        let set = random_set(&shape(n, frames, rank_geom, rank_contrast, Modulation::Gabor), seed);
        let rank = numerical_rank(&weight_singular_values(&set).unwrap(), 1e-10);
        prop_assert!(rank <= rank_geom + rank_contrast, "rank {}", rank);
    }

    #[test]
    fn geometry_is_affine_in_the_basis(seed in any::<u64>(), t in 0usize..6) {
        let set = random_set(&shape(4, 6, 3, 2, Modulation::Gabor), seed);
        let limits = GeometryLimits { xi_max: [1e9; 2], log_s_min: -1e9 };
        let mut doubled = set.bases.clone();
        doubled.geom.iter_mut().for_each(|v| *v *= 2.0);
        for p in &set.items {
            let one = geometry_at(p, &set.bases, t, &limits, Modulation::Gabor).unwrap();
            let two = geometry_at(p, &doubled, t, &limits, Modulation::Gabor).unwrap();
            let close = |base: f64, a: f64, b: f64| ((b - base) - 2.0 * (a - base)).abs() <= 1e-12 * (1.0 + base.abs());
            for d in 0..2 {
                prop_assert!(close(p.mu[d], one.mu[d], two.mu[d]));
                prop_assert!(close(p.log_s[d], one.cov.log_s[d], two.cov.log_s[d]));
                prop_assert!(close(p.xi[d], one.xi[d], two.xi[d]));
            }
            prop_assert!(close(p.theta, one.cov.theta, two.cov.theta));
        }
    }

    #[test]
    fn frame_assembly_is_deterministic(seed in any::<u64>(), t in 0usize..5) {
        let set = random_set(&shape(10, 5, 2, 2, Modulation::Gabor), seed);
        let a = set.assemble_frame(t).unwrap();
        let b = set.clone().assemble_frame(t).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn clamped_frames_respect_limits(seed in any::<u64>()) {
        let mut set = random_set(&shape(6, 4, 2, 2, Modulation::Gabor), seed);
        for p in &mut set.items {
            p.xi = [500.0, -500.0];
            p.log_s = [-20.0, -2.0];
        }
        let limits = GeometryLimits::for_grid(set.grid.height, set.grid.width);
        for t in 0..4 {
            for g in set.assemble_frame(t).unwrap() {
                prop_assert!(g.xi[0].abs() <= limits.xi_max[0] && g.xi[1].abs() <= limits.xi_max[1]);
                prop_assert!(g.cov.log_s[0] >= limits.log_s_min && g.cov.log_s[1] >= limits.log_s_min);
            }
        }
    }

    #[test]
    fn decomposition_partitions_render(seed in any::<u64>(), threshold in 0.0f64..1.5) {
        let set = random_set(&shape(30, 4, 2, 2, Modulation::Gabor), seed);
        let d = frequency_decompose(&set, 1, threshold).unwrap();
        let sum: Vec<Complex64> = d.low.data.iter().zip(&d.high.data).map(|(a, b)| a + b).collect();
        prop_assert!(max_rel(&sum, &d.full.data) <= 1e-12);
        prop_assert_eq!(d.low_count + d.high_count, 30);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn adjoint_identity_holds(seed in any::<u64>(), cartesian in any::<bool>(), coils in 1usize..4) {
        let kind = if cartesian { PatternKind::CartesianMask } else { PatternKind::PointSet };
        let r = adjoint_check(kind, 12, 10, 2, coils, 3, seed).unwrap();
        prop_assert!(r.passed, "discrepancy {}", r.max_rel_discrepancy);
    }

    #[test]
    fn full_mask_preserves_energy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, t) = (12, 16, 2);
        let mut x = CineImage::zeros(h, w, t);
        x.data.iter_mut().for_each(|z| *z = complex(&mut rng, 1.0));
        let op = ForwardModel::new(&CoilMaps::unit(h, w), &SamplingPattern::full(t, h, w)).unwrap();
        let y = op.forward(&x).unwrap();
        let ex: f64 = x.data.iter().map(|z| z.norm_sqr()).sum();
        let ey: f64 = y.data.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((ex - ey).abs() <= 1e-12 * ex);
    }

    #[test]
    fn removing_samples_never_increases_loss(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, t) = (10, 12, 2);
        let coils = make_coils(2, h, w, seed).unwrap();
        let mut full_mask: Vec<bool> = (0..t * h * w).map(|_| rng.random_bool(0.6)).collect();
        for f in 0..t {
            full_mask[f * h * w] = true;
        }
        let sub_mask: Vec<bool> = full_mask
            .iter()
            .enumerate()
            .map(|(i, &m)| m && (i % (h * w) == 0 || rng.random_bool(0.5)))
            .collect();
        let mut x = CineImage::zeros(h, w, t);
        let mut z = CineImage::zeros(h, w, t);
        x.data.iter_mut().for_each(|v| *v = complex(&mut rng, 1.0));
        z.data.iter_mut().for_each(|v| *v = complex(&mut rng, 1.0));
        let loss = |mask: Vec<bool>| {
            let pattern = SamplingPattern::Cartesian { frames: t, height: h, width: w, mask };
            let op = ForwardModel::new(&coils, &pattern).unwrap();
            let y = op.forward(&z).unwrap();
            op.data_loss_and_adjoint(&x, &y).unwrap().0
        };
        let kept = loss(sub_mask);
        let all = loss(full_mask);
        prop_assert!(kept <= all * (1.0 + 1e-12), "{} > {}", kept, all);
    }

    #[test]
    fn coil_maps_are_normalized(n in 1usize..9, seed in any::<u64>()) {
        let maps = make_coils(n, 16, 20, seed).unwrap();
        for v in maps.rss() {
            prop_assert!((v - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(maps, make_coils(n, 16, 20, seed).unwrap());
    }

    #[test]
    fn realized_acceleration_tracks_request(
        accel in 2.0f64..8.0,
        height in prop::sample::select(vec![32usize, 64, 96]),
        variable in any::<bool>(),
        seed in any::<u64>(),
    ) {
        // Below five lines per frame no integer line count lands within 10%.
        prop_assume!(height as f64 / accel >= 5.0);
        let spec = MaskSpec {
            kind: if variable { MaskKind::VariableDensity } else { MaskKind::UniformRandom },
            accel,
            acs_lines: 4,
            spokes: None,
            seed,
        };
        let pattern = make_mask(&spec, 4, height, 16).unwrap();
        for t in 0..4 {
            let lines = pattern.samples_in_frame(t) / 16;
            let realized = height as f64 / lines as f64;
            prop_assert!((realized - accel).abs() <= 0.1 * accel, "R {} realized {}", accel, realized);
        }
    }

    #[test]
    fn ssim_stays_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16, 16);
        let a: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = ssim_image(&a, &b, h, w, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim_image(&a, &a, h, w, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_stacks_score_perfectly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = CineImage::zeros(16, 12, 2);
        x.data.iter_mut().for_each(|z| *z = complex(&mut rng, 1.0));
        prop_assert_eq!(psnr(&x, &x).unwrap().mean, PSNR_CAP_DB);
        prop_assert!((ssim(&x, &x).unwrap().mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_masks_cover_grid_once(h in 4usize..40, w in 4usize..40, c1 in 0.05f64..0.45, gap in 0.05f64..0.5) {
        let masks = band_masks(h, w, (c1, c1 + gap));
        prop_assert_eq!(masks.len(), h * w);
        let counts = (0..3).map(|b| masks.iter().filter(|&&m| m == b).count()).collect::<Vec<_>>();
        prop_assert_eq!(counts.iter().sum::<usize>(), h * w);
        prop_assert!(masks.iter().all(|&m| m < 3));
    }

    #[test]
    fn model_files_round_trip_bit_exact(seed in any::<u64>(), gaussian in any::<bool>()) {
        let modulation = if gaussian { Modulation::Gaussian } else { Modulation::Gabor };
        let set = random_set(&shape(7, 5, 2, 3, modulation), seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gcm");
        io::write_model(&path, &set, Some(0.5)).unwrap();
        let back = io::read_model(&path).unwrap();
        prop_assert_eq!(back.display_scale, Some(0.5));
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.set.bases.flatten()), bits(set.bases.flatten()));
        for (a, b) in back.set.items.iter().zip(&set.items) {
            prop_assert_eq!(bits(a.flatten()), bits(b.flatten()));
        }
        prop_assert_eq!(back.set.modulation, set.modulation);
    }
}

#[test]
fn contained_primitive_support_box_is_tight() {
    let g = FrameGeometry {
        mu: [0.1, -0.05],
        cov: Covariance2::new(0.3, [0.05, 0.02]),
        xi: [0.0; 2],
        w: Complex64::new(1.0, 0.0),
    };
    let b = support_box(&g, CULL_SIGMA);
    let sigma = g.cov.matrix();
    assert!((b.hi()[0] - g.mu[0] - CULL_SIGMA * sigma[0][0].sqrt()).abs() < 1e-15);
    assert!((g.mu[1] - b.lo()[1] - CULL_SIGMA * sigma[1][1].sqrt()).abs() < 1e-15);
}
