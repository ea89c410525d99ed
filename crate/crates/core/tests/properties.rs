use lidar_agb::allometry::tree_agb;
use lidar_agb::evaluate::{bonferroni, mae, rmse};
use lidar_agb::las_io::{
    clip_polygon, read_las_from, write_las_to, PointCloud, PointFormat, PointRecord, Polygon,
};
use lidar_agb::metrics::l_moments;
use lidar_agb::synth::decimate;
use lidar_agb::waveform::{rh_metrics, simulate_footprint, FootprintConfig};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = PointRecord> {
    (
        -1e4..1e4f64,
        -1e4..1e4f64,
        -100.0..3000.0f64,
        any::<u16>(),
        1u8..=5,
        0u8..=31,
    )
        .prop_map(|(x, y, z, i, r, c)| {
            let mut p = PointRecord::new(x, y, z).with_class(c).with_returns(1, r);
            p.intensity = i;
            p
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn las_round_trip_within_half_scale(pts in prop::collection::vec(point(), 1..200)) {
        let cloud = PointCloud::new(pts);
        let mut buf = Vec::new();
        write_las_to(&cloud, &mut buf, PointFormat::Format0).unwrap();
        let back = read_las_from(&buf).unwrap();
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.iter().zip(back.iter()) {
            prop_assert!((a.x - b.x).abs() <= 0.0005 + 1e-9);
            prop_assert!((a.y - b.y).abs() <= 0.0005 + 1e-9);
            prop_assert!((a.z - b.z).abs() <= 0.0005 + 1e-9);
            prop_assert_eq!(a.intensity, b.intensity);
            prop_assert_eq!(a.classification, b.classification);
        }
    }

    #[test]
    fn l_moments_shift_and_scale(mut x in prop::collection::vec(-50.0..50.0f64, 4..40), shift in -100.0..100.0f64, k in 0.1..10.0f64) {
        x.sort_by(f64::total_cmp);
        let base = l_moments(&x);
        let moved: Vec<f64> = x.iter().map(|v| k * v + shift).collect();
        let m = l_moments(&moved);
        let (l1, l2, l3, l4) = (base[0].unwrap(), base[1].unwrap(), base[2].unwrap(), base[3].unwrap());
        prop_assert!(l2 >= -1e-12);
        prop_assert!((m[0].unwrap() - (k * l1 + shift)).abs() <= 1e-9 * (1.0 + shift.abs() + k * l1.abs()));
        for (got, want) in [(m[1].unwrap(), l2), (m[2].unwrap(), l3), (m[3].unwrap(), l4)] {
            prop_assert!((got - k * want).abs() <= 1e-9 * (1.0 + k * 100.0));
        }
    }

    #[test]
    fn rectangle_clip_matches_bounds(pts in prop::collection::vec(point(), 1..300), x0 in -5e3..5e3f64, y0 in -5e3..5e3f64, w in 1.0..5e3f64, h in 1.0..5e3f64) {
        let poly = Polygon::rectangle(x0, y0, w, h).unwrap();
        let inside = clip_polygon(&PointCloud::new(pts.clone()), &poly);
        let expected = pts.iter().filter(|p| p.x >= x0 && p.x <= x0 + w && p.y >= y0 && p.y <= y0 + h).count();
        prop_assert_eq!(inside.len(), expected);
    }

    #[test]
    fn agb_increases_with_each_input(rho in 0.2..1.3f64, d in 5.0..100.0f64, h in 2.0..50.0f64) {
        let a = tree_agb(rho, d, h).unwrap();
        prop_assert!(tree_agb(rho * 1.01, d, h).unwrap() > a);
        prop_assert!(tree_agb(rho, d * 1.01, h).unwrap() > a);
        prop_assert!(tree_agb(rho, d, h * 1.01).unwrap() > a);
    }

    #[test]
    fn error_metric_bounds(pairs in prop::collection::vec((0.0..500.0f64, 0.0..500.0f64), 1..50), p in 0.0..=1.0f64, m in 1usize..500) {
        let (pred, obs): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(mae(&pred, &obs).unwrap() <= rmse(&pred, &obs).unwrap() * (1.0 + 1e-12));
        let adj = bonferroni(p, m);
        prop_assert!(adj <= 1.0 && adj >= p);
    }

    #[test]
    fn rh_profile_is_monotone(seed in any::<u64>(), n in 5usize..200) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<PointRecord> = (0..n)
            .map(|_| {
                let p = PointRecord::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..30.0));
                if rng.random_bool(0.3) { p.with_class(2) } else { p }
            })
            .collect();
        let wf = simulate_footprint(&PointCloud::new(pts), &FootprintConfig::default()).unwrap();
        let ground = rng.random_range(-2.0..5.0);
        let rh = rh_metrics(&wf, ground).unwrap();
        prop_assert!(rh.is_nondecreasing());
    }

    #[test]
    fn decimation_keeps_whole_pulses(seed in any::<u64>(), density in 0.5..20.0f64) {
        let pts: Vec<PointRecord> = (0..400)
            .map(|i| {
                let pulse = (i / 2) as f64;
                PointRecord::new((i % 20) as f64, (i / 20) as f64, (i % 2) as f64)
                    .with_returns(1 + (i % 2) as u8, 2)
                    .with_gps_time(pulse)
            })
            .collect();
        let cloud = PointCloud::new(pts);
        let thin = decimate(&cloud, density, 20.0, seed);
        let mut times: Vec<f64> = thin.iter().map(|p| p.gps_time.unwrap()).collect();
        times.sort_by(f64::total_cmp);
        for pair in times.chunks(2) {
            prop_assert!(pair.len() == 2 && pair[0] == pair[1]);
        }
    }
}
