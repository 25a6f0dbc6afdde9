use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;

use mmwave_hybrid::beamformer::{
    effective_channel, normalize_baseband, per_user_rates, sum_rate_zf, zf_baseband, LinkBudget,
};
use mmwave_hybrid::codebook::{CombinationSpace, PhaseGrid};
use mmwave_hybrid::config::KeyValues;
use mmwave_hybrid::dataset::{
    decode_dataset, decode_label, encode_dataset, encode_label, Dataset, Dimensions, TrainingSample,
};
use mmwave_hybrid::geometry::{build_upa, steering_vector, AnglePair, CMatrix};
use mmwave_hybrid::harness::{csv_string, format_significant, parse_csv, Method, ResultRow};

fn unimodular(rows: usize, cols: usize, phases: &[f64]) -> CMatrix {
    let s = 1.0 / (rows as f64).sqrt();
    CMatrix::from_fn(rows, cols, |i, j| {
        Complex64::from_polar(s, phases[(i * cols + j) % phases.len()])
    })
}

fn gaussianish(rows: usize, cols: usize, vals: &[f64]) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        Complex64::new(vals[k % vals.len()], vals[(k + 1) % vals.len()])
    })
}

proptest! {
    #[test]
    fn combination_index_round_trips(radices in prop::collection::vec(1usize..5, 1..5), seed in 0usize..10_000) {
        let space = CombinationSpace::new(radices.clone()).unwrap();
        let q = seed % space.len() + 1;
        let sel = space.decode(q).unwrap();
        prop_assert!(sel.iter().zip(&radices).all(|(&s, &r)| s >= 1 && s <= r));
        prop_assert_eq!(space.encode(&sel).unwrap(), q);
    }

    #[test]
    fn quantized_phase_is_nearest_grid_point(bits in 1u32..9, phi in -20.0f64..20.0) {
        let grid = PhaseGrid::new(bits).unwrap();
        let q = grid.quantize(phi);
        prop_assert!((0.0..TAU).contains(&q));
        prop_assert!(grid.contains(q, 1e-12));
        let d = (phi.rem_euclid(TAU) - q).abs();
        prop_assert!(d.min(TAU - d) <= grid.step() / 2.0 + 1e-12);
    }

    #[test]
    fn steering_vectors_have_unit_modulus(nx in 1usize..6, ny in 1usize..6, az in -3.0f64..3.0, el in -1.5f64..1.5) {
        let g = build_upa(nx, ny, 0.5).unwrap();
        let a = steering_vector(&g, AnglePair::new(az, el));
        prop_assert_eq!(a.len(), nx * ny);
        prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn labels_round_trip(n_t in 1usize..9, n_r in 1usize..5, k in 1usize..4, phases in prop::collection::vec(0.0f64..TAU, 1..64)) {
        let f = unimodular(n_t, k, &phases);
        let w = unimodular(n_r, k, &phases[phases.len() / 2..]);
        let z = encode_label(&f, &w).unwrap();
        prop_assert!(z.iter().all(|p| (0.0..TAU).contains(p)));
        let (f2, w2) = decode_label(&z, n_t, n_r, k).unwrap();
        prop_assert!((f - f2).norm() < 1e-12 && (w - w2).norm() < 1e-12);
    }

    #[test]
    fn dataset_bytes_round_trip(n_r in 1usize..4, n_t in 1usize..6, k in 1usize..3, count in 0usize..5, v in -10.0f32..10.0) {
        let dims = Dimensions { n_r, n_t, users: k };
        let samples = (0..count)
            .map(|i| TrainingSample {
                x: (0..3 * n_r * n_t).map(|j| v + (i * 31 + j) as f32).collect(),
                z: (0..k * (n_t + n_r)).map(|j| (j as f32 * 0.1 + i as f32) % 6.0).collect(),
            })
            .collect();
        let d = Dataset { dims, config: None, samples };
        let bytes = encode_dataset(&d).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(back.dims, d.dims);
        prop_assert_eq!(&back.samples, &d.samples);
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn zero_forcing_diagonalizes_and_rates_agree(
        k in 2usize..4,
        extra in 0usize..6,
        n_r in 1usize..4,
        vals in prop::collection::vec(-1.0f64..1.0, 16..64),
        phases in prop::collection::vec(0.0f64..TAU, 8..32),
        snr in -10.0f64..30.0,
    ) {
        let n_t = k + extra;
        let channels: Vec<CMatrix> = (0..k).map(|u| gaussianish(n_r, n_t, &vals[u..])).collect();
        let f_rf = unimodular(n_t, k, &phases);
        let w_rf = unimodular(n_r, k, &phases[1..]);
        let h_eff = effective_channel(&w_rf, &channels, &f_rf).unwrap();
        let zf = zf_baseband(&h_eff);
        prop_assume!(zf.full_rank());
        let svals = h_eff.singular_values();
        prop_assume!(svals.min() / svals.max() > 1e-6);
        let f_bb = normalize_baseband(&f_rf, &zf.f_bb).unwrap();
        prop_assert!(((&f_rf * &f_bb).norm_squared() - k as f64).abs() < 1e-9);
        let budget = LinkBudget::from_snr_db(snr).unwrap();
        let sum: f64 = per_user_rates(&channels, &f_rf, &f_bb, &w_rf, &budget).unwrap().iter().sum();
        prop_assert!((sum - sum_rate_zf(&h_eff, &f_bb, &budget).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn config_text_round_trips(entries in prop::collection::btree_map("[a-z]{1,6}(\\.[a-z_]{1,6})?", "[A-Za-z0-9,._-]{1,12}", 0..8)) {
        let mut kv = KeyValues::default();
        for (k, v) in &entries {
            kv.set(k, v);
        }
        let back = KeyValues::parse(&kv.to_text()).unwrap();
        prop_assert_eq!(back, kv);
    }

    #[test]
    fn csv_rows_round_trip(mean in 0.0f64..100.0, std in 0.0f64..10.0, trials in 1usize..1000, sweep in -20i32..100) {
        let rows = vec![ResultRow { sweep: sweep as f64, method: Method::CnnMimo, mean_rate: mean, std_rate: std, trials, time_ms: 0.0 }];
        let back = parse_csv(&csv_string(&rows).unwrap()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(back[0].method, Method::CnnMimo);
        prop_assert_eq!(back[0].trials, trials);
        prop_assert!((back[0].mean_rate - mean).abs() <= 1e-5 * mean.max(1e-300) + 1e-300);
        let text = format_significant(mean);
        prop_assert!(text.parse::<f64>().is_ok());
    }
}
