use carle_core::adapt::{coral_fit, covariance, pca_fit};
use carle_core::cwt::{build_scale_grid, transform, MorletPhase};
use carle_core::features::{entropy, moments};
use carle_core::forest::Forest;
use carle_core::labels::{make_labels, LabelScheme};
use carle_core::nn::layers::{Layer, Lstm, MultiHeadAttention};
use carle_core::signal::{extract_windows, gaussian_filter, inject_noise, window_count, GaussianKernel};
use carle_core::{ForestConfig, MultiChannelSignal, NoiseKind};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signal(x: Vec<f64>) -> MultiChannelSignal {
    MultiChannelSignal::new(vec![x], 1000.0).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_weights_sum_to_one(sigma in 0.1f64..10.0) {
        let k = GaussianKernel::new(sigma).unwrap();
        prop_assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(k.taps().len() % 2, 1);
    }

    #[test]
    fn filter_is_linear(
        x in proptest::collection::vec(-1.0f64..1.0, 64),
        y in proptest::collection::vec(-1.0f64..1.0, 64),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        sigma in 0.2f64..4.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let fx = gaussian_filter(&signal(x), sigma).unwrap();
        let fy = gaussian_filter(&signal(y), sigma).unwrap();
        let fm = gaussian_filter(&signal(mix), sigma).unwrap();
        for i in 0..64 {
            let want = a * fx.channel(0)[i] + b * fy.channel(0)[i];
            prop_assert!((fm.channel(0)[i] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn filter_never_adds_power(x in proptest::collection::vec(-1.0f64..1.0, 16..200), sigma in 0.2f64..3.0) {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let x: Vec<f64> = x.iter().map(|v| v - m).collect();
        let p_in: f64 = x.iter().map(|v| v * v).sum();
        let f = gaussian_filter(&signal(x), sigma).unwrap();
        let p_out: f64 = f.channel(0).iter().map(|v| v * v).sum();
        prop_assert!(p_out <= p_in * (1.0 + 1e-12));
    }

    #[test]
    fn window_count_formula(len in 8usize..400, w in 1usize..64, stride in 1usize..64) {
        prop_assume!(w <= len);
        let s = signal(vec![0.5; len]);
        let windows = extract_windows(&s, w, stride).unwrap();
        prop_assert_eq!(windows.len(), (len - w) / stride + 1);
        prop_assert_eq!(window_count(len, w, stride), windows.len());
    }

    #[test]
    fn noise_is_reproducible(seed in any::<u64>(), gaussian in any::<bool>()) {
        let s = signal((0..100).map(|i| (i as f64 * 0.3).sin()).collect());
        let kind = if gaussian { NoiseKind::gaussian_default() } else { NoiseKind::salt_pepper_default() };
        prop_assert_eq!(inject_noise(&s, kind, seed).unwrap(), inject_noise(&s, kind, seed).unwrap());
    }

    #[test]
    fn cwt_is_linear(
        x in proptest::collection::vec(-1.0f64..1.0, 256),
        y in proptest::collection::vec(-1.0f64..1.0, 256),
        a in -2.0f64..2.0,
    ) {
        let grid = build_scale_grid(35.0, 2560.0, 8, 0.81).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + v).collect();
        let sx = transform(&x, &grid, MorletPhase::Conventional).unwrap();
        let sy = transform(&y, &grid, MorletPhase::Conventional).unwrap();
        let sm = transform(&mix, &grid, MorletPhase::Conventional).unwrap();
        let peak = sm.coefficients.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-12);
        for ((m, u), v) in sm.coefficients.iter().zip(&sx.coefficients).zip(&sy.coefficients) {
            prop_assert!((m - (u * a + v)).norm() <= 1e-9 * peak);
        }
    }

    #[test]
    fn scale_frequency_round_trip(f_o in 5.0f64..200.0, n in 2usize..80) {
        let fs = 25_600.0;
        let g = build_scale_grid(f_o, fs, n, 0.81).unwrap();
        prop_assert!((g.scale_to_freq(g.a_min()) - g.f_max_hz()).abs() <= 1e-9 * g.f_max_hz());
        prop_assert!((g.scale_to_freq(g.a_max()) - g.f_min_hz()).abs() <= 1e-9 * g.f_min_hz());
        for &a in g.scales() {
            prop_assert!((g.freq_to_scale(g.scale_to_freq(a)) - a).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn entropy_is_bounded(e in proptest::collection::vec(0.0f64..10.0, 2..64)) {
        prop_assume!(e.iter().sum::<f64>() > 0.0);
        let h = entropy(&e).unwrap();
        prop_assert!(h >= 0.0 && h <= (e.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn moments_translate_and_scale(
        x in proptest::collection::vec(-5.0f64..5.0, 8..100),
        shift in -50.0f64..50.0,
        c in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
    ) {
        let base = moments(&x);
        prop_assume!(base.is_ok());
        let m = base.unwrap();
        prop_assume!(m.std > 1e-3);
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let t = moments(&shifted).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(t.mean, m.mean + shift));
        prop_assert!(close(t.std, m.std));
        prop_assert!(close(t.skewness, m.skewness));
        prop_assert!(close(t.kurtosis, m.kurtosis));
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let s = moments(&scaled).unwrap();
        prop_assert!(close(s.std, c.abs() * m.std));
        prop_assert!(close(s.skewness, c.signum() * m.skewness));
        prop_assert!(close(s.kurtosis, m.kurtosis));
    }

    #[test]
    fn labels_decrease_from_one_to_zero(n in 2usize..300, knee in 0.05f64..0.95, piecewise in any::<bool>()) {
        let scheme = if piecewise { LabelScheme::Piecewise } else { LabelScheme::Linear };
        let l = make_labels(n, scheme, knee).unwrap().values;
        prop_assert_eq!(l[0], 1.0);
        prop_assert_eq!(l[n - 1], 0.0);
        prop_assert!(l.windows(2).all(|w| w[1] <= w[0]));
        if !piecewise {
            let d = l[0] - l[1];
            prop_assert!(l.windows(2).all(|w| ((w[0] - w[1]) - d).abs() < 1e-12));
        }
    }

    #[test]
    fn attention_rows_are_distributions(x in matrix(6, 4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mha = MultiHeadAttention::new(4, 2, 3, &mut rng);
        let (_, cache) = mha.forward((x * 3.0).view());
        for a in &cache.weights {
            for row in a.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn lstm_gates_stay_in_range(x in proptest::collection::vec(-10.0f64..10.0, 30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = Lstm::new(3, 5, &mut rng);
        let x = Array2::from_shape_vec((10, 3), x).unwrap();
        let (_, cache) = lstm.forward(x.view());
        for row in cache.gates.rows() {
            for (j, &v) in row.iter().enumerate() {
                if j < 5 {
                    prop_assert!(v > -1.0 && v < 1.0);
                } else {
                    prop_assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }

    #[test]
    fn forest_is_the_mean_of_its_trees(x in matrix(20, 3), y in proptest::collection::vec(-1.0f64..2.0, 20), seed in any::<u64>()) {
        let cfg = ForestConfig { n_trees: 7, clamp_unit: false, ..Default::default() };
        let f = Forest::fit(x.view(), &y, &cfg, seed).unwrap();
        prop_assert_eq!(&f, &Forest::fit(x.view(), &y, &cfg, seed).unwrap());
        let p = f.predict(x.view()).unwrap();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, row) in x.rows().into_iter().enumerate() {
            let trees: Vec<f64> = f.trees().iter().map(|t| t.predict_row(row)).collect();
            let mean = carle_core::forest::mean(trees.iter().copied());
            prop_assert_eq!(p[i], mean);
            prop_assert!((p[i] - trees.iter().sum::<f64>() / 7.0).abs() <= 1e-12);
            prop_assert!(p[i] >= lo - 1e-12 && p[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn pca_decorrelates_its_training_data(x in matrix(40, 4)) {
        let m = pca_fit(x.view(), 4).unwrap();
        let gram = m.components.dot(&m.components.t());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[[i, j]] - want).abs() < 1e-8);
            }
        }
        let c = covariance(m.transform(x.view()).unwrap().view());
        let scale = c.diag().iter().copied().fold(1.0, f64::max);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    prop_assert!(c[[i, j]].abs() < 1e-6 * scale);
                }
            }
        }
        prop_assert!(m.explained_variance.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn coral_is_affine(source in matrix(30, 3), target in matrix(30, 3), t in -2.0f64..2.0) {
        let coral = coral_fit(source.view(), target.view(), 1e-6).unwrap();
        let p = source.row(0).to_owned();
        let q = source.row(1).to_owned();
        let r = &p + &((&q - &p) * t);
        let pts = ndarray::stack![Axis(0), p, q, r];
        let out = coral.apply(pts.view()).unwrap();
        let want = &out.row(0) + &((&out.row(1) - &out.row(0)) * t);
        for (a, b) in out.row(2).iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }
}
