use chrono::{Days, NaiveDate};
use ndarray::{Array2, Array3};
use proptest::prelude::*;

use ethfpt::backbone::layers::{grouped_query_attention, rotary_apply, RotaryTable};
use ethfpt::backbone::{apply_freeze_policy, build_backbone, BackboneConfig, FreezeMode, Variant};
use ethfpt::baselines::{build_baseline, BaselineConfig, BaselineKind};
use ethfpt::eval::compute_metrics;
use ethfpt::ingest::{
    chronological_split, parse_price_csv, regularize_daily, write_price_csv, ColumnSchema,
    GapPolicy, PriceRecord, PriceSeries, SplitSpec,
};
use ethfpt::model::Forecaster;
use ethfpt::normpatch::{fit_standardizer, patchify, revin, RevinMode, RevinState};
use ethfpt::train::{cosine_lr, Adam, TrainConfig};

fn record(date: NaiveDate, open: f64, close: f64) -> PriceRecord {
    PriceRecord {
        date,
        open,
        high: open.max(close) * 1.01,
        low: open.min(close) * 0.99,
        close,
        volume: 1000.0 + open,
        change_pct: 100.0 * (close / open - 1.0),
        filled: false,
    }
}

/// Sorted series with random gaps of up to three days.
fn gappy_series() -> impl Strategy<Value = PriceSeries> {
    prop::collection::vec((1u64..4, 1.0f64..5000.0, 1.0f64..5000.0), 1..80).prop_map(|steps| {
        let mut day = NaiveDate::from_ymd_opt(2017, 1, 1).unwrap();
        let mut recs = Vec::new();
        for (gap, open, close) in steps {
            recs.push(record(day, open, close));
            day = day + Days::new(gap);
        }
        PriceSeries::new(recs).unwrap()
    })
}

fn ratios() -> impl Strategy<Value = SplitSpec> {
    (0.3f64..0.9, 0.0f64..0.3).prop_map(|(train, val)| {
        let val = val.min(0.95 - train);
        SplitSpec::new(train, val, 1.0 - train - val).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_segments_concatenate_to_the_series(s in gappy_series(), spec in ratios()) {
        let daily = regularize_daily(&s, GapPolicy::ForwardFill).unwrap();
        prop_assume!(daily.len() >= 10);
        let n = daily.len() as f64;
        let n_train = (spec.train_ratio * n + 1e-9).floor() as usize;
        let n_val = (spec.val_ratio * n + 1e-9).floor() as usize;
        let split = match chronological_split(&daily, &spec, 8) {
            Ok(split) => split,
            Err(_) => {
                prop_assert!(n_train == 0 || n_val == 0 || n_train + n_val >= daily.len());
                return Ok(());
            }
        };
        let joined: Vec<PriceRecord> = [&split.train, &split.val, &split.test]
            .iter()
            .flat_map(|seg| seg.records().iter().copied())
            .collect();
        prop_assert_eq!(&joined[..], daily.records());
        prop_assert_eq!(split.sizes(), (n_train, n_val, daily.len() - n_train - n_val));
    }

    #[test]
    fn regularization_is_idempotent_and_daily(s in gappy_series()) {
        let once = regularize_daily(&s, GapPolicy::ForwardFill).unwrap();
        prop_assert!(once.is_daily());
        prop_assert_eq!(regularize_daily(&once, GapPolicy::ForwardFill).unwrap(), once.clone());
        prop_assert_eq!(regularize_daily(&once, GapPolicy::Strict).unwrap(), once.clone());
        let filled = once.records().iter().filter(|r| r.filled).count();
        prop_assert_eq!(filled, once.len() - s.len());
        prop_assert_eq!(regularize_daily(&s, GapPolicy::Strict).is_ok(), filled == 0);
    }

    #[test]
    fn canonical_csv_round_trips(s in gappy_series()) {
        let daily = regularize_daily(&s, GapPolicy::ForwardFill).unwrap();
        let mut buf = Vec::new();
        write_price_csv(&daily, &mut buf).unwrap();
        let back = parse_price_csv(buf.as_slice(), &ColumnSchema::canonical()).unwrap();
        prop_assert_eq!(back, daily);
    }

    #[test]
    fn normalized_window_is_centered_and_unit(xs in prop::collection::vec(-1e3f64..1e3, 2..64)) {
        let st = RevinState::of(&xs).unwrap();
        let (z, _) = revin(&xs, RevinMode::Normalize, None).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        if st.var > 1e-3 {
            prop_assert!((var - 1.0).abs() <= st.eps / st.var + 1e-9, "var {}", var);
        }
    }

    #[test]
    fn standardizer_inverts(xs in prop::collection::vec(-1e4f64..1e4, 1..64)) {
        let stats = fit_standardizer(&xs).unwrap();
        prop_assert!(stats.std >= 0.0 && stats.eps > 0.0);
        for &x in &xs {
            prop_assert!((stats.inverse(stats.forward(x)) - x).abs() <= 1e-9);
        }
    }

    #[test]
    fn cosine_schedule_never_increases(base in 1e-6f64..1e-2, frac in 0.0f64..1.0, epochs in 1usize..60) {
        let cfg = TrainConfig { base_lr: base, min_lr: base * frac, max_epochs: epochs, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..=epochs).map(|e| cosine_lr(e, &cfg).unwrap()).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lrs.iter().all(|&l| l >= cfg.min_lr - 1e-18 && l <= base));
    }

    #[test]
    fn metrics_ignore_pair_order_and_respect_jensen(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60),
        rot in 0usize..60,
    ) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let m = compute_metrics(&y, &p).unwrap();
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let (y2, p2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let m2 = compute_metrics(&y2, &p2).unwrap();
        prop_assert!((m.mse - m2.mse).abs() < 1e-12 && (m.mae - m2.mae).abs() < 1e-12);
        prop_assert!(m.mae <= m.rmse + 1e-12);
        prop_assert!(m.mse >= 0.0 && m.mae >= 0.0);
    }

    #[test]
    fn rotary_preserves_norms(
        rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 8), 1..20),
        pos in prop::collection::vec(0usize..100_000, 20),
    ) {
        let x = Array2::from_shape_fn((rows.len(), 8), |(r, c)| rows[r][c]);
        let table = RotaryTable::new(8, 10_000.0).unwrap();
        let (rx, rk) = rotary_apply(&x, &x, &pos[..rows.len()], &table).unwrap();
        prop_assert_eq!(&rx, &rk);
        for (a, b) in x.rows().into_iter().zip(rx.rows()) {
            prop_assert!((a.dot(&a).sqrt() - b.dot(&b).sqrt()).abs() <= 1e-6);
        }
    }

    #[test]
    fn gqa_with_one_head_per_group_is_mha(
        seed in 0u64..1000, heads in 1usize..5, t in 1usize..6, causal in any::<bool>(),
    ) {
        let d = 3;
        let f = |k: u64| move |(a, b, c): (usize, usize, usize)| {
            (((a * 131 + b * 17 + c) as u64 ^ (seed * 7919 + k)) as f64 * 0.37).sin()
        };
        let q = Array3::from_shape_fn((heads, t, d), f(1));
        let k = Array3::from_shape_fn((heads, t, d), f(2));
        let v = Array3::from_shape_fn((heads, t, d), f(3));
        let out = grouped_query_attention(&q, &k, &v, causal).unwrap();
        for h in 0..heads {
            let single = |x: &Array3<f64>| x.slice(ndarray::s![h..h + 1, .., ..]).to_owned();
            let one = grouped_query_attention(&single(&q), &single(&k), &single(&v), causal).unwrap();
            let gap = (&out.slice(ndarray::s![h..h + 1, .., ..]) - &one)
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(gap <= 1e-6);
        }
    }

    #[test]
    fn patchtst_tokens_follow_patchify(seq in 1usize..40, patch in 1usize..20, stride in 1usize..12) {
        let mut cfg = BaselineConfig::for_kind(BaselineKind::Patchtst);
        cfg.seq_len = seq;
        cfg.patch_len = patch;
        cfg.stride = stride;
        cfg.n_layers = 1;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.ffn_dim = 8;
        let model = build_baseline(&cfg).unwrap();
        let expected = patchify(&vec![0.0; seq], patch, stride).unwrap().patches.len();
        prop_assert_eq!(model.params().get("head.weight").unwrap().nrows(), expected * 8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn blocks_are_causal_over_patches(seed in 0u64..500, bump_patch in 1usize..4, variant in prop_oneof![Just(Variant::Gpt2), Just(Variant::Llama)]) {
        let mut c = BackboneConfig::toy(variant);
        c.seq_len = 16;
        c.patch_len = 4;
        c.stride = 4;
        let model = build_backbone(&c, seed).unwrap();
        let n_p = model.n_patches();
        let tokens = Array2::from_shape_fn((n_p, c.hidden), |(p, j)| {
            ((p * 31 + j) as u64 ^ seed) as f64 * 0.01 % 1.0
        });
        let wrong = Array2::<f64>::zeros((n_p, c.hidden + 1));
        prop_assert!(model.encode_tokens(&wrong, 1).is_err());
        let base = model.encode_tokens(&tokens, 1).unwrap();
        let mut bumped = tokens.clone();
        bumped[[bump_patch, 0]] += 1.0;
        let out = model.encode_tokens(&bumped, 1).unwrap();
        for p in 0..n_p {
            let same = base.row(p) == out.row(p);
            prop_assert_eq!(same, p < bump_patch, "patch {}", p);
        }
    }

    #[test]
    fn adam_tracks_only_trainable_arrays(mode in prop_oneof![Just(FreezeMode::Fpt), Just(FreezeMode::Full), Just(FreezeMode::LinearProbe)]) {
        let mut model = build_backbone(&BackboneConfig::toy(Variant::Llama), 0).unwrap();
        apply_freeze_policy(&mut model, mode);
        let adam = Adam::new(&model.params);
        prop_assert_eq!(adam.state_names(), model.params.trainable_names());
    }
}
