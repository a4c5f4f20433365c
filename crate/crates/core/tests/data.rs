//! Dataset files, normalization, windows and splits.

use ddcn::data::io::{decode_dataset, encode_dataset};
use ddcn::data::{
    load_dataset, make_windows, make_windows_multi, materialize, save_dataset, split, synth_traffic,
    ChannelStats, Prepared, SynthSpec, TrafficDataset, DEFAULT_SPLIT,
};
use ddcn::{Error, FormatError, Tensor};
use proptest::prelude::*;

fn synth(h: usize, w: usize, steps: usize, seed: u64) -> TrafficDataset {
    synth_traffic(&SynthSpec {
        height: h,
        width: w,
        steps,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn stats_use_training_frames_only() {
    let mut ds = synth(4, 4, 100, 1);
    // plant extremes after the training region; they must not move the stats
    let frame_len = ds.frame_len();
    let data = ds.frames.data_mut();
    data[90 * frame_len] = 1e6;
    data[99 * frame_len + 3] = 1e6;
    let prepared = Prepared::new(&ds, 4, DEFAULT_SPLIT).unwrap();
    let end = prepared.train_frame_end();
    // 96 windows → 67 train; the last train target is frame 70
    assert_eq!(prepared.windows.train.len(), 67);
    assert_eq!(end, 71);

    let mut min = vec![f32::INFINITY; 2];
    let mut max = vec![f32::NEG_INFINITY; 2];
    for t in 0..end {
        for (i, &v) in ds.frame(t).iter().enumerate() {
            let c = i / 16;
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    assert_eq!(prepared.stats.min, min);
    assert_eq!(prepared.stats.max, max);
    assert!(max.iter().all(|&m| m < 1e6));
    let refit = ChannelStats::fit(&ds.frames, end).unwrap();
    assert_eq!(refit, prepared.stats);
}

#[test]
fn window_target_is_next_inputs_last_frame() {
    let ds = synth(3, 5, 30, 2);
    let windows = make_windows(&ds, 4).unwrap();
    assert_eq!(windows.len(), 26);
    for pair in windows.windows(2) {
        let a = materialize(&[&ds.frames], &pair[0]).unwrap();
        let b = materialize(&[&ds.frames], &pair[1]).unwrap();
        assert_eq!(a.target, b.input.index_first(3).unwrap());
        for k in 0..4 {
            assert_eq!(a.input.index_first(k).unwrap().data(), ds.frame(pair[0].start + k));
        }
    }
}

#[test]
fn windows_never_cross_series_boundaries() {
    let a = synth(2, 2, 10, 3);
    let b = synth(2, 2, 7, 4);
    let windows = make_windows_multi(&[&a, &b], 4).unwrap();
    assert_eq!(windows.len(), 6 + 3);
    for w in &windows {
        let len = if w.source == 0 { 10 } else { 7 };
        assert!(w.target_index() < len);
        let s = materialize(&[&a.frames, &b.frames], w).unwrap();
        let src = if w.source == 0 { &a } else { &b };
        assert_eq!(s.target.data(), src.frame(w.target_index()));
    }
}

#[test]
fn split_sizes_and_order() {
    let items: Vec<usize> = (0..100).collect();
    let p = split(&items, DEFAULT_SPLIT).unwrap();
    assert_eq!((p.train.len(), p.val.len(), p.test.len()), (70, 10, 20));
    assert!(p.train.last() < p.val.first() && p.val.last() < p.test.first());
    let err = split(&(0..5).collect::<Vec<_>>(), DEFAULT_SPLIT).unwrap_err().to_string();
    assert!(err.contains("at least"), "{err}");
}

#[test]
fn synthetic_period_recovered_by_autocorrelation() {
    for period in [24, 48] {
        let ds = synth_traffic(&SynthSpec {
            height: 8,
            width: 8,
            steps: 512,
            seed: 5,
            period,
            ..Default::default()
        })
        .unwrap();
        // city-wide inflow per step
        let series: Vec<f64> = (0..512)
            .map(|t| ds.frame(t)[..64].iter().map(|&v| v as f64).sum())
            .collect();
        let mean = series.iter().sum::<f64>() / 512.0;
        let acf = |lag: usize| -> f64 {
            (0..512 - lag).map(|t| (series[t] - mean) * (series[t + lag] - mean)).sum::<f64>()
        };
        // strongest positive correlation among non-trivial lags
        let best = (period / 2..=3 * period / 2).max_by(|&a, &b| acf(a).total_cmp(&acf(b))).unwrap();
        assert_eq!(best, period);
    }
}

#[test]
fn synth_is_deterministic_and_non_negative() {
    let a = synth(6, 4, 64, 7);
    let b = synth(6, 4, 64, 7);
    assert_eq!(encode_dataset(&a), encode_dataset(&b));
    assert!(a.frames.data().iter().all(|&v| v >= 0.0));
    assert_ne!(a.frames, synth(6, 4, 64, 8).frames);
}

#[test]
fn file_errors_have_distinct_categories() {
    let ds = synth(2, 3, 5, 0);
    let bytes = encode_dataset(&ds);

    let truncated = decode_dataset(&bytes[..bytes.len() - 7]).unwrap_err();
    assert!(matches!(truncated, Error::Format(FormatError::Truncated { .. })), "{truncated}");

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_dataset(&magic).unwrap_err(), Error::Format(FormatError::BadMagic { .. })));

    // header claims 2^32-1 frames: refused before allocating
    let mut huge = bytes.clone();
    huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    let err = decode_dataset(&huge).unwrap_err();
    assert!(
        matches!(err, Error::Format(FormatError::DimensionOverflow(_) | FormatError::Truncated { .. })),
        "{err}"
    );

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.grdt");
    let err = load_dataset(&missing).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("none.grdt"));
}

#[test]
fn normalize_round_trip() {
    let ds = synth(4, 4, 40, 9);
    let stats = ChannelStats::fit(&ds.frames, 40).unwrap();
    let n = stats.normalize(&ds.frames, 1).unwrap();
    assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let back = stats.denormalize(&n, 1).unwrap();
    for (a, b) in back.data().iter().zip(ds.frames.data()) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dataset_files_round_trip_bit_exact(
        t in 1usize..6, c in 1usize..3, h in 1usize..5, w in 1usize..5,
        interval in 1u32..120, seed in any::<u64>()
    ) {
        let mut s = seed;
        let frames = Tensor::from_fn(vec![t, c, h, w], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / 997.0
        }).unwrap();
        let ds = TrafficDataset::new("prop", interval, frames).unwrap();
        let back = decode_dataset(&encode_dataset(&ds)).unwrap();
        prop_assert_eq!(&back.meta, &ds.meta);
        prop_assert_eq!(back.frames.data(), ds.frames.data());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.grdt");
        save_dataset(&ds, &path).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap().frames, ds.frames);
    }

    #[test]
    fn window_count_formula(total in 2usize..40, steps in 1usize..8) {
        prop_assume!(total > steps);
        let ds = TrafficDataset::new("w", 30, Tensor::zeros(vec![total, 1, 1, 1]).unwrap()).unwrap();
        prop_assert_eq!(make_windows(&ds, steps).unwrap().len(), total - steps);
    }
}
