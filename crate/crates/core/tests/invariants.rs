use arcscore::adapter::interpolate;
use arcscore::anchor::SemanticAnchor;
use arcscore::decoder::{shift_inputs, Backbone, DecoderConfig};
use arcscore::eval::{frechet_distance, kld_score, pearson};
use arcscore::longform::{merge_crossfade, plan_windows};
use arcscore::synth::{apply_delay, segment_starts, CodecSpec, TokenGrid};
use arcscore::trajectory::{AffectTrajectory, Va};
use proptest::prelude::*;

fn grid(codec: CodecSpec, rows: usize, ids: &[u16]) -> TokenGrid {
    let data = (0..rows * codec.num_codebooks).map(|i| ids[i % ids.len()] % codec.vocab_size as u16).collect();
    TokenGrid::new(codec, rows, data).unwrap()
}

fn trajectory(values: &[(f64, f64)]) -> AffectTrajectory {
    AffectTrajectory::new(values.iter().map(|&(v, a)| Va::new(v, a)).collect())
}

fn va_values(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kld_is_symmetric_nonnegative_and_zero_on_itself(
        a in proptest::collection::vec(0u16..64, 1..200),
        b in proptest::collection::vec(0u16..64, 1..200),
    ) {
        let codec = CodecSpec::default();
        let (x, y) = (vec![grid(codec, a.len(), &a)], vec![grid(codec, b.len(), &b)]);
        let xy = kld_score(&x, &y).unwrap();
        prop_assert!(xy >= 0.0);
        prop_assert_eq!(xy, kld_score(&y, &x).unwrap());
        prop_assert_eq!(kld_score(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn frechet_distance_is_symmetric_and_nonnegative(
        a in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 8..30),
        b in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 8..30),
    ) {
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= -1e-9);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab.abs()));
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn pearson_is_bounded(xy in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..50)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Some(r) = pearson(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn window_plans_cover_the_duration(duration in 1usize..400, window in 2usize..60, overlap_frac in 0.0f64..0.95) {
        let overlap = ((window as f64 * overlap_frac) as usize).min(window - 1);
        let plan = plan_windows(duration, window, overlap).unwrap();
        prop_assert_eq!(plan.windows[0].start_s, 0);
        prop_assert_eq!(plan.windows.last().unwrap().end_s, duration);
        for pair in plan.windows.windows(2) {
            prop_assert!(pair[1].start_s <= pair[0].end_s);
            prop_assert!(pair[1].start_s > pair[0].start_s);
        }
        prop_assert!(plan.windows.iter().all(|w| w.len() <= window && !w.is_empty()));
    }

    #[test]
    fn crossfade_of_agreeing_windows_is_the_curve(values in va_values(1..200), window in 2usize..40, overlap_frac in 0.0f64..0.95) {
        let overlap = ((window as f64 * overlap_frac) as usize).min(window - 1);
        let truth = trajectory(&values);
        let plan = plan_windows(truth.len(), window, overlap).unwrap();
        let parts: Vec<_> = plan.windows.iter().map(|w| truth.slice(w.start_s, w.end_s)).collect();
        let merged = merge_crossfade(&plan, &parts).unwrap();
        for (m, t) in merged.points.iter().zip(&truth.points) {
            prop_assert!(m.max_abs_diff(*t) < 1e-12);
        }
    }

    #[test]
    fn interpolation_hits_the_endpoints_and_stays_in_range(values in va_values(1..40), t_a in 1usize..300) {
        let traj = trajectory(&values);
        let dense = interpolate(&traj, t_a).unwrap();
        prop_assert_eq!(dense.nrows(), t_a);
        let (lo_v, hi_v) = values.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.0), h.max(p.0)));
        let (lo_a, hi_a) = values.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p.1), h.max(p.1)));
        for r in dense.rows() {
            prop_assert!(r[0] >= lo_v - 1e-12 && r[0] <= hi_v + 1e-12);
            prop_assert!(r[1] >= lo_a - 1e-12 && r[1] <= hi_a + 1e-12);
        }
        prop_assert!((dense[[0, 0]] - values[0].0).abs() < 1e-12);
        if t_a > 1 {
            let last = values.last().unwrap();
            prop_assert!((dense[[t_a - 1, 1]] - last.1).abs() < 1e-12);
        }
    }

    #[test]
    fn segments_fit_inside_the_stream(duration in 0usize..500, clip in 1usize..60, hop in 1usize..60) {
        let starts = segment_starts(duration, clip, hop);
        prop_assert!(starts.iter().all(|&s| s % hop == 0 && s + clip <= duration));
        if duration >= clip {
            prop_assert_eq!(starts.len(), (duration - clip) / hop + 1);
        } else {
            prop_assert!(starts.is_empty());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn decoder_is_causal(ids in proptest::collection::vec(0u16..8, 24), change in 0usize..24, seed in 0u64..1000) {
        let codec = CodecSpec { num_codebooks: 2, vocab_size: 8, tokens_per_second: 4, silence_token: 0 };
        let cfg = DecoderConfig { layers: 2, dim: 8, heads: 2, max_context: 64, seed, ..Default::default() }.for_codec(&codec);
        let backbone = Backbone::<f64>::new(cfg).unwrap();
        let memory = backbone.anchor.encode(&SemanticAnchor { genre: 0, instrumentation: 1, mood: 2, pacing: 3 }).unwrap();
        let rows = ids.len() / 2;
        let a = grid(codec, rows, &ids);
        let mut b = a.clone();
        let (row, k) = (change / 2, change % 2);
        b.set(row, k, (a.get(row, k) + 1) % 8);
        let run = |g: &TokenGrid| {
            let inputs = shift_inputs(&apply_delay(g, codec.pad_token()));
            backbone.decoder.forward(&inputs, memory.view(), None).unwrap().0
        };
        let (la, lb) = (run(&a), run(&b));
        // The changed token enters the delayed targets at step row + k and the
        // shifted inputs one step later.
        let first = row + k + 1;
        for (x, y) in la.iter().zip(&lb) {
            for s in 0..first.min(x.nrows()) {
                prop_assert_eq!(x.row(s), y.row(s));
            }
            if first < x.nrows() {
                prop_assert_ne!(x.row(first), y.row(first));
            }
        }
    }
}
