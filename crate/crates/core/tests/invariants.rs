use feh_core::catalog::{apply_selection, LightCurve, SelectionCriteria, StarRecord};
use feh_core::preprocess::{align_to_maximum, phase_fold, phase_of};
use proptest::prelude::*;

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn record() -> impl Strategy<Value = StarRecord> {
    (
        any::<u64>(),
        0.2f64..1.0,
        0.1f64..2.0,
        30usize..120,
        -3.5f64..1.5,
        0.0f64..0.6,
        prop::option::of(0.0f64..0.2),
    )
        .prop_map(|(source_id, period, amp_g, n_epochs, feh, feh_sigma, phi31_sigma)| StarRecord {
            id: source_id % 10_000,
            source_id,
            period,
            amp_g,
            n_epochs,
            feh,
            feh_sigma,
            phi31_sigma,
            epoch_max: None,
        })
}

proptest! {
    #[test]
    fn folding_is_periodic(
        dt in -1500.0f64..1500.0,
        epoch in 1000.0f64..2000.0,
        period in 0.3f64..0.9,
        k in -200i64..200,
    ) {
        let t = epoch + dt;
        let a = phase_of(t, epoch, period);
        let b = phase_of(t + k as f64 * period, epoch, period);
        prop_assert!(circular_gap(a, b) < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn folded_phases_stay_in_unit_interval(
        times in prop::collection::vec(-5000.0f64..5000.0, 1..80),
        epoch in -100.0f64..100.0,
        period in 0.01f64..5.0,
    ) {
        let curve = LightCurve {
            source_id: 1,
            points: times.iter().enumerate().map(|(i, &t)| (t, 15.0 + (i % 7) as f64 * 0.1)).collect(),
        };
        let folded = phase_fold(&curve, period, epoch).unwrap();
        prop_assert!(folded.points.iter().all(|p| (0.0..1.0).contains(&p.0)));
        prop_assert!(folded.points.windows(2).all(|w| w[0].0 <= w[1].0));
        let mut aligned = folded.clone();
        aligned.anchored = false;
        let once = align_to_maximum(&aligned);
        prop_assert!(once.points.iter().all(|p| (0.0..1.0).contains(&p.0)));
        prop_assert_eq!(align_to_maximum(&once), once);
    }

    #[test]
    fn selection_is_idempotent_and_order_free(
        records in prop::collection::vec(record(), 0..60),
        seed in any::<u64>(),
    ) {
        let criteria = SelectionCriteria::default();
        let (kept, rejected) = apply_selection(&records, &criteria);
        prop_assert_eq!(kept.len() + rejected.len(), records.len());
        let (again, none) = apply_selection(&kept, &criteria);
        prop_assert_eq!(&again, &kept);
        prop_assert!(none.is_empty());

        let mut shuffled = records.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                let j = (seed.wrapping_mul(i as u64 + 1) % n as u64) as usize;
                shuffled.swap(i, j);
            }
        }
        let (kept2, _) = apply_selection(&shuffled, &criteria);
        let mut a: Vec<u64> = kept.iter().map(|r| r.source_id).collect();
        let mut b: Vec<u64> = kept2.iter().map(|r| r.source_id).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}
