use hcmamba_core::conv::{Conv2dSpec, DilationSchedule};
use hcmamba_core::loss::{soft_dice_loss, soft_miou_loss};
use hcmamba_core::metrics::{boundary_loss, boundary_points, directed_distances, evaluate, hd95};
use hcmamba_core::rng::uniform_tensor;
use hcmamba_core::scan2d::{direction_positions, direction_steps, scan_expand, scan_merge, shuffle_permutation};
use hcmamba_core::ssm::{discretize_zoh, scan_convolutional, scan_recurrent, ContinuousSsm};
use hcmamba_core::{Tape, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;

fn stable_ssm() -> impl Strategy<Value = (ContinuousSsm<f64>, f64)> {
    (1usize..=8).prop_flat_map(|n| {
        (
            vec(-3.0f64..-0.05, n),
            vec(-1.0f64..1.0, n),
            vec(-1.0f64..1.0, n),
            -1.0f64..1.0,
            0.01f64..1.0,
        )
            .prop_map(|(a, b, c, d, dt)| (ContinuousSsm::new(a, b, c, d).unwrap(), dt))
    })
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = Vec<bool>> {
    vec(any::<bool>(), h * w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recurrent_and_convolutional_agree((ssm, dt) in stable_ssm(), x in vec(-1.0f64..1.0, 1..64)) {
        let d = discretize_zoh(&ssm, dt).unwrap();
        let r = scan_recurrent(&d, &x).unwrap();
        let c = scan_convolutional(&d, &x).unwrap();
        for (a, b) in r.iter().zip(&c) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zoh_semigroup((ssm, dt) in stable_ssm()) {
        let full = discretize_zoh(&ssm, dt).unwrap();
        let half = discretize_zoh(&ssm, dt / 2.0).unwrap();
        for k in 0..ssm.state_size() {
            let a2 = half.a_bar[k] * half.a_bar[k];
            prop_assert!((full.a_bar[k] - a2).abs() < 1e-12);
            // two half steps of a constant input equal one full step
            let b2 = half.a_bar[k] * half.b_bar[k] + half.b_bar[k];
            prop_assert!((full.b_bar[k] - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn discretization_is_stable((ssm, dt) in stable_ssm()) {
        let d = discretize_zoh(&ssm, dt).unwrap();
        prop_assert!(d.a_bar.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn shuffle_is_a_bijection(half in 1usize..=32, g in 1usize..=8) {
        let c = 2 * half;
        match shuffle_permutation(c, g) {
            Ok(p) => {
                let mut seen = vec![false; c];
                for &i in &p {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            Err(_) => prop_assert!(c % g != 0),
        }
    }

    #[test]
    fn scan_roundtrip(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
        let mut t = Tape::<f64>::new();
        let x = t.constant(uniform_tensor(&[1, h, w, c], -5.0, 5.0, seed));
        let s = scan_expand(&mut t, x).unwrap();
        let m = scan_merge(&mut t, s, h, w).unwrap();
        for (a, b) in t.value(m).data().iter().zip(t.value(x).data()) {
            prop_assert_eq!(*a, 4.0 * b);
        }
        for k in 0..4 {
            let pos = direction_positions(k, h, w);
            let steps = direction_steps(k, h, w);
            prop_assert!(pos.iter().enumerate().all(|(t, &p)| steps[p] == t));
        }
    }

    #[test]
    fn dilation_equals_zero_inflated_kernel(d in 1usize..4, seed in any::<u64>()) {
        let (cin, cout, k) = (2, 3, 3);
        let kk = (k - 1) * d + 1;
        let w = uniform_tensor::<f64>(&[cout, cin, k, k], -1.0, 1.0, seed);
        let mut wi = Tensor::<f64>::zeros(&[cout, cin, kk, kk]);
        for o in 0..cout {
            for i in 0..cin {
                for a in 0..k {
                    for b in 0..k {
                        wi.data_mut()[((o * cin + i) * kk + a * d) * kk + b * d] = w.data()[((o * cin + i) * k + a) * k + b];
                    }
                }
            }
        }
        let mut t = Tape::new();
        let x = t.constant(uniform_tensor(&[1, 7, 6, cin], -1.0, 1.0, seed ^ 1));
        let wv = t.constant(w);
        let wiv = t.constant(wi);
        let y1 = t.conv2d(x, wv, None, &Conv2dSpec::same(cin, cout, k, d, 1)).unwrap();
        let y2 = t.conv2d(x, wiv, None, &Conv2dSpec::same(cin, cout, kk, 1, 1)).unwrap();
        prop_assert!(t.value(y1).max_abs_diff(t.value(y2)) < 1e-12);
    }

    #[test]
    fn boundary_loss_is_symmetric(a in mask(6, 7), b in mask(6, 7)) {
        prop_assert_eq!(boundary_loss(&a, &b, 6, 7), boundary_loss(&b, &a, 6, 7));
    }

    #[test]
    fn hd95_bounded_by_max_distance(a in mask(6, 6), b in mask(6, 6)) {
        let (ba, bb) = (boundary_points(&a, 6, 6), boundary_points(&b, 6, 6));
        prop_assume!(!ba.is_empty() && !bb.is_empty());
        let mut all = directed_distances(&ba, &bb);
        all.extend(directed_distances(&bb, &ba));
        let max = all.iter().cloned().fold(0.0, f64::max);
        let h = hd95(&a, &b, 6, 6);
        prop_assert!(h <= max + 1e-12 && h >= 0.0);
    }

    #[test]
    fn soft_dice_dominates_soft_iou(seed in any::<u64>(), k in 2usize..4) {
        let mut t = Tape::<f64>::new();
        let logits = t.constant(uniform_tensor(&[2, 3, 3, k], -3.0, 3.0, seed));
        let p = t.softmax(logits);
        let g = t.constant(Tensor::from_fn(&[2, 3, 3, k], |i| ((i / k) % k == i % k) as u8 as f64));
        let iou = soft_miou_loss(&mut t, p, g).unwrap();
        let dice = soft_dice_loss(&mut t, p, g).unwrap();
        let (li, ld) = (t.value(iou)[0], t.value(dice)[0]);
        prop_assert!((0.0..=1.0).contains(&li) && (0.0..=1.0).contains(&ld));
        prop_assert!(1.0 - ld >= 1.0 - li - 1e-9);
    }

    #[test]
    fn metrics_stay_in_range(p in vec(0u8..3, 36), g in vec(0u8..3, 36)) {
        let r = evaluate(&p, &g, 6, 6, 3).unwrap();
        for v in [r.miou, r.dsc, r.acc, r.spe, r.sen] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.hd95 >= 0.0);
        prop_assert!(r.dsc + 1e-12 >= r.miou);
    }
}

#[test]
fn sawtooth_schedule_is_default() {
    assert_eq!(DilationSchedule::default().rates(), &[1, 2, 3, 1]);
}
