//! Property-based checks of the model invariants.

use proptest::prelude::*;
use symdpd_core::dpd::normalization_scale;
use symdpd_core::policy::{policy_gradient_estimate, policy_sample, PolicyConfig};
use symdpd_core::signal::{matched_filter_downsample, mean_power, modulate};
use symdpd_core::{gmp, rng, Complex64, Constellation, Demapper, DpdModel, GmpConfig, PaModel, PulseShape};

fn complex_vec(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec(
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| Complex64::new(a, b)),
        len,
    )
}

fn small_gmp() -> GmpConfig {
    GmpConfig::uniform(3, 2, 1)
}

fn close(a: &[Complex64], b: &[Complex64], rel: f64) -> bool {
    let scale = a.iter().map(|z| z.norm()).fold(1.0, f64::max);
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= rel * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gmp_forward_is_linear_in_coefficients(
        x in complex_vec(8..40),
        c1 in complex_vec(small_gmp().basis_count()),
        c2 in complex_vec(small_gmp().basis_count()),
    ) {
        let cfg = small_gmp();
        let pa = |c: &[Complex64]| PaModel::gmp(cfg, c.to_vec(), 0.0).unwrap().forward_noiseless(&x).unwrap();
        let sum: Vec<Complex64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let separate: Vec<Complex64> = pa(&c1).iter().zip(pa(&c2)).map(|(a, b)| a + b).collect();
        prop_assert!(close(&pa(&sum), &separate, 1e-12));
    }

    #[test]
    fn prepended_zeros_shift_the_output(x in complex_vec(4..32), c in complex_vec(small_gmp().basis_count()), k in 1usize..6) {
        let cfg = small_gmp();
        let pa = PaModel::gmp(cfg, c, 0.0).unwrap();
        let mut padded = vec![Complex64::new(0.0, 0.0); k];
        padded.extend_from_slice(&x);
        let y = pa.forward_noiseless(&x).unwrap();
        let yp = pa.forward_noiseless(&padded).unwrap();
        prop_assert!(yp[..k].iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        prop_assert_eq!(&yp[k..], &y[..]);
    }

    #[test]
    fn clipping_keeps_phase(x in complex_vec(1..32), gain in 0.1..10.0f64, sat in 0.1..5.0f64) {
        let y = PaModel::linear_clipping(gain, sat, 0.0).unwrap().forward_noiseless(&x).unwrap();
        for (a, b) in x.iter().zip(&y) {
            if a.norm() > 1e-9 {
                prop_assert!((a.arg() - b.arg()).abs() < 1e-12);
                prop_assert!(b.norm() <= sat * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn gmp_fit_recovers_coefficients(seed in 0u64..1000) {
        let cfg = small_gmp();
        let mut r = rng::stream(seed, "fit");
        let x: Vec<Complex64> = (0..600).map(|_| rng::complex_gaussian(&mut r, 1.0)).collect();
        let c: Vec<Complex64> = (0..cfg.basis_count()).map(|_| rng::complex_gaussian(&mut r, 0.1)).collect();
        let y = gmp::evaluate(&x, &cfg, &c);
        let fit = gmp::fit(&x, &y, &cfg, 0.0).unwrap();
        let err: f64 = fit.coeffs.iter().zip(&c).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err < 1e-6 * norm);
    }

    #[test]
    fn normalization_is_idempotent(u in complex_vec(16..64), c in complex_vec(small_gmp().basis_count())) {
        prop_assume!(mean_power(&u) > 1e-3);
        let m = DpdModel::from_gmp_coefficients(small_gmp(), &c).unwrap();
        let raw = m.forward_raw(&u).unwrap();
        prop_assume!(mean_power(&raw) > 1e-6);
        let once = m.forward(&u).unwrap().samples;
        prop_assert!((mean_power(&once) - mean_power(&u)).abs() <= 1e-9 * mean_power(&u));
        let s = normalization_scale(&u, &once).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probability_rows_sum_to_one(y in complex_vec(1..64), noise in 1e-4..2.0f64, order in prop::sample::select(vec![4usize, 16, 64])) {
        let d = Demapper::ml(Constellation::square_qam(order).unwrap(), noise).unwrap();
        let p = d.demap(&y).unwrap();
        for row in p.rows() {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ml_invariant_to_common_rotation(y in complex_vec(1..16), noise in 1e-2..1.0f64) {
        // A quarter turn maps the square grid onto itself, so rotating the
        // received point and the constellation together changes nothing.
        let c = Constellation::square_qam(16).unwrap();
        let d = Demapper::ml(c.clone(), noise).unwrap();
        let rot = Complex64::new(0.0, 1.0);
        let p = d.demap(&y).unwrap();
        let yr: Vec<Complex64> = y.iter().map(|z| z * rot).collect();
        let pr = d.demap(&yr).unwrap();
        for n in 0..y.len() {
            for i in 0..16 {
                let target = c.point(i) * rot;
                let j = (0..16).min_by(|&a, &b| (c.point(a) - target).norm().partial_cmp(&(c.point(b) - target).norm()).unwrap()).unwrap();
                prop_assert!((p.row(n)[i] - pr.row(n)[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ce_loss_is_permutation_equivariant(y in complex_vec(2..32), seed in 0u64..1000) {
        let d = Demapper::ml(Constellation::square_qam(16).unwrap(), 0.1).unwrap();
        let mut r = rng::stream(seed, "perm");
        let m = rng::messages(&mut r, 16, y.len());
        let (l, mean) = d.losses(&y, &m).unwrap();
        let perm: Vec<usize> = (0..y.len()).rev().collect();
        let yp: Vec<Complex64> = perm.iter().map(|&i| y[i]).collect();
        let mp: Vec<usize> = perm.iter().map(|&i| m[i]).collect();
        let (lp, meanp) = d.losses(&yp, &mp).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(lp[k], l[i]);
        }
        prop_assert!((mean - meanp).abs() < 1e-12);
    }

    #[test]
    fn estimate_scales_with_losses(seed in 0u64..1000) {
        let m = DpdModel::identity_gmp(small_gmp()).unwrap();
        let n = 32;
        let mut r = rng::stream(seed, "est");
        let u: Vec<Complex64> = (0..4 * n).map(|_| rng::complex_gaussian(&mut r, 1.0)).collect();
        let x = m.forward(&u).unwrap();
        let xt = policy_sample(&x.samples, 0.08, &mut r).unwrap();
        let l: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3 + seed as f64).sin().abs()).collect();
        let l2: Vec<f64> = l.iter().map(|v| 2.0 * v).collect();
        let p = PolicyConfig::default();
        let g = policy_gradient_estimate(&l, &xt, &x.samples, &u, &m, x.scale, 4, &p).unwrap();
        let g2 = policy_gradient_estimate(&l2, &xt, &x.samples, &u, &m, x.scale, 4, &p).unwrap();
        prop_assert!(g.iter().zip(&g2).all(|(a, b)| 2.0 * a == *b));
    }

    #[test]
    fn clean_round_trip_is_error_free(seed in 0u64..1000, n in 1usize..512, order in prop::sample::select(vec![4usize, 16, 64])) {
        let c = Constellation::square_qam(order).unwrap();
        let shape = PulseShape::rrc(0.1, 96, 4).unwrap();
        let mut r = rng::stream(seed, "rt");
        let msgs = rng::messages(&mut r, order, n);
        let x = modulate(&c.map_messages(&msgs).unwrap(), &shape, 200e6).unwrap();
        let y = matched_filter_downsample(&x, &shape).unwrap();
        let d = Demapper::ml(c, 0.01).unwrap();
        prop_assert_eq!(d.decide_symbols(&y).unwrap(), msgs);
    }
}
