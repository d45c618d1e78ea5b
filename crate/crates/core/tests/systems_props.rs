use fbmhd_core::eos::EosModel;
use fbmhd_core::state::{sym_eigenvalues, relative_skew, Layout};
use fbmhd_core::systems::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, d: usize, vmax: f64) -> Vec<f64> {
    let l = Layout::new(d);
    let mut u = vec![0.0; l.n()];
    // keep the fluid pressure near one so the density stays in band
    for i in 0..d {
        u[l.v(i)] = rng.gen_range(-1.0..1.0) * vmax / (d as f64).sqrt();
        u[l.h(i)] = rng.gen_range(-1.0..1.0);
    }
    let h2: f64 = (0..d).map(|i| u[l.h(i)].powi(2)).sum();
    u[0] = rng.gen_range(0.5..2.0) + 0.5 * h2;
    u[l.s()] = rng.gen_range(-0.5..0.5);
    u
}

#[test]
fn boundary_form_and_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in [2, 3] {
        let l = Layout::new(d);
        for &eps in &[0.0, 0.4, 0.9] {
            let model = EosModel::default().with_eps(eps);
            for _ in 0..100 {
                let mut u = random_state(&mut rng, d, 0.9);
                let grad: Vec<f64> = (2..=d).map(|_| rng.gen_range(-0.8..0.8)).collect();
                // H_N = 0 and dt phi = v_N
                u[l.h(0)] = (2..=d).map(|i| grad[i - 2] * u[l.h(i - 1)]).sum();
                let mut normal = vec![1.0];
                normal.extend(grad.iter().map(|g| -g));
                let vn: f64 = (0..d).map(|i| normal[i] * u[l.v(i)]).sum();
                let bm = lifted_a1(&u, &grad, vn, 1.0, &model, d).unwrap();
                let gamma = if eps > 0.0 {
                    let v2: f64 = (0..d).map(|i| u[l.v(i)].powi(2)).sum();
                    1.0 / (1.0 - eps * eps * v2).sqrt()
                } else {
                    1.0
                };
                let expect = expected_boundary_form(d, &normal, gamma);
                let res = (bm.a1_tilde - expect).norm();
                assert!(res < 1e-12, "d={d} eps={eps} residual {res}");
                assert_eq!(boundary_inertia(&bm, 1e-10), (1, 1, 2 * d));
                let w = w_transform(&u, &grad, vn, 1.0, &model, d).unwrap();
                assert!(max_abs(&w.split.1, l.n()) < 1e-12);
            }
        }
    }
}

#[test]
fn conservative_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let d = if trial % 2 == 0 { 2 } else { 3 };
        let l = Layout::new(d);
        let eps = rng.gen_range(0.05..1.0);
        let model = EosModel::default().with_eps(eps);
        let mut val = vec![0.0; l.n()];
        val[0] = rng.gen_range(0.5..2.0);
        for i in 0..d {
            val[l.v(i)] = rng.gen_range(-0.8..0.8);
            val[l.h(i)] = rng.gen_range(-1.0..1.0);
        }
        val[l.s()] = rng.gen_range(-0.3..0.3);
        let mut dx: Vec<Vec<f64>> = (0..d).map(|_| (0..l.n()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let div_rest: f64 = (1..d).map(|j| dx[j][l.h(j)]).sum();
        dx[0][l.h(0)] = -div_rest;
        let dt = symmetric_time_derivative(&val, &dx, &model, d).unwrap();
        let jet = RelJet { d, val, dt, dx };
        let r = conservative_residual_rel(&jet, &model).unwrap();
        let rel = r.conservative_relative();
        assert!(rel < 1e-10, "trial {trial}: {rel} {:?}", r.conservative);
        assert!(r.symmetric.iter().all(|x| x.abs() < 1e-10));
    }
}

proptest! {
    #[test]
    fn symmetric_and_positive(seed in 0u64..10_000, d in 2usize..=3, eps in prop::sample::select(vec![0.0, 0.3, 0.8])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_state(&mut rng, d, 0.9);
        let model = EosModel::default().with_eps(eps);
        let m = assemble(&u, &model, d).unwrap();
        let n = 2 * d + 2;
        for k in 0..=d {
            prop_assert!(relative_skew(&m.a[k], n) < 1e-12);
        }
        prop_assert!(sym_eigenvalues(&m.a[0], n)[0] > 0.0);
        if eps > 0.0 {
            let b = rel_blocks(&u, &model, d).unwrap();
            prop_assert!(sym_eigenvalues(&b.b[0], n)[0] > 0.0);
            let det = fbmhd_core::state::block(&b.jac, n).determinant();
            let expect = b.gamma.powi(d as i32 + 2);
            prop_assert!((det / expect - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn t6_nonnegative(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: f64 = rng.gen_range(0.01..1.0);
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = rng.gen_range(0.0..0.999) / (eps * vn);
        let v: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t6 = t6_form(eps, &v, &h, &w);
        prop_assert!(t6 >= -1e-12 * (1.0 + t6.abs()));
    }
}
