use fissure_core::dynsys::{OmegaSample, TorusDynamics};
use fissure_core::epsolver::{ManufacturedVortex, StepOptions, Stepper};
use fissure_core::limitsolver::restrict;
use fissure_core::linalg::{norm, pcg, Tolerance};
use fissure_core::mac::{max_divergence, MacGrid};
use fissure_core::tensor::Tensor4;
use proptest::prelude::*;

fn dyadic() -> impl Strategy<Value = f64> {
    (0u32..1 << 16).prop_map(|k| k as f64 / (1u32 << 16) as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn action_is_a_group_law(y1 in [dyadic(), dyadic()], y2 in [dyadic(), dyadic()], w in [dyadic(), dyadic()]) {
        let d = TorusDynamics::new(2, 16).unwrap();
        let w = OmegaSample::new(w.to_vec(), 0);
        let lhs = d.act(&[y1[0] + y2[0], y1[1] + y2[1]], &w);
        let rhs = d.act(&y1, &d.act(&y2, &w));
        prop_assert_eq!(lhs.coords(), rhs.coords());
    }

    #[test]
    fn voigt_energy_is_the_contraction(
        c in (1.0f64..5.0, 1.0f64..5.0, -0.5f64..0.5, 0.2f64..3.0),
        e in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
        t in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
    ) {
        let a = Tensor4::orthotropic(c.0, c.1, c.2, c.3);
        let m = |s: [f64; 3]| [[s[0], s[2]], [s[2], s[1]]];
        let direct = a.contract(&m(e), &m(t));
        let voigt = a.to_voigt().energy(&e, &t);
        prop_assert!((direct - voigt).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn restriction_preserves_the_mean(ratio in 1usize..4, coarse in 2usize..6, seed in any::<u64>()) {
        let fine = MacGrid::unit(coarse * ratio);
        let cg = MacGrid::unit(coarse);
        let values: Vec<f64> = (0..fine.ncell()).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 1000.0).collect();
        let out = restrict(&fine, &values, &cg).unwrap();
        let mf = values.iter().sum::<f64>() / values.len() as f64;
        let mc = out.iter().sum::<f64>() / out.len() as f64;
        prop_assert!((mf - mc).abs() <= 1e-13);
    }

    #[test]
    fn stream_velocities_are_divergence_free(n in 4usize..40, k in (1i32..4, 1i32..4), phase in 0.0f64..6.0) {
        use std::f64::consts::PI;
        let g = MacGrid::unit(n);
        let u = g.from_stream(|x| (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2) * (2.0 * PI * (k.0 as f64 * x[0] + k.1 as f64 * x[1]) + phase).cos());
        prop_assert!(max_divergence(&g, &u) <= 1e-10);
    }

    #[test]
    fn pcg_solves_spd_systems(n in 2usize..12, entries in proptest::collection::vec(-1.0f64..1.0, 144), rhs in proptest::collection::vec(-1.0f64..1.0, 12)) {
        // A = B^T B + I
        let b = |i: usize, j: usize| entries[i * 12 + j];
        let a: Vec<f64> = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                (0..n).map(|k| b(k, i) * b(k, j)).sum::<f64>() + if i == j { 1.0 } else { 0.0 }
            })
            .collect();
        let mut op = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = (0..n).map(|j| a[i * n + j] * x[j]).sum();
            }
        };
        let mut id = |r: &[f64], z: &mut [f64]| z.copy_from_slice(r);
        let f = &rhs[..n];
        let mut x = vec![0.0; n];
        pcg("test", &mut op, &mut id, f, &mut x, Tolerance::relative(1e-12)).unwrap();
        let mut ax = vec![0.0; n];
        op(&x, &mut ax);
        let r: Vec<f64> = ax.iter().zip(f).map(|(p, q)| p - q).collect();
        prop_assert!(norm(&r) <= 1e-10 * norm(f).max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projection_is_idempotent(values in proptest::collection::vec(-1.0f64..1.0, 2 * 16 * 17)) {
        let g = MacGrid::unit(16);
        let mv = ManufacturedVortex { amplitude: 1.0, mu: 1.0, rho: 1.0, convection: false };
        let coef = mv.problem(0.1).unwrap().realize(&g, &OmegaSample::new(vec![0.0, 0.0], 0)).unwrap();
        let stepper = Stepper::new(coef, StepOptions::new(0.01)).unwrap();
        let mut u = values;
        g.zero_walls(&mut u);
        let (once, _, _) = stepper.project(&u).unwrap();
        prop_assert!(max_divergence(&g, &once) <= 1e-10);
        let (twice, _, _) = stepper.project(&once).unwrap();
        let diff = once.iter().zip(&twice).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(diff <= 1e-10);
    }
}
