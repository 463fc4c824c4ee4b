//! Convergence and long-time behavior of the reduced-space integrators.

use nalgebra::DVector;
use romforge::galerkin::GromCoefficients;
use romforge::online::{integrate, integrate_collect, FnSystem, IntegratorConfig, ReducedSystem, Scheme};
use romforge::synth::quadratic_toy_system;

fn oscillator() -> FnSystem<impl Fn(&DVector<f64>) -> DVector<f64> + Sync> {
    FnSystem::new(2, |a: &DVector<f64>| DVector::from_vec(vec![a[1], -a[0]]))
}

fn fixed_step_error(h: f64) -> f64 {
    let a0 = DVector::from_vec(vec![1.0, 0.0]);
    let cfg = IntegratorConfig::new(Scheme::DormandPrinceFixed { h }, vec![0.0, 2.0]);
    let s = integrate(&oscillator(), &a0, &cfg).unwrap();
    let end = s.column(1);
    ((end[0] - 2.0f64.cos()).powi(2) + (end[1] + 2.0f64.sin()).powi(2)).sqrt()
}

#[test]
fn fixed_step_dormand_prince_is_fifth_order() {
    let errs: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&h| fixed_step_error(h)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio >= 24.0, "error ratio {ratio} from {errs:?}");
    }
}

#[test]
fn adaptive_run_tracks_the_oscillator_at_every_output() {
    let a0 = DVector::from_vec(vec![1.0, 0.0]);
    let cfg = IntegratorConfig::uniform(Scheme::DormandPrince { rtol: 1e-9, atol: 1e-12 }, 0.0, 10.0, 37);
    let s = integrate(&oscillator(), &a0, &cfg).unwrap();
    for (m, t) in s.times().iter().enumerate() {
        let c = s.column(m);
        assert!((c[0] - t.cos()).abs() < 1e-7, "t = {t}");
        assert!((c[1] + t.sin()).abs() < 1e-7, "t = {t}");
    }
}

#[test]
fn euler_interpolates_between_steps() {
    let decay = FnSystem::new(1, |a: &DVector<f64>| -a);
    let cfg = IntegratorConfig::new(Scheme::ExplicitEuler { dt: 0.1 }, vec![0.0, 0.15]);
    let s = integrate(&decay, &DVector::from_element(1, 1.0), &cfg).unwrap();
    assert!((s.coeffs()[(0, 1)] - 0.5 * (0.9 + 0.81)).abs() < 1e-15);
}

#[test]
fn toy_system_settles_on_its_limit_cycle() {
    for (r, seed) in [(3, 1), (5, 9)] {
        let toy = quadratic_toy_system(r, seed).unwrap();
        let mut a0 = DVector::zeros(r);
        a0[0] = 0.3 * toy.radius();
        a0[2] = 0.5 * toy.growth;
        let t_end = 300.0 / toy.growth;
        let mut times = vec![0.0];
        times.extend((0..=20).map(|k| t_end - toy.period() * (1.0 - k as f64 / 20.0)));
        let cfg = IntegratorConfig::new(Scheme::DormandPrince { rtol: 1e-10, atol: 1e-12 }, times);
        let run = integrate_collect(&toy.coefficients, &a0, &cfg).unwrap();
        for m in 1..run.series.len() {
            let c = run.series.column(m);
            let radius = (c[0] * c[0] + c[1] * c[1]).sqrt();
            assert!((radius - toy.radius()).abs() < 1e-4, "r = {r}: radius {radius} vs {}", toy.radius());
        }
    }
}

#[test]
fn toy_system_with_zero_coefficients_stays_fixed() {
    let zero = GromCoefficients::zeros(3);
    let a0 = DVector::from_vec(vec![0.3, -0.2, 1.0]);
    let cfg = IntegratorConfig::uniform(Scheme::default(), 0.0, 5.0, 5);
    let s = integrate(&zero, &a0, &cfg).unwrap();
    for m in 0..s.len() {
        assert_eq!(s.column(m), a0);
    }
    assert_eq!(zero.rhs(&a0), DVector::zeros(3));
}

#[test]
fn toy_system_rejects_two_modes_and_repeats_by_seed() {
    assert!(quadratic_toy_system(2, 0).is_err());
    assert_eq!(quadratic_toy_system(4, 3).unwrap(), quadratic_toy_system(4, 3).unwrap());
}
