//! Closed-form flop counts against instrumented kernels and known totals.

use nalgebra::DVector;
use romforge::diagnostics::{
    counted_eapg_rhs, counted_euler_step_eapg, counted_euler_step_grom, counted_grom_rhs, flops_eapg_online,
    flops_grom_online, group_digits, FlopCounter, FlopParams, FlopSummary,
};
use romforge::eapg::EapgCoefficients;
use romforge::galerkin::GromCoefficients;
use romforge::memory::MemoryLength;
use romforge::online::{eapg_rhs, grom_rhs};
use romforge::synth::{quadratic_toy_system, rng};
use rand::RngExt;

fn random_eapg(r: usize) -> EapgCoefficients {
    let mut g = rng(r as u64);
    let mut m = |rows: usize, cols: usize| nalgebra::DMatrix::from_fn(rows, cols, |_, _| g.random_range(-1.0..1.0));
    let (k, q, l, c) = (m(r, r * r * r), m(r, r * r), m(r, r), m(r, 1));
    EapgCoefficients::new(k, q, l, c.column(0).into_owned(), MemoryLength::from_tau(0.4).unwrap()).unwrap()
}

#[test]
fn instrumented_grom_step_matches_closed_form() {
    let toy = quadratic_toy_system(5, 2).unwrap();
    let c: &GromCoefficients = &toy.coefficients;
    let a = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.05, -0.4]);
    let mut k = FlopCounter::default();
    let next = counted_euler_step_grom(c, &a, 0.01, &mut k);
    assert_eq!(k.flops, flops_grom_online(5).unwrap());
    let direct = &a + grom_rhs(c, &a).unwrap() * 0.01;
    assert!((next - direct).amax() < 1e-15);

    let mut k = FlopCounter::default();
    let f = counted_grom_rhs(c, &a, &mut k);
    assert_eq!(k.flops, flops_grom_online(5).unwrap() - 2 * 5);
    assert!((f - grom_rhs(c, &a).unwrap()).amax() < 1e-15);
}

#[test]
fn instrumented_eapg_step_matches_closed_form() {
    let c = random_eapg(4);
    let a = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.05]);
    let mut k = FlopCounter::default();
    let next = counted_euler_step_eapg(&c, &a, 0.01, &mut k);
    assert_eq!(k.flops, flops_eapg_online(4).unwrap());
    let direct = &a + eapg_rhs(&c, &a).unwrap() * 0.01;
    assert!((next - direct).amax() < 1e-14);

    let mut k = FlopCounter::default();
    let f = counted_eapg_rhs(&c, &a, &mut k);
    assert_eq!(k.flops, flops_eapg_online(4).unwrap() - 2 * 4);
    assert!((f - eapg_rhs(&c, &a).unwrap()).amax() < 1e-14);
}

#[test]
fn online_cost_ratio_grows_like_the_rank() {
    let r = 64;
    let ratio = flops_eapg_online(r).unwrap() as f64 / flops_grom_online(r).unwrap() as f64;
    assert!((ratio / r as f64 - 1.0).abs() <= 0.15, "ratio {ratio}");
}

#[test]
fn known_totals_render_with_grouping() {
    let s = FlopSummary::compute(&FlopParams::new(3_253_185, 8, 3)).unwrap();
    let text = s.to_text();
    for v in ["6,402,267,496", "76,745,882,071", "1,176", "9,376", "520,509,720"] {
        assert!(text.contains(v), "{v} missing from\n{text}");
    }
    assert_eq!(group_digits(s.eapg_offline), "76,745,882,071");
    assert_eq!(s.to_csv().lines().count(), 4);
    assert!(s.to_csv().contains("eAPG-ROM,76745882071,9376"));
}
