use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysid_core::sysgen::{sample_from_class, sample_lti, ClassSpec, LtiClass, PoleRegion, SystemInstance};

fn region(mag: (f64, f64), phase: (f64, f64)) -> PoleRegion {
    PoleRegion::new(mag, phase).unwrap()
}

/// Coefficients of ∏(z − rᵢ), highest power first, by repeated multiplication.
fn expand(roots: &[Complex64]) -> Vec<f64> {
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        poly = next;
    }
    assert!(poly.iter().all(|c| c.im.abs() < 1e-12));
    poly.iter().map(|c| c.re).collect()
}

/// Direct-form recursion: `Σ den_i y[k−i] = gain · Σ num_i u[k−i]`.
fn difference_equation(num: &[f64], den: &[f64], gain: f64, u: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; u.len()];
    for k in 0..u.len() {
        let mut acc = 0.0;
        for (i, b) in num.iter().enumerate() {
            if k >= i {
                acc += gain * b * u[k - i];
            }
        }
        for (i, a) in den.iter().enumerate().skip(1) {
            if k >= i {
                acc -= a * y[k - i];
            }
        }
        y[k] = acc;
    }
    y
}

#[test]
fn simulation_matches_pole_zero_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let regions = [region((0.8, 0.97), (-PI / 2.0, PI / 2.0)), region((0.5, 0.75), (PI / 2.0, 0.75 * PI)), region((0.5, 0.97), (-PI, PI))];
    for r in &regions {
        for _ in 0..30 {
            let sys = sample_lti(r, 1, 10, &mut rng).unwrap();
            let pz = sys.pole_zero().unwrap().clone();
            let u: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expected = difference_equation(&expand(&pz.zeros), &expand(&pz.poles), pz.gain, &u);
            let got = SystemInstance::Lti(sys).simulate(&u).unwrap();
            let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn pole_containment_over_a_thousand_systems_per_region() {
    let cases = [((0.8, 0.97), (-PI / 2.0, PI / 2.0)), ((0.5, 0.75), (PI / 2.0, 0.75 * PI)), ((0.5, 0.97), (-PI, PI))];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for (mag, phase) in cases {
        let r = region(mag, phase);
        for _ in 0..1000 {
            let sys = sample_lti(&r, 1, 10, &mut rng).unwrap();
            for p in &sys.pole_zero().unwrap().poles {
                assert!(p.norm() >= mag.0 - 1e-12 && p.norm() <= mag.1 + 1e-12);
                if p.im == 0.0 {
                    // real pole of an odd order: side of the axis closest to the region
                    let toward_pi = (PI - phase.1.abs().max(phase.0.abs())) < phase.0.abs().min(phase.1.abs());
                    if phase.0 > 0.0 {
                        assert_eq!(p.re < 0.0, toward_pi);
                    }
                    continue;
                }
                let a = p.arg().abs();
                let inside = |x: f64| x >= phase.0 - 1e-12 && x <= phase.1 + 1e-12;
                assert!(inside(a) || inside(-a), "pole {p} outside {phase:?}");
            }
        }
    }
}

#[test]
fn pwh_is_branch_sum_over_root_two() {
    let blocks = LtiClass::new(1, 5, region((0.5, 0.97), (-PI, PI)));
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let mut sys = sample_from_class(&ClassSpec::pwh(blocks, 32, 2), &mut rng).unwrap();
        let u: Vec<f64> = (0..500).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = sys.simulate(&u).unwrap();
        let SystemInstance::ParallelWienerHammerstein(branches) = &sys else { panic!("expected PWH") };
        let mut total = vec![0.0; u.len()];
        for branch in branches {
            let mut single = SystemInstance::WienerHammerstein(branch.clone());
            single.reset();
            for (t, v) in total.iter_mut().zip(single.simulate(&u).unwrap()) {
                *t += v;
            }
        }
        for (a, b) in y.iter().zip(&total) {
            assert!((a - b / 2f64.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn seeded_simulations_are_bit_identical() {
    let spec = ClassSpec::wh(LtiClass::new(1, 5, region((0.5, 0.97), (-PI, PI))), 32);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut sys = sample_from_class(&spec, &mut rng).unwrap();
        let u: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        sys.simulate(&u).unwrap()
    };
    assert_eq!(run(), run());
}
