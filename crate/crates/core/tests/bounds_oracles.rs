use kinetic_core::bounds::{
    exp_moment, first_moment_bound, hard_bound, hard_bound_numeric, log_lipschitz_rate, moment, moment_threshold,
    soft_bound, tstar, yudovitch_bound, HardStabilityParams, LpBranch, SoftStabilityParams,
};
use kinetic_core::ensemble::{InitialKind, InitialSpec};
use kinetic_core::kernel::{AngularMeasure, CollisionKernel, PowerLawSpec};
use kinetic_core::Error;
use std::f64::consts::{E, LN_2, PI};

/// Classical RK4 for a scalar autonomous ODE.
fn rk4(f: impl Fn(f64) -> f64, y0: f64, t: f64, h: f64) -> f64 {
    let steps = (t / h).round() as usize;
    let h = t / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

#[test]
fn reference_value_against_rk4() {
    let a = (-E).exp();
    let ode = rk4(log_lipschitz_rate, a, LN_2, 1e-5);
    assert!((ode - 0.4235).abs() < 5e-5);
    let numeric = yudovitch_bound(a, log_lipschitz_rate, &[LN_2]).unwrap().values[0];
    assert!((numeric - ode).abs() < 1e-9);
    let p = HardStabilityParams::new(1.0, 1.0, 0.1).unwrap();
    let closed = hard_bound(&p, a, &[LN_2]).unwrap().values[0];
    assert!((closed - ode).abs() < 1e-9);
}

#[test]
fn closed_form_matches_inversion_on_grid() {
    let times: Vec<f64> = (0..=12).map(|k| 0.25 * k as f64).collect();
    for &a in &[1e-6, 1e-3, 0.05, 0.3, 0.7, 1.0] {
        for &k in &[0.1, 0.5, 1.0, 2.5, 5.0] {
            // Split the rate constant between the two factors to exercise both.
            let p = HardStabilityParams::new(k / 2.0, 2.0, 0.1).unwrap();
            let closed = hard_bound(&p, a, &times).unwrap();
            let numeric = hard_bound_numeric(&p, a, &times).unwrap();
            for ((t, c), n) in closed.iter().zip(&numeric.values) {
                // Beyond f64 range both report overflow.
                if c > 1e300 || n.is_infinite() {
                    assert!(c > 1e290 && *n > 1e290, "a={a} K={k} t={t}: {c} vs {n}");
                    continue;
                }
                assert!((c - n).abs() <= 1e-6 * c.max(1.0), "a={a} K={k} t={t}: {c} vs {n}");
            }
        }
    }
}

#[test]
fn closed_form_matches_rk4_past_one() {
    let p = HardStabilityParams::new(1.0, 1.0, 0.1).unwrap();
    for &a in &[0.1, 0.6, 1.4] {
        let closed = hard_bound(&p, a, &[2.0]).unwrap().values[0];
        let ode = rk4(log_lipschitz_rate, a, 2.0, 1e-5);
        assert!((closed - ode).abs() < 1e-8 * ode);
    }
}

#[test]
fn monotone_in_start_and_time() {
    let times: Vec<f64> = (0..=30).map(|k| 0.1 * k as f64).collect();
    let mut prev: Option<Vec<f64>> = None;
    for &a in &[1e-8, 1e-4, 1e-2, 0.5] {
        let c = yudovitch_bound(a, log_lipschitz_rate, &times).unwrap();
        assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        if let Some(p) = &prev {
            assert!(p.iter().zip(&c.values).all(|(x, y)| x <= y));
        }
        prev = Some(c.values);
    }
}

#[test]
fn vanishing_start_gives_vanishing_envelope() {
    let t = [0.5];
    let vals: Vec<f64> =
        [1e-4, 1e-8, 1e-16].iter().map(|&a| yudovitch_bound(a, log_lipschitz_rate, &t).unwrap().values[0]).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
    assert!(vals[2] < 1e-5);
}

#[test]
fn soft_bound_is_multiplicative() {
    let p = SoftStabilityParams::new(0.7, [0.2, 0.4], 2.0, 3, -0.5).unwrap();
    for &t in &[0.0, 0.3, 1.7] {
        for &d in &[1e-3, 0.2, 3.0] {
            let lhs = soft_bound(&p, d, t);
            let rhs = d * soft_bound(&p, 1.0, t);
            assert!((lhs - rhs).abs() <= 1e-15 * lhs.max(1.0));
        }
    }
    let q = SoftStabilityParams::new(1.0, [1.0, 1.0], 2.0, 3, -0.5).unwrap();
    assert!((soft_bound(&q, 0.1, 1.0) - 2.0086).abs() < 1e-4);
}

fn kernel(gamma: f64) -> CollisionKernel {
    let ang = AngularMeasure::power_law(1.0 / 3.0, 1.0, 1e-3).unwrap();
    CollisionKernel::new(gamma, 1.0, ang, 3).unwrap()
}

#[test]
fn first_moment_envelope_dominates_ode() {
    // Mean-field comparison `m' = (C kappa |S|/2)(1 + 2m)`.
    let k = kernel(1.0 / 3.0);
    let c = k.angular_constants().unwrap();
    let r = k.phi_upper * c.kappa1_eps * c.sphere / 2.0;
    for &m0 in &[0.0, 1.6, 5.0] {
        let ode = rk4(|m| r * (1.0 + 2.0 * m), m0, 1.0, 1e-4);
        let env = first_moment_bound(m0, &k, 1.0, None).unwrap();
        assert!(env >= ode);
        // Closed-form gap between the two.
        let gap = 0.5 * ((2.0 * r).exp() + 1.0);
        assert!((env - ode - gap).abs() < 1e-9 * env);
    }
    assert_eq!(first_moment_bound(2.0, &k, 0.0, None).unwrap(), 3.0);
}

#[test]
fn first_moment_soft_branch() {
    let k = kernel(-1.5);
    assert_eq!(first_moment_bound(1.0, &k, 0.5, None), Err(Error::MissingLpNorm));
    let lp = LpBranch { lp_norm: 1.0, growth: 1.0, lp_const: 2.0 };
    let c = k.angular_constants().unwrap();
    let (a, ap) = (c.kappa1_eps * c.sphere, c.kappa1_eps * c.sphere / 2.0);
    let t = 0.5;
    // Direct quadrature of the tangent term.
    let n = 100_000;
    let h = t / n as f64;
    let quad: f64 = (0..n).map(|i| (PI / 4.0 + (i as f64 + 0.5) * h).tan() * h).sum();
    let expect = 1.0 + a * quad + ap * t;
    let got = first_moment_bound(1.0, &k, t, Some(&lp)).unwrap();
    assert!((got - expect).abs() < 1e-8 * expect);
    assert!(first_moment_bound(1.0, &k, PI / 4.0 + 1e-3, Some(&lp)).unwrap().is_infinite());
}

#[test]
fn tstar_values() {
    assert_eq!(tstar(1.0, 1.0), PI / 4.0);
    assert_eq!(tstar(0.0, 1.0), PI / 2.0);
    assert!(tstar(1e12, 1.0) < 1e-11);
}

#[test]
fn thresholds_are_continuous() {
    let s0 = 2.0 * 5f64.sqrt() - 1.0;
    let q = |s: f64| moment_threshold(&PowerLawSpec::new(s).unwrap());
    assert!((q(s0) - 2.0).abs() < 1e-12);
    for &s in &[3.3, 4.0, s0, 7.0] {
        assert!((q(s + 1e-7) - q(s)).abs() < 1e-4);
    }
    assert_eq!(q(5.0), 0.0);
}

#[test]
fn gaussian_exponential_moment() {
    // E exp(0.1 |Z|) for a standard normal in R^3, by radial quadrature of
    // the chi density r^2 exp(-r^2/2) sqrt(2/pi).
    let n = 200_000;
    let h = 12.0 / n as f64;
    let oracle: f64 = (0..n)
        .map(|i| {
            let r = (i as f64 + 0.5) * h;
            (0.1 * r).exp() * r * r * (-r * r / 2.0).exp() * (2.0 / PI).sqrt() * h
        })
        .sum();
    let pts = InitialSpec::new(InitialKind::Gaussian { mean: vec![0.0], variance: 1.0 }, 99).sample(100_000, 3).unwrap();
    let got = exp_moment(&pts, 0.1, 1.0).unwrap();
    let second = pts.iter().map(|v| (0.2 * kinetic_core::math::norm(v)).exp()).sum::<f64>() / 1e5;
    let se = ((second - got * got) / 1e5).sqrt();
    assert!((got - oracle).abs() < 3.0 * se, "{got} vs {oracle} (se {se})");
    assert!((moment(&pts, 2.0).unwrap() - 3.0).abs() < 0.05);
}
