use nekhoroshev::detector::{self, FrequencyCurve};
use nekhoroshev::dynamics::{IntegratorConfig, Scheme, State, Stepper};
use nekhoroshev::harness::Config;
use nekhoroshev::lattice::{self, IntVector};
use nekhoroshev::models::{HamiltonianSystem, IntegrableModel, Perturbation, PerturbationTerm};
use nekhoroshev::normalform::{poisson_bracket, project, truncate, FourierPolynomial};
use nekhoroshev::poly::Polynomial;
use nekhoroshev::resonance::{self, Frequency, ZoneClassifier, ZoneLabel, ZoneParameters};
use proptest::prelude::*;

fn int_vec(n: usize, r: i64) -> impl Strategy<Value = IntVector> {
    prop::collection::vec(-r..=r, n).prop_map(IntVector::new)
}

fn independent_pair() -> impl Strategy<Value = (IntVector, IntVector)> {
    (3usize..=4)
        .prop_flat_map(|n| (int_vec(n, 6), int_vec(n, 6)))
        .prop_filter("independent", |(a, b)| lattice::gram_determinant(&[a.clone(), b.clone()]).unwrap() != 0)
}

/// Integer coordinates of `x` in the basis `(k1, k2)`, if any.
fn integer_coordinates(k1: &IntVector, k2: &IntVector, x: &IntVector) -> Option<(i64, i64)> {
    let (a, b, c) = (k1.entries(), k2.entries(), x.entries());
    for r in 0..a.len() {
        for s in r + 1..a.len() {
            let d = a[r] * b[s] - a[s] * b[r];
            if d == 0 {
                continue;
            }
            let na = c[r] * b[s] - c[s] * b[r];
            let nb = a[r] * c[s] - a[s] * c[r];
            if na % d != 0 || nb % d != 0 {
                return None;
            }
            let (u, v) = (na / d, nb / d);
            let ok = (0..a.len()).all(|i| u * a[i] + v * b[i] == c[i]);
            return ok.then_some((u, v));
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bounded_basis_spans_the_saturation((k1, k2) in independent_pair()) {
        let module = lattice::saturate(&[k1.clone(), k2.clone()]).unwrap();
        let (b1, b2) = lattice::bounded_basis(&k1, &k2).unwrap();
        prop_assert_eq!(lattice::gram_determinant(&[b1, b2]).unwrap(), module.volume_squared());
    }

    #[test]
    fn saturation_is_idempotent((k1, k2) in independent_pair()) {
        let module = lattice::saturate(&[k1.clone(), k2.clone()]).unwrap();
        let again = lattice::saturate(module.basis()).unwrap();
        prop_assert_eq!(again.volume_squared(), module.volume_squared());
        for b in module.basis() {
            prop_assert!(again.contains(b));
        }
        for b in again.basis() {
            prop_assert!(module.contains(b));
        }
    }

    #[test]
    fn saturation_volume_below_generator_gram((k1, k2) in independent_pair()) {
        let module = lattice::saturate(&[k1.clone(), k2.clone()]).unwrap();
        let gram = lattice::gram_determinant(&[k1.clone(), k2.clone()]).unwrap();
        prop_assert!(module.volume_squared() <= gram);
        let generates = module.basis().iter().all(|b| integer_coordinates(&k1, &k2, b).is_some());
        prop_assert_eq!(module.volume_squared() == gram, generates);
    }

    #[test]
    fn sin_angle_lower_bound((k1, k2) in independent_pair()) {
        let s = lattice::sin_angle(&k1, &k2).unwrap();
        prop_assert!(s * (k1.l1_norm() * k2.l1_norm()) as f64 >= 1.0 - 1e-12);
    }

    #[test]
    fn classification_monotone_in_alpha(
        omega in prop::collection::vec(-2.0f64..2.0, 3),
        alpha in 0.0f64..0.5,
        extra in 0.0f64..0.5,
    ) {
        let small = ZoneClassifier::with_threshold(3, alpha, 4.0, None).unwrap();
        let large = ZoneClassifier::with_threshold(3, alpha + extra, 4.0, None).unwrap();
        if small.classify(&omega).label.is_resonant() {
            prop_assert!(large.classify(&omega).label.is_resonant());
        }
    }

    #[test]
    fn witness_iff_resonant(omega in prop::collection::vec(-2.0f64..2.0, 3)) {
        let params = ZoneParameters::new(1e-3, 0.9, 0.02).unwrap();
        let c = ZoneClassifier::new(3, &params, params.default_k_cap()).unwrap();
        match c.classify(&omega).label {
            ZoneLabel::Resonant { witness } => {
                prop_assert!(witness.l1_norm() > 0 && witness.l1_norm() as f64 <= params.k);
            }
            ZoneLabel::NonResonant => prop_assert!(c.classify(&omega).distance >= params.alpha),
        }
    }

    #[test]
    fn distance_invariant_under_sign_and_scaling(
        omega in prop::collection::vec(-2.0f64..2.0, 3),
        k in int_vec(3, 5).prop_filter("nonzero", |k| !k.is_zero()),
        g in 1i64..5,
    ) {
        let w = Frequency::new(omega);
        let d = resonance::dist_to_resonance(&w, &k).unwrap();
        let d_neg = resonance::dist_to_resonance(&w, &k.neg()).unwrap();
        let d_scaled = resonance::dist_to_resonance(&w, &k.checked_scale(g).unwrap()).unwrap();
        prop_assert!((d - d_neg).abs() <= 1e-12 * (1.0 + d));
        prop_assert!((d - d_scaled).abs() <= 1e-12 * (1.0 + d));
    }
}

fn random_series(modes: &[(Vec<i64>, f64, f64, f64)]) -> FourierPolynomial {
    let mut seen = std::collections::BTreeSet::new();
    let terms = modes
        .iter()
        .filter(|(k, ..)| seen.insert(IntVector::new(k.clone()).canonical_sign()))
        .map(|(k, c, slope, phase)| {
            PerturbationTerm::new(IntVector::new(k.clone()), Polynomial::affine(*c, &[*slope, 0.0, -*slope]), *phase)
        })
        .collect();
    FourierPolynomial::from_perturbation(&Perturbation::new(3, terms).unwrap())
}

fn series_terms() -> impl Strategy<Value = Vec<(Vec<i64>, f64, f64, f64)>> {
    prop::collection::vec(
        (prop::collection::vec(-3i64..=3, 3), -1.0f64..1.0, -0.5f64..0.5, 0.0f64..6.0),
        1..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn truncate_and_project_commute(terms in series_terms(), k_bound in 0.0f64..8.0) {
        let phi = random_series(&terms);
        let module = lattice::saturate(&[IntVector::from([1, -1, 0])]).unwrap();
        for m in [None, Some(&module)] {
            let a = project(&truncate(&phi, k_bound), m);
            prop_assert_eq!(&a, &truncate(&project(&phi, m), k_bound));
            prop_assert_eq!(&truncate(&a, k_bound), &a);
            prop_assert_eq!(&project(&a, m), &a);
        }
    }

    #[test]
    fn bracket_is_real_and_antisymmetric(
        f in series_terms(),
        g in series_terms(),
        theta in prop::collection::vec(0.0f64..6.3, 3),
        actions in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let model = IntegrableModel::new(
            vec![vec![1.0, 0.2, 0.0], vec![0.2, 0.8, 0.0], vec![0.0, 0.0, 1.5]],
            vec![0.1, 0.0, -0.3],
        )
        .unwrap();
        let f = random_series(&f).add(&FourierPolynomial::from_integrable(&model));
        let g = random_series(&g);
        let fg = poisson_bracket(&f, &g, &model);
        let gf = poisson_bracket(&g, &f, &model);
        prop_assert!(fg.is_real());
        let (a, b) = (fg.eval(&theta, &actions, &model), gf.eval(&theta, &actions, &model));
        prop_assert!(a.im.abs() < 1e-12 * (1.0 + a.re.abs()));
        prop_assert!((a + b).norm() < 1e-12 * (1.0 + a.norm()));
    }

    #[test]
    fn symmetric_schemes_are_reversible(
        theta in prop::collection::vec(0.0f64..6.3, 3),
        actions in prop::collection::vec(-2.0f64..2.0, 3),
        midpoint in any::<bool>(),
    ) {
        let f = Perturbation::new(
            3,
            vec![
                PerturbationTerm::cosine(IntVector::from([1, 0, 0]), 0.1, 0.3),
                PerturbationTerm::cosine(IntVector::from([1, -1, 1]), 0.05, 0.0),
            ],
        )
        .unwrap();
        let sys = HamiltonianSystem::new(IntegrableModel::identity(3), f).unwrap();
        let scheme = if midpoint { Scheme::ImplicitMidpoint } else { Scheme::SplitStrang };
        let mut stepper = Stepper::new(&sys, IntegratorConfig::new(scheme, 0.01)).unwrap();
        let s0 = State { theta, actions };
        let mut s = s0.clone();
        for _ in 0..100 {
            stepper.advance_unreduced(&mut s, 0.01).unwrap();
        }
        for _ in 0..100 {
            stepper.advance_unreduced(&mut s, -0.01).unwrap();
        }
        for (x, y) in s.theta.iter().chain(&s.actions).zip(s0.theta.iter().chain(&s0.actions)) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn witness_invariants(r0 in 0.2f64..0.6, span in 0.15f64..0.3, w3 in 2.0f64..4.0) {
        // sweep ω₂/ω₃ across [r0, r0 + span] at fixed ω₁ = 1
        let samples = 801;
        let times: Vec<f64> = (0..samples).map(|s| s as f64).collect();
        let omegas: Vec<Vec<f64>> = (0..samples)
            .map(|s| {
                let u = s as f64 / (samples - 1) as f64;
                vec![1.0, w3 * (r0 + span * u), w3]
            })
            .collect();
        let curve = FrequencyCurve::new(times, omegas).unwrap();
        let params = ZoneParameters::new(1e-2, 0.5, 1.0).unwrap();
        let w = detector::detect(&curve, &params, 0.1, 0.05, 2.0).unwrap();
        prop_assert_eq!(lattice::primitive_part(&w.k2).unwrap().1, 1);
        prop_assert!(w.q as f64 > w.k_used);
        let length = w.interval.1 - w.interval.0;
        prop_assert!(w.k2.l1_norm() <= w.p.unsigned_abs() + w.q);
        prop_assert!((w.p.unsigned_abs() + w.q) < 2 * w.q);
        prop_assert!(((2 * w.q) as f64) < 6.0 / length * (1.0 + 1e-9));
        prop_assert!(w.k2_residual < 1e-10);
        let again = detector::detect(&curve, &params, 0.1, 0.05, 2.0).unwrap();
        prop_assert_eq!(again, w);
    }
}

#[test]
fn shipped_configs_round_trip() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = Config::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let back = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg, "{}", path.display());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&json).unwrap(), cfg);
    }
}
