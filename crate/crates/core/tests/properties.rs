use nvpair::photon::{coincidence_prob, infer_weights, PairState};
use nvpair::pulse::{
    evolve_analytic_phi0p, gate_fidelity, parse_sequence, phi0p_target, Angle, Condition, Defect, Phase, PulseOp, PulseSequence,
    SequenceItem, Target, Transition,
};
use nvpair::pulse::dsl::{Duration, TimeUnit};
use nvpair::spin::{hermitian_deviation, trace};
use proptest::prelude::*;

fn angle() -> impl Strategy<Value = Angle> {
    prop_oneof![Just(Angle::HalfPi), Just(Angle::Pi), (-10.0f64..10.0).prop_map(Angle::Radians)]
}

fn phase() -> impl Strategy<Value = Phase> {
    prop_oneof![Just(Phase::X), Just(Phase::Y), (-7.0f64..7.0).prop_map(Phase::Radians)]
}

fn defect() -> impl Strategy<Value = Defect> {
    prop_oneof![Just(Defect::A), Just(Defect::B)]
}

fn condition() -> impl Strategy<Value = Option<Condition>> {
    prop_oneof![
        Just(None),
        (prop_oneof![Just(1i8), Just(-1i8)], defect()).prop_map(|(two_mi, on)| Some(Condition::Nuclear { two_mi, on })),
        (-1i8..=1, defect()).prop_map(|(ms, on)| Some(Condition::Electron { ms, on })),
    ]
}

fn item() -> impl Strategy<Value = SequenceItem> {
    let pulse = (
        angle(),
        prop_oneof![Just(Target::A), Just(Target::B), Just(Target::AB)],
        prop_oneof![
            Just(Transition::ZeroPlus),
            Just(Transition::ZeroMinus),
            Just(Transition::DoubleQuantum),
            Just(Transition::Nuclear)
        ],
        phase(),
        condition(),
    )
        .prop_map(|(a, t, tr, p, c)| {
            let op = PulseOp::new(a, t, tr, p);
            SequenceItem::Pulse(match c {
                Some(c) => op.when(c),
                None => op,
            })
        });
    let delay = (0.0f64..1e4, prop_oneof![Just(TimeUnit::Ns), Just(TimeUnit::Us), Just(TimeUnit::Ms)])
        .prop_map(|(v, u)| SequenceItem::Delay(Duration::new(v, u).unwrap()));
    prop_oneof![3 => pulse, 1 => delay]
}

proptest! {
    #[test]
    fn serialized_sequences_parse_back(items in prop::collection::vec(item(), 0..12)) {
        let seq = PulseSequence::from_items(items);
        let text = seq.to_text();
        let back = parse_sequence(&text).unwrap();
        prop_assert_eq!(&back.items, &seq.items);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn analytic_state_is_a_density_matrix(tau in 0.0f64..500e-6, la in 0.0f64..=1.0, lb in 0.0f64..=1.0, nu in 1e2f64..1e5) {
        let rho = evolve_analytic_phi0p(tau, nu, la, lb);
        let tr = trace(rho.matrix());
        prop_assert!((tr.re - 1.0).abs() < 1e-12 && tr.im.abs() < 1e-12);
        prop_assert!(hermitian_deviation(rho.matrix()) < 1e-12);
        prop_assert!(rho.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn gate_fidelity_is_symmetric_and_bounded(tau in 0.0f64..500e-6, la in 0.0f64..=1.0, lb in 0.0f64..=1.0) {
        let nu = 4.93e3;
        let f = gate_fidelity(tau, nu, la, lb);
        prop_assert_eq!(f, gate_fidelity(tau, nu, lb, la));
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
        let m = evolve_analytic_phi0p(tau, nu, la, lb).fidelity(&phi0p_target()).unwrap();
        prop_assert!((m - f).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn inferred_weights_invert_coincidence_levels(k0 in 0.05f64..5.0, ratio in 0.05f64..0.95, swap in any::<bool>(), w in 0.0f64..=1.0) {
        let (k0, k1) = if swap { (k0 * ratio, k0) } else { (k0, k0 * ratio) };
        let s = w * coincidence_prob(PairState::Phi, k0, k1).unwrap() + (1.0 - w) * coincidence_prob(PairState::Psi, k0, k1).unwrap();
        let back = infer_weights(s, k0, k1).unwrap();
        prop_assert!((back.alpha_sq - w).abs() < 1e-12, "{} vs {}", back.alpha_sq, w);
        prop_assert!((back.alpha_sq + back.beta_sq - 1.0).abs() < 1e-12);
    }
}
