mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use swgs::analysis::Analyzer;
use swgs::model::*;
use swgs::oc::{Decision, DesignEvaluator, OutcomeLabel};

/// Switching times with at least one cluster switching before the end and
/// not all clusters identical.
fn allocation(max_c: usize, max_t: usize) -> impl Strategy<Value = (Vec<usize>, usize)> {
    (2..=max_c, 2..=max_t)
        .prop_flat_map(|(c, t)| (prop::collection::vec(1..=t + 1, c), Just(t)))
        .prop_filter("needs treated and untreated cells", |(s, t)| {
            s.iter().any(|&v| v <= *t) && s.iter().min() != s.iter().max()
        })
}

fn variance() -> impl Strategy<Value = VarianceComponents> {
    (0.0..0.5f64, 0.2..2.0f64).prop_map(|(c, e)| VarianceComponents::new(c, e).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_information_matches_generic((s, t) in allocation(8, 7), m in 2usize..40, vc in variance()) {
        let x = AllocationSchedule::new(s.clone(), t).unwrap().treatment_matrix();
        let d = build_collapsed_design_matrix(&x, t).unwrap();
        let sigma = build_collapsed_covariance(s.len(), m, t, &vc);
        let generic = information_generic(&d, &sigma).unwrap();
        let closed = information_closed_form(&x, m, t, &vc).unwrap();
        prop_assert!((closed / generic - 1.0).abs() < 1e-8, "{} vs {}", closed, generic);
        let explicit = common::gls_information(&s, m, t, vc.sigma_c2, vc.sigma_e2);
        prop_assert!((closed / explicit - 1.0).abs() < 1e-8);
    }

    #[test]
    fn collapsed_gls_equals_individual_gls(
        (s, t) in allocation(4, 4),
        m in 2usize..5,
        vc in variance(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let c_n = s.len();
        let x = AllocationSchedule::new(s, t).unwrap().treatment_matrix();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..c_n * t * m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // individual rows are ((j C + c) m + k); collapsed rows are j C + c
        let means: Vec<f64> = y.chunks(m).map(|cell| cell.iter().sum::<f64>() / m as f64).collect();

        let gls = |d: nalgebra::DMatrix<f64>, sigma: nalgebra::DMatrix<f64>, y: &[f64]| {
            let (inv, weighted) = gls_normal_inverse(&d, &sigma).unwrap();
            (inv.clone() * weighted.transpose() * DVector::from_column_slice(y), inv)
        };
        let (b_ind, inv_ind) = gls(build_design_matrix(&x, m, t).unwrap(), build_covariance(c_n, m, t, &vc), &y);
        let (b_col, inv_col) = gls(build_collapsed_design_matrix(&x, t).unwrap(), build_collapsed_covariance(c_n, m, t, &vc), &means);
        for k in 0..=t {
            prop_assert!((b_ind[k] - b_col[k]).abs() < 1e-8 * (1.0 + b_col[k].abs()), "beta[{}]: {} vs {}", k, b_ind[k], b_col[k]);
        }
        let p = t;
        prop_assert!((inv_ind[(p, p)] / inv_col[(p, p)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn information_grows_with_analyses((s, t) in allocation(6, 6), m in 2usize..30, vc in variance()) {
        let x = AllocationSchedule::new(s.clone(), t).unwrap().treatment_matrix();
        let mut last = 0.0;
        for u in 2..=t {
            let Ok(i) = information_closed_form(&x, m, u, &vc) else { continue };
            prop_assert!(i >= last * (1.0 - 1e-12));
            last = i;
        }
    }
}

fn design_strategy() -> impl Strategy<Value = GroupSequentialDesign> {
    (1usize..=4)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(-1.5..1.5f64, k),
                prop::collection::vec(0.05..2.0f64, k - 1),
                2usize..30,
                variance(),
                Just(k),
            )
        })
        .prop_map(|(f, gaps, m, vc, k)| {
            let schedule: Vec<usize> = (0..k).map(|i| 5 - (k - 1 - i)).collect();
            GroupSequentialDesign::new(
                AllocationSchedule::new(vec![1, 2, 3, 4, 5, 6], 5).unwrap(),
                AnalysisSchedule::new(schedule, 5).unwrap(),
                StoppingBoundaries::from_gaps(f, &gaps).unwrap(),
                m,
                vc,
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outcome_probabilities_partition_unity(design in design_strategy(), tau in -0.5..0.8f64) {
        let ev = DesignEvaluator::new(&design).unwrap();
        let mut total = 0.0;
        for gamma in 1..=design.analyses() {
            for psi in [Decision::Accept, Decision::Reject] {
                let p = ev.outcome_probability(tau, OutcomeLabel { gamma, psi }).unwrap().value;
                prop_assert!((0.0..=1.0).contains(&p));
                total += p;
            }
        }
        prop_assert!((total - 1.0).abs() <= 4e-6, "sum = {}", total);
    }

    #[test]
    fn rejection_probability_increases_with_effect(design in design_strategy(), tau in -0.5..0.5f64, step in 0.01..0.3f64) {
        let ev = DesignEvaluator::new(&design).unwrap();
        let lo = ev.rejection_probability(tau).unwrap();
        let hi = ev.rejection_probability(tau + step).unwrap();
        prop_assert!(hi >= lo - 4e-6, "{} then {}", lo, hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn single_stage_inference_is_naive(m in 2usize..60, z in -2.5..4.0f64, alpha in 0.01..0.2f64) {
        let design = GroupSequentialDesign::new(
            AllocationSchedule::new(vec![2, 3, 4, 5], 5).unwrap(),
            AnalysisSchedule::new(vec![5], 5).unwrap(),
            StoppingBoundaries::new(vec![1.96], vec![1.96]).unwrap(),
            m,
            VarianceComponents::new(0.05, 1.0).unwrap(),
        )
        .unwrap();
        let an = Analyzer::new(&design).unwrap();
        let r = an.report(&an.result(1, z).unwrap(), alpha).unwrap();
        prop_assert!((r.p_so - r.p_naive).abs() < 1e-6);
        prop_assert!((r.estimate_so - r.estimate_naive).abs() < 1e-6);
        prop_assert!((r.ci_lower_so - r.ci_lower_naive).abs() < 1e-6);
    }
}
