use credo_core::conformal::{calibrate, envelope_score, Interval};
use credo_core::data::{self, Dataset, Matrix, SplitRatios, Standardizer};
use credo_core::decomposition::{aleatoric_width, decompose};
use credo_core::envelope::{adaptive_gamma, fit_scarcity_refs, trimmed_envelope, GammaParams};
use credo_core::evaluation::{lof_scores, marginal_coverage, outlier_coverage, partition_outliers, smis};
use credo_core::harness::{run_repetition, DataSource, ExperimentConfig, Method};
use credo_core::posterior::EndpointDraws;
use credo_core::stats;
use proptest::prelude::*;

fn draws_strategy() -> impl Strategy<Value = EndpointDraws> {
    prop::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 2..200).prop_map(|pairs| {
        let (lo, hi): (Vec<f64>, Vec<f64>) = pairs.iter().map(|(l, w)| (*l, l + w)).unzip();
        EndpointDraws::new(vec![0.0], lo, hi).unwrap()
    })
}

fn points_strategy(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 20..50)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn envelope_nests_as_gamma_grows(d in draws_strategy(), g1 in 0.001f64..0.999, g2 in 0.001f64..0.999) {
        let (small, large) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let wide = trimmed_envelope(&d, small).unwrap();
        let narrow = trimmed_envelope(&d, large).unwrap();
        prop_assert!(wide.lower <= narrow.lower && narrow.upper <= wide.upper);
        prop_assert!(!wide.swapped && !narrow.swapped);
    }

    #[test]
    fn envelope_retains_most_draws(d in draws_strategy(), gamma in 0.001f64..0.999) {
        let env = trimmed_envelope(&d, gamma).unwrap();
        let kept = d.q_lower.iter().zip(&d.q_upper)
            .filter(|(l, u)| **l >= env.lower && **u <= env.upper)
            .count() as f64;
        prop_assert!(kept >= d.len() as f64 * (1.0 - gamma) - 2.0);
    }

    #[test]
    fn decomposition_is_additive(d in draws_strategy(), gamma in 0.001f64..0.999, tau in -3.0f64..3.0) {
        let env = trimmed_envelope(&d, gamma).unwrap();
        let dec = decompose(&env, &d, tau).unwrap();
        let width = (env.upper + tau) - (env.lower - tau);
        prop_assert!((width - (dec.aleatoric + dec.epistemic + dec.slack)).abs() <= 1e-9);
        prop_assert!(dec.aleatoric >= 0.0);
        prop_assert_eq!(dec.negative_epistemic, dec.epistemic < 0.0);
    }

    #[test]
    fn epistemic_part_shrinks_with_gamma(d in draws_strategy(), g1 in 0.001f64..0.999, g2 in 0.001f64..0.999) {
        let (small, large) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let e = |g| decompose(&trimmed_envelope(&d, g).unwrap(), &d, 0.0).unwrap().epistemic;
        prop_assert!(e(large) <= e(small) + 1e-12);
    }

    #[test]
    fn aleatoric_width_ignores_draw_order(d in draws_strategy(), shift in 0usize..200) {
        let n = d.len();
        let k = shift % n;
        let rot = |v: &[f64]| v.iter().cycle().skip(k).take(n).copied().collect::<Vec<_>>();
        let r = EndpointDraws::new(vec![0.0], rot(&d.q_lower), rot(&d.q_upper)).unwrap();
        prop_assert!((aleatoric_width(&d) - aleatoric_width(&r)).abs() <= 1e-9);
    }

    #[test]
    fn gamma_is_bounded_and_decreasing(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let p = GammaParams::default();
        let (ga, gb) = (adaptive_gamma(a, &p), adaptive_gamma(b, &p));
        prop_assert!(p.gamma_min <= ga && ga <= p.gamma_max);
        if a < b {
            prop_assert!(gb <= ga);
        }
        if a < b && b.abs() < 20.0 && a.abs() < 20.0 && b - a > 1e-6 {
            prop_assert!(gb < ga);
        }
    }

    #[test]
    fn tau_grows_with_confidence(scores in prop::collection::vec(-5.0f64..5.0, 1..100), a1 in 0.01f64..0.99, a2 in 0.01f64..0.99) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(calibrate(&scores, hi).unwrap().tau_hat <= calibrate(&scores, lo).unwrap().tau_hat);
    }

    #[test]
    fn translation_leaves_tau_unchanged(
        rows in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0, -5.0f64..5.0), 1..80),
        c in -100.0f64..100.0,
        alpha in 0.05f64..0.5,
    ) {
        let base: Vec<f64> = rows.iter().map(|(l, w, y)| envelope_score(*y, *l, l + w)).collect();
        let moved: Vec<f64> = rows.iter().map(|(l, w, y)| envelope_score(y + c, l + c, l + w + c)).collect();
        let (t0, t1) = (calibrate(&base, alpha).unwrap().tau_hat, calibrate(&moved, alpha).unwrap().tau_hat);
        prop_assert!(t0 == t1 || (t0 - t1).abs() <= 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn smis_equals_mean_width_when_covered(rows in prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0, 0.0f64..1.0), 1..60), alpha in 0.01f64..0.9) {
        let ivs: Vec<Interval> = rows.iter().map(|(l, w, _)| Interval { lower: *l, upper: l + w }).collect();
        let ys: Vec<f64> = rows.iter().map(|(l, w, t)| l + w * t).collect();
        let widths: Vec<f64> = ivs.iter().map(Interval::width).collect();
        prop_assert!((smis(&ivs, &ys, alpha).unwrap() - stats::mean(&widths)).abs() <= 1e-12);
    }

    #[test]
    fn lof_ignores_rigid_motion_and_scale(pts in points_strategy(2), angle in 0.0f64..6.28, shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
        let base = lof_scores(&Matrix::from_rows(&pts).unwrap(), 5).unwrap();
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<f64>> = pts.iter()
            .map(|p| vec![scale * (c * p[0] - s * p[1]) + shift, scale * (s * p[0] + c * p[1]) - shift])
            .collect();
        let other = lof_scores(&Matrix::from_rows(&moved).unwrap(), 5).unwrap();
        for (a, b) in base.iter().zip(&other) {
            prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn partition_sizes_follow_rounding(n in 40usize..400, frac in prop::sample::select(vec![0.10, 0.20])) {
        let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let p = partition_outliers(&scores, 0.05, frac).unwrap();
        let n_out = (0.05 * n as f64 - 1e-9).ceil() as usize;
        prop_assert_eq!(p.outlier_indices.len(), n_out);
        prop_assert_eq!(p.central_inlier_indices.len(), (frac * (n - n_out) as f64 + 1e-9).floor() as usize);
        prop_assert!(p.outlier_indices.iter().all(|i| !p.central_inlier_indices.contains(i)));
    }

    #[test]
    fn marginal_coverage_mixes_outlier_and_rest(rows in prop::collection::vec((-2.0f64..2.0, 0.0f64..2.0, -3.0f64..3.0), 40..120)) {
        let ivs: Vec<Interval> = rows.iter().map(|(l, w, _)| Interval { lower: *l, upper: l + w }).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let scores: Vec<f64> = (0..rows.len()).map(|i| (i * 31 % 97) as f64).collect();
        let p = partition_outliers(&scores, 0.05, 0.2).unwrap();
        let aco = outlier_coverage(&ivs, &ys, &p).unwrap();
        let amc = marginal_coverage(&ivs, &ys).unwrap();
        let rest: Vec<usize> = (0..rows.len()).filter(|i| !p.outlier_indices.contains(i)).collect();
        let rest_cov = rest.iter().filter(|&&i| ivs[i].contains(ys[i])).count() as f64 / rest.len() as f64;
        let n = rows.len() as f64;
        let k = p.outlier_indices.len() as f64;
        prop_assert!(aco <= 1.0);
        prop_assert!((amc - (k * aco + (n - k) * rest_cov) / n).abs() <= 1e-12);
    }

    #[test]
    fn scarcity_refs_ignore_row_order(pts in points_strategy(2), k in 1usize..10, rot in 0usize..50) {
        let n = pts.len();
        let rotated: Vec<Vec<f64>> = pts.iter().cycle().skip(rot % n).take(n).cloned().collect();
        let a = fit_scarcity_refs(&Matrix::from_rows(&pts).unwrap(), k).unwrap();
        let b = fit_scarcity_refs(&Matrix::from_rows(&rotated).unwrap(), k).unwrap();
        prop_assert_eq!((a.q_lo, a.q_hi), (b.q_lo, b.q_hi));
    }

    #[test]
    fn standardizer_round_trips(pts in points_strategy(3)) {
        let m = Matrix::from_rows(&pts).unwrap();
        let s = Standardizer::fit(&m).unwrap();
        let back = s.invert(&s.apply(&m).unwrap()).unwrap();
        for (a, b) in m.as_flat().iter().zip(back.as_flat()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn split_partitions_rows(n in 10usize..300, seed in any::<u64>()) {
        let ds = Dataset::from_rows(&(0..n).map(|i| vec![i as f64]).collect::<Vec<_>>(), vec![0.0; n]).unwrap();
        let s = data::split(&ds, SplitRatios::default(), seed).unwrap();
        let mut all: Vec<usize> = s.indices.train.iter().chain(&s.indices.calibration).chain(&s.indices.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn adaptive_gamma_depends_on_covariates_only() {
    let config = ExperimentConfig {
        data: DataSource::Scenario { id: 2, n: 400 },
        methods: vec![Method::CredoAdaptive],
        repetitions: 1,
        ..ExperimentConfig::default()
    };
    let ds = config.data.load(0).unwrap();
    let scrambled = ds
        .with_targets(ds.targets().iter().map(|y| -3.0 * y + 7.0).collect())
        .unwrap();
    let a = run_repetition(&config, &ds, 0).unwrap();
    let b = run_repetition(&config, &scrambled, 0).unwrap();
    let gammas = |o: &credo_core::harness::RepetitionOutcome| -> Vec<(usize, Option<f64>)> {
        o.methods[0].points.iter().map(|p| (p.row, p.gamma)).collect()
    };
    assert_eq!(gammas(&a), gammas(&b));
}
