use super::*;
use crate::grid::{solve_power_flow, NetworkModel, PowerFlowOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn diag(v: &[f64]) -> Vec<Vec<f64>> {
    (0..v.len())
        .map(|r| (0..v.len()).map(|c| if r == c { v[r] } else { 0.0 }).collect())
        .collect()
}

fn random_model(rng: &mut ChaCha8Rng, m: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / s).collect();
    let resid = 1.0 - weights.iter().sum::<f64>();
    weights[0] += resid;
    let means = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let covs = (0..m)
        .map(|_| {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let c = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
            (0..d).map(|r| c.row(r).iter().copied().collect()).collect()
        })
        .collect();
    GmmModel::new(weights, means, covs).unwrap()
}

/// Direct mixture formula with an explicit inverse and determinant.
fn naive_density(model: &GmmModel, x: &[f64]) -> f64 {
    let d = model.dim();
    let mut total = 0.0;
    for m in 0..model.n_components() {
        let c = model.covariance(m);
        let inv = c.clone().try_inverse().unwrap();
        let diff = nalgebra::DVector::from_fn(d, |i, _| x[i] - model.means[m][i]);
        let q = (diff.transpose() * inv * &diff)[(0, 0)];
        let norm = ((2.0 * std::f64::consts::PI).powi(d as i32) * c.determinant()).sqrt();
        total += model.weights[m] * (-0.5 * q).exp() / norm;
    }
    total
}

#[test]
fn standard_normal_density() {
    let g = GmmModel::new(vec![1.0], vec![vec![0.0]], vec![vec![vec![1.0]]]).unwrap();
    assert!((g.density(&[0.0]).unwrap() - 0.3989422804014327).abs() < 1e-15);
}

#[test]
fn symmetric_pair_density() {
    let a = 1.7;
    let pair = GmmModel::new(vec![0.5, 0.5], vec![vec![-a], vec![a]], vec![vec![vec![1.0]]; 2]).unwrap();
    let single = GmmModel::new(vec![1.0], vec![vec![a]], vec![vec![vec![1.0]]]).unwrap();
    assert!((pair.density(&[0.0]).unwrap() - single.density(&[0.0]).unwrap()).abs() < 1e-16);
}

#[test]
fn density_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let g = random_model(&mut rng, 3, 2);
    for _ in 0..100 {
        let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let (fast, slow) = (g.density(&x).unwrap(), naive_density(&g, &x));
        assert!((fast - slow).abs() <= 1e-10 * slow, "{fast} vs {slow}");
    }
}

#[test]
fn density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for d in 1..=2 {
        let g = random_model(&mut rng, 2, d);
        // Box covering 6σ around every component.
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for m in 0..2 {
            for i in 0..d {
                let s = g.covariances[m][i][i].sqrt();
                lo[i] = lo[i].min(g.means[m][i] - 6.0 * s);
                hi[i] = hi[i].max(g.means[m][i] + 6.0 * s);
            }
        }
        let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        let n = 400_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|i| rng.random_range(lo[i]..hi[i])).collect();
            sum += g.density(&x).unwrap();
        }
        let integral = sum / n as f64 * volume;
        assert!((integral - 1.0).abs() < 0.02, "D = {d}: {integral}");
    }
}

#[test]
fn model_validation() {
    assert!(matches!(
        GmmModel::new(vec![1.0], vec![vec![0.0]], vec![vec![vec![-1.0]]]),
        Err(crate::Error::NonSpd(_))
    ));
    assert!(GmmModel::new(vec![0.6, 0.6], vec![vec![0.0]; 2], vec![vec![vec![1.0]]; 2]).is_err());
    assert!(GmmModel::new(vec![], vec![], vec![]).is_err());
}

#[test]
fn degenerate_spread_samples_sit_on_the_mean() {
    let g = GmmModel::new(vec![1.0], vec![vec![2.0, -1.0]], vec![diag(&[1e-20, 1e-20])]).unwrap();
    let s = g.sample(100, 1).unwrap();
    for r in 0..100 {
        assert!((s[(r, 0)] - 2.0).abs() < 1e-8 && (s[(r, 1)] + 1.0).abs() < 1e-8);
    }
}

#[test]
fn component_frequencies_follow_weights() {
    let g = GmmModel::new(
        vec![0.3, 0.7],
        vec![vec![-100.0], vec![100.0]],
        vec![vec![vec![1.0]]; 2],
    )
    .unwrap();
    let s = g.sample(50_000, 7).unwrap();
    let first = s.iter().filter(|v| **v < 0.0).count() as f64 / 50_000.0;
    assert!((first - 0.3).abs() < 0.02);
}

#[test]
fn sampling_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = random_model(&mut rng, 3, 3);
    assert_eq!(g.sample(200, 99).unwrap(), g.sample(200, 99).unwrap());
    assert_ne!(g.sample(200, 99).unwrap(), g.sample(200, 100).unwrap());
}

#[test]
fn single_component_fit_is_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = DMatrix::from_fn(80, 3, |_, c| rng.sample::<f64, _>(StandardNormal) * (c + 1) as f64 + c as f64);
    let fit = gmm_fit(&x, 1, &EmConfig::default()).unwrap();
    let n = 80.0;
    let mean = x.row_mean();
    let mut cov = DMatrix::zeros(3, 3);
    for r in 0..80 {
        let d = x.row(r) - &mean;
        cov += d.transpose() * &d / n;
    }
    let eps = 1e-6 * cov.trace() / 3.0;
    cov += DMatrix::identity(3, 3) * eps;
    assert!((fit.regularization - eps).abs() <= 1e-18);
    for c in 0..3 {
        assert!((fit.model.means[0][c] - mean[c]).abs() < 1e-12);
    }
    assert!((fit.model.covariance(0) - cov).amax() < 1e-12);
}

fn two_clusters(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |r, _| {
        let c = if r % 2 == 0 { -10.0 } else { 10.0 };
        c + rng.sample::<f64, _>(StandardNormal)
    })
}

#[test]
fn two_cluster_fit_finds_both_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = two_clusters(&mut rng, 500);
    let fit = gmm_fit(&x, 2, &EmConfig::default()).unwrap();
    let mut means: Vec<f64> = fit.model.means.iter().map(|m| m[0]).collect();
    means.sort_by(f64::total_cmp);
    assert!((means[0] + 10.0).abs() < 0.3 && (means[1] - 10.0).abs() < 0.3);
    assert!(fit.objective_history.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    assert!(fit.converged);
}

#[test]
fn fit_recovers_sampled_model() {
    let g = GmmModel::new(
        vec![0.35, 0.65],
        vec![vec![-4.0, 0.0], vec![4.0, 3.0]],
        vec![diag(&[1.0, 0.5]), vec![vec![1.0, 0.3], vec![0.3, 0.8]]],
    )
    .unwrap();
    let x = g.sample(10_000, 5).unwrap();
    let fit = gmm_fit(&x, 2, &EmConfig { seed: 3, ..EmConfig::default() }).unwrap();
    let order: Vec<usize> = if fit.model.means[0][0] < 0.0 { vec![0, 1] } else { vec![1, 0] };
    for (truth, &k) in order.iter().enumerate() {
        assert!((fit.model.weights[k] - g.weights[truth]).abs() < 0.05);
        for i in 0..2 {
            let sd = g.covariances[truth][i][i].sqrt();
            assert!((fit.model.means[k][i] - g.means[truth][i]).abs() < 0.2 * sd);
        }
    }
}

#[test]
fn fit_rejects_too_few_samples() {
    let x = DMatrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64);
    assert!(matches!(
        gmm_fit(&x, 2, &EmConfig::default()),
        Err(crate::Error::TooFewSamples { needed: 6, got: 5 })
    ));
}

#[test]
fn identical_samples_still_fit() {
    let x = DMatrix::from_element(10, 2, 3.0);
    let fit = gmm_fit(&x, 1, &EmConfig::default()).unwrap();
    assert_eq!(fit.model.means[0], vec![3.0, 3.0]);
}

#[test]
fn bic_selects_single_gaussian() {
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = DMatrix::from_fn(200, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = select_components(&x, 4, &EmConfig { seed, ..EmConfig::default() }).unwrap();
        hits += (fit.model.n_components() == 1) as usize;
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn bic_selects_three_clusters() {
    let centres = [[-8.0, 0.0], [8.0, 0.0], [0.0, 10.0]];
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let x = DMatrix::from_fn(300, 2, |r, c| centres[r % 3][c] + rng.sample::<f64, _>(StandardNormal));
        let fit = select_components(&x, 4, &EmConfig { seed, ..EmConfig::default() }).unwrap();
        hits += (fit.model.n_components() == 3) as usize;
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn bic_respects_feasibility() {
    let x = DMatrix::from_fn(5, 2, |r, c| (r * 3 + c * c) as f64);
    let fit = select_components(&x, 3, &EmConfig::default()).unwrap();
    assert_eq!(fit.model.n_components(), 1);
}

#[test]
fn gmm_json_is_byte_stable() {
    let g = GmmModel::new(vec![0.25, 0.75], vec![vec![0.0], vec![1.5]], vec![vec![vec![1.0]], vec![vec![2.0]]]).unwrap();
    let compact = serde_json::to_string(&g).unwrap();
    assert_eq!(
        compact,
        r#"{"schema_version":1,"weights":[0.25,0.75],"means":[[0.0],[1.5]],"covariances":[[[1.0]],[[2.0]]]}"#
    );
    let back: GmmModel = serde_json::from_str(&compact).unwrap();
    assert_eq!(back, g);
}

fn pair_balanced(d: &Design) -> bool {
    let s = d.levels;
    let f = d.runs[0].len();
    let each = d.runs.len() / (s * s);
    for a in 0..f {
        for b in 0..f {
            if a == b {
                continue;
            }
            let mut counts = vec![0usize; s * s];
            for run in &d.runs {
                counts[run[a] * s + run[b]] += 1;
            }
            if counts.iter().any(|&c| c != each) {
                return false;
            }
        }
    }
    true
}

#[test]
fn canonical_l4() {
    let d = orthogonal_array(2, 3).unwrap();
    assert_eq!(d.runs, vec![vec![0, 0, 0], vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 0]]);
    assert!(pair_balanced(&d));
}

#[test]
fn l9_pair_balance() {
    let d = orthogonal_array(3, 4).unwrap();
    assert_eq!(d.runs.len(), 9);
    assert!(d.orthogonal && pair_balanced(&d));
}

#[test]
fn single_factor_design() {
    let d = orthogonal_array(2, 1).unwrap();
    assert_eq!(d.runs, vec![vec![0], vec![1]]);
}

#[test]
fn non_prime_levels_fall_back_or_fail() {
    let d = orthogonal_array(4, 3).unwrap();
    assert!(!d.orthogonal);
    assert_eq!(d.runs.len(), 64);
    assert!(matches!(
        orthogonal_array(6, 5),
        Err(crate::Error::UnsupportedDesign { levels: 6, factors: 5 })
    ));
    assert!(orthogonal_array(1, 2).is_err());
}

#[test]
fn design_budget() {
    assert_eq!(largest_design_within(235, 4), Some(13));
    assert_eq!(largest_design_within(9, 4), Some(3));
    assert_eq!(largest_design_within(8, 4), Some(2));
    assert_eq!(largest_design_within(3, 4), None);
}

proptest! {
    #[test]
    fn arrays_are_balanced(idx in 0usize..4, f in 1usize..9) {
        let s = [2, 3, 5, 7][idx];
        let d = orthogonal_array(s, f).unwrap();
        for c in 0..f {
            for level in 0..s {
                let count = d.runs.iter().filter(|r| r[c] == level).count();
                prop_assert_eq!(count, d.runs.len() / s);
            }
        }
        if f > 1 {
            prop_assert!(pair_balanced(&d));
        }
    }
}

fn fixture(name: &str) -> NetworkModel {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    NetworkModel::load(&p).unwrap()
}

fn case9_spec(net: &NetworkModel) -> UncertaintySpec {
    let ren: f64 = net.generators.iter().filter(|g| !g.is_synchronous()).map(|g| g.p_set).sum();
    let pen = ren / net.total_load_mw();
    serde_json::from_value(serde_json::json!({
        "parameters": [
            {"name": "penetration", "role": "renewable_penetration", "lower": 0.0, "upper": 0.5, "nominal": pen},
            {"name": "load_p", "role": "active_load_scale", "lower": 0.8, "upper": 1.2, "nominal": 1.0},
            {"name": "load_q", "role": "reactive_load_scale", "lower": 0.8, "upper": 1.2, "nominal": 1.0},
            {"name": "hvdc", "role": "hvdc_power", "lower": 0.0, "upper": 80.0, "nominal": 40.0}
        ]
    }))
    .unwrap()
}

fn given(rows: Vec<Vec<f64>>) -> ParameterBatch {
    let n = rows.len();
    ParameterBatch {
        values: DMatrix::from_fn(n, rows[0].len(), |r, c| rows[r][c]),
        provenance: vec![Provenance::Given; n],
        clipped: vec![false; n],
    }
}

#[test]
fn nominal_parameters_reproduce_base_case() {
    let net = fixture("case9.json");
    let spec = case9_spec(&net);
    spec.validate(&net).unwrap();
    let opts = PowerFlowOptions::default();
    let s = materialize_scenarios(&spec, &given(vec![spec.nominal()]), &net, &opts).unwrap();
    let base = solve_power_flow(&net, None, &opts).unwrap();
    for (a, b) in s[0].power_flow.vm.iter().zip(&base.vm) {
        assert!((a - b).abs() < 1e-9);
    }
    for (a, b) in s[0].power_flow.gen_p.iter().zip(&base.gen_p) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!(!s[0].clipped);
}

#[test]
fn zero_penetration_switches_renewables_off() {
    let net = fixture("case9.json");
    let spec = case9_spec(&net);
    let (ov, _) = derive_overrides(&spec, &[0.0, 1.0, 1.0, 40.0], &net).unwrap();
    for (g, p) in net.generators.iter().zip(&ov.gen_p_set) {
        if !g.is_synchronous() {
            assert_eq!(*p, 0.0);
        }
    }
    // Lost renewable output moves to synchronous units.
    let sync_before: f64 = net.generators.iter().filter(|g| g.is_synchronous()).map(|g| g.p_set).sum();
    let sync_after: f64 = net
        .generators
        .iter()
        .zip(&ov.gen_p_set)
        .filter(|(g, _)| g.is_synchronous())
        .map(|(_, p)| p)
        .sum();
    assert!((sync_after - sync_before - 70.0).abs() < 1e-9);
}

#[test]
fn penetration_hits_target_unless_capped() {
    let net = fixture("case9.json");
    let spec = case9_spec(&net);
    let (ov, capped) = derive_overrides(&spec, &[0.4, 1.1, 1.0, 60.0], &net).unwrap();
    let demand = ov.load_p.iter().sum::<f64>() + 60.0;
    let ren: f64 = net.generators.iter().zip(&ov.gen_p_set).filter(|(g, _)| !g.is_synchronous()).map(|(_, p)| p).sum();
    assert!(!capped);
    assert!((ren / demand - 0.4).abs() < 1e-12);
    let (_, capped) = derive_overrides(&spec, &[0.9, 1.0, 1.0, 40.0], &net).unwrap();
    assert!(capped);
}

#[test]
fn spec_validation() {
    let net = fixture("case9.json");
    let mut spec = case9_spec(&net);
    spec.parameters[1].lower = 2.0;
    assert!(matches!(spec.validate(&net), Err(crate::Error::InvalidSpec(_))));
    let mut spec = case9_spec(&net);
    spec.parameters[0].buses = Some(vec![99]);
    assert!(spec.validate(&net).is_err());
    let mut no_hvdc = net.clone();
    no_hvdc.hvdc = None;
    assert!(case9_spec(&net).validate(&no_hvdc).is_err());
}

#[test]
fn batch_mixes_design_and_mixture() {
    let net = fixture("case9.json");
    let spec = case9_spec(&net);
    let cfg = BatchConfig {
        total: 60,
        seed: 4,
        ..BatchConfig::default()
    };
    let b = generate_parameters(&spec, &cfg).unwrap();
    let ortho = b.provenance.iter().filter(|p| **p == Provenance::Orthogonal).count();
    assert_eq!(ortho, 25);
    assert_eq!(b.values.nrows(), 60);
    for r in 0..60 {
        for (c, p) in spec.parameters.iter().enumerate() {
            assert!(b.values[(r, c)] >= p.lower && b.values[(r, c)] <= p.upper);
        }
    }
    // Orthogonal rows sit on interior quantiles.
    assert!((b.values[(0, 1)] - (0.8 + 0.1 * 0.4)).abs() < 1e-12);
    assert_eq!(generate_parameters(&spec, &cfg).unwrap(), b);
    let opts = PowerFlowOptions::default();
    let s1 = materialize_scenarios(&spec, &b, &net, &opts).unwrap();
    let s2 = materialize_scenarios(&spec, &b, &net, &opts).unwrap();
    assert_eq!(s1, s2);
    assert!(scenarios_csv(&spec, &net, &s1).lines().count() == 61);
}
