use super::classical::gram_matrix;
use super::*;
use crate::grid::{build_impedance_matrix, electrical_distance, NetworkModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dm(points: &[[f64; 2]]) -> DistanceMatrix {
    let x = DMatrix::from_fn(points.len(), 2, |r, c| points[r][c]);
    DistanceMatrix::new(pairwise_distances(&x), (1..=points.len() as u32).collect())
}

fn square() -> DistanceMatrix {
    dm(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[test]
fn classical_recovers_square() {
    let d = square();
    let e = classical_mds(&d, 2).unwrap();
    assert!(max_abs_diff(&e.distances(), &d.d) < 1e-8);
}

#[test]
fn classical_recovers_collinear_points() {
    let d = DistanceMatrix::new(
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0]),
        vec![1, 2, 3],
    );
    let e = classical_mds(&d, 1).unwrap();
    let r = e.distances();
    assert!((r[(0, 1)] - 1.0).abs() < 1e-12);
    assert!((r[(1, 2)] - 2.0).abs() < 1e-12);
    assert!((r[(0, 2)] - 3.0).abs() < 1e-12);
}

#[test]
fn triangle_violation_yields_negative_eigenvalue() {
    let d = DistanceMatrix::new(
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]),
        vec![1, 2, 3],
    );
    // Oracle: B is centered so one eigenvalue is 0; the other two have product
    // equal to the sum of principal 2x2 minors.
    let sq = [[0.0, 1.0, 25.0], [1.0, 0.0, 1.0], [25.0, 1.0, 0.0]];
    let rmean: Vec<f64> = sq.iter().map(|r| r.iter().sum::<f64>() / 3.0).collect();
    let g = rmean.iter().sum::<f64>() / 3.0;
    let b = |i: usize, j: usize| -0.5 * (sq[i][j] - rmean[i] - rmean[j] + g);
    let minors = b(0, 0) * b(1, 1) - b(0, 1) * b(1, 0) + b(0, 0) * b(2, 2) - b(0, 2) * b(2, 0)
        + b(1, 1) * b(2, 2)
        - b(1, 2) * b(2, 1);
    assert!(minors < 0.0);

    let e = classical_mds(&d, 1).unwrap();
    let ev = e.eigenvalues.unwrap();
    assert!(ev.iter().any(|v| *v < 0.0));
    let nonzero: Vec<f64> = ev.iter().copied().filter(|v| *v != 0.0).collect();
    assert!((nonzero[0] * nonzero[1] - minors).abs() < 1e-9);
}

#[test]
fn dimension_and_symmetry_errors() {
    let d = square();
    assert!(matches!(classical_mds(&d, 0), Err(crate::Error::Dimension(_))));
    assert!(matches!(classical_mds(&d, 4), Err(crate::Error::Dimension(_))));
    let mut bad = square();
    bad.d[(0, 1)] += 0.1;
    assert!(matches!(classical_mds(&bad, 2), Err(crate::Error::NonSymmetric(_))));
    assert!(matches!(
        metric_mds(&bad, 2, &SmacofConfig::default()),
        Err(crate::Error::NonSymmetric(_))
    ));
}

#[test]
fn smacof_fits_square_exactly() {
    let d = square();
    let e = metric_mds(&d, 2, &SmacofConfig::default()).unwrap();
    assert!(e.stress.unwrap() <= 1e-10);
    let random = SmacofConfig {
        init: SmacofInit::Random { seed: 3 },
        max_iterations: 5000,
        relative_tolerance: 1e-14,
        ..Default::default()
    };
    let e = metric_mds(&d, 2, &random).unwrap();
    assert!(e.stress.unwrap() <= 1e-10, "{:?}", e.stress);
}

#[test]
fn smacof_zero_iterations_returns_initialization() {
    let d = random_net_distance(&mut ChaCha8Rng::seed_from_u64(5), 8);
    let cfg = SmacofConfig {
        max_iterations: 0,
        ..Default::default()
    };
    let e = metric_mds(&d, 2, &cfg).unwrap();
    let c = classical_mds(&d, 2).unwrap();
    assert_eq!(e.coords, c.coords);
    assert_eq!(e.stress.unwrap(), stress(&d.d, &c.coords, None));
}

#[test]
fn smacof_never_worse_than_classical_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..15 {
        let n = rng.random_range(5..14);
        let d = random_net_distance(&mut rng, n);
        for k in 1..n.min(5) {
            let c = classical_mds(&d, k).unwrap();
            let m = metric_mds(&d, k, &SmacofConfig::default()).unwrap();
            assert!(m.stress.unwrap() <= stress(&d.d, &c.coords, None));
            for w in m.stress_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }
}

#[test]
fn smacof_with_weights_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = random_net_distance(&mut rng, 9);
    let n = d.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(0.5..2.0);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    let cfg = SmacofConfig {
        weights: Some(w.clone()),
        ..Default::default()
    };
    let e = metric_mds(&d, 2, &cfg).unwrap();
    for h in e.stress_history.windows(2) {
        assert!(h[1] <= h[0]);
    }
    let c = classical_mds(&d, 2).unwrap();
    assert!(e.stress.unwrap() <= stress(&d.d, &c.coords, Some(&w)));
}

#[test]
fn fidelity_identity_and_scale_invariance() {
    let d = square();
    let e = classical_mds(&d, 2).unwrap();
    assert!((embedding_fidelity(&d, &e).unwrap() - 1.0).abs() < 1e-12);
    let mut scaled = e.clone();
    scaled.coords *= 3.7;
    let a = embedding_fidelity(&d, &e).unwrap();
    let b = embedding_fidelity(&d, &scaled).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn fidelity_rejects_constant_distances() {
    let d = square();
    let mut e = classical_mds(&d, 2).unwrap();
    e.coords.fill(0.0);
    assert!(matches!(
        embedding_fidelity(&d, &e),
        Err(crate::Error::DegenerateInput(_))
    ));
}

#[test]
fn fidelity_matches_textbook_oracle() {
    let d = random_net_distance(&mut ChaCha8Rng::seed_from_u64(9), 6);
    let e = classical_mds(&d, 3).unwrap();
    let rho = embedding_fidelity(&d, &e).unwrap();
    // cov / (σ_d σ_D) with population moments, computed pair by pair.
    let x = e.distances();
    let (mut pairs_d, mut pairs_e) = (vec![], vec![]);
    for j in 1..6 {
        for i in 0..j {
            pairs_d.push(d.d[(i, j)]);
            pairs_e.push(x[(i, j)]);
        }
    }
    let m = pairs_d.len() as f64;
    let md = pairs_d.iter().sum::<f64>() / m;
    let me = pairs_e.iter().sum::<f64>() / m;
    let cov = pairs_d.iter().zip(&pairs_e).map(|(a, b)| a * b).sum::<f64>() / m - md * me;
    let vd = pairs_d.iter().map(|a| a * a).sum::<f64>() / m - md * md;
    let ve = pairs_e.iter().map(|a| a * a).sum::<f64>() / m - me * me;
    let oracle = cov / (vd.sqrt() * ve.sqrt());
    assert!((rho - oracle).abs() < 1e-12, "{rho} vs {oracle}");
}

#[test]
fn spectrum_of_regular_simplex() {
    let n = 4;
    let d = DistanceMatrix::new(
        DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
        vec![1, 2, 3, 4],
    );
    let e = classical_mds(&d, 2).unwrap();
    let rep = spectrum_report(&e).unwrap();
    assert_eq!(rep.positive_count, 3);
    assert!((rep.cumulative_share[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn spectrum_of_planar_configurations() {
    let rep = spectrum_report(&classical_mds(&square(), 2).unwrap()).unwrap();
    assert!((rep.cumulative_share[1] - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<[f64; 2]> = (0..12)
        .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
        .collect();
    let rep = spectrum_report(&classical_mds(&dm(&pts), 2).unwrap()).unwrap();
    assert!(rep.positive_count <= 2);
    let metric = metric_mds(&square(), 2, &SmacofConfig::default()).unwrap();
    assert!(matches!(
        spectrum_report(&metric),
        Err(crate::Error::MethodMismatch { .. })
    ));
}

#[test]
fn classical_coordinates_are_centered_and_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let d = random_net_distance(&mut rng, 10);
        let e = classical_mds(&d, 4).unwrap();
        for c in 0..4 {
            assert!(e.coords.column(c).sum().abs() < 1e-9);
            for c2 in (c + 1)..4 {
                let dot = e.coords.column(c).dot(&e.coords.column(c2));
                assert!(dot.abs() < 1e-8);
            }
        }
    }
}

#[test]
fn classical_reconstruction_error_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = rng.random_range(4..15);
        let dim = rng.random_range(1..4).min(n - 1);
        let x = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-10.0..10.0));
        let d = DistanceMatrix::new(pairwise_distances(&x), (1..=n as u32).collect());
        let e = classical_mds(&d, dim).unwrap();
        assert!(max_abs_diff(&e.distances(), &d.d) <= 1e-7 * d.d.amax());
    }
}

#[test]
fn gram_matrix_is_double_centered() {
    let d = random_net_distance(&mut ChaCha8Rng::seed_from_u64(3), 7);
    let b = gram_matrix(&d.d);
    for i in 0..7 {
        assert!(b.row(i).sum().abs() < 1e-12);
    }
}

#[test]
fn fidelity_nondecreasing_in_dimension_on_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let n = rng.random_range(6..12);
        let d = random_net_distance(&mut rng, n);
        let mut prev = f64::NEG_INFINITY;
        for k in 2..n {
            let rho = embedding_fidelity(&d, &classical_mds(&d, k).unwrap()).unwrap();
            assert!(rho >= prev - 1e-9, "k={k}: {rho} < {prev}");
            prev = rho;
        }
    }
}

#[test]
fn embedding_csv_round_trip() {
    let e = classical_mds(&square(), 2).unwrap();
    let back = Embedding::from_csv(&e.to_csv(), MdsMethod::Classical).unwrap();
    assert_eq!(back.bus_ids, e.bus_ids);
    assert_eq!(back.coords, e.coords);
}

/// Electrical distances of a random meshed network.
pub(crate) fn random_net_distance(rng: &mut ChaCha8Rng, n: usize) -> DistanceMatrix {
    let mut buses = Vec::new();
    for i in 1..=n {
        buses.push(serde_json::json!({
            "id": i, "type": if i == 1 { "slack" } else { "pq" },
            "shunt_b": if rng.random_bool(0.3) { rng.random_range(0.0..0.3) } else { 0.0 }
        }));
    }
    let mut branches = Vec::new();
    for i in 2..=n {
        let to = rng.random_range(1..i);
        branches.push(serde_json::json!({"from": i, "to": to,
            "r": rng.random_range(0.0..0.02), "x": rng.random_range(0.02..0.3),
            "b": rng.random_range(0.0..0.1)}));
    }
    for _ in 0..n / 2 {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        if a != b {
            branches.push(serde_json::json!({"from": a, "to": b,
                "r": rng.random_range(0.0..0.02), "x": rng.random_range(0.02..0.3)}));
        }
    }
    let net: NetworkModel = serde_json::from_value(serde_json::json!({
        "base_mva": 100.0, "buses": buses, "branches": branches
    }))
    .unwrap();
    electrical_distance(&build_impedance_matrix(&net).unwrap())
}
