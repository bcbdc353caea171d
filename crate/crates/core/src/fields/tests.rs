use super::*;
use crate::embed::{classical_mds, Embedding};
use crate::grid::{
    build_impedance_matrix, electrical_distance, solve_power_flow, NetworkModel,
    PowerFlowOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn geom(g: usize) -> RasterGeometry {
    RasterGeometry {
        resolution: g,
        bandwidth: 1.5,
        min_x: 0.0,
        min_y: 0.0,
        side: 1.0,
    }
}

fn field_from(grid: DMatrix<f64>) -> RasterField {
    RasterField {
        geometry: geom(grid.nrows()),
        grid,
        quantity: Quantity::ActiveLoad,
    }
}

fn random_field(rng: &mut ChaCha8Rng, g: usize) -> RasterField {
    let scale = rng.random_range(0.01..100.0);
    let offset = if rng.random_bool(0.3) { -0.5 * scale } else { 0.0 };
    field_from(DMatrix::from_fn(g, g, |_, _| rng.random_range(0.0..scale) + offset))
}

#[test]
fn single_node_deposits_into_its_cell() {
    for g in [4, 7, 32] {
        let coords = DMatrix::from_row_slice(1, 2, &[0.33, 0.71]);
        let f = rasterize(&geom(g), &coords, &[10.0], Quantity::ActiveLoad).unwrap();
        assert!((f.total() - 10.0).abs() < 1e-12);
        let (r, c) = f.grid.iamax_full();
        assert_eq!(c, (0.33 * g as f64).floor() as usize);
        assert_eq!(r, (0.71 * g as f64).floor() as usize);
    }
}

#[test]
fn zero_values_give_zero_grid() {
    let coords = DMatrix::from_row_slice(3, 2, &[0.1, 0.1, 0.5, 0.5, 0.9, 0.2]);
    let f = rasterize(&geom(16), &coords, &[0.0; 3], Quantity::ActiveLoad).unwrap();
    assert!(f.grid.iter().all(|v| *v == 0.0));
}

#[test]
fn coincident_nodes_add() {
    let two = DMatrix::from_row_slice(2, 2, &[0.4, 0.6, 0.4, 0.6]);
    let one = DMatrix::from_row_slice(1, 2, &[0.4, 0.6]);
    let a = rasterize(&geom(32), &two, &[3.0, 4.0], Quantity::ActiveLoad).unwrap();
    let b = rasterize(&geom(32), &one, &[7.0], Quantity::ActiveLoad).unwrap();
    assert!((a.grid - b.grid).amax() < 1e-12);
}

#[test]
fn rasterize_rejects_bad_input() {
    let coords = DMatrix::from_row_slice(1, 2, &[0.4, 0.6]);
    assert!(matches!(
        rasterize(&geom(8), &coords, &[f64::NAN], Quantity::ActiveLoad),
        Err(crate::Error::NonFinite(_))
    ));
    assert!(matches!(
        rasterize(&geom(8), &coords, &[1.0, 2.0], Quantity::ActiveLoad),
        Err(crate::Error::Dimension(_))
    ));
    assert!(RasterGeometry::from_points(&coords, 3, 1.5).is_err());
}

#[test]
fn norm_matching_basics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_field(&mut rng, 8);
    assert_eq!(norm_matching(&a, &a).unwrap(), 0.0);

    let mut g1 = DMatrix::zeros(8, 8);
    let mut g2 = DMatrix::zeros(8, 8);
    g1[(1, 1)] = 5.0;
    g2[(6, 3)] = 2.0;
    assert_eq!(norm_matching(&field_from(g1), &field_from(g2)).unwrap(), 1.0);

    let zero = field_from(DMatrix::zeros(8, 8));
    assert_eq!(norm_matching(&zero, &zero).unwrap(), 0.0);

    let mut other = random_field(&mut rng, 8);
    other.geometry.side = 2.0;
    assert!(matches!(norm_matching(&a, &other), Err(crate::Error::GridMismatch)));
    assert!(matches!(ssim(&a, &other, &SsimParams::default()), Err(crate::Error::GridMismatch)));
}

#[test]
fn norm_matching_matches_scan_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let a = random_field(&mut rng, 9);
        let b = random_field(&mut rng, 9);
        let ma: f64 = a.grid.iter().map(|v| v.abs()).sum();
        let mb: f64 = b.grid.iter().map(|v| v.abs()).sum();
        let mut best = 0.0f64;
        for r in 0..9 {
            for c in 0..9 {
                best = best.max((a.grid[(r, c)] / ma - b.grid[(r, c)] / mb).abs());
            }
        }
        assert!((norm_matching(&a, &b).unwrap() - best).abs() < 1e-15);
    }
}

#[test]
fn ssim_identity_and_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_field(&mut rng, 12);
    assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    let c = field_from(DMatrix::from_element(6, 6, 2.5));
    assert_eq!(ssim(&c, &c.clone(), &SsimParams::default()).unwrap(), 1.0);
    let z = field_from(DMatrix::zeros(6, 6));
    assert_eq!(ssim(&z, &z, &SsimParams::default()).unwrap(), 1.0);
}

#[test]
fn ssim_mean_reflection_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = 10;
    let mut base = DMatrix::from_fn(g, g, |_, _| rng.random_range(-50.0..50.0));
    let m = base.mean();
    base.add_scalar_mut(-m);
    let a = field_from(base.clone());
    let b = field_from(-base);
    let p = SsimParams::default();
    let (c1, c2) = p.constants(&a.grid, &b.grid);
    let var = a.grid.iter().map(|v| v * v).sum::<f64>() / (g * g) as f64;
    let expected = c1 * (-2.0 * var + c2) / (c1 * (2.0 * var + c2));
    let got = ssim(&a, &b, &p).unwrap();
    assert!((got - expected).abs() < 1e-12);
    assert!(got < -0.99);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ssim_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_field(&mut rng, 6);
        let b = random_field(&mut rng, 6);
        let p = SsimParams::default();
        let ab = ssim(&a, &b, &p).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a, &p).unwrap());
        prop_assert!(ab.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn norm_matching_is_a_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_field(&mut rng, 5);
        let b = random_field(&mut rng, 5);
        let c = random_field(&mut rng, 5);
        let ab = norm_matching(&a, &b).unwrap();
        prop_assert_eq!(ab, norm_matching(&b, &a).unwrap());
        let ac = norm_matching(&a, &c).unwrap();
        let cb = norm_matching(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-15);
    }

    #[test]
    fn rasterize_conserves_mass(seed in any::<u64>(), g in 4usize..40, bw in 0.2f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..30);
        let coords = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-3.0..3.0));
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let geo = RasterGeometry::from_points(&coords, g, bw).unwrap();
        let f = rasterize(&geo, &coords, &values, Quantity::ActiveLoad).unwrap();
        let total: f64 = values.iter().sum();
        let scale: f64 = values.iter().map(|v| v.abs()).sum();
        prop_assert!((f.total() - total).abs() <= 1e-9 * scale.max(total.abs()));
    }
}

fn fixture(name: &str) -> NetworkModel {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    NetworkModel::load(&p).unwrap()
}

fn embedding_for(net: &NetworkModel) -> Embedding {
    let d = electrical_distance(&build_impedance_matrix(net).unwrap());
    classical_mds(&d, 2).unwrap()
}

#[test]
fn identical_generation_and_load_fields() {
    // Slack generation feeding a co-located load over a lossless network.
    let net: NetworkModel = serde_json::from_value(serde_json::json!({
        "base_mva": 100.0,
        "buses": [{"id": 1, "type": "slack"}, {"id": 2, "type": "pq"}, {"id": 3, "type": "pq"}],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1}, {"from": 2, "to": 3, "r": 0.0, "x": 0.2}],
        "generators": [{"bus": 1, "kind": "synchronous", "p_set": 0.0, "inertia": 3.0,
                        "xd_prime": 0.2, "p_max": 100.0}],
        "loads": [{"bus": 1, "p": 50.0, "q": 0.0}]
    }))
    .unwrap();
    let pf = solve_power_flow(&net, None, &PowerFlowOptions::default()).unwrap();
    let emb = embedding_for(&net);
    let geo = RasterGeometry::from_embedding(&emb, 32, 1.5).unwrap();
    let cv =
        compute_characteristics(&net, &pf, &geo, &emb.coords, &SsimParams::default(), false).unwrap();
    assert!(cv.values[0].abs() < 1e-9);
    assert!((cv.values[1] - 1.0).abs() < 1e-9);
}

#[test]
fn zero_renewable_network_characteristics() {
    let mut net = fixture("case9.json");
    net.generators.retain(|g| g.is_synchronous());
    let pf = solve_power_flow(&net, None, &PowerFlowOptions::default()).unwrap();
    assert!(pf.converged);
    let emb = embedding_for(&net);
    let geo = RasterGeometry::from_embedding(&emb, 32, 1.5).unwrap();
    let p = SsimParams::default();
    let cv = compute_characteristics(&net, &pf, &geo, &emb.coords, &p, false).unwrap();

    let nq = nodal_quantities(&net, Some(&pf));
    assert!(nq.p_renewable.iter().all(|v| *v == 0.0));
    // SSIM against an all-zero image collapses to C1·C2 / ((μ²+C1)(σ²+C2)).
    let qg = rasterize(&geo, &emb.coords, &nq.q_gen, Quantity::ReactiveGeneration).unwrap();
    let (c1, c2) = p.constants(&qg.grid, &DMatrix::zeros(32, 32));
    let n = (32 * 32) as f64;
    let mu = qg.grid.sum() / n;
    let var = qg.grid.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let expected = c1 * c2 / ((mu * mu + c1) * (var + c2));
    assert!((cv.values[4] - expected).abs() < 1e-12);
    // Against a zero field the normalized ∞-norm is the peak of the unit-mass field.
    let ps = rasterize(&geo, &emb.coords, &nq.p_sync, Quantity::Synchronous).unwrap();
    let peak = ps.grid.amax() / ps.grid.iter().map(|v| v.abs()).sum::<f64>();
    assert!((cv.values[6] - peak).abs() < 1e-15);
}

#[test]
fn characteristics_need_convergence_unless_fallback() {
    let net = fixture("case9.json");
    let mut pf = solve_power_flow(&net, None, &PowerFlowOptions::default()).unwrap();
    pf.converged = false;
    let emb = embedding_for(&net);
    let geo = RasterGeometry::from_embedding(&emb, 16, 1.5).unwrap();
    let p = SsimParams::default();
    assert!(compute_characteristics(&net, &pf, &geo, &emb.coords, &p, false).is_err());
    let cv = compute_characteristics(&net, &pf, &geo, &emb.coords, &p, true).unwrap();
    assert!(cv.dispatch_fallback);
}

#[test]
fn characteristics_invariant_to_coordinate_scale() {
    let net = fixture("case9.json");
    let pf = solve_power_flow(&net, None, &PowerFlowOptions::default()).unwrap();
    let emb = embedding_for(&net);
    let p = SsimParams::default();
    let geo = RasterGeometry::from_embedding(&emb, 32, 1.5).unwrap();
    let a = compute_characteristics(&net, &pf, &geo, &emb.coords, &p, false).unwrap();
    let scaled = &emb.coords * 10.0;
    let geo10 = RasterGeometry::from_points(&scaled, 32, 1.5).unwrap();
    let b = compute_characteristics(&net, &pf, &geo10, &scaled, &p, false).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

/// Straight-line reimplementation of the whole characteristic pipeline.
mod reference {
    pub fn raster(xy: &[(f64, f64)], vals: &[f64], g: usize, bw: f64) -> Vec<Vec<f64>> {
        let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
        let lo = |v: &[f64]| v.iter().cloned().fold(f64::MAX, f64::min);
        let hi = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        let side = (hi(&xs) - lo(&xs)).max(hi(&ys) - lo(&ys)) * 1.1;
        let x0 = (lo(&xs) + hi(&xs)) / 2.0 - side / 2.0;
        let y0 = (lo(&ys) + hi(&ys)) / 2.0 - side / 2.0;
        let w = side / g as f64;
        let mut out = vec![vec![0.0; g]; g];
        for (p, v) in xy.iter().zip(vals) {
            let cx = ((p.0 - x0) / w).floor() as i64;
            let cy = ((p.1 - y0) / w).floor() as i64;
            let mut cells = vec![];
            for r in 0..g {
                for c in 0..g {
                    let dx = (c as f64 + 0.5) * w + x0 - p.0;
                    let dy = (r as f64 + 0.5) * w + y0 - p.1;
                    let d2 = (dx * dx + dy * dy) / (w * w);
                    let within = (c as i64 - cx).abs() as f64 <= (4.0 * bw).ceil()
                        && (r as i64 - cy).abs() as f64 <= (4.0 * bw).ceil()
                        && d2 <= 16.0 * bw * bw;
                    if within {
                        cells.push((r, c, (-d2 / (2.0 * bw * bw)).exp()));
                    }
                }
            }
            let s: f64 = cells.iter().map(|c| c.2).sum();
            for (r, c, k) in cells {
                out[r][c] += v * k / s;
            }
        }
        out
    }

    fn flat(a: &[Vec<f64>]) -> Vec<f64> {
        a.iter().flatten().cloned().collect()
    }

    pub fn norm(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let (a, b) = (flat(a), flat(b));
        let sa: f64 = a.iter().map(|v| v.abs()).sum();
        let sb: f64 = b.iter().map(|v| v.abs()).sum();
        let na = |v: f64| if sa > 0.0 { v / sa } else { v };
        let nb = |v: f64| if sb > 0.0 { v / sb } else { v };
        a.iter().zip(&b).map(|(x, y)| (na(*x) - nb(*y)).abs()).fold(0.0, f64::max)
    }

    pub fn ssim(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let (a, b) = (flat(a), flat(b));
        let n = a.len() as f64;
        let l = a.iter().chain(&b).map(|v| v.abs()).fold(0.0, f64::max);
        let l = if l > 0.0 { l } else { 1.0 };
        let (c1, c2) = ((0.01 * l) * (0.01 * l), (0.03 * l) * (0.03 * l));
        let m1 = a.iter().sum::<f64>() / n;
        let m2 = b.iter().sum::<f64>() / n;
        let v1 = a.iter().map(|x| (x - m1).powi(2)).sum::<f64>() / n;
        let v2 = b.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / n;
        let cv = a.iter().zip(&b).map(|(x, y)| (x - m1) * (y - m2)).sum::<f64>() / n;
        (2.0 * m1 * m2 + c1) * (2.0 * cv + c2) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2))
    }
}

#[test]
fn fixture_characteristics_match_reference() {
    let net = fixture("case9.json");
    let pf = solve_power_flow(&net, None, &PowerFlowOptions::default()).unwrap();
    let emb = embedding_for(&net);
    let geo = RasterGeometry::from_embedding(&emb, 32, 1.5).unwrap();
    let cv =
        compute_characteristics(&net, &pf, &geo, &emb.coords, &SsimParams::default(), false).unwrap();

    let xy: Vec<(f64, f64)> = (0..net.n_buses()).map(|i| (emb.coords[(i, 0)], emb.coords[(i, 1)])).collect();
    let n = net.n_buses();
    let pos = |id: u32| net.buses.iter().position(|b| b.id == id).unwrap();
    let mut pg = vec![0.0; n];
    let mut qg = vec![0.0; n];
    let mut pre = vec![0.0; n];
    let mut psync = vec![0.0; n];
    let mut j = vec![0.0; n];
    let mut pl = vec![0.0; n];
    let mut ql = vec![0.0; n];
    for (k, g) in net.generators.iter().enumerate() {
        let i = pos(g.bus);
        pg[i] += pf.gen_p[k];
        qg[i] += pf.gen_q[k];
        if g.kind == crate::grid::GeneratorKind::Renewable {
            pre[i] += pf.gen_p[k];
        } else {
            psync[i] += pf.gen_p[k];
            j[i] += g.inertia * g.p_max / net.base_mva;
        }
    }
    for l in &net.loads {
        pl[pos(l.bus)] += l.p;
        ql[pos(l.bus)] += l.q;
    }
    let h = net.hvdc.as_ref().unwrap();
    pl[pos(h.bus)] += h.p_delivered;
    let r = |v: &[f64]| reference::raster(&xy, v, 32, 1.5);
    let (rpg, rpl, rqg, rql, rpre, rps, rj) = (r(&pg), r(&pl), r(&qg), r(&ql), r(&pre), r(&psync), r(&j));
    let expected = [
        reference::norm(&rpg, &rpl),
        reference::ssim(&rpg, &rpl),
        reference::norm(&rqg, &rql),
        reference::ssim(&rqg, &rql),
        reference::ssim(&rpre, &rqg),
        reference::ssim(&rj, &rpl),
        reference::norm(&rps, &rpre),
        reference::ssim(&rps, &rpre),
    ];
    for (got, want) in cv.values.iter().zip(&expected) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
