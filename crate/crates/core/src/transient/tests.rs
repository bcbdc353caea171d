use super::*;
use crate::grid::{heaviest_loaded_branch, solve_power_flow, PowerFlowOptions};
use proptest::prelude::*;
use std::f64::consts::PI;

fn fixture(name: &str) -> NetworkModel {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    NetworkModel::load(&p).unwrap()
}

fn solved(net: &NetworkModel) -> PowerFlowSolution {
    let pf = solve_power_flow(net, None, &PowerFlowOptions::default()).unwrap();
    assert!(pf.converged);
    pf
}

fn smib() -> NetworkModel {
    serde_json::from_value(serde_json::json!({
        "base_mva": 100.0,
        "frequency_hz": 50.0,
        "buses": [{"id": 1, "type": "slack"}, {"id": 2, "type": "pv"}],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.5}, {"from": 1, "to": 2, "r": 0.0, "x": 0.5}],
        "generators": [
            {"bus": 1, "kind": "synchronous", "p_set": 0.0, "inertia": 1e4, "xd_prime": 1e-4, "p_max": 1e5},
            {"bus": 2, "kind": "synchronous", "p_set": 80.0, "inertia": 3.5, "xd_prime": 0.2, "p_max": 100.0}
        ]
    }))
    .unwrap()
}

fn separation(trace: &TransientTrace) -> Vec<f64> {
    trace.delta.iter().map(|d| (d[1] - d[0]).abs()).collect()
}

/// Equal-area critical clearing time for a terminal fault with zero
/// transfer during the fault.
fn smib_critical_time(net: &NetworkModel, pf: &PowerFlowSolution) -> f64 {
    let ms = machine_set(net, pf).unwrap();
    let (e_inf, e) = (ms.e_mag[0], ms.e_mag[1]);
    let delta0 = ms.delta0[1] - ms.delta0[0];
    let x_post = 0.2 + 0.5 + 1e-4;
    let p_max = e * e_inf / x_post;
    let pm = pf.gen_p[1] / 100.0;
    let delta_max = PI - (pm / p_max).asin();
    let cos_c = (pm * (delta_max - delta0) + p_max * delta_max.cos()) / p_max;
    let delta_c = cos_c.acos();
    let m = 2.0 * 3.5;
    let omega_s = 2.0 * PI * 50.0;
    (2.0 * m * (delta_c - delta0) / (omega_s * pm)).sqrt()
}

#[test]
fn equilibrium_is_preserved_without_fault() {
    let net = fixture("case9.json");
    let pf = solved(&net);
    let tr = simulate_transient(&net, &pf, None, &TransientConfig::default()).unwrap();
    assert_eq!(tr.times.len(), 2001);
    for d in &tr.delta {
        for (a, b) in d.iter().zip(&tr.delta[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    // Bus voltages at t = 0 reproduce the power flow.
    for (v, vm) in tr.voltage[0].iter().zip(&pf.vm) {
        assert!((v - vm).abs() < 1e-9);
    }
    assert!(tr.frequency.iter().all(|f| (f - 50.0).abs() < 1e-9));
}

#[test]
fn smib_critical_clearing_matches_equal_area() {
    let net = smib();
    let pf = solved(&net);
    let t_cr = smib_critical_time(&net, &pf);
    assert!(t_cr > 0.05 && t_cr < 1.0, "{t_cr}");
    let cfg = TransientConfig {
        horizon: 5.0,
        ..TransientConfig::default()
    };
    let run = |clearing: f64| {
        let fault = FaultSpec {
            from: 2,
            to: 1,
            t_fault: 0.5,
            clearing,
        };
        simulate_transient(&net, &pf, Some(&fault), &cfg).unwrap()
    };
    let stable = separation(&run(0.9 * t_cr));
    assert!(stable.iter().all(|s| *s < PI), "sub-critical swing crossed π");
    let unstable = separation(&run(1.1 * t_cr));
    let last = *unstable.last().unwrap();
    assert!(last > 2.0 * PI, "super-critical run stayed bounded: {last}");
    let tail = &unstable[unstable.len() - 200..];
    assert!(tail.windows(2).all(|w| w[1] > w[0]), "divergence is not monotone");
}

#[test]
fn step_halving_barely_moves_peak_angle() {
    let net = fixture("case9.json");
    let pf = solved(&net);
    let br = &net.branches[heaviest_loaded_branch(&net, &pf).unwrap()];
    let fault = FaultSpec::new(br.from, br.to);
    let peak = |step: f64| {
        let cfg = TransientConfig {
            step,
            ..TransientConfig::default()
        };
        let tr = simulate_transient(&net, &pf, Some(&fault), &cfg).unwrap();
        tr.delta
            .iter()
            .map(|d| {
                d.iter().copied().fold(f64::MIN, f64::max) - d.iter().copied().fold(f64::MAX, f64::min)
            })
            .fold(0.0, f64::max)
    };
    let (a, b) = (peak(0.005), peak(0.0025));
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn lossless_post_fault_energy_is_conserved() {
    let net = smib();
    let pf = solved(&net);
    let ms = machine_set(&net, &pf).unwrap();
    let br = net.find_branch(1, 2).unwrap();
    let post = reduce(&net, &ms, None, Some(br)).unwrap();
    assert!(post.y_red.iter().all(|y| y.re.abs() < 1e-9));
    let fault = FaultSpec {
        from: 2,
        to: 1,
        t_fault: 0.2,
        clearing: 0.1,
    };
    let tr = simulate_transient(&net, &pf, Some(&fault), &TransientConfig::default()).unwrap();
    let pm = electrical_power(&reduce(&net, &ms, None, None).unwrap(), &ms, &ms.delta0);
    let omega_s = 2.0 * PI * 50.0;
    let energy = |i: usize| {
        let (d, w) = (&tr.delta[i], &tr.speed[i]);
        let mut e = 0.0;
        for k in 0..2 {
            e += omega_s * 0.5 * ms.m[k] * w[k] * w[k] - pm[k] * d[k];
        }
        let b = post.y_red[(0, 1)].im;
        e - b * ms.e_mag[0] * ms.e_mag[1] * (d[0] - d[1]).cos()
    };
    let start = (0.3 / 0.005) as usize + 1;
    let e0 = energy(start);
    for i in start..tr.times.len() {
        assert!((energy(i) - e0).abs() < 1e-4, "drift {} at t = {}", energy(i) - e0, tr.times[i]);
    }
}

#[test]
fn fault_validation() {
    let net = fixture("case9.json");
    let pf = solved(&net);
    let cfg = TransientConfig::default();
    let bad = FaultSpec::new(1, 9);
    assert!(matches!(simulate_transient(&net, &pf, Some(&bad), &cfg), Err(Error::InvalidFault(_))));
    let mut late = FaultSpec::new(4, 5);
    late.t_fault = 9.95;
    assert!(simulate_transient(&net, &pf, Some(&late), &cfg).is_err());
    let mut zero = FaultSpec::new(4, 5);
    zero.clearing = 0.0;
    assert!(simulate_transient(&net, &pf, Some(&zero), &cfg).is_err());
    // Branch 1–4 is the only tie to bus 1.
    assert!(matches!(
        simulate_transient(&net, &pf, Some(&FaultSpec::new(1, 4)), &cfg),
        Err(Error::InvalidFault(_))
    ));
    let mut diverged = pf.clone();
    diverged.converged = false;
    assert!(simulate_transient(&net, &diverged, None, &cfg).is_err());
    let idx = evaluate_scenario(&net, &diverged, &FaultSpec::new(4, 5), &cfg).unwrap();
    assert_eq!(idx, StabilityIndices::sentinel());
}

#[test]
fn simulation_is_deterministic() {
    let net = fixture("case9.json");
    let pf = solved(&net);
    let f = FaultSpec::new(7, 8);
    let cfg = TransientConfig::default();
    let a = evaluate_scenario(&net, &pf, &f, &cfg).unwrap();
    let b = evaluate_scenario(&net, &pf, &f, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.tsi > -1.0 && a.tsi <= 1.0 && a.v_severity >= 0.0 && a.rocof >= 0.0);
}

/// Synthetic trace: one load bus, one voltage and frequency function.
fn synthetic(v: impl Fn(f64) -> f64, f: impl Fn(f64) -> f64, step: f64) -> TransientTrace {
    let n = (10.0 / step).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    TransientTrace {
        step,
        voltage: times.iter().map(|t| vec![1.0, v(*t)]).collect(),
        frequency: times.iter().map(|t| f(*t)).collect(),
        delta: vec![vec![0.0, 0.0]; n + 1],
        speed: vec![vec![0.0, 0.0]; n + 1],
        times,
        t_fault: 0.0,
        load_buses: vec![0, 1],
        truncated: false,
    }
}

#[test]
fn severity_examples() {
    let flat = synthetic(|_| 1.0, |_| 50.0, 0.005);
    assert_eq!(voltage_severity(&flat, SeverityAggregate::Max), 0.0);
    let sag = synthetic(|_| 0.7, |_| 50.0, 0.005);
    assert!((voltage_severity(&sag, SeverityAggregate::Max) - 1.0).abs() < 1e-12);
    let ramp = |t: f64| 0.6 + 0.02 * t;
    let tr = synthetic(ramp, |_| 50.0, 0.005);
    // Fine-grid midpoint oracle.
    let n = 1_000_000;
    let oracle: f64 = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) * 10.0 / n as f64;
            (0.8 - ramp(t)).max(0.0) * 10.0 / n as f64
        })
        .sum();
    let got = voltage_severity(&tr, SeverityAggregate::Max);
    assert!((got - 1.0).abs() < 1e-9 && (got - oracle).abs() < 1e-6);
    // Sum aggregates across load buses; the other bus sits at 1.0.
    assert!((voltage_severity(&tr, SeverityAggregate::Sum) - got).abs() < 1e-15);
}

#[test]
fn tsi_examples() {
    assert_eq!(tsi_from_separation(0.0), 1.0);
    assert_eq!(tsi_from_separation(PI), 0.0);
    assert!((tsi_from_separation(3.0 * PI) + 0.5).abs() < 1e-15);
    assert!(tsi_from_separation(1e12) < -0.999_999);
    let mut tr = synthetic(|_| 1.0, |_| 50.0, 0.005);
    tr.delta[300] = vec![0.4, -0.6];
    assert!((tsi(&tr).0 - tsi_from_separation(1.0)).abs() < 1e-15);
    tr.delta.iter_mut().for_each(|d| d.truncate(1));
    assert_eq!(tsi(&tr), (1.0, true));
    let grid: Vec<f64> = (0..1000).map(|i| i as f64 * 0.05).collect();
    assert!(grid.windows(2).all(|w| tsi_from_separation(w[1]) < tsi_from_separation(w[0])));
}

#[test]
fn rocof_examples() {
    let flat = synthetic(|_| 1.0, |_| 50.0, 0.005);
    assert_eq!(rocof(&flat, 0.5), 0.0);
    let ramp = synthetic(|_| 1.0, |t| if t < 1.0 { 50.0 - 0.5 * t } else { 49.5 }, 0.005);
    assert!((rocof(&ramp, 0.5) - 0.5).abs() < 1e-9);
    let sine = synthetic(|_| 1.0, |t| 50.0 + 0.2 * (2.0 * PI * t).sin(), 0.005);
    // |f(t+w) − f(t)|/w = 0.4·|sin(πw)·cos(2πt + πw)|/w, maximal 0.8 at w = 0.5.
    let analytic = 0.4 * (PI * 0.5).sin() / 0.5;
    assert!((rocof(&sine, 0.5) - analytic).abs() < 1e-6);
}

#[test]
fn index_csv_round_trip() {
    let recs = vec![
        IndexRecord {
            scenario_id: 0,
            indices: StabilityIndices {
                v_severity: 0.25,
                tsi: 0.5,
                rocof: 0.125,
                pf_converged: true,
                sentinel: false,
                truncated: false,
            },
        },
        IndexRecord {
            scenario_id: 7,
            indices: StabilityIndices::sentinel(),
        },
    ];
    let text = indices_csv(&recs);
    assert_eq!(parse_indices_csv(&text, "mem").unwrap(), recs);
    assert!(parse_indices_csv("a,b\n", "mem").is_err());
    assert!(parse_indices_csv("scenario_id,v_severity,tsi,rocof,pf_converged\n1,x,0,0,1\n", "mem").is_err());
}

proptest! {
    #[test]
    fn severity_nonincreasing_when_voltage_rises(
        a in 0.3f64..1.1, b in -0.5f64..0.5, c in 0.0f64..3.0, lift in 0.0f64..0.4
    ) {
        let v = move |t: f64| a + b * (c * t).sin();
        let low = synthetic(v, |_| 50.0, 0.01);
        let high = synthetic(move |t| v(t) + lift, |_| 50.0, 0.01);
        for agg in [SeverityAggregate::Max, SeverityAggregate::Sum] {
            prop_assert!(voltage_severity(&high, agg) <= voltage_severity(&low, agg));
        }
    }
}
