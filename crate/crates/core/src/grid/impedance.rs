use nalgebra::{Complex, DMatrix};

use super::model::NetworkModel;
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Grounding admittance added at the slack bus when the model has no shunt path.
pub const GROUNDING_ADMITTANCE: f64 = 1e-6;
/// Ybus condition estimate above which inversion is refused.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct ImpedanceMatrix {
    pub z: DMatrix<C64>,
    pub bus_ids: Vec<u32>,
    /// True when the slack grounding admittance was added.
    pub grounded: bool,
}

#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub d: DMatrix<f64>,
    pub bus_ids: Vec<u32>,
}

impl DistanceMatrix {
    pub fn new(d: DMatrix<f64>, bus_ids: Vec<u32>) -> Self {
        Self { d, bus_ids }
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    /// Checks symmetry and the zero diagonal to `tol` relative to the largest entry.
    pub fn check(&self, tol: f64) -> Result<()> {
        let n = self.d.nrows();
        if self.d.ncols() != n {
            return Err(Error::Dimension(format!("distance matrix is {}x{}", n, self.d.ncols())));
        }
        if self.bus_ids.len() != n {
            return Err(Error::Dimension("bus id list does not match matrix size".into()));
        }
        if self.d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance matrix entry".into()));
        }
        let scale = self.d.amax().max(1.0);
        for i in 0..n {
            if self.d[(i, i)].abs() > tol * scale {
                return Err(Error::NonSymmetric(format!("D[{i},{i}] = {}", self.d[(i, i)])));
            }
            for j in (i + 1)..n {
                if (self.d[(i, j)] - self.d[(j, i)]).abs() > tol * scale {
                    return Err(Error::NonSymmetric(format!("D[{i},{j}] != D[{j},{i}]")));
                }
                if self.d[(i, j)] < -tol * scale {
                    return Err(Error::NonSymmetric(format!("D[{i},{j}] is negative")));
                }
            }
        }
        Ok(())
    }
}

/// Bus admittance matrix with branch π-models and bus shunts, in bus order.
/// Out-of-service branches are skipped.
pub fn build_admittance_matrix(net: &NetworkModel) -> DMatrix<C64> {
    let index = net.bus_index();
    let n = net.n_buses();
    let mut y = DMatrix::<C64>::zeros(n, n);
    for br in net.branches.iter().filter(|b| b.in_service) {
        let (a, b) = (index[&br.from], index[&br.to]);
        let ys = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
        let ysh = C64::new(0.0, br.b / 2.0);
        y[(a, a)] += ys + ysh;
        y[(b, b)] += ys + ysh;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }
    for (i, bus) in net.buses.iter().enumerate() {
        y[(i, i)] += C64::new(bus.shunt_g, bus.shunt_b);
    }
    y
}

fn has_shunt_path(net: &NetworkModel) -> bool {
    net.buses.iter().any(|b| b.shunt_g != 0.0 || b.shunt_b != 0.0)
        || net.branches.iter().any(|b| b.in_service && b.b != 0.0)
}

fn one_norm(m: &DMatrix<C64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverts the bus admittance matrix into the bus impedance matrix.
pub fn build_impedance_matrix(net: &NetworkModel) -> Result<ImpedanceMatrix> {
    net.validate()?;
    let mut y = build_admittance_matrix(net);
    let grounded = !has_shunt_path(net);
    if grounded {
        let s = net.slack_index();
        y[(s, s)] += C64::new(GROUNDING_ADMITTANCE, 0.0);
    }
    let y_norm = one_norm(&y);
    let z = y
        .clone()
        .try_inverse()
        .ok_or(Error::SingularNetwork {
            condition: f64::INFINITY,
            limit: CONDITION_LIMIT,
        })?;
    let condition = y_norm * one_norm(&z);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(Error::SingularNetwork {
            condition,
            limit: CONDITION_LIMIT,
        });
    }
    // Symmetrize away inversion roundoff; Ybus is symmetric so Z is too.
    let z = (&z + z.transpose()) * C64::new(0.5, 0.0);
    Ok(ImpedanceMatrix {
        z,
        bus_ids: net.bus_ids(),
        grounded,
    })
}

/// `D_ab = |Z_aa + Z_bb - Z_ba - Z_ab|`, diagonal exactly zero.
pub fn electrical_distance(z: &ImpedanceMatrix) -> DistanceMatrix {
    let n = z.z.nrows();
    let zz = &z.z;
    let mut d = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let v = (zz[(a, a)] + zz[(b, b)] - zz[(b, a)] - zz[(a, b)]).norm();
            d[(a, b)] = v;
            d[(b, a)] = v;
        }
    }
    DistanceMatrix {
        d,
        bus_ids: z.bus_ids.clone(),
    }
}
