//! Nodal quantities rasterized onto the 2-D electrical coordinate plane, and
//! the field comparisons (normalized ∞-norm matching, global SSIM) built on them.

mod characteristics;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::error::{Error, Result};

pub use characteristics::{
    characteristics_csv, compute_characteristics, nodal_quantities, parse_characteristics_csv,
    CharacteristicVector, NodalQuantities, CHARACTERISTIC_NAMES,
};

pub const DEFAULT_RESOLUTION: usize = 32;
pub const DEFAULT_BANDWIDTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "P_G")]
    ActiveGeneration,
    #[serde(rename = "P_L")]
    ActiveLoad,
    #[serde(rename = "Q_G")]
    ReactiveGeneration,
    #[serde(rename = "Q_L")]
    ReactiveLoad,
    #[serde(rename = "P_re")]
    Renewable,
    #[serde(rename = "P_sync")]
    Synchronous,
    #[serde(rename = "J")]
    Inertia,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::ActiveGeneration,
        Quantity::ActiveLoad,
        Quantity::ReactiveGeneration,
        Quantity::ReactiveLoad,
        Quantity::Renewable,
        Quantity::Synchronous,
        Quantity::Inertia,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Quantity::ActiveGeneration => "P_G",
            Quantity::ActiveLoad => "P_L",
            Quantity::ReactiveGeneration => "Q_G",
            Quantity::ReactiveLoad => "Q_L",
            Quantity::Renewable => "P_re",
            Quantity::Synchronous => "P_sync",
            Quantity::Inertia => "J",
        }
    }
}

/// Square raster geometry shared by every field of a scenario set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub resolution: usize,
    /// Kernel standard deviation in cell widths.
    pub bandwidth: f64,
    pub min_x: f64,
    pub min_y: f64,
    /// Side length of the square bounding box.
    pub side: f64,
}

impl RasterGeometry {
    /// Bounding square around the first two embedding coordinates, padded by
    /// 5% of the larger extent.
    pub fn from_embedding(emb: &Embedding, resolution: usize, bandwidth: f64) -> Result<Self> {
        if emb.k() < 2 {
            return Err(Error::Dimension("rasterization needs a 2-D embedding".into()));
        }
        Self::from_points(&emb.coords, resolution, bandwidth)
    }

    pub fn from_points(coords: &DMatrix<f64>, resolution: usize, bandwidth: f64) -> Result<Self> {
        if resolution < 4 {
            return Err(Error::Dimension(format!("raster resolution {resolution} < 4")));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Dimension(format!("bandwidth {bandwidth} must be positive")));
        }
        if coords.ncols() < 2 || coords.nrows() == 0 {
            return Err(Error::Dimension("need at least one point with two coordinates".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding coordinate".into()));
        }
        let col = |c: usize| coords.column(c).iter().copied().collect::<Vec<f64>>();
        let (xs, ys) = (col(0), col(1));
        let ext = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let ((x0, x1), (y0, y1)) = (ext(&xs), ext(&ys));
        let mut side = (x1 - x0).max(y1 - y0);
        if side <= 0.0 {
            side = 1.0;
        }
        let side = side * 1.1;
        Ok(Self {
            resolution,
            bandwidth,
            min_x: 0.5 * (x0 + x1) - 0.5 * side,
            min_y: 0.5 * (y0 + y1) - 0.5 * side,
            side,
        })
    }

    pub fn cell_width(&self) -> f64 {
        self.side / self.resolution as f64
    }

    /// Continuous position in cell units, (column, row).
    fn to_cells(&self, x: f64, y: f64) -> (f64, f64) {
        let w = self.cell_width();
        ((x - self.min_x) / w, (y - self.min_y) / w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterField {
    /// `grid[(row, col)]`, row along the second coordinate.
    pub grid: DMatrix<f64>,
    pub geometry: RasterGeometry,
    pub quantity: Quantity,
}

impl RasterField {
    pub fn total(&self) -> f64 {
        self.grid.sum()
    }

    /// Cell values as CSV, one raster row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.grid.nrows() {
            let row: Vec<String> = self.grid.row(r).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": 1,
            "quantity": self.quantity.tag(),
            "resolution": self.geometry.resolution,
            "bandwidth": self.geometry.bandwidth,
            "min_x": self.geometry.min_x,
            "min_y": self.geometry.min_y,
            "max_x": self.geometry.min_x + self.geometry.side,
            "max_y": self.geometry.min_y + self.geometry.side,
        }))
        .expect("static json")
    }

    /// gnuplot script rendering `csv_name` as a heat map.
    pub fn gnuplot_script(&self, csv_name: &str) -> String {
        let g = &self.geometry;
        let w = g.cell_width();
        let mut s = String::new();
        let _ = writeln!(s, "set title '{}'", self.quantity.tag());
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set view map");
        let _ = writeln!(s, "set size square");
        let _ = writeln!(s, "set palette defined (-1 'blue', 0 'white', 1 'red')");
        let _ = writeln!(
            s,
            "plot '{csv_name}' matrix using ({x0}+($1+0.5)*{w}):({y0}+($2+0.5)*{w}):3 with image notitle",
            x0 = g.min_x,
            y0 = g.min_y
        );
        s
    }
}

/// Deposits each nodal value through a truncated isotropic Gaussian kernel,
/// renormalized per node so the raster conserves every node's value.
pub fn rasterize(
    geom: &RasterGeometry,
    coords: &DMatrix<f64>,
    values: &[f64],
    quantity: Quantity,
) -> Result<RasterField> {
    if coords.ncols() < 2 {
        return Err(Error::Dimension("rasterization needs two coordinates".into()));
    }
    if coords.nrows() != values.len() {
        return Err(Error::Dimension(format!(
            "{} nodal values for {} coordinates",
            values.len(),
            coords.nrows()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("nodal value at position {i}")));
    }
    let g = geom.resolution;
    let sigma = geom.bandwidth;
    let reach = 4.0 * sigma;
    let span = reach.ceil() as isize;
    let mut grid = DMatrix::zeros(g, g);
    let mut weights: Vec<(usize, usize, f64)> = Vec::new();
    for (node, &value) in values.iter().enumerate() {
        if value == 0.0 {
            continue;
        }
        let (fx, fy) = geom.to_cells(coords[(node, 0)], coords[(node, 1)]);
        let cx = (fx.floor() as isize).clamp(0, g as isize - 1);
        let cy = (fy.floor() as isize).clamp(0, g as isize - 1);
        weights.clear();
        let mut total = 0.0;
        for iy in (cy - span).max(0)..=(cy + span).min(g as isize - 1) {
            for ix in (cx - span).max(0)..=(cx + span).min(g as isize - 1) {
                let dx = ix as f64 + 0.5 - fx;
                let dy = iy as f64 + 0.5 - fy;
                let r2 = dx * dx + dy * dy;
                let own = ix == cx && iy == cy;
                if r2 > reach * reach && !own {
                    continue;
                }
                let w = (-r2 / (2.0 * sigma * sigma)).exp();
                if w > 0.0 || own {
                    // The containing cell always receives mass.
                    let w = if w > 0.0 { w } else { f64::MIN_POSITIVE };
                    weights.push((iy as usize, ix as usize, w));
                    total += w;
                }
            }
        }
        for &(r, c, w) in &weights {
            grid[(r, c)] += value * (w / total);
        }
    }
    Ok(RasterField {
        grid,
        geometry: *geom,
        quantity,
    })
}

fn same_grid(a: &RasterField, b: &RasterField) -> Result<()> {
    let (ga, gb) = (&a.geometry, &b.geometry);
    if ga.resolution != gb.resolution
        || ga.min_x != gb.min_x
        || ga.min_y != gb.min_y
        || ga.side != gb.side
        || a.grid.shape() != b.grid.shape()
    {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Field scaled to unit L1 mass; an all-zero field stays zero.
fn unit_mass(grid: &DMatrix<f64>) -> DMatrix<f64> {
    let mass: f64 = grid.iter().map(|v| v.abs()).sum();
    if mass > 0.0 {
        grid / mass
    } else {
        grid.clone()
    }
}

/// `max |I1' − I2'|` over cells, each field first scaled to unit mass.
pub fn norm_matching(a: &RasterField, b: &RasterField) -> Result<f64> {
    same_grid(a, b)?;
    let (na, nb) = (unit_mass(&a.grid), unit_mass(&b.grid));
    Ok(na
        .iter()
        .zip(nb.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L; `None` uses the largest cell magnitude of the pair.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

impl SsimParams {
    /// Stabilizers `(C1, C2)` for a field pair.
    pub fn constants(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
        let l = self.dynamic_range.unwrap_or_else(|| {
            let m = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            if m > 0.0 {
                m
            } else {
                1.0
            }
        });
        ((self.k1 * l).powi(2), (self.k2 * l).powi(2))
    }
}

/// Single-window SSIM over the whole raster.
pub fn ssim(a: &RasterField, b: &RasterField, p: &SsimParams) -> Result<f64> {
    same_grid(a, b)?;
    let (c1, c2) = p.constants(&a.grid, &b.grid);
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::DegenerateInput("SSIM constants must be positive".into()));
    }
    let n = a.grid.len() as f64;
    let mu1 = a.grid.sum() / n;
    let mu2 = b.grid.sum() / n;
    let (mut v1, mut v2, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.grid.iter().zip(b.grid.iter()) {
        let (dx, dy) = (x - mu1, y - mu2);
        v1 += dx * dx;
        v2 += dy * dy;
        cov += dx * dy;
    }
    let (v1, v2, cov) = (v1 / n, v2 / n, cov / n);
    let num = (2.0 * (mu1 * mu2) + c1) * (2.0 * cov + c2);
    let den = (mu1 * mu1 + mu2 * mu2 + c1) * (v1 + v2 + c2);
    Ok(num / den)
}

#[cfg(test)]
mod tests;
