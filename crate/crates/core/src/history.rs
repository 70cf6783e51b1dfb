//! Convected non-local history transport.
//!
//! The extra stress, accumulated plastic strain and initial-position marker
//! live on a fixed cloud of sample points (the quadrature points of the
//! grid). Each step, every sample point's material content moves downstream
//! with the flow; instead of tracking particles, the field points are
//! convected once and every fixed source point rebuilds its value as a
//! Gaussian-weighted average of the convected neighbours. Advection and
//! non-local smoothing happen in the same pass, so there is no separate
//! advection solve and no remap error accumulation beyond the kernel width.

use crate::error::{Result, SimError};
use crate::mesh::{GridMesh, Located, QuadratureRule};
use crate::ns::FieldState;

/// Fixed sample-point positions (one per quadrature point of the 2x2 rule).
#[derive(Debug, Clone)]
pub struct SamplePointCloud {
    pub positions: Vec<[f64; 2]>,
}

impl SamplePointCloud {
    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

/// Sample cloud at the 2x2 Gauss points of every element, in element-major
/// order (the constitutive update uses the same ordering).
pub fn build_sample_cloud(mesh: &GridMesh) -> SamplePointCloud {
    let rule = QuadratureRule::gauss_2x2();
    let mut positions = Vec::with_capacity(mesh.element_count * 4);
    for e in 0..mesh.element_count {
        for &(xi, eta, _) in &rule.points {
            positions.push(mesh.ref_to_physical(e, xi, eta));
        }
    }
    SamplePointCloud { positions }
}

/// Per-sample-point history:  extra stress (s_xx, s_yy, s_xy), accumulated
/// effective plastic strain, and the initial vertical coordinate marker that
/// carries depth-dependent strength through the flow.
#[derive(Debug, Clone)]
pub struct HistoryState {
    pub sigma: Vec<[f64; 3]>,
    pub xi: Vec<f64>,
    pub y0: Vec<f64>,
    pub time: f64,
}

impl HistoryState {
    /// Virgin state: zero stress and plastic strain, y0 from the current
    /// sample positions.
    pub fn initial(cloud: &SamplePointCloud) -> Self {
        Self {
            sigma: vec![[0.0; 3]; cloud.count()],
            xi: vec![0.0; cloud.count()],
            y0: cloud.positions.iter().map(|p| p[1]).collect(),
            time: 0.0,
        }
    }

    pub fn assert_sized(&self, cloud: &SamplePointCloud) -> Result<()> {
        if self.sigma.len() == cloud.count()
            && self.xi.len() == cloud.count()
            && self.y0.len() == cloud.count()
        {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(
                "history arrays inconsistent with sample cloud".into(),
            ))
        }
    }
}

/// Gaussian kernel parameters: `r0` sets the width, `re` cuts the support.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct KernelParams {
    pub r0: f64,
    pub re: f64,
}

impl KernelParams {
    pub fn defaults_for(mesh: &GridMesh) -> Self {
        let h = mesh.h_ele();
        Self { r0: h, re: 2.5 * h }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r0 > 0.0 && self.re >= self.r0 {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!(
                "kernel needs r0 > 0 and re >= r0, got r0={}, re={}",
                self.r0, self.re
            )))
        }
    }
}

/// Truncated Gaussian weight.
pub fn gaussian_weight(r: f64, params: &KernelParams) -> f64 {
    if r > params.re {
        0.0
    } else {
        let s = r / params.r0;
        (-(s * s)).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// Diagnostics from one transport pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransportStats {
    /// Source points whose neighbourhood was empty (value taken from the
    /// nearest convected point). Healthy runs report zero.
    pub empty_fallbacks: usize,
    /// Convected positions clamped back onto the grid boundary.
    pub clamped: usize,
}

/// Advance every sample position by its interpolated velocity; positions
/// leaving the grid are clamped to the boundary.
pub fn convect_positions(
    cloud: &SamplePointCloud,
    mesh: &GridMesh,
    state: &FieldState,
    dt: f64,
) -> (SamplePointCloud, usize) {
    let x1 = mesh.x0 + mesh.nx as f64 * mesh.hx;
    let y1 = mesh.y0 + mesh.ny as f64 * mesh.hy;
    let mut clamped = 0;
    let positions = cloud
        .positions
        .iter()
        .map(|&p| {
            let u = match mesh.locate_point(p) {
                Located::Inside { element, xi, eta } => state.velocity_at(mesh, element, xi, eta),
                Located::Outside => [0.0; 2],
            };
            let mut q = [p[0] + u[0] * dt, p[1] + u[1] * dt];
            if q[0] < mesh.x0 || q[0] > x1 || q[1] < mesh.y0 || q[1] > y1 {
                q[0] = q[0].clamp(mesh.x0, x1);
                q[1] = q[1].clamp(mesh.y0, y1);
                clamped += 1;
            }
            q
        })
        .collect();
    (SamplePointCloud { positions }, clamped)
}

/// Uniform-cell spatial bins over a point set.
struct BinGrid {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<u32>>,
}

impl BinGrid {
    fn build(points: &[[f64; 2]], cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 2];
            hi = [1.0; 2];
        }
        let cell = cell.max(1e-12);
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut bins = vec![Vec::new(); nx * ny];
        for (i, p) in points.iter().enumerate() {
            let bx = (((p[0] - lo[0]) / cell) as usize).min(nx - 1);
            let by = (((p[1] - lo[1]) / cell) as usize).min(ny - 1);
            bins[by * nx + bx].push(i as u32);
        }
        Self {
            x0: lo[0],
            y0: lo[1],
            cell,
            nx,
            ny,
            bins,
        }
    }

    /// Visit candidate ids within radius `r` of `center` (superset; caller
    /// filters by exact distance). Visit order is bin-major then insertion,
    /// which is deterministic.
    fn for_candidates(&self, center: [f64; 2], r: f64, mut visit: impl FnMut(u32)) {
        let bx0 = (((center[0] - r - self.x0) / self.cell).floor() as isize).max(0) as usize;
        let bx1 = ((((center[0] + r - self.x0) / self.cell).floor() as isize).max(0) as usize)
            .min(self.nx - 1);
        let by0 = (((center[1] - r - self.y0) / self.cell).floor() as isize).max(0) as usize;
        let by1 = ((((center[1] + r - self.y0) / self.cell).floor() as isize).max(0) as usize)
            .min(self.ny - 1);
        if center[0] + r < self.x0 || center[1] + r < self.y0 {
            return;
        }
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                for &id in &self.bins[by * self.nx + bx] {
                    visit(id);
                }
            }
        }
    }
}

/// Ids of all cloud points within distance `re` of `center`, ascending.
pub fn neighbor_query(cloud: &SamplePointCloud, center: [f64; 2], re: f64) -> Vec<usize> {
    let bins = BinGrid::build(&cloud.positions, re.max(1e-12));
    let mut out = Vec::new();
    bins.for_candidates(center, re, |id| {
        let p = cloud.positions[id as usize];
        let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
        if d2 <= re * re {
            out.push(id as usize);
        }
    });
    out.sort_unstable();
    out
}

/// One transport pass: convect the field points with the current velocity,
/// then rebuild every channel at the fixed source points as the
/// weight-normalized sum over convected neighbours.
pub fn nonlocal_transport(
    history: &HistoryState,
    cloud: &SamplePointCloud,
    mesh: &GridMesh,
    state: &FieldState,
    dt: f64,
    params: &KernelParams,
) -> Result<(HistoryState, TransportStats)> {
    params.validate()?;
    history.assert_sized(cloud)?;
    let (convected, clamped) = convect_positions(cloud, mesh, state, dt);
    let bins = BinGrid::build(&convected.positions, params.re);

    let n = cloud.count();
    let mut out = HistoryState {
        sigma: vec![[0.0; 3]; n],
        xi: vec![0.0; n],
        y0: vec![0.0; n],
        time: history.time + dt,
    };
    let mut stats = TransportStats {
        empty_fallbacks: 0,
        clamped,
    };

    for m in 0..n {
        let src = cloud.positions[m];
        let mut wsum = 0.0;
        let mut acc = [0.0f64; 5];
        bins.for_candidates(src, params.re, |id| {
            let j = id as usize;
            let q = convected.positions[j];
            let r = ((q[0] - src[0]).powi(2) + (q[1] - src[1]).powi(2)).sqrt();
            let w = gaussian_weight(r, params);
            if w > 0.0 {
                wsum += w;
                acc[0] += w * history.sigma[j][0];
                acc[1] += w * history.sigma[j][1];
                acc[2] += w * history.sigma[j][2];
                acc[3] += w * history.xi[j];
                acc[4] += w * history.y0[j];
            }
        });
        if wsum > 0.0 {
            out.sigma[m] = [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum];
            out.xi[m] = acc[3] / wsum;
            out.y0[m] = acc[4] / wsum;
        } else {
            // empty neighbourhood: copy the nearest convected point
            stats.empty_fallbacks += 1;
            let mut best = 0usize;
            let mut best_d2 = f64::INFINITY;
            for (j, q) in convected.positions.iter().enumerate() {
                let d2 = (q[0] - src[0]).powi(2) + (q[1] - src[1]).powi(2);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = j;
                }
            }
            out.sigma[m] = history.sigma[best];
            out.xi[m] = history.xi[best];
            out.y0[m] = history.y0[best];
        }
    }
    Ok((out, stats))
}

/// Brute-force reference of the same pass; O(N^2), oracle for tests.
pub fn nonlocal_transport_bruteforce(
    history: &HistoryState,
    cloud: &SamplePointCloud,
    mesh: &GridMesh,
    state: &FieldState,
    dt: f64,
    params: &KernelParams,
) -> HistoryState {
    let (convected, _) = convect_positions(cloud, mesh, state, dt);
    let n = cloud.count();
    let mut out = HistoryState {
        sigma: vec![[0.0; 3]; n],
        xi: vec![0.0; n],
        y0: vec![0.0; n],
        time: history.time + dt,
    };
    for m in 0..n {
        let src = cloud.positions[m];
        let mut wsum = 0.0;
        let mut acc = [0.0f64; 5];
        for j in 0..n {
            let q = convected.positions[j];
            let r = ((q[0] - src[0]).powi(2) + (q[1] - src[1]).powi(2)).sqrt();
            let w = gaussian_weight(r, params);
            wsum += w;
            acc[0] += w * history.sigma[j][0];
            acc[1] += w * history.sigma[j][1];
            acc[2] += w * history.sigma[j][2];
            acc[3] += w * history.xi[j];
            acc[4] += w * history.y0[j];
        }
        if wsum > 0.0 {
            out.sigma[m] = [acc[0] / wsum, acc[1] / wsum, acc[2] / wsum];
            out.xi[m] = acc[3] / wsum;
            out.y0[m] = acc[4] / wsum;
        } else {
            let mut best = 0usize;
            let mut best_d2 = f64::INFINITY;
            for (j, q) in convected.positions.iter().enumerate() {
                let d2 = (q[0] - src[0]).powi(2) + (q[1] - src[1]).powi(2);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = j;
                }
            }
            out.sigma[m] = history.sigma[best];
            out.xi[m] = history.xi[best];
            out.y0[m] = history.y0[best];
        }
    }
    out
}
