//! Rigid-body coupling on the fixed grid: cutting-point detection between the
//! body boundary and grid edges, velocity constraint rows for the three
//! friction models, the augmented saddle-point solve, and the resultant
//! coupling force.
//!
//! Grid nodes covered by the body are pinned to the body velocity; edges cut
//! by the boundary get interpolated velocity constraints at the cutting
//! points. The constraints are enforced with Lagrange multipliers appended to
//! the flow system, and the multipliers are read back as the coupling
//! reactions.

use crate::error::{Result, SimError};
use crate::linsys::{SparseLu, TripletMatrix};
use crate::mesh::GridMesh;
use crate::ns::{FieldState, LinearSystem};

#[derive(Debug, Clone, PartialEq)]
pub enum BodyShape {
    Circle { center: [f64; 2], radius: f64 },
    /// Open or closed polyline (closed when first and last vertex coincide).
    Polyline { vertices: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionModel {
    NonSlip,
    Slip,
    Coulomb,
}

#[derive(Debug, Clone)]
pub struct RigidBody {
    pub shape: BodyShape,
    /// Prescribed rigid translation velocity.
    pub velocity: [f64; 2],
    pub friction: FrictionModel,
    pub mu_fric: f64,
}

impl RigidBody {
    pub fn validate(&self) -> Result<()> {
        match &self.shape {
            BodyShape::Circle { radius, .. } if !(*radius > 0.0) => {
                return Err(SimError::InvalidArgument("circle radius must be positive".into()))
            }
            BodyShape::Polyline { vertices } if vertices.len() < 2 => {
                return Err(SimError::InvalidArgument(
                    "polyline needs at least two vertices".into(),
                ))
            }
            _ => {}
        }
        if self.mu_fric < 0.0 {
            return Err(SimError::InvalidArgument(
                "friction coefficient must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn translated(&self, d: [f64; 2]) -> Self {
        let mut out = self.clone();
        match &mut out.shape {
            BodyShape::Circle { center, .. } => {
                center[0] += d[0];
                center[1] += d[1];
            }
            BodyShape::Polyline { vertices } => {
                for v in vertices.iter_mut() {
                    v[0] += d[0];
                    v[1] += d[1];
                }
            }
        }
        out
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match &self.shape {
            BodyShape::Circle { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            BodyShape::Polyline { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for i in 0..2 {
                        lo[i] = lo[i].min(v[i]);
                        hi[i] = hi[i].max(v[i]);
                    }
                }
                (lo, hi)
            }
        }
    }
}

/// Intersection of the body boundary with one grid edge.
#[derive(Debug, Clone, Copy)]
pub struct CuttingPoint {
    /// Grid node pair of the cut edge (the lower-index node is `L`).
    pub edge: (usize, usize),
    /// Weight of the `L` node: position = alpha*P_L + (1-alpha)*P_R.
    pub alpha: f64,
    pub position: [f64; 2],
    pub normal: [f64; 2],
    pub tangent: [f64; 2],
}

/// What a constraint row represents; used to map multipliers to forces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// One velocity component pinned at a cutting point (non-slip).
    CutComponent { point: usize, axis: usize },
    /// Normal velocity pinned at a cutting point (slip / coulomb).
    CutNormal { point: usize },
    /// One velocity component of an interior node pinned to the body motion.
    InsidePin { node: usize, axis: usize },
}

#[derive(Debug, Clone)]
pub struct ConstraintRow {
    /// (velocity dof, coefficient); at most four entries.
    pub cols: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: RowKind,
}

/// Constraint system A*u = b plus solve products.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub points: Vec<CuttingPoint>,
    pub inside_nodes: Vec<usize>,
    /// Prescribed body velocity the rows were built against.
    pub body_velocity: [f64; 2],
    /// Multipliers, populated by a saddle solve.
    pub lambda: Option<Vec<f64>>,
    /// Tangential friction force per cutting point (coulomb only).
    pub friction_force: Option<Vec<f64>>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self {
            rows: Vec::new(),
            points: Vec::new(),
            inside_nodes: Vec::new(),
            body_velocity: [0.0; 2],
            lambda: None,
            friction_force: None,
        }
    }
}

const ALPHA_MARGIN: f64 = 1e-9;

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / n, v[1] / n]
}

/// Roots of |a + s d - c|^2 = r^2 in s, filtered to [0, 1].
fn circle_segment_params(a: [f64; 2], b: [f64; 2], c: [f64; 2], r: f64) -> Vec<f64> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let m = [a[0] - c[0], a[1] - c[1]];
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = 2.0 * (m[0] * d[0] + m[1] * d[1]);
    let qc = m[0] * m[0] + m[1] * m[1] - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    let scale = (qa * r).max(1e-30);
    let mut out = Vec::new();
    if disc < -1e-12 * scale * scale {
        return out;
    }
    if disc.abs() <= 1e-12 * scale * scale {
        out.push(-qb / (2.0 * qa)); // tangency, single root
    } else {
        let sq = disc.sqrt();
        out.push((-qb - sq) / (2.0 * qa));
        out.push((-qb + sq) / (2.0 * qa));
    }
    out.retain(|s| (-1e-12..=1.0 + 1e-12).contains(s));
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    out
}

/// Cuts of the body boundary on the segment a-b, as (s, normal, tangent)
/// with s the parameter from a to b.
fn cuts_on_segment(body: &RigidBody, a: [f64; 2], b: [f64; 2]) -> Vec<(f64, [f64; 2], [f64; 2])> {
    let mut out = Vec::new();
    match &body.shape {
        BodyShape::Circle { center, radius } => {
            for s in circle_segment_params(a, b, *center, *radius) {
                let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                let n = unit([p[0] - center[0], p[1] - center[1]]);
                out.push((s, n, [-n[1], n[0]]));
            }
        }
        BodyShape::Polyline { vertices } => {
            let closed = vertices.len() > 2 && {
                let f = vertices[0];
                let l = vertices[vertices.len() - 1];
                (f[0] - l[0]).abs() < 1e-12 && (f[1] - l[1]).abs() < 1e-12
            };
            // orientation sign so closed-polygon normals point outward
            let orient = if closed {
                let mut area2 = 0.0;
                for w in vertices.windows(2) {
                    area2 += w[0][0] * w[1][1] - w[1][0] * w[0][1];
                }
                if area2 >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                1.0
            };
            for w in vertices.windows(2) {
                let (c, d) = (w[0], w[1]);
                let e1 = [b[0] - a[0], b[1] - a[1]];
                let e2 = [d[0] - c[0], d[1] - c[1]];
                let den = e1[0] * e2[1] - e1[1] * e2[0];
                if den.abs() < 1e-14 {
                    continue; // parallel or degenerate
                }
                let rx = c[0] - a[0];
                let ry = c[1] - a[1];
                let s = (rx * e2[1] - ry * e2[0]) / den;
                let q = (rx * e1[1] - ry * e1[0]) / den;
                if (-1e-12..=1.0 + 1e-12).contains(&s) && (-1e-12..=1.0 + 1e-12).contains(&q) {
                    let t = unit(e2);
                    let n = [orient * t[1], -orient * t[0]];
                    out.push((s, n, t));
                }
            }
            out.sort_by(|x, y| x.0.total_cmp(&y.0));
            out.dedup_by(|x, y| (x.0 - y.0).abs() < 1e-9);
        }
    }
    out
}

/// Signed distance to the body boundary (negative inside). Open polylines
/// have no interior; their distance is always non-negative.
pub fn signed_distance(body: &RigidBody, x: [f64; 2]) -> f64 {
    match &body.shape {
        BodyShape::Circle { center, radius } => {
            ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt() - radius
        }
        BodyShape::Polyline { vertices } => {
            let mut dist = f64::INFINITY;
            for w in vertices.windows(2) {
                let (c, d) = (w[0], w[1]);
                let e = [d[0] - c[0], d[1] - c[1]];
                let len2 = e[0] * e[0] + e[1] * e[1];
                let t = if len2 > 0.0 {
                    (((x[0] - c[0]) * e[0] + (x[1] - c[1]) * e[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let p = [c[0] + t * e[0], c[1] + t * e[1]];
                dist = dist.min(((x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2)).sqrt());
            }
            let closed = vertices.len() > 2 && {
                let f = vertices[0];
                let l = vertices[vertices.len() - 1];
                (f[0] - l[0]).abs() < 1e-12 && (f[1] - l[1]).abs() < 1e-12
            };
            if closed && winding_contains(vertices, x) {
                -dist
            } else {
                dist
            }
        }
    }
}

fn winding_contains(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut crossings = 0;
    for w in vertices.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let t = (p[1] - a[1]) / (b[1] - a[1]);
            let xc = a[0] + t * (b[0] - a[0]);
            if xc > p[0] {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

/// All cutting points between the body boundary and grid edges.
pub fn find_cutting_points(body: &RigidBody, mesh: &GridMesh) -> Vec<CuttingPoint> {
    let (lo, hi) = body.bounding_box();
    let i0 = (((lo[0] - mesh.x0) / mesh.hx).floor() as isize - 1).max(0) as usize;
    let i1 = ((((hi[0] - mesh.x0) / mesh.hx).ceil() as isize) + 1).min(mesh.nx as isize) as usize;
    let j0 = (((lo[1] - mesh.y0) / mesh.hy).floor() as isize - 1).max(0) as usize;
    let j1 = ((((hi[1] - mesh.y0) / mesh.hy).ceil() as isize) + 1).min(mesh.ny as isize) as usize;

    let node = |i: usize, j: usize| j * (mesh.nx + 1) + i;
    let mut out = Vec::new();
    let mut push_cuts = |n_l: usize, n_r: usize| {
        let a = mesh.node_pos(n_l);
        let b = mesh.node_pos(n_r);
        for (s, normal, tangent) in cuts_on_segment(body, a, b) {
            let s = s.clamp(ALPHA_MARGIN, 1.0 - ALPHA_MARGIN);
            let alpha = 1.0 - s;
            out.push(CuttingPoint {
                edge: (n_l, n_r),
                alpha,
                position: [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])],
                normal,
                tangent,
            });
        }
    };
    // horizontal edges
    for j in j0..=j1 {
        for i in i0..i1.min(mesh.nx) {
            push_cuts(node(i, j), node(i + 1, j));
        }
    }
    // vertical edges
    for j in j0..j1.min(mesh.ny) {
        for i in i0..=i1 {
            push_cuts(node(i, j), node(i, j + 1));
        }
    }
    out
}

/// Nodes covered by the body (boundary nodes count as inside).
pub fn find_inside_nodes(body: &RigidBody, mesh: &GridMesh) -> Vec<usize> {
    let tol = 1e-12 * mesh.h_ele();
    let (lo, hi) = body.bounding_box();
    let mut out = Vec::new();
    for n in 0..mesh.node_count {
        let p = mesh.node_pos(n);
        if p[0] < lo[0] - tol || p[0] > hi[0] + tol || p[1] < lo[1] - tol || p[1] > hi[1] + tol {
            continue;
        }
        if signed_distance(body, p) <= tol {
            out.push(n);
        }
    }
    out
}

/// Build constraint rows for cutting points and covered nodes.
pub fn build_constraints(
    points: &[CuttingPoint],
    inside: &[usize],
    body: &RigidBody,
) -> ConstraintSet {
    let us = body.velocity;
    let mut rows: Vec<ConstraintRow> = Vec::new();

    let push_dedup = |row: ConstraintRow, rows: &mut Vec<ConstraintRow>| {
        let duplicate = rows.iter().any(|r| {
            r.cols.len() == row.cols.len()
                && (r.rhs - row.rhs).abs() <= 1e-12 * (1.0 + row.rhs.abs())
                && r.cols
                    .iter()
                    .zip(&row.cols)
                    .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 1e-12)
        });
        if !duplicate {
            rows.push(row);
        }
    };

    for (pi, cp) in points.iter().enumerate() {
        let (nl, nr) = cp.edge;
        let a = cp.alpha;
        match body.friction {
            FrictionModel::NonSlip => {
                for axis in 0..2 {
                    let mut cols = Vec::with_capacity(2);
                    if a.abs() > 0.0 {
                        cols.push((2 * nl + axis, a));
                    }
                    if (1.0 - a).abs() > 0.0 {
                        cols.push((2 * nr + axis, 1.0 - a));
                    }
                    cols.sort_by_key(|c| c.0);
                    push_dedup(
                        ConstraintRow {
                            cols,
                            rhs: us[axis],
                            kind: RowKind::CutComponent { point: pi, axis },
                        },
                        &mut rows,
                    );
                }
            }
            FrictionModel::Slip | FrictionModel::Coulomb => {
                let mut cols = Vec::with_capacity(4);
                for (node, wgt) in [(nl, a), (nr, 1.0 - a)] {
                    for axis in 0..2 {
                        let coef = wgt * cp.normal[axis];
                        if coef != 0.0 {
                            cols.push((2 * node + axis, coef));
                        }
                    }
                }
                cols.sort_by_key(|c| c.0);
                push_dedup(
                    ConstraintRow {
                        cols,
                        rhs: us[0] * cp.normal[0] + us[1] * cp.normal[1],
                        kind: RowKind::CutNormal { point: pi },
                    },
                    &mut rows,
                );
            }
        }
    }
    for &n in inside {
        for axis in 0..2 {
            push_dedup(
                ConstraintRow {
                    cols: vec![(2 * n + axis, 1.0)],
                    rhs: us[axis],
                    kind: RowKind::InsidePin { node: n, axis },
                },
                &mut rows,
            );
        }
    }
    ConstraintSet {
        rows,
        points: points.to_vec(),
        inside_nodes: inside.to_vec(),
        body_velocity: us,
        lambda: None,
        friction_force: None,
    }
}

/// Solution of the augmented system.
#[derive(Debug, Clone)]
pub struct SaddleSolution {
    /// Increment over the (velocity, pressure) unknowns.
    pub increment: Vec<f64>,
    pub lambda: Vec<f64>,
}

struct KktFactor {
    lu: SparseLu,
    n: usize,
    kappa: f64,
    /// Constraint rows kept in the augmented system (rows whose dofs are all
    /// Dirichlet-pinned are dropped; their multipliers stay zero).
    active: Vec<usize>,
}

fn velocity_value(state: &FieldState, dof: usize) -> f64 {
    state.u[dof / 2][dof % 2]
}

fn constraint_gap(rows: &[ConstraintRow], state: &FieldState) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            let au: f64 = r.cols.iter().map(|&(d, c)| c * velocity_value(state, d)).sum();
            r.rhs - au
        })
        .collect()
}

fn factor_kkt(system: &LinearSystem, rows: &[ConstraintRow]) -> Result<KktFactor> {
    let n = system.n_dofs();
    let n_rows = rows.len();

    // scale constraint rows to the stiffness magnitude for better pivoting
    let mut diag_sum = 0.0;
    let mut diag_cnt = 0usize;
    for (r, c, v) in system.matrix.entries() {
        if r == c && r < 2 * system.node_count {
            diag_sum += v.abs();
            diag_cnt += 1;
        }
    }
    let kappa = if diag_cnt > 0 && diag_sum > 0.0 {
        diag_sum / diag_cnt as f64
    } else {
        1.0
    };

    // a row whose dofs are all pinned is fully determined by the boundary
    // conditions; keep it out of the augmented system
    let active: Vec<usize> = (0..n_rows)
        .filter(|&ri| rows[ri].cols.iter().any(|&(dof, _)| !system.pinned[dof]))
        .collect();
    let dim = n + active.len();
    let mut kkt = TripletMatrix::with_capacity(dim, system.matrix.nnz_entries() + 8 * active.len());
    for (r, c, v) in system.matrix.entries() {
        kkt.push(r, c, v);
    }
    for (slot, &ri) in active.iter().enumerate() {
        for &(dof, coef) in &rows[ri].cols {
            kkt.push(n + slot, dof, coef * kappa);
            // pinned rows stay identity rows
            if !system.pinned[dof] {
                kkt.push(dof, n + slot, coef * kappa);
            }
        }
    }
    let lu = SparseLu::factorize(&kkt).map_err(|e| match e {
        SimError::SolverFailure(msg) => SimError::SolverFailure(format!(
            "saddle factorization failed ({msg}); suspect rows: {:?}",
            suspect_duplicate_rows(rows)
        )),
        other => other,
    })?;
    Ok(KktFactor {
        lu,
        n,
        kappa,
        active,
    })
}

fn suspect_duplicate_rows(rows: &[ConstraintRow]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (&rows[i], &rows[j]);
            if a.cols.len() == b.cols.len()
                && a.cols
                    .iter()
                    .zip(&b.cols)
                    .all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() < 1e-8)
            {
                out.push((i, j));
            }
        }
    }
    out
}

fn kkt_solve(
    factor: &KktFactor,
    rhs: &[f64],
    gap: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut full = vec![0.0; factor.n + factor.active.len()];
    full[..factor.n].copy_from_slice(rhs);
    for (slot, &ri) in factor.active.iter().enumerate() {
        full[factor.n + slot] = gap[ri] * factor.kappa;
    }
    let x = factor.lu.solve(&full)?;
    let increment = x[..factor.n].to_vec();
    // multipliers are stored with the sign that makes F = -sum(lambda*n)
    // the force exerted by the material on the body
    let mut lambda = vec![0.0; gap.len()];
    for (slot, &ri) in factor.active.iter().enumerate() {
        lambda[ri] = -x[factor.n + slot] * factor.kappa;
    }
    Ok((increment, lambda))
}

fn check_constraints(
    rows: &[ConstraintRow],
    state: &FieldState,
    increment: &[f64],
) -> Result<()> {
    let mut worst = 0.0f64;
    let mut b_inf = 0.0f64;
    for row in rows {
        let mut au = 0.0;
        for &(d, c) in &row.cols {
            au += c * (velocity_value(state, d) + increment[d]);
        }
        worst = worst.max((au - row.rhs).abs());
        b_inf = b_inf.max(row.rhs.abs());
    }
    if worst <= 1e-8 * (1.0 + b_inf) {
        Ok(())
    } else {
        Err(SimError::SolverFailure(format!(
            "constraints violated after solve: max residual {worst:.3e}"
        )))
    }
}

/// Solve the augmented system [K A^T; A 0][x; lambda] = [rhs; b - A u^t].
///
/// The multipliers are stored back into `constraints`.
pub fn solve_saddle(
    system: &LinearSystem,
    constraints: &mut ConstraintSet,
    rhs: &[f64],
    state: &FieldState,
) -> Result<SaddleSolution> {
    if constraints.rows.is_empty() {
        let lu = SparseLu::factorize(&system.matrix)?;
        let increment = lu.solve(rhs)?;
        constraints.lambda = Some(Vec::new());
        return Ok(SaddleSolution {
            increment,
            lambda: Vec::new(),
        });
    }
    let factor = factor_kkt(system, &constraints.rows)?;
    let gap = constraint_gap(&constraints.rows, state);
    let (increment, lambda) = kkt_solve(&factor, rhs, &gap)?;
    check_constraints(&constraints.rows, state, &increment)?;
    constraints.lambda = Some(lambda.clone());
    Ok(SaddleSolution { increment, lambda })
}

/// Slip solve plus one friction correction pass: the normal reactions from
/// the first solve generate tangential forces f = -sign(u_t)*mu*lambda at
/// each cutting point, distributed to the cut edge nodes, and the system is
/// solved once more with the extra force (same factorization).
pub fn coulomb_iteration(
    system: &LinearSystem,
    constraints: &mut ConstraintSet,
    rhs: &[f64],
    state: &FieldState,
    mu_fric: f64,
) -> Result<SaddleSolution> {
    if constraints.rows.is_empty() {
        return solve_saddle(system, constraints, rhs, state);
    }
    let factor = factor_kkt(system, &constraints.rows)?;
    let gap = constraint_gap(&constraints.rows, state);
    let (increment, lambda) = kkt_solve(&factor, rhs, &gap)?;

    // friction forces per cutting point from the first pass
    let mut friction = vec![0.0; constraints.points.len()];
    if mu_fric != 0.0 {
        for (ri, row) in constraints.rows.iter().enumerate() {
            let RowKind::CutNormal { point } = row.kind else {
                continue;
            };
            let cp = &constraints.points[point];
            let (nl, nr) = cp.edge;
            let a = cp.alpha;
            let mut u_int = [0.0; 2];
            for axis in 0..2 {
                let ul = state.u[nl][axis] + increment[2 * nl + axis];
                let ur = state.u[nr][axis] + increment[2 * nr + axis];
                u_int[axis] = a * ul + (1.0 - a) * ur;
            }
            let us = constraints.body_velocity;
            let rel = [u_int[0] - us[0], u_int[1] - us[1]];
            let u_t = rel[0] * cp.tangent[0] + rel[1] * cp.tangent[1];
            let sign = if u_t > 0.0 {
                1.0
            } else if u_t < 0.0 {
                -1.0
            } else {
                0.0
            };
            friction[point] = -sign * mu_fric * lambda[ri];
        }
    }

    let all_zero = friction.iter().all(|f| *f == 0.0);
    let (increment, lambda) = if all_zero {
        (increment, lambda)
    } else {
        let mut rhs2 = rhs.to_vec();
        for (pi, cp) in constraints.points.iter().enumerate() {
            let f = friction[pi];
            if f == 0.0 {
                continue;
            }
            let (nl, nr) = cp.edge;
            for axis in 0..2 {
                rhs2[2 * nl + axis] += cp.alpha * f * cp.tangent[axis];
                rhs2[2 * nr + axis] += (1.0 - cp.alpha) * f * cp.tangent[axis];
            }
        }
        kkt_solve(&factor, &rhs2, &gap)?
    };
    check_constraints(&constraints.rows, state, &increment)?;
    constraints.lambda = Some(lambda.clone());
    constraints.friction_force = Some(friction);
    Ok(SaddleSolution { increment, lambda })
}

/// Total reaction exerted by the material on the body, from the multipliers
/// (plus friction forces for the coulomb model).
pub fn resultant_force(constraints: &ConstraintSet) -> Result<[f64; 2]> {
    let lambda = constraints
        .lambda
        .as_ref()
        .ok_or_else(|| SimError::StateError("resultant_force called before any solve".into()))?;
    let mut f = [0.0; 2];
    for (ri, row) in constraints.rows.iter().enumerate() {
        let l = lambda[ri];
        match row.kind {
            RowKind::CutComponent { axis, .. } | RowKind::InsidePin { axis, .. } => {
                f[axis] -= l;
            }
            RowKind::CutNormal { point } => {
                f[0] -= l * constraints.points[point].normal[0];
                f[1] -= l * constraints.points[point].normal[1];
            }
        }
    }
    if let Some(fric) = &constraints.friction_force {
        for (pi, &fv) in fric.iter().enumerate() {
            f[0] -= fv * constraints.points[pi].tangent[0];
            f[1] -= fv * constraints.points[pi].tangent[1];
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{solve_dense, TripletMatrix};
    use crate::mesh::{build_grid, Rect};
    use crate::ns::{
        assemble_system, dof_p, dof_ux, dof_uy, total_dofs, DirichletBcs, NsInput,
        PhaseProperties, UniformProperties, ZeroStress,
    };

    fn circle(center: [f64; 2], radius: f64, friction: FrictionModel) -> RigidBody {
        RigidBody {
            shape: BodyShape::Circle { center, radius },
            velocity: [0.0; 2],
            friction,
            mu_fric: 0.0,
        }
    }

    #[test]
    fn circle_cut_on_horizontal_segment() {
        let body = circle([0.0, 0.0], 0.5, FrictionModel::NonSlip);
        let cuts = cuts_on_segment(&body, [0.4, 0.0], [0.6, 0.0]);
        assert_eq!(cuts.len(), 1);
        let (s, n, t) = cuts[0];
        assert!((s - 0.5).abs() < 1e-12);
        assert!((n[0] - 1.0).abs() < 1e-12 && n[1].abs() < 1e-12);
        assert!((n[0] * t[0] + n[1] * t[1]).abs() < 1e-12);
        // alpha follows from s: position = alpha*P_L + (1-alpha)*P_R
        let alpha = 1.0 - s;
        let px = alpha * 0.4 + (1.0 - alpha) * 0.6;
        assert!((px - 0.5).abs() < 1e-12);
    }

    #[test]
    fn edge_inside_circle_yields_no_cut_and_inside_nodes() {
        let mesh = build_grid(10, 10, Rect::unit()).unwrap();
        let body = circle([0.5, 0.5], 0.35, FrictionModel::NonSlip);
        let cuts = cuts_on_segment(&body, [0.45, 0.5], [0.55, 0.5]);
        assert!(cuts.is_empty());
        let inside = find_inside_nodes(&body, &mesh);
        assert!(inside.contains(&(5 * 11 + 5)));
        // both endpoints of the interior edge are inside
        for p in [[0.4_f64, 0.5], [0.6, 0.5]] {
            assert!(signed_distance(&body, p) < 0.0);
        }
    }

    #[test]
    fn tangent_circle_gives_single_cut() {
        let body = circle([0.0, 0.0], 0.5, FrictionModel::NonSlip);
        // segment tangent to the circle at (0, 0.5)
        let cuts = cuts_on_segment(&body, [-0.3, 0.5], [0.3, 0.5]);
        assert_eq!(cuts.len(), 1);
        let (s, n, _) = cuts[0];
        assert!((s - 0.5).abs() < 1e-9);
        assert!((n[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grazing_chord_reports_both_crossings() {
        let body = circle([0.0, 0.0], 0.5, FrictionModel::NonSlip);
        let cuts = cuts_on_segment(&body, [-0.6, 0.4], [0.6, 0.4]);
        assert_eq!(cuts.len(), 2);
    }

    #[test]
    fn plate_cuts_grid_rows() {
        let mesh = build_grid(10, 10, Rect::unit()).unwrap();
        let body = RigidBody {
            shape: BodyShape::Polyline {
                vertices: vec![[0.55, 0.22], [0.55, 0.78]],
            },
            velocity: [0.1, 0.0],
            friction: FrictionModel::NonSlip,
            mu_fric: 0.0,
        };
        let cuts = find_cutting_points(&body, &mesh);
        // the vertical segment crosses horizontal edges of rows y=0.3..0.7
        assert_eq!(cuts.len(), 5);
        for c in &cuts {
            assert!((c.position[0] - 0.55).abs() < 1e-12);
            let pl = mesh.node_pos(c.edge.0);
            let pr = mesh.node_pos(c.edge.1);
            let px = c.alpha * pl[0] + (1.0 - c.alpha) * pr[0];
            let py = c.alpha * pl[1] + (1.0 - c.alpha) * pr[1];
            assert!((px - c.position[0]).abs() < 1e-10);
            assert!((py - c.position[1]).abs() < 1e-10);
        }
        assert!(find_inside_nodes(&body, &mesh).is_empty());
    }

    #[test]
    fn constraint_rows_non_slip_and_slip() {
        let cp = CuttingPoint {
            edge: (3, 4),
            alpha: 0.5,
            position: [0.0, 0.0],
            normal: [0.0, 1.0],
            tangent: [-1.0, 0.0],
        };
        let mut body = circle([0.0, 0.0], 1.0, FrictionModel::NonSlip);
        body.velocity = [1.0, 0.0];
        let set = build_constraints(&[cp], &[], &body);
        assert_eq!(set.rows.len(), 2);
        let rx = &set.rows[0];
        assert_eq!(rx.cols, vec![(6, 0.5), (8, 0.5)]);
        assert_eq!(rx.rhs, 1.0);
        let ry = &set.rows[1];
        assert_eq!(ry.cols, vec![(7, 0.5), (9, 0.5)]);
        assert_eq!(ry.rhs, 0.0);

        body.friction = FrictionModel::Slip;
        body.velocity = [0.0, -0.01];
        let set = build_constraints(&[cp], &[], &body);
        assert_eq!(set.rows.len(), 1);
        let r = &set.rows[0];
        assert_eq!(r.cols, vec![(7, 0.5), (9, 0.5)]);
        assert!((r.rhs + 0.01).abs() < 1e-15);
    }

    #[test]
    fn endpoint_cut_touches_single_node() {
        let cp = CuttingPoint {
            edge: (0, 1),
            alpha: 1.0,
            position: [0.0, 0.0],
            normal: [1.0, 0.0],
            tangent: [0.0, 1.0],
        };
        let mut body = circle([0.0, 0.0], 1.0, FrictionModel::NonSlip);
        body.velocity = [2.0, 0.0];
        let set = build_constraints(&[cp], &[], &body);
        assert_eq!(set.rows[0].cols, vec![(0, 1.0)]);
        assert_eq!(set.rows[0].rhs, 2.0);
    }

    #[test]
    fn duplicate_rows_are_deduplicated() {
        let cp = CuttingPoint {
            edge: (0, 1),
            alpha: 0.25,
            position: [0.0, 0.0],
            normal: [1.0, 0.0],
            tangent: [0.0, 1.0],
        };
        let body = circle([0.0, 0.0], 1.0, FrictionModel::NonSlip);
        let set = build_constraints(&[cp, cp], &[], &body);
        assert_eq!(set.rows.len(), 2); // x and y rows once each
    }

    /// Random-ish SPD system; pin one unknown through a constraint row and
    /// compare against direct elimination.
    #[test]
    fn single_constraint_matches_elimination_oracle() {
        let n_nodes = 5; // 15 unknowns
        let n = total_dofs(n_nodes);
        let mut seed = 99u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                dense[i][j] = 0.3 * rnd();
            }
        }
        // make it SPD-ish: A = M M^T + n I
        let mut spd = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += dense[i][k] * dense[j][k];
                }
                spd[i][j] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        let mut mat = TripletMatrix::new(n);
        for i in 0..n {
            for j in 0..n {
                mat.push(i, j, spd[i][j]);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let system = LinearSystem::from_matrix(mat, 1.0, n_nodes);

        let k_dof = dof_ux(2);
        let v = 0.37;
        let mut set = ConstraintSet::empty();
        set.rows.push(ConstraintRow {
            cols: vec![(k_dof, 1.0)],
            rhs: v,
            kind: RowKind::InsidePin { node: 2, axis: 0 },
        });
        let state = crate::ns::FieldState {
            u: vec![[0.0; 2]; n_nodes],
            p: vec![0.0; n_nodes],
            bubble: vec![],
            t: 0.0,
        };
        let sol = solve_saddle(&system, &mut set, &rhs, &state).unwrap();

        // elimination oracle: substitute x_k = v and solve the reduced system
        let mut reduced = vec![vec![0.0; n - 1]; n - 1];
        let mut rrhs = vec![0.0; n - 1];
        let map: Vec<usize> = (0..n).filter(|&i| i != k_dof).collect();
        for (ri, &i) in map.iter().enumerate() {
            rrhs[ri] = rhs[i] - spd[i][k_dof] * v;
            for (ci, &j) in map.iter().enumerate() {
                reduced[ri][ci] = spd[i][j];
            }
        }
        let xr = solve_dense(&reduced, &rrhs).unwrap();
        for (ri, &i) in map.iter().enumerate() {
            assert!(
                (sol.increment[i] - xr[ri]).abs() < 1e-9,
                "dof {i}: {} vs {}",
                sol.increment[i],
                xr[ri]
            );
        }
        assert!((sol.increment[k_dof] - v).abs() < 1e-9);
    }

    #[test]
    fn consistent_constraints_give_zero_increment() {
        let n_nodes = 3;
        let n = total_dofs(n_nodes);
        let mut mat = TripletMatrix::new(n);
        for i in 0..n {
            mat.push(i, i, 2.0);
        }
        let system = LinearSystem::from_matrix(mat, 1.0, n_nodes);
        let mut state = crate::ns::FieldState {
            u: vec![[0.5, -0.25]; n_nodes],
            p: vec![0.0; n_nodes],
            bubble: vec![],
            t: 0.0,
        };
        state.u[1] = [0.1, 0.2];
        let mut set = ConstraintSet::empty();
        // b = A u^t for this row
        set.rows.push(ConstraintRow {
            cols: vec![(dof_ux(1), 1.0)],
            rhs: 0.1,
            kind: RowKind::InsidePin { node: 1, axis: 0 },
        });
        let rhs = vec![0.0; n];
        let sol = solve_saddle(&system, &mut set, &rhs, &state).unwrap();
        for v in &sol.increment {
            assert!(v.abs() < 1e-12);
        }
        for l in &sol.lambda {
            assert!(l.abs() < 1e-12);
        }
    }

    #[test]
    fn reaction_opposes_body_motion() {
        // body dragged through fluid at rest: the multiplier force on the
        // body must do negative work
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let state = crate::ns::FieldState::zeros(&mesh);
        let n = mesh.node_count;
        let mut bcs = DirichletBcs::none(total_dofs(n));
        for node in 0..n {
            let [x, y] = mesh.node_pos(node);
            if x < 1e-12 || x > 1.0 - 1e-12 || y < 1e-12 || y > 1.0 - 1e-12 {
                bcs.pin(dof_ux(node));
                bcs.pin(dof_uy(node));
            }
        }
        bcs.pin(dof_p(0, n));
        let pr = UniformProperties(PhaseProperties {
            rho: 1000.0,
            mu: 1.0,
            body_force: [0.0; 2],
            has_history_stress: false,
        });
        let mut input = NsInput::new(&mesh, &state, &state.u, &state.bubble, &pr, &ZeroStress, 0.01);
        input.bcs = Some(&bcs);
        let (sys, r) = assemble_system(&input).unwrap();
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();

        let mut body = circle([0.5, 0.5], 0.22, FrictionModel::NonSlip);
        body.velocity = [0.05, 0.0];
        let cuts = find_cutting_points(&body, &mesh);
        assert!(!cuts.is_empty());
        let inside = find_inside_nodes(&body, &mesh);
        let mut set = build_constraints(&cuts, &inside, &body);
        let _sol = solve_saddle(&sys, &mut set, &rhs, &state).unwrap();
        let f = resultant_force(&set).unwrap();
        let work_rate = f[0] * body.velocity[0] + f[1] * body.velocity[1];
        assert!(work_rate < 0.0, "work rate {work_rate} should be negative");
    }

    #[test]
    fn coulomb_zero_friction_equals_slip() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let state = crate::ns::FieldState::zeros(&mesh);
        let n = mesh.node_count;
        let mut bcs = DirichletBcs::none(total_dofs(n));
        for node in 0..n {
            let [x, y] = mesh.node_pos(node);
            if x < 1e-12 || x > 1.0 - 1e-12 || y < 1e-12 || y > 1.0 - 1e-12 {
                bcs.pin(dof_ux(node));
                bcs.pin(dof_uy(node));
            }
        }
        bcs.pin(dof_p(0, n));
        let pr = UniformProperties(PhaseProperties {
            rho: 1000.0,
            mu: 1.0,
            body_force: [0.0; 2],
            has_history_stress: false,
        });
        let mut input = NsInput::new(&mesh, &state, &state.u, &state.bubble, &pr, &ZeroStress, 0.01);
        input.bcs = Some(&bcs);
        let (sys, r) = assemble_system(&input).unwrap();
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();

        let mut body = circle([0.5, 0.5], 0.22, FrictionModel::Coulomb);
        body.velocity = [0.05, 0.0];
        let cuts = find_cutting_points(&body, &mesh);
        let inside = find_inside_nodes(&body, &mesh);

        let mut set_slip = build_constraints(&cuts, &inside, &body);
        let slip = solve_saddle(&sys, &mut set_slip, &rhs, &state).unwrap();

        let mut set_c = build_constraints(&cuts, &inside, &body);
        let coulomb = coulomb_iteration(&sys, &mut set_c, &rhs, &state, 0.0).unwrap();
        for (a, b) in slip.increment.iter().zip(&coulomb.increment) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in slip.lambda.iter().zip(&coulomb.lambda) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resultant_from_manual_multipliers() {
        let mut set = ConstraintSet::empty();
        let mk_point = |normal: [f64; 2]| CuttingPoint {
            edge: (0, 1),
            alpha: 0.5,
            position: [0.0; 2],
            normal,
            tangent: [-normal[1], normal[0]],
        };
        set.points = vec![mk_point([1.0, 0.0]), mk_point([1.0, 0.0])];
        set.rows = vec![
            ConstraintRow {
                cols: vec![(0, 1.0)],
                rhs: 0.0,
                kind: RowKind::CutNormal { point: 0 },
            },
            ConstraintRow {
                cols: vec![(2, 1.0)],
                rhs: 0.0,
                kind: RowKind::CutNormal { point: 1 },
            },
        ];
        assert!(resultant_force(&set).is_err()); // before solve
        set.lambda = Some(vec![1.0, 1.0]);
        let f = resultant_force(&set).unwrap();
        assert!((f[0] + 2.0).abs() < 1e-15);
        assert!(f[1].abs() < 1e-15);
    }
}
