//! Signed-distance interface transport with a penalty term that keeps the
//! gradient norm near one, avoiding periodic reinitialization.
//!
//! The transported equation is phi_t + u.grad(phi) - div(lambda1*k1*grad phi) = 0
//! with k1 = 1 - 1/|grad phi| and lambda1 = beta1*h^2*|u|/2. The penalty
//! diffuses where the field is too steep (|grad phi| > 1) and sharpens where
//! it is too flat, so the signed-distance property regenerates during
//! transport. Streamline (SUPG) weighting stabilizes the advection.

use crate::error::{Result, SimError};
use crate::linsys::{solve_sparse, TripletMatrix};
use crate::mesh::{shape_eval_unchecked, GridMesh, Located, QuadratureRule};

pub type PhaseId = u8;

/// One or more nodal level-set fields plus their phase pairing.
///
/// Field k separates `pairs[k].0` (positive side) from `pairs[k].1`
/// (negative side).
#[derive(Debug, Clone)]
pub struct PhaseField {
    pub phi: Vec<Vec<f64>>,
    pub pairs: Vec<(PhaseId, PhaseId)>,
    pub beta1: f64,
    pub interface_halfwidth: f64,
}

impl PhaseField {
    pub fn single(phi: Vec<f64>, mesh: &GridMesh, beta1: f64) -> Self {
        Self {
            phi: vec![phi],
            pairs: vec![(1, 2)],
            beta1,
            interface_halfwidth: 1.5 * mesh.h_ele(),
        }
    }
}

/// Assembled matrices of the discrete level-set equation.
#[derive(Debug, Clone)]
pub struct LevelSetSystem {
    pub m_matrix: TripletMatrix,
    pub c_matrix: TripletMatrix,
    pub k_matrix: TripletMatrix,
}

/// Penalty coefficients from the local gradient norm and speed.
///
/// Gradients flatter than 0.1 give k1 = 0 so flat far-field regions are left
/// alone instead of dividing by a vanishing norm.
pub fn penalty_coefficients(grad_norm: f64, speed: f64, h: f64, beta1: f64) -> (f64, f64) {
    let k1 = if grad_norm < 0.1 {
        0.0
    } else {
        1.0 - 1.0 / grad_norm
    };
    let lambda1 = beta1 * h * h * speed / 2.0;
    (k1, lambda1)
}

/// Spec-shaped wrapper: evaluate the penalty coefficients of one field at a
/// physical point.
pub fn compute_penalty_terms(
    phi: &[f64],
    u: &[[f64; 2]],
    mesh: &GridMesh,
    beta1: f64,
    x: [f64; 2],
) -> Result<(f64, f64)> {
    let Located::Inside { element, xi, eta } = mesh.locate_point(x) else {
        return Err(SimError::InvalidArgument(format!(
            "point {x:?} outside the grid"
        )));
    };
    let b = shape_eval_unchecked(mesh, xi, eta, false);
    let nodes = mesh.connectivity[element];
    let mut grad = [0.0; 2];
    let mut vel = [0.0; 2];
    for a in 0..4 {
        grad[0] += b.dn_dx[a] * phi[nodes[a]];
        grad[1] += b.dn_dy[a] * phi[nodes[a]];
        vel[0] += b.n[a] * u[nodes[a]][0];
        vel[1] += b.n[a] * u[nodes[a]][1];
    }
    let gn = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
    let sp = (vel[0] * vel[0] + vel[1] * vel[1]).sqrt();
    Ok(penalty_coefficients(gn, sp, mesh.h_ele(), beta1))
}

/// Streamline stabilization parameter for the pure-advection operator.
pub fn tau_phi(speed: f64, h: f64, dt: f64) -> f64 {
    h / (2.0 * speed + h / dt)
}

/// Assemble mass, convection and penalty matrices for one field.
pub fn assemble_levelset(
    phi: &[f64],
    u: &[[f64; 2]],
    mesh: &GridMesh,
    dt: f64,
    beta1: f64,
) -> LevelSetSystem {
    let n = mesh.node_count;
    let rule = QuadratureRule::gauss_2x2();
    let h = mesh.h_ele();
    let cap = mesh.element_count * 16;
    let mut m = TripletMatrix::with_capacity(n, cap);
    let mut c = TripletMatrix::with_capacity(n, cap);
    let mut k = TripletMatrix::with_capacity(n, cap);

    for e in 0..mesh.element_count {
        let nodes = mesh.connectivity[e];
        let mut u_c = [0.0; 2];
        for &nd in &nodes {
            u_c[0] += 0.25 * u[nd][0];
            u_c[1] += 0.25 * u[nd][1];
        }
        let speed_c = (u_c[0] * u_c[0] + u_c[1] * u_c[1]).sqrt();
        let tau = tau_phi(speed_c, h, dt);

        for &(xi, eta, wq) in &rule.points {
            let b = shape_eval_unchecked(mesh, xi, eta, false);
            let w = wq * b.det_j;
            let mut u_q = [0.0; 2];
            let mut grad_phi = [0.0; 2];
            for a in 0..4 {
                u_q[0] += b.n[a] * u[nodes[a]][0];
                u_q[1] += b.n[a] * u[nodes[a]][1];
                grad_phi[0] += b.dn_dx[a] * phi[nodes[a]];
                grad_phi[1] += b.dn_dy[a] * phi[nodes[a]];
            }
            let gn = (grad_phi[0] * grad_phi[0] + grad_phi[1] * grad_phi[1]).sqrt();
            let sp = (u_q[0] * u_q[0] + u_q[1] * u_q[1]).sqrt();
            let (k1, lambda1) = penalty_coefficients(gn, sp, h, beta1);
            let diff = lambda1 * k1;

            for a in 0..4 {
                let test = b.n[a] + tau * (u_q[0] * b.dn_dx[a] + u_q[1] * b.dn_dy[a]);
                for bf in 0..4 {
                    let adv_b = u_q[0] * b.dn_dx[bf] + u_q[1] * b.dn_dy[bf];
                    m.push(nodes[a], nodes[bf], w * test * b.n[bf]);
                    c.push(nodes[a], nodes[bf], w * test * adv_b);
                    k.push(
                        nodes[a],
                        nodes[bf],
                        w * diff * (b.dn_dx[a] * b.dn_dx[bf] + b.dn_dy[a] * b.dn_dy[bf]),
                    );
                }
            }
        }
    }
    LevelSetSystem {
        m_matrix: m,
        c_matrix: c,
        k_matrix: k,
    }
}

/// One explicit step: solve (M/dt + C + K) dphi = -(C + K) phi.
pub fn step_levelset(phi: &[f64], system: &LevelSetSystem, dt: f64) -> Result<Vec<f64>> {
    let n = phi.len();
    let mut a = TripletMatrix::with_capacity(
        n,
        system.m_matrix.nnz_entries() + system.c_matrix.nnz_entries() + system.k_matrix.nnz_entries(),
    );
    for (r, c, v) in system.m_matrix.entries() {
        a.push(r, c, v / dt);
    }
    for (r, c, v) in system.c_matrix.entries() {
        a.push(r, c, v);
    }
    for (r, c, v) in system.k_matrix.entries() {
        a.push(r, c, v);
    }
    let cphi = system.c_matrix.mul_vec(phi);
    let kphi = system.k_matrix.mul_vec(phi);
    let rhs: Vec<f64> = cphi.iter().zip(&kphi).map(|(a, b)| -(a + b)).collect();
    let dphi = solve_sparse(&a, &rhs)?;
    Ok(phi.iter().zip(&dphi).map(|(p, d)| p + d).collect())
}

/// Smoothed Heaviside used for property blending across interfaces.
pub fn smoothed_heaviside(phi: f64, eps: f64) -> f64 {
    if phi <= -eps {
        0.0
    } else if phi >= eps {
        1.0
    } else {
        let s = phi / eps;
        (0.5 * (1.0 + s + (std::f64::consts::PI * s).sin() / std::f64::consts::PI)).clamp(0.0, 1.0)
    }
}

/// Bilinear interpolation of one nodal field at a physical point.
pub fn interpolate_nodal(mesh: &GridMesh, field: &[f64], x: [f64; 2]) -> Option<f64> {
    let Located::Inside { element, xi, eta } = mesh.locate_point(x) else {
        return None;
    };
    let b = shape_eval_unchecked(mesh, xi, eta, false);
    let nodes = mesh.connectivity[element];
    Some((0..4).map(|a| b.n[a] * field[nodes[a]]).sum())
}

/// Phase id and smoothed indicator at a point.
///
/// With several fields, each candidate phase is scored by the least signed
/// distance in its favor over the fields that involve it; the best score
/// wins and ties go to the field nearest its interface.
pub fn phase_at(field: &PhaseField, mesh: &GridMesh, x: [f64; 2]) -> Result<(PhaseId, f64)> {
    if matches!(mesh.locate_point(x), Located::Outside) {
        return Err(SimError::InvalidArgument(format!(
            "point {x:?} outside the grid"
        )));
    }
    let eps = field.interface_halfwidth;
    let values: Vec<f64> = field
        .phi
        .iter()
        .map(|phi| interpolate_nodal(mesh, phi, x).expect("located above"))
        .collect();

    if field.phi.len() == 1 {
        let v = values[0];
        let (pos, neg) = field.pairs[0];
        let id = if v >= 0.0 { pos } else { neg };
        return Ok((id, smoothed_heaviside(v, eps)));
    }

    let mut phases: Vec<PhaseId> = Vec::new();
    for &(a, b) in &field.pairs {
        if !phases.contains(&a) {
            phases.push(a);
        }
        if !phases.contains(&b) {
            phases.push(b);
        }
    }
    phases.sort_unstable();

    let mut best: Option<(PhaseId, f64, usize)> = None;
    for &p in &phases {
        let mut score = f64::INFINITY;
        let mut decider = usize::MAX;
        for (k, &(pos, neg)) in field.pairs.iter().enumerate() {
            let favored = if pos == p {
                values[k]
            } else if neg == p {
                -values[k]
            } else {
                continue;
            };
            if favored < score {
                score = favored;
                decider = k;
            }
        }
        if decider == usize::MAX {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, s, d)) => {
                score > *s + 1e-300
                    || (score == *s && values[decider].abs() < values[*d].abs())
            }
        };
        if better {
            best = Some((p, score, decider));
        }
    }
    let (id, _, decider) =
        best.ok_or_else(|| SimError::InvalidArgument("phase field has no pairs".into()))?;
    Ok((id, smoothed_heaviside(values[decider], eps)))
}

/// Nodal gradient-norm recovery: the gradient of each adjacent element
/// evaluated at the node, averaged.
pub fn recovered_gradient_norms(mesh: &GridMesh, phi: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; mesh.node_count];
    let mut counts = vec![0u32; mesh.node_count];
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    for e in 0..mesh.element_count {
        let nodes = mesh.connectivity[e];
        for (a, &(xi, eta)) in corners.iter().enumerate() {
            let b = shape_eval_unchecked(mesh, xi, eta, false);
            let mut g = [0.0; 2];
            for c in 0..4 {
                g[0] += b.dn_dx[c] * phi[nodes[c]];
                g[1] += b.dn_dy[c] * phi[nodes[c]];
            }
            sums[nodes[a]] += (g[0] * g[0] + g[1] * g[1]).sqrt();
            counts[nodes[a]] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid, Rect};

    #[test]
    fn penalty_formula_values() {
        let (k1, _) = penalty_coefficients(1.0, 1.0, 0.1, 0.5);
        assert_eq!(k1, 0.0);
        let (_, l1) = penalty_coefficients(2.0, 0.0, 0.1, 0.5);
        assert_eq!(l1, 0.0);
        let (k1, l1) = penalty_coefficients(2.0, 1.0, 0.1, 0.5);
        assert!((k1 - 0.5).abs() < 1e-15);
        assert!((l1 - 0.0025).abs() < 1e-18);
        // flat-field clamp
        let (k1, _) = penalty_coefficients(0.05, 1.0, 0.1, 0.5);
        assert_eq!(k1, 0.0);
    }

    #[test]
    fn penalty_terms_at_point() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        // phi = 2x -> |grad| = 2; u = (1, 0)
        let phi: Vec<f64> = (0..mesh.node_count)
            .map(|n| 2.0 * mesh.node_pos(n)[0])
            .collect();
        let u = vec![[1.0, 0.0]; mesh.node_count];
        let (k1, l1) = compute_penalty_terms(&phi, &u, &mesh, 0.5, [0.4, 0.6]).unwrap();
        let h = mesh.h_ele();
        assert!((k1 - 0.5).abs() < 1e-12);
        assert!((l1 - 0.5 * h * h * 1.0 / 2.0).abs() < 1e-15);
        assert!(compute_penalty_terms(&phi, &u, &mesh, 0.5, [3.0, 0.0]).is_err());
    }

    #[test]
    fn zero_velocity_mass_matrix_row_sums() {
        let mesh = build_grid(1, 1, Rect::unit()).unwrap();
        let phi = vec![0.0; 4];
        let u = vec![[0.0, 0.0]; 4];
        let sys = assemble_levelset(&phi, &u, &mesh, 0.1, 0.5);
        let m = sys.m_matrix.to_dense();
        let c = sys.c_matrix.to_dense();
        for a in 0..4 {
            let row_sum: f64 = m[a].iter().sum();
            assert!((row_sum - mesh.hx * mesh.hy / 4.0).abs() < 1e-14);
            for b in 0..4 {
                assert_eq!(c[a][b], 0.0);
            }
        }
    }

    #[test]
    fn exact_signed_distance_gives_zero_penalty_matrix() {
        let mesh = build_grid(3, 3, Rect::unit()).unwrap();
        let phi: Vec<f64> = (0..mesh.node_count)
            .map(|n| mesh.node_pos(n)[0] - 0.5)
            .collect();
        let u = vec![[1.0, 0.5]; mesh.node_count];
        let sys = assemble_levelset(&phi, &u, &mesh, 0.1, 0.5);
        let k = sys.k_matrix.to_dense();
        for row in &k {
            for v in row {
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn convection_rows_match_hand_integral_for_linear_field() {
        let mesh = build_grid(1, 1, Rect::unit()).unwrap();
        let phi: Vec<f64> = (0..4)
            .map(|n| {
                let [x, y] = mesh.node_pos(n);
                3.0 * x + 4.0 * y
            })
            .collect();
        let uv = [2.0, 1.0];
        let u = vec![uv; 4];
        let dt = 0.05;
        let sys = assemble_levelset(&phi, &u, &mesh, dt, 0.5);
        let cphi = sys.c_matrix.mul_vec(&phi);
        let g = uv[0] * 3.0 + uv[1] * 4.0;
        let speed = (uv[0] * uv[0] + uv[1] * uv[1]).sqrt();
        let tau = tau_phi(speed, mesh.h_ele(), dt);
        // integral of grad(N_a) over the element: +-h/2 per component
        let int_dnx = [-0.5, 0.5, 0.5, -0.5];
        let int_dny = [-0.5, -0.5, 0.5, 0.5];
        for a in 0..4 {
            let node = mesh.connectivity[0][a];
            let exact = g * (0.25 + tau * (uv[0] * int_dnx[a] + uv[1] * int_dny[a]));
            assert!(
                (cphi[node] - exact).abs() < 1e-13,
                "row {a}: {} vs {}",
                cphi[node],
                exact
            );
        }
    }

    #[test]
    fn rest_state_with_unit_gradient_does_not_move() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let phi: Vec<f64> = (0..mesh.node_count)
            .map(|n| mesh.node_pos(n)[1] - 0.5)
            .collect();
        let u = vec![[0.0, 0.0]; mesh.node_count];
        let sys = assemble_levelset(&phi, &u, &mesh, 0.1, 0.5);
        let new = step_levelset(&phi, &sys, 0.1).unwrap();
        for (a, b) in phi.iter().zip(&new) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_velocity_freezes_any_field() {
        let mesh = build_grid(5, 5, Rect::unit()).unwrap();
        // deliberately non-distance field
        let phi: Vec<f64> = (0..mesh.node_count)
            .map(|n| {
                let [x, y] = mesh.node_pos(n);
                (3.0 * x).sin() * (2.0 + y * y)
            })
            .collect();
        let u = vec![[0.0, 0.0]; mesh.node_count];
        let sys = assemble_levelset(&phi, &u, &mesh, 0.05, 0.5);
        let new = step_levelset(&phi, &sys, 0.05).unwrap();
        for (a, b) in phi.iter().zip(&new) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn circle_phi(mesh: &GridMesh, c: [f64; 2], r: f64) -> Vec<f64> {
        (0..mesh.node_count)
            .map(|n| {
                let [x, y] = mesh.node_pos(n);
                ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt() - r
            })
            .collect()
    }

    fn inside_centroid(mesh: &GridMesh, phi: &[f64]) -> [f64; 2] {
        // fine subsampling of the bilinear interpolant
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut area = 0.0;
        let sub = 4;
        for e in 0..mesh.element_count {
            for sj in 0..sub {
                for si in 0..sub {
                    let xi = -1.0 + (2.0 * si as f64 + 1.0) / sub as f64;
                    let eta = -1.0 + (2.0 * sj as f64 + 1.0) / sub as f64;
                    let b = shape_eval_unchecked(mesh, xi, eta, false);
                    let nodes = mesh.connectivity[e];
                    let v: f64 = (0..4).map(|a| b.n[a] * phi[nodes[a]]).sum();
                    if v < 0.0 {
                        let p = mesh.ref_to_physical(e, xi, eta);
                        cx += p[0];
                        cy += p[1];
                        area += 1.0;
                    }
                }
            }
        }
        [cx / area, cy / area]
    }

    #[test]
    fn translated_circle_tracks_characteristics() {
        let mesh = build_grid(40, 40, Rect::new(0.0, 0.0, 2.0, 2.0)).unwrap();
        let c0 = [0.7, 1.0];
        let mut phi = circle_phi(&mesh, c0, 0.3);
        let u = vec![[1.0, 0.0]; mesh.node_count];
        let dt = 0.01;
        for _ in 0..20 {
            let sys = assemble_levelset(&phi, &u, &mesh, dt, 0.5);
            phi = step_levelset(&phi, &sys, dt).unwrap();
        }
        // characteristic-transport oracle: phi(x, t) = phi0(x - u t)
        let oracle = circle_phi(&mesh, [0.9, 1.0], 0.3);
        let got = inside_centroid(&mesh, &phi);
        let want = inside_centroid(&mesh, &oracle);
        let h = mesh.h_ele();
        assert!(
            (got[0] - want[0]).abs() < 0.5 * h,
            "x drift {} vs {}",
            got[0],
            want[0]
        );
        assert!((got[1] - want[1]).abs() < 0.5 * h);
    }

    #[test]
    fn heaviside_and_single_phase_classification() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let eps = 1.5 * mesh.h_ele();
        let mk = |v: f64| PhaseField {
            phi: vec![vec![v; mesh.node_count]],
            pairs: vec![(1, 2)],
            beta1: 0.5,
            interface_halfwidth: eps,
        };
        let (id, ind) = phase_at(&mk(10.0 * eps), &mesh, [0.5, 0.5]).unwrap();
        assert_eq!(id, 1);
        assert_eq!(ind, 1.0);
        let (id, ind) = phase_at(&mk(0.0), &mesh, [0.5, 0.5]).unwrap();
        assert_eq!(id, 1);
        assert!((ind - 0.5).abs() < 1e-15);
        let (id, ind) = phase_at(&mk(-10.0 * eps), &mesh, [0.5, 0.5]).unwrap();
        assert_eq!(id, 2);
        assert_eq!(ind, 0.0);
        assert!(phase_at(&mk(1.0), &mesh, [2.0, 0.0]).is_err());
    }

    #[test]
    fn three_phase_classification_is_unique() {
        // layered phases: 1 above y=2, 2 in 1<y<2, 3 below y=1
        let mesh = build_grid(6, 18, Rect::new(0.0, 0.0, 1.0, 3.0)).unwrap();
        let mk = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..mesh.node_count).map(|n| f(mesh.node_pos(n)[1])).collect()
        };
        let field = PhaseField {
            phi: vec![
                mk(&|y| y - 2.0),
                mk(&|y| y - 1.5),
                mk(&|y| y - 1.0),
            ],
            pairs: vec![(1, 2), (1, 3), (2, 3)],
            beta1: 0.5,
            interface_halfwidth: 1.5 * mesh.h_ele(),
        };
        let expect = |y: f64| -> PhaseId {
            if y > 2.0 {
                1
            } else if y > 1.0 {
                2
            } else {
                3
            }
        };
        for &y in &[0.2, 0.8, 1.2, 1.7, 2.3, 2.9] {
            let (id, _) = phase_at(&field, &mesh, [0.5, y]).unwrap();
            assert_eq!(id, expect(y), "phase at y={y}");
        }
    }
}
