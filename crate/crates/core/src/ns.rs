//! Stabilized incompressible flow solver with an extra-stress source term.
//!
//! Equal-order bilinear velocity/pressure on the structured grid, stabilized
//! with the two-scale split: the unresolved scales are modeled as tau times
//! the strong residual, which yields streamline (SUPG), pressure (PSPG) and
//! grad-div terms. The history-dependent extra stress enters the momentum
//! equation as an explicit source integrated against the test gradient, and
//! the velocity space can be enriched with an element bubble that is
//! condensed at element level.
//!
//! Time stepping is incremental: one tangent assembly and one linear solve
//! per step, with the advection velocity and stabilization parameters frozen
//! at the previous time level.

use crate::error::{Result, SimError};
use crate::linsys::{SparseLu, TripletMatrix};
use crate::mesh::{shape_eval_unchecked, GridMesh, QuadratureRule};

/// Nodal velocity/pressure snapshot at one time level.
///
/// `bubble` holds the per-element enrichment coefficients (zeros when the
/// enrichment is disabled); they are state because the transient term needs
/// the previous value.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub u: Vec<[f64; 2]>,
    pub p: Vec<f64>,
    pub bubble: Vec<[f64; 2]>,
    pub t: f64,
}

impl FieldState {
    pub fn zeros(mesh: &GridMesh) -> Self {
        Self {
            u: vec![[0.0; 2]; mesh.node_count],
            p: vec![0.0; mesh.node_count],
            bubble: vec![[0.0; 2]; mesh.element_count],
            t: 0.0,
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        let ok = self.u.iter().all(|v| v[0].is_finite() && v[1].is_finite())
            && self.p.iter().all(|v| v.is_finite())
            && self
                .bubble
                .iter()
                .all(|v| v[0].is_finite() && v[1].is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::SolverFailure("non-finite field state".into()))
        }
    }

    /// Velocity at a point inside `elem`, including the bubble contribution.
    pub fn velocity_at(&self, mesh: &GridMesh, elem: usize, xi: f64, eta: f64) -> [f64; 2] {
        let bubble = self.bubble[elem] != [0.0; 2];
        let b = shape_eval_unchecked(mesh, xi, eta, bubble);
        let nodes = mesh.connectivity[elem];
        let mut u = [0.0; 2];
        for a in 0..4 {
            let ua = self.u[nodes[a]];
            u[0] += b.n[a] * ua[0];
            u[1] += b.n[a] * ua[1];
        }
        if bubble {
            u[0] += b.n[4] * self.bubble[elem][0];
            u[1] += b.n[4] * self.bubble[elem][1];
        }
        u
    }

    /// Velocity gradient at a point inside `elem`; `[i][j]` is du_i/dx_j.
    pub fn velocity_gradient_at(
        &self,
        mesh: &GridMesh,
        elem: usize,
        xi: f64,
        eta: f64,
    ) -> [[f64; 2]; 2] {
        let bubble = self.bubble[elem] != [0.0; 2];
        let b = shape_eval_unchecked(mesh, xi, eta, bubble);
        let nodes = mesh.connectivity[elem];
        let mut g = [[0.0; 2]; 2];
        for a in 0..4 {
            let ua = self.u[nodes[a]];
            for i in 0..2 {
                g[i][0] += b.dn_dx[a] * ua[i];
                g[i][1] += b.dn_dy[a] * ua[i];
            }
        }
        if bubble {
            let ub = self.bubble[elem];
            for i in 0..2 {
                g[i][0] += b.dn_dx[4] * ub[i];
                g[i][1] += b.dn_dy[4] * ub[i];
            }
        }
        g
    }
}

/// Material data evaluated at a quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct PhaseProperties {
    pub rho: f64,
    pub mu: f64,
    pub body_force: [f64; 2],
    pub has_history_stress: bool,
}

impl PhaseProperties {
    pub fn validate(&self) -> Result<()> {
        if self.rho > 0.0 && self.mu >= 0.0 {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!(
                "need rho > 0 and mu >= 0, got rho={}, mu={}",
                self.rho, self.mu
            )))
        }
    }
}

/// Per-point material lookup (phase blending lives behind this).
pub trait PropertySampler {
    fn properties_at(&self, x: [f64; 2]) -> PhaseProperties;
}

/// Single-material sampler.
pub struct UniformProperties(pub PhaseProperties);

impl PropertySampler for UniformProperties {
    fn properties_at(&self, _x: [f64; 2]) -> PhaseProperties {
        self.0
    }
}

/// Extra-stress lookup at element reference coordinates.
/// Components are (s_xx, s_yy, s_xy).
pub trait ExtraStressField {
    fn stress_at(&self, elem: usize, xi: f64, eta: f64) -> [f64; 3];
}

/// No extra stress (pure fluid).
pub struct ZeroStress;

impl ExtraStressField for ZeroStress {
    fn stress_at(&self, _elem: usize, _xi: f64, _eta: f64) -> [f64; 3] {
        [0.0; 3]
    }
}

/// Stability parameters of the two-scale model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabParams {
    /// Momentum parameter (units s*m^3/kg); multiplies the strong momentum
    /// residual in the SUPG and PSPG terms.
    pub momentum: f64,
    /// Continuity parameter (units Pa*s); multiplies the divergence in the
    /// grad-div term.
    pub continuity: f64,
}

/// Closed-form stability parameters from transient, advective and diffusive
/// limits at the element scale.
pub fn compute_tau(props: &PhaseProperties, u_local: [f64; 2], h: f64, dt: f64) -> StabParams {
    let speed = (u_local[0] * u_local[0] + u_local[1] * u_local[1]).sqrt();
    let denom = props.rho / dt + 2.0 * props.rho * speed / h + 4.0 * props.mu / (h * h);
    let momentum = if denom > 0.0 { 1.0 / denom } else { 0.0 };
    let continuity = if momentum > 0.0 {
        h * h / (4.0 * momentum)
    } else {
        0.0
    };
    StabParams {
        momentum,
        continuity,
    }
}

/// Dirichlet constraints on individual velocity/pressure unknowns. The
/// pinned increments are zero (boundary data constant in time).
#[derive(Debug, Clone)]
pub struct DirichletBcs {
    pinned: Vec<bool>,
}

impl DirichletBcs {
    pub fn none(n_dofs: usize) -> Self {
        Self {
            pinned: vec![false; n_dofs],
        }
    }

    pub fn pin(&mut self, dof: usize) {
        self.pinned[dof] = true;
    }

    #[inline]
    pub fn is_pinned(&self, dof: usize) -> bool {
        self.pinned[dof]
    }

    pub fn pinned_count(&self) -> usize {
        self.pinned.iter().filter(|p| **p).count()
    }
}

pub fn dof_ux(node: usize) -> usize {
    2 * node
}

pub fn dof_uy(node: usize) -> usize {
    2 * node + 1
}

pub fn dof_p(node: usize, node_count: usize) -> usize {
    2 * node_count + node
}

pub fn total_dofs(node_count: usize) -> usize {
    3 * node_count
}

/// Per-element data needed to recover the condensed bubble increment after
/// the global solve.
#[derive(Debug, Clone)]
struct BubbleRecovery {
    elem: usize,
    inv_kbb: [[f64; 2]; 2],
    kbn: [[f64; 12]; 2],
    /// Bubble rows of the assembled residual.
    rb: [f64; 2],
    dofs: [usize; 12],
}

/// Assembled tangent over (velocity, pressure) unknowns. Constraint rows are
/// appended by the rigid-coupling solve.
pub struct LinearSystem {
    pub matrix: TripletMatrix,
    pub dt: f64,
    pub node_count: usize,
    /// Dirichlet-pinned dofs (identity rows); constraint coupling must not
    /// touch these rows.
    pub pinned: Vec<bool>,
    bubbles: Vec<BubbleRecovery>,
}

impl LinearSystem {
    pub fn n_dofs(&self) -> usize {
        self.matrix.dim
    }

    /// Wrap a raw matrix (no bubble blocks); mainly for oracle-style tests.
    pub fn from_matrix(matrix: TripletMatrix, dt: f64, node_count: usize) -> Self {
        let dim = matrix.dim;
        Self {
            matrix,
            dt,
            node_count,
            pinned: vec![false; dim],
            bubbles: Vec::new(),
        }
    }
}

/// Inputs shared by residual and tangent assembly.
pub struct NsInput<'a> {
    pub mesh: &'a GridMesh,
    pub state: &'a FieldState,
    /// Velocity at the previous time level (nodal part).
    pub u_prev: &'a [[f64; 2]],
    /// Bubble coefficients at the previous time level.
    pub bubble_prev: &'a [[f64; 2]],
    pub props: &'a dyn PropertySampler,
    pub stress: &'a dyn ExtraStressField,
    pub dt: f64,
    pub bubble: bool,
    pub bcs: Option<&'a DirichletBcs>,
    /// State providing the frozen advection velocity and tau; defaults to
    /// `state` itself.
    pub advection: Option<&'a FieldState>,
    /// Disable the two-scale terms (diagnostics only).
    pub stabilization: bool,
}

impl<'a> NsInput<'a> {
    pub fn new(
        mesh: &'a GridMesh,
        state: &'a FieldState,
        u_prev: &'a [[f64; 2]],
        bubble_prev: &'a [[f64; 2]],
        props: &'a dyn PropertySampler,
        stress: &'a dyn ExtraStressField,
        dt: f64,
    ) -> Self {
        Self {
            mesh,
            state,
            u_prev,
            bubble_prev,
            props,
            stress,
            dt,
            bubble: false,
            bcs: None,
            advection: None,
            stabilization: true,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.mesh.node_count;
        let e = self.mesh.element_count;
        if self.state.u.len() != n
            || self.state.p.len() != n
            || self.u_prev.len() != n
            || self.state.bubble.len() != e
            || self.bubble_prev.len() != e
        {
            return Err(SimError::InvalidArgument(
                "field sizes inconsistent with mesh".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(SimError::InvalidArgument(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Weak residual of the stabilized equations at the current state.
pub fn assemble_residual(input: &NsInput) -> Result<Vec<f64>> {
    let (_, residual) = assemble(input, false)?;
    Ok(residual)
}

/// Tangent matrix linearizing the residual (advection frozen).
pub fn assemble_tangent(input: &NsInput) -> Result<LinearSystem> {
    let (system, _) = assemble(input, true)?;
    Ok(system.expect("tangent requested"))
}

/// One-pass assembly of tangent and residual (the bubble condensation
/// couples them, so the combined routine is what the time loop uses).
pub fn assemble_system(input: &NsInput) -> Result<(LinearSystem, Vec<f64>)> {
    let (system, residual) = assemble(input, true)?;
    Ok((system.expect("tangent requested"), residual))
}

fn assemble(input: &NsInput, want_matrix: bool) -> Result<(Option<LinearSystem>, Vec<f64>)> {
    input.validate()?;
    let mesh = input.mesh;
    let n_nodes = mesh.node_count;
    let n_dofs = total_dofs(n_nodes);
    let bubble = input.bubble;
    let nfun = if bubble { 5 } else { 4 };
    let nloc = if bubble { 14 } else { 12 };
    let rule = QuadratureRule::for_bubble(bubble);
    let adv_state = input.advection.unwrap_or(input.state);
    let h = mesh.h_ele();

    let mut matrix = if want_matrix {
        Some(TripletMatrix::with_capacity(
            n_dofs,
            mesh.element_count * nloc * nloc,
        ))
    } else {
        None
    };
    let mut residual = vec![0.0; n_dofs];
    let mut bubbles = Vec::new();

    // local dof order: [u0x,u0y,...,u3x,u3y, p0..p3, (bx,by)]
    let vel_l = |a: usize, i: usize| -> usize {
        if a < 4 {
            2 * a + i
        } else {
            12 + i
        }
    };
    let p_l = |a: usize| -> usize { 8 + a };

    let mut k_loc = [[0.0f64; 14]; 14];
    let mut r_loc = [0.0f64; 14];

    for e in 0..mesh.element_count {
        let nodes = mesh.connectivity[e];
        for row in k_loc.iter_mut().take(nloc) {
            row[..nloc].fill(0.0);
        }
        r_loc[..nloc].fill(0.0);

        // frozen advection speed at the element center (nodal part)
        let mut a_c = [0.0; 2];
        for &n in &nodes {
            a_c[0] += 0.25 * adv_state.u[n][0];
            a_c[1] += 0.25 * adv_state.u[n][1];
        }
        let center = mesh.element_center(e);
        let props_c = input.props.properties_at(center);
        let tau = if input.stabilization {
            compute_tau(&props_c, a_c, h, input.dt)
        } else {
            StabParams {
                momentum: 0.0,
                continuity: 0.0,
            }
        };

        for &(xi, eta, wq) in &rule.points {
            let b = shape_eval_unchecked(mesh, xi, eta, bubble);
            let w = wq * b.det_j;
            let x = mesh.ref_to_physical(e, xi, eta);
            let pr = input.props.properties_at(x);
            let sig = input.stress.stress_at(e, xi, eta);

            // interpolate state at the quadrature point
            let mut u_q = [0.0; 2];
            let mut up_q = [0.0; 2];
            let mut a_q = [0.0; 2];
            let mut grad_u = [[0.0; 2]; 2]; // [i][j] = du_i/dx_j
            let mut p_q = 0.0;
            let mut grad_p = [0.0; 2];
            for a in 0..4 {
                let ua = input.state.u[nodes[a]];
                let upa = input.u_prev[nodes[a]];
                let av = adv_state.u[nodes[a]];
                let pa = input.state.p[nodes[a]];
                for i in 0..2 {
                    u_q[i] += b.n[a] * ua[i];
                    up_q[i] += b.n[a] * upa[i];
                    a_q[i] += b.n[a] * av[i];
                    grad_u[i][0] += b.dn_dx[a] * ua[i];
                    grad_u[i][1] += b.dn_dy[a] * ua[i];
                }
                p_q += b.n[a] * pa;
                grad_p[0] += b.dn_dx[a] * pa;
                grad_p[1] += b.dn_dy[a] * pa;
            }
            if bubble {
                let ub = input.state.bubble[e];
                let ubp = input.bubble_prev[e];
                let ab = adv_state.bubble[e];
                for i in 0..2 {
                    u_q[i] += b.n[4] * ub[i];
                    up_q[i] += b.n[4] * ubp[i];
                    a_q[i] += b.n[4] * ab[i];
                    grad_u[i][0] += b.dn_dx[4] * ub[i];
                    grad_u[i][1] += b.dn_dy[4] * ub[i];
                }
            }
            let div_u = grad_u[0][0] + grad_u[1][1];

            // strong momentum residual (viscous part vanishes for bilinear
            // shapes on affine elements; the extra stress stays macro-only)
            let mut r_strong = [0.0; 2];
            for i in 0..2 {
                r_strong[i] = pr.rho
                    * ((u_q[i] - up_q[i]) / input.dt
                        + a_q[0] * grad_u[i][0]
                        + a_q[1] * grad_u[i][1])
                    + grad_p[i]
                    - pr.body_force[i];
            }

            for a in 0..nfun {
                let adv_test = pr.rho * (a_q[0] * b.dn_dx[a] + a_q[1] * b.dn_dy[a]);
                for i in 0..2 {
                    let mut r = b.n[a]
                        * pr.rho
                        * ((u_q[i] - up_q[i]) / input.dt
                            + a_q[0] * grad_u[i][0]
                            + a_q[1] * grad_u[i][1]);
                    // viscous stress 2*mu*sym(grad u) against test gradient
                    r += pr.mu
                        * (b.dn_dx[a] * (grad_u[i][0] + grad_u[0][i])
                            + b.dn_dy[a] * (grad_u[i][1] + grad_u[1][i]));
                    let dn_i = if i == 0 { b.dn_dx[a] } else { b.dn_dy[a] };
                    r -= dn_i * p_q;
                    // extra stress: grad(v_i) . sigma_i*
                    let (si0, si1) = if i == 0 {
                        (sig[0], sig[2])
                    } else {
                        (sig[2], sig[1])
                    };
                    r += b.dn_dx[a] * si0 + b.dn_dy[a] * si1;
                    r -= b.n[a] * pr.body_force[i];
                    r += tau.momentum * adv_test * r_strong[i];
                    r += tau.continuity * dn_i * div_u;
                    r_loc[vel_l(a, i)] += w * r;
                }
                if a < 4 {
                    let mut r = b.n[a] * div_u;
                    r += tau.momentum * (b.dn_dx[a] * r_strong[0] + b.dn_dy[a] * r_strong[1]);
                    r_loc[p_l(a)] += w * r;
                }
            }

            if want_matrix {
                for a in 0..nfun {
                    let dn_a = [b.dn_dx[a], b.dn_dy[a]];
                    let adv_test = pr.rho * (a_q[0] * dn_a[0] + a_q[1] * dn_a[1]);
                    for bf in 0..nfun {
                        let dn_b = [b.dn_dx[bf], b.dn_dy[bf]];
                        let adv_trial =
                            pr.rho * (b.n[bf] / input.dt + a_q[0] * dn_b[0] + a_q[1] * dn_b[1]);
                        let grad_dot = dn_a[0] * dn_b[0] + dn_a[1] * dn_b[1];
                        // velocity-velocity
                        let diag = b.n[a] * adv_trial
                            + pr.mu * grad_dot
                            + tau.momentum * adv_test * adv_trial;
                        for i in 0..2 {
                            for j in 0..2 {
                                let mut v = if i == j { diag } else { 0.0 };
                                v += pr.mu * dn_a[j] * dn_b[i];
                                v += tau.continuity * dn_a[i] * dn_b[j];
                                if v != 0.0 {
                                    k_loc[vel_l(a, i)][vel_l(bf, j)] += w * v;
                                }
                            }
                        }
                        if bf < 4 {
                            // velocity-pressure
                            for i in 0..2 {
                                let v = -dn_a[i] * b.n[bf] + tau.momentum * adv_test * dn_b[i];
                                k_loc[vel_l(a, i)][p_l(bf)] += w * v;
                            }
                        }
                        if a < 4 {
                            // pressure-velocity
                            for j in 0..2 {
                                let v = b.n[a] * dn_b[j] + tau.momentum * dn_a[j] * adv_trial;
                                k_loc[p_l(a)][vel_l(bf, j)] += w * v;
                            }
                            if bf < 4 {
                                // pressure-pressure
                                k_loc[p_l(a)][p_l(bf)] += w * tau.momentum * grad_dot;
                            }
                        }
                    }
                }
            }
        }

        // global dof map for the 12 nodal local dofs
        let mut dofs = [0usize; 12];
        for a in 0..4 {
            dofs[2 * a] = dof_ux(nodes[a]);
            dofs[2 * a + 1] = dof_uy(nodes[a]);
            dofs[8 + a] = dof_p(nodes[a], n_nodes);
        }

        if bubble && want_matrix {
            // condense the two bubble dofs at element level
            let kbb = [
                [k_loc[12][12], k_loc[12][13]],
                [k_loc[13][12], k_loc[13][13]],
            ];
            let det = kbb[0][0] * kbb[1][1] - kbb[0][1] * kbb[1][0];
            if det.abs() < 1e-300 {
                return Err(SimError::SolverFailure(format!(
                    "singular bubble block in element {e}"
                )));
            }
            let inv_kbb = [
                [kbb[1][1] / det, -kbb[0][1] / det],
                [-kbb[1][0] / det, kbb[0][0] / det],
            ];
            let mut kbn = [[0.0; 12]; 2];
            let mut knb = [[0.0; 2]; 12];
            for l in 0..12 {
                kbn[0][l] = k_loc[12][l];
                kbn[1][l] = k_loc[13][l];
                knb[l][0] = k_loc[l][12];
                knb[l][1] = k_loc[l][13];
            }
            let rb = [r_loc[12], r_loc[13]];
            // K* = Knn - Knb Kbb^-1 Kbn ; r* = rn - Knb Kbb^-1 rb
            let mut inv_rb = [0.0; 2];
            for i in 0..2 {
                inv_rb[i] = inv_kbb[i][0] * rb[0] + inv_kbb[i][1] * rb[1];
            }
            for l in 0..12 {
                r_loc[l] -= knb[l][0] * inv_rb[0] + knb[l][1] * inv_rb[1];
                for m in 0..12 {
                    let mut corr = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            corr += knb[l][i] * inv_kbb[i][j] * kbn[j][m];
                        }
                    }
                    k_loc[l][m] -= corr;
                }
            }
            bubbles.push(BubbleRecovery {
                elem: e,
                inv_kbb,
                kbn,
                rb,
                dofs,
            });
        }

        // scatter, skipping Dirichlet rows
        for l in 0..12 {
            let g = dofs[l];
            if input.bcs.map(|b| b.is_pinned(g)).unwrap_or(false) {
                continue;
            }
            residual[g] += r_loc[l];
            if let Some(mat) = matrix.as_mut() {
                for m in 0..12 {
                    mat.push(g, dofs[m], k_loc[l][m]);
                }
            }
        }
    }

    // identity rows for pinned dofs (zero increment)
    if let Some(bcs) = input.bcs {
        if let Some(mat) = matrix.as_mut() {
            for g in 0..n_dofs {
                if bcs.is_pinned(g) {
                    mat.push(g, g, 1.0);
                }
            }
        }
    }

    let pinned = match input.bcs {
        Some(bcs) => (0..n_dofs).map(|g| bcs.is_pinned(g)).collect(),
        None => vec![false; n_dofs],
    };
    let system = matrix.map(|m| LinearSystem {
        matrix: m,
        dt: input.dt,
        node_count: n_nodes,
        pinned,
        bubbles,
    });
    Ok((system, residual))
}

/// Advance one step: solve `system.matrix * x = rhs`, add the velocity and
/// pressure increments, and recover the condensed bubble increments.
///
/// The time loop passes the negated assembled residual as `rhs`; the bubble
/// recovery below assumes that convention.
pub fn step_explicit(state: &FieldState, system: &LinearSystem, rhs: &[f64]) -> Result<FieldState> {
    let lu = SparseLu::factorize(&system.matrix)?;
    let x = lu.solve(rhs)?;
    apply_increment(state, system, &x)
}

/// Apply an already-computed increment vector (shared with the constrained
/// solve, whose unknown vector has trailing multipliers).
pub fn apply_increment(
    state: &FieldState,
    system: &LinearSystem,
    increment: &[f64],
) -> Result<FieldState> {
    let n = system.node_count;
    if increment.len() < total_dofs(n) {
        return Err(SimError::InvalidArgument(
            "increment shorter than unknown count".into(),
        ));
    }
    let mut new = state.clone();
    for node in 0..n {
        new.u[node][0] += increment[dof_ux(node)];
        new.u[node][1] += increment[dof_uy(node)];
        new.p[node] += increment[dof_p(node, n)];
    }
    for rec in &system.bubbles {
        let mut dun = [0.0; 12];
        for l in 0..12 {
            dun[l] = increment[rec.dofs[l]];
        }
        let rhs_b = [bubble_rhs(rec, &dun, 0), bubble_rhs(rec, &dun, 1)];
        for i in 0..2 {
            let db = rec.inv_kbb[i][0] * rhs_b[0] + rec.inv_kbb[i][1] * rhs_b[1];
            new.bubble[rec.elem][i] += db;
        }
    }
    new.t = state.t + system.dt;
    new.assert_finite()?;
    Ok(new)
}

#[inline]
fn bubble_rhs(rec: &BubbleRecovery, dun: &[f64; 12], i: usize) -> f64 {
    let mut v = -rec.rb[i];
    for l in 0..12 {
        v -= rec.kbn[i][l] * dun[l];
    }
    v
}
