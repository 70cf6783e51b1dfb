//! Coupled time loop: history transport, constitutive update, flow assembly,
//! rigid-body constraints, saddle solve, interface transport, outputs.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::history::{build_sample_cloud, nonlocal_transport, HistoryState, KernelParams};
use crate::levelset::{
    assemble_levelset, interpolate_nodal, phase_at, smoothed_heaviside, step_levelset, PhaseField,
    PhaseId,
};
use crate::mesh::{build_grid, GridMesh, Rect};
use crate::ns::{
    apply_increment, assemble_system, dof_p, dof_ux, dof_uy, total_dofs, DirichletBcs,
    ExtraStressField, FieldState, NsInput, PhaseProperties, PropertySampler,
};
use crate::plasticity::{
    strain_increment_from_gradient, update_extra_stress, DepthStrength, SoilModel,
};
use crate::rigid::{
    build_constraints, coulomb_iteration, find_cutting_points, find_inside_nodes, resultant_force,
    solve_saddle, BodyShape, FrictionModel, RigidBody,
};

use super::config::{
    BodyShapeConfig, BoundaryConfig, BoundaryKind, MotionSegment, ScenarioConfig, ScenarioKind,
};
use super::output;

pub const SOIL_PHASE: PhaseId = 1;
pub const WATER_PHASE: PhaseId = 2;

/// One force sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ForceRecord {
    pub t: f64,
    pub fx: f64,
    pub fy: f64,
    /// F/(L*su) on the scenario's resistance axis.
    pub n_dimless: f64,
    /// Pipe embedment w/D (0 where not applicable).
    pub embedment: f64,
}

/// Steady-window statistics of one motion segment (mean over the last half
/// of its recorded steps).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SegmentStats {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub mean_fx: f64,
    pub mean_fy: f64,
    pub mean_n: f64,
    pub std_n: f64,
    pub mean_embedment: f64,
}

/// Shear-band diagnostic at the final step (pipe scenarios).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ShearBandStats {
    pub max_near_body: f64,
    pub domain_median: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub kind: ScenarioKind,
    pub steps: usize,
    pub dt: f64,
    pub wall_time_s: f64,
    pub segments: Vec<SegmentStats>,
    /// Stats of the last motion segment.
    pub steady: SegmentStats,
    pub transport_fallbacks: usize,
    pub clamped_points: usize,
    pub shear_band: Option<ShearBandStats>,
    pub final_body_center: Option<[f64; 2]>,
    #[serde(skip)]
    pub records: Vec<ForceRecord>,
}

/// Property blending across the level-set interface; single-phase runs get
/// the soil everywhere.
struct BlendedProps<'a> {
    mesh: &'a GridMesh,
    phase: Option<&'a PhaseField>,
    soil: PhaseProperties,
    water: PhaseProperties,
}

impl PropertySampler for BlendedProps<'_> {
    fn properties_at(&self, x: [f64; 2]) -> PhaseProperties {
        match self.phase {
            None => self.soil,
            Some(pf) => {
                let phi = interpolate_nodal(self.mesh, &pf.phi[0], x).unwrap_or(1.0);
                let h = smoothed_heaviside(phi, pf.interface_halfwidth);
                PhaseProperties {
                    rho: h * self.soil.rho + (1.0 - h) * self.water.rho,
                    mu: h * self.soil.mu + (1.0 - h) * self.water.mu,
                    body_force: [
                        h * self.soil.body_force[0] + (1.0 - h) * self.water.body_force[0],
                        h * self.soil.body_force[1] + (1.0 - h) * self.water.body_force[1],
                    ],
                    has_history_stress: h >= 0.5,
                }
            }
        }
    }
}

/// Extra stress sampled from the history state: the four element samples
/// define a bilinear extension over the element.
struct HistoryStress<'a> {
    history: &'a HistoryState,
}

impl ExtraStressField for HistoryStress<'_> {
    fn stress_at(&self, elem: usize, xi: f64, eta: f64) -> [f64; 3] {
        let a = 1.0 / 3.0_f64.sqrt();
        let lx = [0.5 * (1.0 - xi / a), 0.5 * (1.0 + xi / a)];
        let ly = [0.5 * (1.0 - eta / a), 0.5 * (1.0 + eta / a)];
        let w = [lx[0] * ly[0], lx[1] * ly[0], lx[0] * ly[1], lx[1] * ly[1]];
        let base = elem * 4;
        let mut s = [0.0; 3];
        for q in 0..4 {
            for c in 0..3 {
                s[c] += w[q] * self.history.sigma[base + q][c];
            }
        }
        s
    }
}

fn build_body(shape: &BodyShapeConfig, friction: FrictionModel, mu_fric: f64) -> RigidBody {
    let shape = match *shape {
        BodyShapeConfig::Segment { x0, y0, x1, y1 } => BodyShape::Polyline {
            vertices: vec![[x0, y0], [x1, y1]],
        },
        BodyShapeConfig::Circle { cx, cy, r } => BodyShape::Circle {
            center: [cx, cy],
            radius: r,
        },
    };
    RigidBody {
        shape,
        velocity: [0.0; 2],
        friction,
        mu_fric,
    }
}

fn build_bcs(mesh: &GridMesh, bounds: &BoundaryConfig) -> DirichletBcs {
    let n = mesh.node_count;
    let mut bcs = DirichletBcs::none(total_dofs(n));
    let x1 = mesh.x0 + mesh.nx as f64 * mesh.hx;
    let y1 = mesh.y0 + mesh.ny as f64 * mesh.hy;
    let tol = 1e-9 * mesh.h_ele();
    for node in 0..n {
        let [x, y] = mesh.node_pos(node);
        let mut pin = |kind: BoundaryKind, tangent_is_x: bool| match kind {
            BoundaryKind::NoSlip => {
                bcs.pin(dof_ux(node));
                bcs.pin(dof_uy(node));
            }
            BoundaryKind::FreeSlip => {
                if tangent_is_x {
                    bcs.pin(dof_uy(node));
                } else {
                    bcs.pin(dof_ux(node));
                }
            }
        };
        if (x - mesh.x0).abs() < tol {
            pin(bounds.left, false);
        }
        if (x - x1).abs() < tol {
            pin(bounds.right, false);
        }
        if (y - mesh.y0).abs() < tol {
            pin(bounds.bottom, true);
        }
        if (y - y1).abs() < tol {
            pin(bounds.top, true);
        }
    }
    // reference pressure at the bottom-right corner
    bcs.pin(dof_p(mesh.nx, n));
    bcs
}

fn schedule_velocity(schedule: &[MotionSegment], t: f64) -> [f64; 2] {
    let mut start = 0.0;
    for seg in schedule {
        if t < start + seg.duration {
            return [seg.vx, seg.vy];
        }
        start += seg.duration;
    }
    [0.0; 2]
}

fn body_center(body: &RigidBody) -> Option<[f64; 2]> {
    match &body.shape {
        BodyShape::Circle { center, .. } => Some(*center),
        BodyShape::Polyline { .. } => None,
    }
}

fn dimensionless(kind: ScenarioKind, f: [f64; 2], l: f64, su: f64) -> f64 {
    let p = match kind {
        ScenarioKind::PlateDrag | ScenarioKind::PipeDrag | ScenarioKind::PipeLateral => f[0],
        ScenarioKind::PipePenetration => f[1],
    };
    p.abs() / (l * su)
}

fn embedment(config: &ScenarioConfig, body: &RigidBody) -> f64 {
    let (Some(w), Some(c)) = (&config.water, body_center(body)) else {
        return 0.0;
    };
    let BodyShape::Circle { radius, .. } = body.shape else {
        return 0.0;
    };
    ((w.soil_surface_y - (c[1] - radius)) / config.length_ref).max(0.0)
}

/// Median shear strain rate over all elements and its maximum near the body
/// boundary (within two cells).
fn shear_band_stats(mesh: &GridMesh, state: &FieldState, body: &RigidBody) -> ShearBandStats {
    let mut all = Vec::with_capacity(mesh.element_count);
    let mut near_max: f64 = 0.0;
    let band = 2.0 * mesh.h_ele();
    for e in 0..mesh.element_count {
        let g = state.velocity_gradient_at(mesh, e, 0.0, 0.0);
        let inc = strain_increment_from_gradient(&g, 1.0);
        let gamma = inc.rate_eigs.0 - inc.rate_eigs.1;
        all.push(gamma);
        let c = mesh.element_center(e);
        if crate::rigid::signed_distance(body, c).abs() <= band {
            near_max = near_max.max(gamma);
        }
    }
    all.sort_by(f64::total_cmp);
    let median = all[all.len() / 2];
    ShearBandStats {
        max_near_body: near_max,
        domain_median: median,
        ratio: if median > 0.0 {
            near_max / median
        } else {
            f64::INFINITY
        },
    }
}

fn segment_stats(
    schedule: &[MotionSegment],
    records: &[ForceRecord],
    t_total: f64,
) -> Vec<SegmentStats> {
    let mut out = Vec::new();
    let mut start = 0.0;
    for (index, seg) in schedule.iter().enumerate() {
        if start >= t_total {
            break;
        }
        let end = (start + seg.duration).min(t_total);
        let window_start = start + 0.5 * (end - start);
        let in_window: Vec<&ForceRecord> = records
            .iter()
            .filter(|r| r.t > window_start && r.t <= end + 1e-12)
            .collect();
        if !in_window.is_empty() {
            let n = in_window.len() as f64;
            let mean_fx = in_window.iter().map(|r| r.fx).sum::<f64>() / n;
            let mean_fy = in_window.iter().map(|r| r.fy).sum::<f64>() / n;
            let mean_n = in_window.iter().map(|r| r.n_dimless).sum::<f64>() / n;
            let var = in_window
                .iter()
                .map(|r| (r.n_dimless - mean_n).powi(2))
                .sum::<f64>()
                / n;
            let mean_embedment = in_window.iter().map(|r| r.embedment).sum::<f64>() / n;
            out.push(SegmentStats {
                index,
                t_start: start,
                t_end: end,
                samples: in_window.len(),
                mean_fx,
                mean_fy,
                mean_n,
                std_n: var.sqrt(),
                mean_embedment,
            });
        }
        start += seg.duration;
    }
    out
}

fn configure_solver_threads() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        let threads = std::env::var("SOILFLOW_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(1);
        if threads > 1 {
            faer::set_global_parallelism(faer::Par::rayon(threads));
        } else {
            faer::set_global_parallelism(faer::Par::Seq);
        }
    });
}

/// Execute a scenario. When `out_dir` is given, writes `forces.csv`,
/// `summary.json` and periodic VTK snapshots there.
pub fn run(config: &ScenarioConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    configure_solver_threads();
    let wall_start = Instant::now();

    let mesh = build_grid(
        config.domain.nx,
        config.domain.ny,
        Rect::new(
            config.domain.x0,
            config.domain.y0,
            config.domain.lx,
            config.domain.ly,
        ),
    )?;
    let dt = config.time.dt;
    let bcs = build_bcs(&mesh, &config.boundaries);

    // elastic wave limit for the explicit extra-stress update
    let g_mod = config.soil_params().shear_modulus();
    let c_s = (g_mod / config.soil.rho).sqrt();
    if dt > 0.5 * mesh.h_ele() / c_s {
        eprintln!(
            "warning: dt={dt} exceeds half the elastic transit time {:.3e}; \
             the explicit stress update may be unstable",
            mesh.h_ele() / c_s
        );
    }

    let mut state = FieldState::zeros(&mesh);
    if config.geostatic_init {
        if let Some(w) = &config.water {
            let gamma = config.soil.submerged_unit_weight;
            for node in 0..mesh.node_count {
                let y = mesh.node_pos(node)[1];
                state.p[node] = gamma * (w.soil_surface_y - y).max(0.0);
            }
        }
    }

    let cloud = build_sample_cloud(&mesh);
    let mut history = HistoryState::initial(&cloud);
    let kernel = config
        .kernel
        .unwrap_or_else(|| KernelParams::defaults_for(&mesh));

    let mut phase: Option<PhaseField> = config.water.as_ref().map(|w| {
        let phi = (0..mesh.node_count)
            .map(|n| w.soil_surface_y - mesh.node_pos(n)[1])
            .collect();
        PhaseField::single(phi, &mesh, config.beta1)
    });

    let soil_model = SoilModel {
        params: config.soil_params(),
        depth_strength: (config.soil.strength_gradient != 0.0).then(|| DepthStrength {
            gradient: config.soil.strength_gradient,
            y0_free: config
                .water
                .as_ref()
                .map(|w| w.soil_surface_y)
                .unwrap_or(0.0),
        }),
        phase: SOIL_PHASE,
    };
    let soil_props = PhaseProperties {
        rho: config.soil.rho,
        mu: config.soil.mu,
        body_force: [0.0, -config.soil.submerged_unit_weight],
        has_history_stress: true,
    };
    let water_props = config
        .water
        .as_ref()
        .map(|w| PhaseProperties {
            rho: w.rho,
            mu: w.mu,
            body_force: [0.0; 2],
            has_history_stress: false,
        })
        .unwrap_or(soil_props);

    let mut body = build_body(&config.body.shape, config.body.friction, config.body.mu_fric);
    body.validate()?;

    let mut records: Vec<ForceRecord> = Vec::with_capacity(config.time.steps);
    let mut transport_fallbacks = 0usize;
    let mut clamped_points = 0usize;

    for step in 0..config.time.steps {
        body.velocity = schedule_velocity(&config.body.schedule, state.t);

        // 1. convected non-local transport of the history
        let (h_transported, tstats) =
            nonlocal_transport(&history, &cloud, &mesh, &state, dt, &kernel)?;
        transport_fallbacks += tstats.empty_fallbacks;
        clamped_points += tstats.clamped;
        history = h_transported;

        // 2. constitutive update
        {
            let phase_ref = phase.as_ref();
            let mesh_ref = &mesh;
            let phase_of = move |x: [f64; 2]| -> PhaseId {
                match phase_ref {
                    None => SOIL_PHASE,
                    Some(pf) => phase_at(pf, mesh_ref, x).map(|p| p.0).unwrap_or(SOIL_PHASE),
                }
            };
            let (h_updated, _pstats) =
                update_extra_stress(&history, &cloud, &mesh, &state, dt, &phase_of, &soil_model)?;
            history = h_updated;
        }

        // 3. flow system at the current state
        let props = BlendedProps {
            mesh: &mesh,
            phase: phase.as_ref(),
            soil: soil_props,
            water: water_props,
        };
        let stress = HistoryStress { history: &history };
        let prev_u = state.u.clone();
        let prev_bubble = state.bubble.clone();
        let mut input = NsInput::new(&mesh, &state, &prev_u, &prev_bubble, &props, &stress, dt);
        input.bubble = config.bubble;
        input.bcs = Some(&bcs);
        let (system, residual) = assemble_system(&input)?;
        let rhs: Vec<f64> = residual.iter().map(|v| -v).collect();

        // 4. constraints at the current body position
        let cuts = find_cutting_points(&body, &mesh);
        let inside = find_inside_nodes(&body, &mesh);
        let mut constraints = build_constraints(&cuts, &inside, &body);

        // 5. constrained solve
        let sol = match config.body.friction {
            FrictionModel::Coulomb => {
                coulomb_iteration(&system, &mut constraints, &rhs, &state, config.body.mu_fric)
            }
            _ => solve_saddle(&system, &mut constraints, &rhs, &state),
        }
        .map_err(|e| SimError::SolverFailure(format!("step {step}: {e}")))?;

        // 6. field update
        state = apply_increment(&state, &system, &sol.increment)?;

        // 7. interface transport with the updated velocity
        if let Some(pf) = phase.as_mut() {
            let sys = assemble_levelset(&pf.phi[0], &state.u, &mesh, dt, pf.beta1);
            pf.phi[0] = step_levelset(&pf.phi[0], &sys, dt)
                .map_err(|e| SimError::SolverFailure(format!("level set, step {step}: {e}")))?;
        }

        // 8. body moves with its prescribed velocity
        body = body.translated([body.velocity[0] * dt, body.velocity[1] * dt]);

        // 9. record forces / outputs
        let f_raw = resultant_force(&constraints)?;
        let f = [
            f_raw[0] * config.force_factor,
            f_raw[1] * config.force_factor,
        ];
        records.push(ForceRecord {
            t: state.t,
            fx: f[0],
            fy: f[1],
            n_dimless: dimensionless(config.kind, f, config.length_ref, config.su_ref),
            embedment: embedment(config, &body),
        });

        if let Some(dir) = out_dir {
            let every = config.output.snapshot_every;
            if every > 0 && (step + 1) % every == 0 {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}_{:06}.vtk", config.name, step + 1));
                output::write_field_snapshot(
                    &path,
                    &mesh,
                    &state,
                    phase.as_ref(),
                    &history,
                    &soil_model,
                )?;
            }
        }
    }

    let shear_band = match body.shape {
        BodyShape::Circle { .. } => Some(shear_band_stats(&mesh, &state, &body)),
        BodyShape::Polyline { .. } => None,
    };
    let segments = segment_stats(&config.body.schedule, &records, state.t);
    let steady = *segments
        .last()
        .ok_or_else(|| SimError::StateError("no steady window recorded".into()))?;

    let summary = RunSummary {
        name: config.name.clone(),
        kind: config.kind,
        steps: config.time.steps,
        dt,
        wall_time_s: wall_start.elapsed().as_secs_f64(),
        segments,
        steady,
        transport_fallbacks,
        clamped_points,
        shear_band,
        final_body_center: body_center(&body),
        records,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        output::write_force_csv(&summary.records, &dir.join("forces.csv"))?;
        output::write_summary(&summary, &dir.join("summary.json"))?;
    }
    Ok(summary)
}
