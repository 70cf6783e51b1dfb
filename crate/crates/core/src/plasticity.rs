//! Per-sample-point elastoplastic update of the extra stress.
//!
//! The deviatoric trial stress grows elastically with the strain increment
//! from the velocity field; when the plane-strain maximum-shear measure
//! exceeds the current yield stress, the deviator is scaled radially back
//! onto the yield surface. The yield stress softens with the accumulated
//! plastic strain (remoulding) and hardens with the shear strain rate, so
//! the consistency condition is a scalar nonlinear equation in the plastic
//! multiplier; it is solved by bisection. The mean (pressure) part of the
//! extra stress is held at zero: the flow pressure carries it.

use crate::error::{Result, SimError};
use crate::history::{HistoryState, SamplePointCloud};
use crate::levelset::PhaseId;
use crate::mesh::{GridMesh, Located};
use crate::ns::FieldState;

/// Material parameters of the sheared soil.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SoilParams {
    /// Intact yield stress (undrained shear strength).
    pub sigma0: f64,
    /// Fully remoulded strength ratio, 1/S_t.
    pub delta_rem: f64,
    /// Plastic strain at which remoulding is 95% complete.
    pub xi95: f64,
    /// Strength increase per decade of shear strain rate.
    pub mu_rate: f64,
    /// Reference shear strain rate (1/s).
    pub gamma_ref: f64,
    /// Elastic modulus.
    pub young: f64,
    /// Poisson ratio.
    pub poisson: f64,
}

impl SoilParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma0 > 0.0
            && self.delta_rem > 0.0
            && self.delta_rem <= 1.0
            && self.xi95 > 0.0
            && self.mu_rate >= 0.0
            && self.gamma_ref > 0.0
            && self.young > 0.0
            && self.poisson > 0.0
            && self.poisson < 0.5;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!("invalid soil parameters: {self:?}")))
        }
    }

    pub fn shear_modulus(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }
}

/// Incremental strain at a sample point.
#[derive(Debug, Clone, Copy)]
pub struct StrainIncrement {
    /// (e_xx, e_yy, e_xy) of sym(grad u) * dt.
    pub d_eps: [f64; 3],
    /// Principal strain rates, descending.
    pub rate_eigs: (f64, f64),
}

impl StrainIncrement {
    /// Maximum shear strain rate, e1 - e2.
    pub fn gamma_max(&self) -> f64 {
        self.rate_eigs.0 - self.rate_eigs.1
    }
}

/// Strain increment from the velocity field at a physical point.
pub fn strain_increment(
    mesh: &GridMesh,
    state: &FieldState,
    point: [f64; 2],
    dt: f64,
) -> Result<StrainIncrement> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidArgument("dt must be positive".into()));
    }
    let Located::Inside { element, xi, eta } = mesh.locate_point(point) else {
        return Err(SimError::InvalidArgument(format!(
            "point {point:?} outside the grid"
        )));
    };
    let g = state.velocity_gradient_at(mesh, element, xi, eta);
    Ok(strain_increment_from_gradient(&g, dt))
}

/// Strain increment from a known velocity gradient.
pub fn strain_increment_from_gradient(grad: &[[f64; 2]; 2], dt: f64) -> StrainIncrement {
    let exx = grad[0][0];
    let eyy = grad[1][1];
    let exy = 0.5 * (grad[0][1] + grad[1][0]);
    let mean = 0.5 * (exx + eyy);
    let r = (0.25 * (exx - eyy) * (exx - eyy) + exy * exy).sqrt();
    StrainIncrement {
        d_eps: [exx * dt, eyy * dt, exy * dt],
        rate_eigs: (mean + r, mean - r),
    }
}

/// Plane-strain maximum-shear stress measure of the deviator.
pub fn tresca_measure(sigma: [f64; 3]) -> f64 {
    // the diagonal difference cancels any isotropic part
    (0.25 * (sigma[0] - sigma[1]) * (sigma[0] - sigma[1]) + sigma[2] * sigma[2]).sqrt()
}

/// Softening/rate-hardening yield stress.
pub fn yield_stress(xi: f64, gamma_max: f64, params: &SoilParams) -> f64 {
    let soften = params.delta_rem + (1.0 - params.delta_rem) * (-xi / params.xi95).exp();
    let rate = 1.0
        + params.mu_rate * (gamma_max.max(params.gamma_ref) / params.gamma_ref).log10();
    params.sigma0 * soften * rate
}

/// Outcome of the stress update at one point.
#[derive(Debug, Clone, Copy)]
pub struct PlasticReturn {
    pub sigma_new: [f64; 3],
    pub xi_new: f64,
    pub dlambda: f64,
    pub yielded: bool,
}

/// Elastic-trial / radial-return update with bisection on the consistency
/// condition. `sigma_old` is the stress the elastic increment is added to.
pub fn return_map(
    sigma_old: [f64; 3],
    d_eps: &StrainIncrement,
    xi_old: f64,
    dt: f64,
    params: &SoilParams,
) -> Result<PlasticReturn> {
    let g = params.shear_modulus();
    // deviatoric elastic increment; the volumetric part belongs to the
    // flow pressure
    let tr = d_eps.d_eps[0] + d_eps.d_eps[1];
    let dev_inc = [
        d_eps.d_eps[0] - 0.5 * tr,
        d_eps.d_eps[1] - 0.5 * tr,
        d_eps.d_eps[2],
    ];
    let sigma_tr = [
        sigma_old[0] + 2.0 * g * dev_inc[0],
        sigma_old[1] + 2.0 * g * dev_inc[1],
        sigma_old[2] + 2.0 * g * dev_inc[2],
    ];
    let measure_tr = tresca_measure(sigma_tr);
    let gamma_kin = d_eps.gamma_max();

    if measure_tr <= yield_stress(xi_old, gamma_kin, params) {
        return Ok(PlasticReturn {
            sigma_new: sigma_tr,
            xi_new: xi_old,
            dlambda: 0.0,
            yielded: false,
        });
    }

    let tol_psi = 1e-9 * params.sigma0;
    let psi = |dl: f64| -> f64 {
        measure_tr - g * dl - yield_stress(xi_old + dl, dl / dt, params)
    };

    // bracket: psi(0) > 0 since the rate factor is >= 1; expand the upper
    // end until the sign changes
    let mut hi = measure_tr / g;
    let mut doublings = 0;
    while psi(hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(SimError::ConsistencyFailure {
                point: usize::MAX,
                detail: format!(
                    "no sign change up to dlambda={hi:.3e} (measure_tr={measure_tr:.6e}, xi={xi_old:.3e}, dt={dt:.3e})"
                ),
            });
        }
    }
    let mut lo = 0.0;
    let mut mid = 0.5 * hi;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let f = psi(mid);
        if f.abs() <= tol_psi || (hi - lo) < 1e-14 {
            break;
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dlambda = mid;

    // radial scaling of the deviator; the mean part is untouched
    let mean = 0.5 * (sigma_tr[0] + sigma_tr[1]);
    let dev = [sigma_tr[0] - mean, sigma_tr[1] - mean, sigma_tr[2]];
    let scale = if measure_tr > 0.0 {
        (measure_tr - g * dlambda) / measure_tr
    } else {
        0.0
    };
    let sigma_new = [
        mean + scale * dev[0],
        mean + scale * dev[1],
        scale * dev[2],
    ];
    Ok(PlasticReturn {
        sigma_new,
        xi_new: xi_old + dlambda,
        dlambda,
        yielded: true,
    })
}

/// Depth-dependent strength: the operative intact strength at a point is
/// sigma0 + gradient * |y0 - y0_free|, reconstructed from the transported
/// initial-depth marker.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DepthStrength {
    pub gradient: f64,
    pub y0_free: f64,
}

/// Soil constitutive model: parameters plus optional depth profile.
#[derive(Debug, Clone)]
pub struct SoilModel {
    pub params: SoilParams,
    pub depth_strength: Option<DepthStrength>,
    /// Phase id that carries this constitutive law.
    pub phase: PhaseId,
}

impl SoilModel {
    pub fn operative_params(&self, y0: f64) -> SoilParams {
        match self.depth_strength {
            None => self.params,
            Some(d) => {
                let mut p = self.params;
                p.sigma0 += d.gradient * (y0 - d.y0_free).abs();
                p
            }
        }
    }
}

/// Counters from one constitutive sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub yielded_points: usize,
    pub soil_points: usize,
}

/// Update the extra stress at every sample point: soil points get the full
/// elastoplastic return, other phases pass through unchanged.
pub fn update_extra_stress(
    history: &HistoryState,
    cloud: &SamplePointCloud,
    mesh: &GridMesh,
    state: &FieldState,
    dt: f64,
    phase_of: &dyn Fn([f64; 2]) -> PhaseId,
    soil: &SoilModel,
) -> Result<(HistoryState, UpdateStats)> {
    history.assert_sized(cloud)?;
    let mut out = history.clone();
    let mut stats = UpdateStats::default();
    for m in 0..cloud.count() {
        let p = cloud.positions[m];
        if phase_of(p) != soil.phase {
            continue;
        }
        stats.soil_points += 1;
        let inc = strain_increment(mesh, state, p, dt)?;
        let params = soil.operative_params(history.y0[m]);
        let ret = return_map(history.sigma[m], &inc, history.xi[m], dt, &params).map_err(
            |e| match e {
                SimError::ConsistencyFailure { detail, .. } => {
                    SimError::ConsistencyFailure { point: m, detail }
                }
                other => other,
            },
        )?;
        out.sigma[m] = ret.sigma_new;
        out.xi[m] = ret.xi_new;
        if ret.yielded {
            stats.yielded_points += 1;
        }
    }
    out.time = state.t;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::build_sample_cloud;
    use crate::mesh::{build_grid, Rect};

    fn params(sigma0: f64) -> SoilParams {
        SoilParams {
            sigma0,
            delta_rem: 1.0,
            xi95: 10.0,
            mu_rate: 0.0,
            gamma_ref: 3e-6,
            young: 400.0 * sigma0,
            poisson: 0.495,
        }
    }

    #[test]
    fn strain_increment_examples() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let mut state = FieldState::zeros(&mesh);
        let inc = strain_increment(&mesh, &state, [0.5, 0.5], 0.1).unwrap();
        assert_eq!(inc.d_eps, [0.0; 3]);
        assert_eq!(inc.rate_eigs, (0.0, 0.0));

        // simple shear du_x/dy = 2
        let gdot = 2.0;
        for n in 0..mesh.node_count {
            state.u[n] = [gdot * mesh.node_pos(n)[1], 0.0];
        }
        let dt = 0.05;
        let inc = strain_increment(&mesh, &state, [0.5, 0.5], dt).unwrap();
        assert!((inc.d_eps[2] - gdot * dt / 2.0).abs() < 1e-13);
        assert!((inc.rate_eigs.0 - gdot / 2.0).abs() < 1e-13);
        assert!((inc.rate_eigs.1 + gdot / 2.0).abs() < 1e-13);
        assert!((inc.gamma_max() - gdot).abs() < 1e-13);

        // pure expansion u = (x, y)
        for n in 0..mesh.node_count {
            let [x, y] = mesh.node_pos(n);
            state.u[n] = [x, y];
        }
        let inc = strain_increment(&mesh, &state, [0.4, 0.6], dt).unwrap();
        assert!((inc.d_eps[0] - dt).abs() < 1e-13);
        assert!((inc.d_eps[1] - dt).abs() < 1e-13);
        assert!(inc.d_eps[2].abs() < 1e-13);
        assert!((inc.rate_eigs.0 - 1.0).abs() < 1e-13);
        assert!((inc.rate_eigs.1 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn tresca_examples() {
        assert_eq!(tresca_measure([5.0, 5.0, 0.0]), 0.0);
        assert_eq!(tresca_measure([0.0, 0.0, -3.0]), 3.0);
        assert_eq!(tresca_measure([2.0, -2.0, 0.0]), 2.0);
        // isotropic shift does not matter
        assert!((tresca_measure([7.0, 3.0, 1.0]) - tresca_measure([4.0, 0.0, 1.0])).abs() < 1e-15);
    }

    #[test]
    fn yield_stress_spot_values() {
        let mut p = params(1100.0);
        p.delta_rem = 1.0 / 3.2;
        p.xi95 = 10.0;
        // intact, at or below the reference rate
        assert!((yield_stress(0.0, 0.0, &p) - 1100.0).abs() < 1e-12 * 1100.0);
        assert!((yield_stress(0.0, p.gamma_ref, &p) - 1100.0).abs() < 1e-12 * 1100.0);
        // fully remoulded
        let remoulded = yield_stress(1000.0, p.gamma_ref, &p);
        assert!((remoulded - 1100.0 / 3.2).abs() < 1e-12 * 1100.0);
        // one decade of rate with mu = 0.1
        let mut pr = params(1100.0);
        pr.mu_rate = 0.1;
        let v = yield_stress(0.0, 10.0 * pr.gamma_ref, &pr);
        assert!((v - 1.1 * 1100.0).abs() < 1e-12 * 1100.0);
    }

    #[test]
    fn yield_stress_monotonicity() {
        let mut p = params(1000.0);
        p.delta_rem = 1.0 / 3.2;
        p.mu_rate = 0.05;
        // non-increasing in accumulated plastic strain
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let v = yield_stress(k as f64 * 0.5, p.gamma_ref, &p);
            assert!(v <= last + 1e-12);
            last = v;
        }
        // non-decreasing in shear strain rate
        let mut last = 0.0_f64;
        for k in 0..10 {
            let v = yield_stress(0.0, p.gamma_ref * 10f64.powi(k), &p);
            assert!(v + 1e-12 >= last);
            last = v;
        }
    }

    #[test]
    fn elastic_branch_keeps_trial() {
        let p = params(1000.0);
        let inc = StrainIncrement {
            d_eps: [1e-7, -1e-7, 5e-8],
            rate_eigs: (1e-5, -1e-5),
        };
        let ret = return_map([0.0; 3], &inc, 0.0, 0.01, &p).unwrap();
        assert!(!ret.yielded);
        assert_eq!(ret.dlambda, 0.0);
        assert_eq!(ret.xi_new, 0.0);
        let g = p.shear_modulus();
        assert!((ret.sigma_new[2] - 2.0 * g * 5e-8).abs() < 1e-12);
    }

    #[test]
    fn constant_yield_matches_closed_form_radial_return() {
        let p = params(1000.0); // delta_rem = 1, mu_rate = 0: constant yield
        let g = p.shear_modulus();
        let dt = 0.01;
        // big shear increment forces yielding
        let gam = 0.05;
        let inc = StrainIncrement {
            d_eps: [0.0, 0.0, gam / 2.0],
            rate_eigs: (gam / (2.0 * dt), -gam / (2.0 * dt)),
        };
        let ret = return_map([0.0; 3], &inc, 0.3, dt, &p).unwrap();
        assert!(ret.yielded);
        let measure_tr = g * gam;
        let dl_closed = (measure_tr - p.sigma0) / g;
        assert!(
            (ret.dlambda - dl_closed).abs() < 1e-10,
            "dlambda {} vs closed form {}",
            ret.dlambda,
            dl_closed
        );
        assert!((tresca_measure(ret.sigma_new) - p.sigma0).abs() < 1e-9 * p.sigma0);
        assert!((ret.xi_new - 0.3 - dl_closed).abs() < 1e-10);
    }

    #[test]
    fn softening_increases_the_multiplier() {
        let dt = 0.01;
        let gam = 0.05;
        let inc = StrainIncrement {
            d_eps: [0.0, 0.0, gam / 2.0],
            rate_eigs: (gam / (2.0 * dt), -gam / (2.0 * dt)),
        };
        let p_const = params(1000.0);
        let mut p_soft = params(1000.0);
        p_soft.delta_rem = 1.0 / 3.2;
        p_soft.xi95 = 10.0;
        let r_const = return_map([0.0; 3], &inc, 0.0, dt, &p_const).unwrap();
        let r_soft = return_map([0.0; 3], &inc, 0.0, dt, &p_soft).unwrap();
        assert!(r_soft.dlambda > r_const.dlambda);
        // consistency: the final measure sits on the shrunk yield surface
        let sy = yield_stress(r_soft.xi_new, r_soft.dlambda / dt, &p_soft);
        assert!((tresca_measure(r_soft.sigma_new) - sy).abs() <= 1e-9 * p_soft.sigma0);

        // dense scan: psi changes sign exactly once before 2*dlambda
        let g = p_soft.shear_modulus();
        let measure_tr = g * gam;
        let mut sign_changes = 0;
        let mut last = measure_tr - yield_stress(0.0, 0.0, &p_soft);
        for k in 1..=2000 {
            let dl = 2.0 * r_soft.dlambda * k as f64 / 2000.0;
            let f = measure_tr - g * dl - yield_stress(dl, dl / dt, &p_soft);
            if f.signum() != last.signum() {
                sign_changes += 1;
            }
            last = f;
        }
        assert_eq!(sign_changes, 1);
    }

    #[test]
    fn pressure_part_is_never_touched() {
        let mut p = params(500.0);
        p.delta_rem = 0.5;
        let dt = 0.02;
        let mut seed = 77u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        for _ in 0..200 {
            let sig = [2000.0 * rnd(), 2000.0 * rnd(), 2000.0 * rnd()];
            let e: [f64; 3] = [0.01 * rnd(), 0.01 * rnd(), 0.01 * rnd()];
            let mean = 0.5 * (e[0] + e[1]);
            let r = (0.25 * (e[0] - e[1]).powi(2) + e[2] * e[2]).sqrt() / dt;
            let inc = StrainIncrement {
                d_eps: e,
                rate_eigs: (mean / dt + r, mean / dt - r),
            };
            let xi = rnd().abs();
            let ret = return_map(sig, &inc, xi, dt, &p).unwrap();
            let tr_old = 0.5 * (sig[0] + sig[1]);
            let tr_new = 0.5 * (ret.sigma_new[0] + ret.sigma_new[1]);
            assert!(
                (tr_new - tr_old).abs() < 1e-9 * (1.0 + tr_old.abs()),
                "pressure moved: {tr_old} -> {tr_new}"
            );
            assert!(ret.dlambda >= 0.0);
            assert!(ret.xi_new >= xi);
            if ret.yielded {
                let sy = yield_stress(ret.xi_new, ret.dlambda / dt, &p);
                assert!((tresca_measure(ret.sigma_new) - sy).abs() <= 1e-9 * p.sigma0);
            }
        }
    }

    #[test]
    fn shrinking_increment_reaches_elastic_branch() {
        let p = params(800.0);
        let mut e: [f64; 3] = [0.1, -0.05, 0.08];
        let dt = 0.01;
        let mut hit_elastic = false;
        for _ in 0..60 {
            let mean = 0.5 * (e[0] + e[1]);
            let r = (0.25 * (e[0] - e[1]).powi(2) + e[2] * e[2]).sqrt() / dt;
            let inc = StrainIncrement {
                d_eps: e,
                rate_eigs: (mean / dt + r, mean / dt - r),
            };
            let ret = return_map([100.0, -100.0, 50.0], &inc, 0.2, dt, &p).unwrap();
            if !ret.yielded {
                hit_elastic = true;
                break;
            }
            for v in e.iter_mut() {
                *v *= 0.5;
            }
        }
        assert!(hit_elastic);
    }

    #[test]
    fn water_points_pass_through() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let cloud = build_sample_cloud(&mesh);
        let state = FieldState::zeros(&mesh);
        let mut h = HistoryState::initial(&cloud);
        h.sigma[3] = [1.0, -1.0, 0.5];
        let soil = SoilModel {
            params: params(1000.0),
            depth_strength: None,
            phase: 1,
        };
        let all_water = |_: [f64; 2]| -> PhaseId { 2 };
        let (out, stats) =
            update_extra_stress(&h, &cloud, &mesh, &state, 0.01, &all_water, &soil).unwrap();
        assert_eq!(stats.soil_points, 0);
        for m in 0..cloud.count() {
            assert_eq!(out.sigma[m], h.sigma[m]);
            assert_eq!(out.xi[m], h.xi[m]);
        }
    }

    #[test]
    fn rest_velocity_is_fully_elastic() {
        let mesh = build_grid(4, 4, Rect::unit()).unwrap();
        let cloud = build_sample_cloud(&mesh);
        let state = FieldState::zeros(&mesh);
        let mut h = HistoryState::initial(&cloud);
        h.sigma[5] = [300.0, -300.0, 10.0];
        let soil = SoilModel {
            params: params(1000.0),
            depth_strength: None,
            phase: 1,
        };
        let all_soil = |_: [f64; 2]| -> PhaseId { 1 };
        let (out, stats) =
            update_extra_stress(&h, &cloud, &mesh, &state, 0.01, &all_soil, &soil).unwrap();
        assert_eq!(stats.yielded_points, 0);
        for m in 0..cloud.count() {
            assert_eq!(out.sigma[m], h.sigma[m]);
        }
    }

    #[test]
    fn ramped_shear_saturates_at_yield() {
        let mesh = build_grid(2, 2, Rect::unit()).unwrap();
        let mut state = FieldState::zeros(&mesh);
        let gdot = 0.4;
        for n in 0..mesh.node_count {
            state.u[n] = [gdot * mesh.node_pos(n)[1], 0.0];
        }
        let cloud = SamplePointCloud {
            positions: vec![[0.5, 0.5]],
        };
        let mut h = HistoryState::initial(&cloud);
        let p = params(1000.0);
        let soil = SoilModel {
            params: p,
            depth_strength: None,
            phase: 1,
        };
        let all_soil = |_: [f64; 2]| -> PhaseId { 1 };
        let dt = 0.01;
        let mut yielded_at = None;
        let mut xi_prev = 0.0;
        for step in 0..100 {
            let (out, stats) =
                update_extra_stress(&h, &cloud, &mesh, &state, dt, &all_soil, &soil).unwrap();
            if stats.yielded_points > 0 && yielded_at.is_none() {
                yielded_at = Some(step);
            }
            if let Some(y0) = yielded_at {
                if step > y0 {
                    // xi grows linearly: dlambda = gamma_dot * dt each step
                    let dxi = out.xi[0] - xi_prev;
                    assert!((dxi - gdot * dt).abs() < 1e-6, "dxi {dxi}");
                }
            }
            xi_prev = out.xi[0];
            h = out;
        }
        assert!(yielded_at.is_some());
        let measure = tresca_measure(h.sigma[0]);
        assert!(
            (measure - p.sigma0).abs() < 1e-9 * p.sigma0,
            "saturated measure {measure}"
        );
    }

    #[test]
    fn depth_marker_scales_strength() {
        let model = SoilModel {
            params: params(1000.0),
            depth_strength: Some(DepthStrength {
                gradient: 3600.0,
                y0_free: 3.2,
            }),
            phase: 1,
        };
        let p = model.operative_params(1.2);
        assert!((p.sigma0 - (1000.0 + 3600.0 * 2.0)).abs() < 1e-12);
        let p = model.operative_params(3.2);
        assert!((p.sigma0 - 1000.0).abs() < 1e-12);
    }
}
