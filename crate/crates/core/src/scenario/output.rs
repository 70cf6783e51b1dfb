//! File outputs: force history CSV, legacy-ASCII VTK snapshots, and the JSON
//! run summary.

use std::io::Write;
use std::path::Path;

use crate::error::{Result, SimError};
use crate::history::HistoryState;
use crate::levelset::{phase_at, PhaseField};
use crate::mesh::GridMesh;
use crate::ns::FieldState;
use crate::plasticity::{strain_increment_from_gradient, tresca_measure, SoilModel};

use super::runner::{ForceRecord, RunSummary};

/// Deterministic 17-significant-digit float formatting.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write the force history: header plus one row per record.
pub fn write_force_csv(records: &[ForceRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(SimError::InvalidArgument(
            "refusing to write an empty force history".into(),
        ));
    }
    let mut out = String::with_capacity(records.len() * 96 + 64);
    out.push_str("t,fx,fy,n_dimless,embedment\n");
    for r in records {
        out.push_str(&fmt(r.t));
        out.push(',');
        out.push_str(&fmt(r.fx));
        out.push(',');
        out.push_str(&fmt(r.fy));
        out.push(',');
        out.push_str(&fmt(r.n_dimless));
        out.push(',');
        out.push_str(&fmt(r.embedment));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| SimError::Config(format!("summary serialization failed: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Legacy-ASCII structured-grid snapshot with nodal velocity/pressure/level
/// set and per-cell constitutive diagnostics.
pub fn write_field_snapshot(
    path: &Path,
    mesh: &GridMesh,
    state: &FieldState,
    phase: Option<&PhaseField>,
    history: &HistoryState,
    soil: &SoilModel,
) -> Result<()> {
    let n = mesh.node_count;
    let e = mesh.element_count;
    if state.u.len() != n || history.sigma.len() != 4 * e {
        return Err(SimError::InvalidArgument(
            "snapshot fields inconsistent with mesh".into(),
        ));
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);

    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "soilflow snapshot t={:.9e}", state.t)?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_GRID")?;
    writeln!(w, "DIMENSIONS {} {} 1", mesh.nx + 1, mesh.ny + 1)?;
    writeln!(w, "POINTS {n} double")?;
    for node in 0..n {
        let [x, y] = mesh.node_pos(node);
        writeln!(w, "{:.9e} {:.9e} 0.0", x, y)?;
    }

    writeln!(w, "POINT_DATA {n}")?;
    writeln!(w, "VECTORS velocity double")?;
    for node in 0..n {
        writeln!(w, "{:.9e} {:.9e} 0.0", state.u[node][0], state.u[node][1])?;
    }
    writeln!(w, "SCALARS pressure double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for node in 0..n {
        writeln!(w, "{:.9e}", state.p[node])?;
    }
    if let Some(pf) = phase {
        for (k, phi) in pf.phi.iter().enumerate() {
            writeln!(w, "SCALARS phi_{k} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for node in 0..n {
                writeln!(w, "{:.9e}", phi[node])?;
            }
        }
    }

    writeln!(w, "CELL_DATA {e}")?;
    writeln!(w, "SCALARS tresca double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for elem in 0..e {
        let m = (0..4)
            .map(|q| tresca_measure(history.sigma[elem * 4 + q]))
            .sum::<f64>()
            / 4.0;
        writeln!(w, "{:.9e}", m)?;
    }
    writeln!(w, "SCALARS gamma_max double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for elem in 0..e {
        let g = state.velocity_gradient_at(mesh, elem, 0.0, 0.0);
        let inc = strain_increment_from_gradient(&g, 1.0);
        writeln!(w, "{:.9e}", inc.rate_eigs.0 - inc.rate_eigs.1)?;
    }
    writeln!(w, "SCALARS xi double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for elem in 0..e {
        let m = (0..4).map(|q| history.xi[elem * 4 + q]).sum::<f64>() / 4.0;
        writeln!(w, "{:.9e}", m)?;
    }
    writeln!(w, "SCALARS phase_id double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for elem in 0..e {
        let id = match phase {
            None => 1,
            Some(pf) => phase_at(pf, mesh, mesh.element_center(elem))
                .map(|p| p.0)
                .unwrap_or(1),
        };
        writeln!(w, "{:.1}", id as f64)?;
    }
    // transported strength-gradient marker |y0 - y0_free| * k / su0
    writeln!(w, "SCALARS k_marker double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for elem in 0..e {
        let v = match soil.depth_strength {
            None => 0.0,
            Some(d) => {
                let m = (0..4)
                    .map(|q| (history.y0[elem * 4 + q] - d.y0_free).abs())
                    .sum::<f64>()
                    / 4.0;
                m * d.gradient / soil.params.sigma0
            }
        };
        writeln!(w, "{:.9e}", v)?;
    }
    w.flush()?;
    Ok(())
}
