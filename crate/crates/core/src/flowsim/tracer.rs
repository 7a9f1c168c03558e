//! First-order upwind tracer transport on the steady flux field. Injector
//! cells source water fraction 1; producers withdraw at the cell fraction.

use super::{PressureSolution, SimConfig, WellKind};
use crate::error::{Error, Result};

/// Largest stable explicit step: `cfl * min(pore volume / outflow)` over
/// cells with any outflow.
pub fn max_stable_dt(sol: &PressureSolution, cfg: &SimConfig, nx: usize, ny: usize) -> f64 {
    let vp = cfg.cell_pore_volume();
    let mut dt = f64::INFINITY;
    let outflow = cell_outflows(sol, cfg, nx, ny);
    for &out in &outflow {
        if out > 0.0 {
            dt = dt.min(vp / out);
        }
    }
    cfg.cfl * dt
}

fn cell_outflows(sol: &PressureSolution, cfg: &SimConfig, nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx - 1 {
            let f = sol.flux_x[j * (nx - 1) + i];
            if f > 0.0 {
                out[j * nx + i] += f;
            } else {
                out[j * nx + i + 1] -= f;
            }
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let f = sol.flux_y[j * nx + i];
            if f > 0.0 {
                out[j * nx + i] += f;
            } else {
                out[(j + 1) * nx + i] -= f;
            }
        }
    }
    for (w, &q) in cfg.wells.iter().zip(&sol.well_q) {
        if q < 0.0 {
            out[w.j * nx + w.i] -= q;
        }
    }
    out
}

/// Advance the water fraction field by `dt` with donor-cell upwinding.
/// `dt` beyond the CFL bound is a contract violation.
pub fn advance_tracer(
    sol: &PressureSolution,
    cfg: &SimConfig,
    nx: usize,
    ny: usize,
    sat: &mut [f64],
    dt: f64,
) -> Result<()> {
    if sat.len() != nx * ny {
        return Err(Error::shape("saturation field", &[nx * ny], &[sat.len()]));
    }
    if !(dt > 0.0) {
        return Err(Error::validation(format!("time step {dt} must be positive")));
    }
    let limit = max_stable_dt(sol, cfg, nx, ny);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::validation(format!(
            "time step {dt} violates the CFL bound {limit}"
        )));
    }

    let vp = cfg.cell_pore_volume();
    let mut delta = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx - 1 {
            let f = sol.flux_x[j * (nx - 1) + i];
            let a = j * nx + i;
            let upwind = if f > 0.0 { sat[a] } else { sat[a + 1] };
            delta[a] -= f * upwind;
            delta[a + 1] += f * upwind;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let f = sol.flux_y[j * nx + i];
            let a = j * nx + i;
            let upwind = if f > 0.0 { sat[a] } else { sat[a + nx] };
            delta[a] -= f * upwind;
            delta[a + nx] += f * upwind;
        }
    }
    for (w, &q) in cfg.wells.iter().zip(&sol.well_q) {
        let cell = w.j * nx + w.i;
        match w.kind {
            // injected stream is water
            WellKind::Injector => delta[cell] += q.max(0.0),
            // produced stream leaves at the cell fraction
            WellKind::Producer => delta[cell] += q.min(0.0) * sat[cell],
        }
    }
    for (s, d) in sat.iter_mut().zip(&delta) {
        *s = (*s + dt * d / vp).clamp(0.0, 1.0);
    }
    Ok(())
}
