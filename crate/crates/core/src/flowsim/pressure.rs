//! Five-point finite-volume pressure solve with harmonic inter-cell
//! transmissibilities and Peaceman well coupling, via matrix-free conjugate
//! gradients.

use super::{SimConfig, WellKind};
use crate::error::{Error, Result};

/// Converged pressure field with face fluxes and signed well rates
/// (positive into the reservoir).
#[derive(Debug, Clone)]
pub struct PressureSolution {
    pub pressure: Vec<f64>,
    /// Flux from cell (i, j) to (i+1, j); length (nx-1)*ny, index j*(nx-1)+i.
    pub flux_x: Vec<f64>,
    /// Flux from cell (i, j) to (i, j+1); length nx*(ny-1), index j*nx+i.
    pub flux_y: Vec<f64>,
    /// Signed volumetric well rates aligned with the config's well list.
    pub well_q: Vec<f64>,
    pub cg_iterations: usize,
}

struct Stencil {
    nx: usize,
    ny: usize,
    tx: Vec<f64>,
    ty: Vec<f64>,
    /// Peaceman index added to the diagonal of each well cell.
    well_diag: Vec<f64>,
}

impl Stencil {
    /// y = A p for the SPD system A p = b.
    fn apply(&self, p: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for (yi, (&pi, &wd)) in y.iter_mut().zip(p.iter().zip(&self.well_diag)) {
            *yi = wd * pi;
        }
        for j in 0..ny {
            for i in 0..nx - 1 {
                let t = self.tx[j * (nx - 1) + i];
                let a = j * nx + i;
                let d = t * (p[a] - p[a + 1]);
                y[a] += d;
                y[a + 1] -= d;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let t = self.ty[j * nx + i];
                let a = j * nx + i;
                let d = t * (p[a] - p[a + nx]);
                y[a] += d;
                y[a + nx] -= d;
            }
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Peaceman well index for a cell of permeability `k`.
fn well_index(k: f64, cfg: &SimConfig) -> f64 {
    let ro = 0.14 * (cfg.dx * cfg.dx + cfg.dy * cfg.dy).sqrt();
    let rw = cfg.well_radius_factor * cfg.dx;
    2.0 * std::f64::consts::PI * k * cfg.thickness / (cfg.viscosity * (ro / rw).ln())
}

/// Solve the incompressible pressure equation on the cell-centered grid.
///
/// Conjugate gradients run to relative residual 1e-10; the iteration cap
/// scales with the unknown count. With no wells the system is singular and
/// an error is returned before iterating.
pub fn solve_pressure(perm: &[f64], nx: usize, ny: usize, cfg: &SimConfig) -> Result<PressureSolution> {
    if perm.len() != nx * ny {
        return Err(Error::shape("permeability field", &[nx * ny], &[perm.len()]));
    }
    if cfg.wells.is_empty() {
        return Err(Error::numeric(
            "pressure system is singular without any well".to_string(),
        ));
    }
    let n = nx * ny;
    let ax = cfg.dy * cfg.thickness / (cfg.viscosity * cfg.dx);
    let ay = cfg.dx * cfg.thickness / (cfg.viscosity * cfg.dy);
    let mut tx = vec![0.0; (nx - 1) * ny];
    let mut ty = vec![0.0; nx * (ny - 1)];
    for j in 0..ny {
        for i in 0..nx - 1 {
            tx[j * (nx - 1) + i] = ax * harmonic(perm[j * nx + i], perm[j * nx + i + 1]);
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            ty[j * nx + i] = ay * harmonic(perm[j * nx + i], perm[(j + 1) * nx + i]);
        }
    }

    let mut well_diag = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut wi_per_well = Vec::with_capacity(cfg.wells.len());
    for w in &cfg.wells {
        let cell = w.j * nx + w.i;
        let wi = well_index(perm[cell], cfg);
        well_diag[cell] += wi;
        b[cell] += wi * w.bhp;
        wi_per_well.push(wi);
    }

    let stencil = Stencil { nx, ny, tx, ty, well_diag };

    // plain CG from a zero start; the contract requires relative residual
    // <= 1e-10, but downstream symmetry checks are much tighter, so iterate
    // toward machine level and only accept a stagnated solve once the
    // contract tolerance is met
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut p = vec![0.0; n];
    let mut r = b.clone();
    let mut d = r.clone();
    let mut aq = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let tol_required = 1e-10 * norm_b;
    let tol_target = 1e-14 * norm_b;
    let max_iter = 100 * n.max(100);
    let mut iterations = 0;
    let mut best = f64::INFINITY;
    let mut since_improvement = 0;
    while rr.sqrt() > tol_target {
        if rr.sqrt() < best * 0.999 {
            best = rr.sqrt();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement > 50 {
                if rr.sqrt() <= tol_required {
                    break;
                }
                return Err(Error::numeric(format!(
                    "conjugate gradients stagnated at relative residual {}",
                    rr.sqrt() / norm_b
                )));
            }
        }
        if iterations >= max_iter {
            if rr.sqrt() <= tol_required {
                break;
            }
            return Err(Error::numeric(format!(
                "conjugate gradients stalled at residual {} after {max_iter} iterations",
                rr.sqrt() / norm_b
            )));
        }
        stencil.apply(&d, &mut aq);
        let dad: f64 = d.iter().zip(&aq).map(|(a, b)| a * b).sum();
        let alpha = rr / dad;
        for ((pi, &di), (ri, &aqi)) in p.iter_mut().zip(&d).zip(r.iter_mut().zip(&aq)) {
            *pi += alpha * di;
            *ri -= alpha * aqi;
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for (di, &ri) in d.iter_mut().zip(r.iter()) {
            *di = ri + beta * *di;
        }
        rr = rr_new;
        iterations += 1;
    }

    let mut flux_x = vec![0.0; (nx - 1) * ny];
    for j in 0..ny {
        for i in 0..nx - 1 {
            flux_x[j * (nx - 1) + i] =
                stencil.tx[j * (nx - 1) + i] * (p[j * nx + i] - p[j * nx + i + 1]);
        }
    }
    let mut flux_y = vec![0.0; nx * (ny - 1)];
    for j in 0..ny - 1 {
        for i in 0..nx {
            flux_y[j * nx + i] = stencil.ty[j * nx + i] * (p[j * nx + i] - p[(j + 1) * nx + i]);
        }
    }
    let well_q: Vec<f64> = cfg
        .wells
        .iter()
        .zip(&wi_per_well)
        .map(|(w, &wi)| wi * (w.bhp - p[w.j * nx + w.i]))
        .collect();

    Ok(PressureSolution {
        pressure: p,
        flux_x,
        flux_y,
        well_q,
        cg_iterations: iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsim::Well;

    fn line_cfg() -> SimConfig {
        SimConfig {
            dx: 1.0,
            dy: 1.0,
            thickness: 1.0,
            viscosity: 1.0,
            perm_by_facies: vec![1.0],
            wells: vec![
                Well { name: "I".into(), i: 0, j: 0, kind: WellKind::Injector, bhp: 2.0 },
                Well { name: "P".into(), i: 2, j: 0, kind: WellKind::Producer, bhp: 1.0 },
            ],
            report_times: vec![1.0],
            ..SimConfig::default()
        }
    }

    #[test]
    fn three_cell_line_matches_series_network() {
        let cfg = line_cfg();
        let perm = vec![1.0; 3];
        let sol = solve_pressure(&perm, 3, 1, &cfg).unwrap();
        // independent series-conductance solution: two inter-cell faces of
        // transmissibility 1 plus the two well indices
        let wi = 2.0 * std::f64::consts::PI / (0.14f64 * 2f64.sqrt() / 0.1).ln();
        let q_expected = (2.0 - 1.0) / (2.0 / wi + 2.0);
        assert!(
            (sol.well_q[0] - q_expected).abs() < 1e-12,
            "{} vs {}",
            sol.well_q[0],
            q_expected
        );
        assert!((sol.well_q[1] + q_expected).abs() < 1e-12);
        // middle pressure is the average of the end cells
        assert!((sol.pressure[1] - 0.5 * (sol.pressure[0] + sol.pressure[2])).abs() < 1e-12);
    }

    #[test]
    fn converged_solve_balances_mass() {
        let cfg = SimConfig {
            wells: vec![
                Well { name: "I".into(), i: 1, j: 1, kind: WellKind::Injector, bhp: 2000.0 },
                Well { name: "P".into(), i: 14, j: 13, kind: WellKind::Producer, bhp: 1000.0 },
            ],
            ..SimConfig::default()
        };
        let perm: Vec<f64> = (0..16 * 16)
            .map(|i| if i % 7 == 0 { 5000.0 } else { 500.0 })
            .collect();
        let sol = solve_pressure(&perm, 16, 16, &cfg).unwrap();
        let net: f64 = sol.well_q.iter().sum();
        let gross: f64 = sol.well_q.iter().map(|q| q.abs()).sum();
        assert!(net.abs() <= 1e-8 * gross, "net {net} gross {gross}");
    }

    #[test]
    fn symmetric_pattern_gives_symmetric_pressure() {
        // homogeneous field, injector and producer mirror-symmetric about
        // the vertical centerline of an odd grid
        let nx = 11;
        let ny = 7;
        let cfg = SimConfig {
            perm_by_facies: vec![1000.0],
            wells: vec![
                Well { name: "I".into(), i: 1, j: 3, kind: WellKind::Injector, bhp: 2000.0 },
                Well { name: "P".into(), i: 9, j: 3, kind: WellKind::Producer, bhp: 1000.0 },
            ],
            ..SimConfig::default()
        };
        let perm = vec![1000.0; nx * ny];
        let sol = solve_pressure(&perm, nx, ny, &cfg).unwrap();
        assert!((sol.well_q[0] + sol.well_q[1]).abs() <= 1e-10 * sol.well_q[0].abs());
        // antisymmetry of pressure about the mid pressure
        let mid = 1500.0;
        for j in 0..ny {
            for i in 0..nx {
                let a = sol.pressure[j * nx + i] - mid;
                let b = sol.pressure[j * nx + (nx - 1 - i)] - mid;
                assert!((a + b).abs() <= 1e-10 * a.abs().max(1.0), "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn no_wells_is_singular() {
        let cfg = SimConfig { wells: vec![], ..SimConfig::default() };
        assert!(solve_pressure(&[1.0; 9], 3, 3, &cfg).is_err());
    }
}
