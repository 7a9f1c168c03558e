//! Deterministic forward model g(x): single-phase incompressible pressure
//! solve with Peaceman wells, plus unit-mobility tracer transport, mapping a
//! facies grid to per-well rates and water cuts at the report times.
//!
//! A single consistent unit system is assumed throughout (lengths, time,
//! pressure, permeability all in mutually consistent units); no unit
//! conversion constants appear anywhere.

mod pressure;
mod tracer;

pub use pressure::{solve_pressure, PressureSolution};
pub use tracer::{advance_tracer, max_stable_dt};

use crate::error::{Error, Result};
use crate::geomodel::FaciesGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellKind {
    Producer,
    Injector,
}

/// A vertical well completed in one cell, operated at constant
/// bottom-hole pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct Well {
    pub name: String,
    pub i: usize,
    pub j: usize,
    pub kind: WellKind,
    pub bhp: f64,
}

/// Forward-model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dx: f64,
    pub dy: f64,
    pub thickness: f64,
    pub viscosity: f64,
    pub porosity: f64,
    /// Permeability per facies code (index = code).
    pub perm_by_facies: Vec<f64>,
    pub wells: Vec<Well>,
    pub report_times: Vec<f64>,
    /// Courant number for the explicit upwind transport step.
    pub cfl: f64,
    /// Well radius as a fraction of dx.
    pub well_radius_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dx: 10.0,
            dy: 10.0,
            thickness: 10.0,
            viscosity: 1.0,
            porosity: 0.2,
            perm_by_facies: vec![500.0, 5000.0],
            wells: Vec::new(),
            report_times: Vec::new(),
            cfl: 0.9,
            well_radius_factor: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, nx: usize, ny: usize) -> Result<()> {
        for v in [self.dx, self.dy, self.thickness, self.viscosity] {
            if !(v > 0.0) {
                return Err(Error::validation("geometry and viscosity must be positive".to_string()));
            }
        }
        if !(self.porosity > 0.0 && self.porosity <= 1.0) {
            return Err(Error::validation(format!("porosity {} outside (0, 1]", self.porosity)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::validation(format!("CFL number {} outside (0, 1]", self.cfl)));
        }
        if !(self.well_radius_factor > 0.0) {
            return Err(Error::validation("well radius factor must be positive".to_string()));
        }
        if self.perm_by_facies.iter().any(|&k| !(k > 0.0)) {
            return Err(Error::validation("permeabilities must be positive".to_string()));
        }
        let mut has_prod = false;
        let mut has_inj = false;
        for w in &self.wells {
            if w.i >= nx || w.j >= ny {
                return Err(Error::validation(format!(
                    "well {} at ({}, {}) outside the {}x{} grid",
                    w.name, w.i, w.j, nx, ny
                )));
            }
            match w.kind {
                WellKind::Producer => has_prod = true,
                WellKind::Injector => has_inj = true,
            }
        }
        if !has_prod || !has_inj {
            return Err(Error::validation(
                "need at least one producer and one injector".to_string(),
            ));
        }
        for pair in self.report_times.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::validation("report times must be strictly increasing".to_string()));
            }
        }
        if self.report_times.iter().any(|&t| t < 0.0) {
            return Err(Error::validation("report times must be non-negative".to_string()));
        }
        Ok(())
    }

    /// Pore volume of one cell.
    pub fn cell_pore_volume(&self) -> f64 {
        self.dx * self.dy * self.thickness * self.porosity
    }
}

/// A well's data at one report time. Rates carry the well's own sign
/// convention: production-positive for producers, injection-positive for
/// injectors. Producer water cut is the produced water fraction; injector
/// water cut is 1 (the injected stream is water).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellDatum {
    pub rate: f64,
    pub water_cut: f64,
}

/// Forward-model output: one `WellDatum` per (report time, well), flattened
/// time-major then well-minor in the order of `SimConfig::wells`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedData {
    pub times: Vec<f64>,
    pub well_names: Vec<String>,
    pub rows: Vec<WellDatum>,
}

impl PredictedData {
    pub fn datum(&self, time_idx: usize, well_idx: usize) -> WellDatum {
        self.rows[time_idx * self.well_names.len() + well_idx]
    }

    pub fn well_index(&self, name: &str) -> Option<usize> {
        self.well_names.iter().position(|n| n == name)
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&x| (x - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    /// CSV rows `time,well,quantity,value` (quantities `rate`, `water_cut`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,well,quantity,value\n");
        for (ti, &t) in self.times.iter().enumerate() {
            for (wi, name) in self.well_names.iter().enumerate() {
                let d = self.datum(ti, wi);
                s.push_str(&format!("{t},{name},rate,{}\n", d.rate));
                s.push_str(&format!("{t},{name},water_cut,{}\n", d.water_cut));
            }
        }
        s
    }
}

/// Cellwise permeability lookup from facies codes.
pub fn permeability_from_facies(grid: &FaciesGrid, cfg: &SimConfig) -> Result<Vec<f64>> {
    grid.codes()
        .iter()
        .map(|&c| {
            cfg.perm_by_facies
                .get(c as usize)
                .copied()
                .ok_or_else(|| Error::validation(format!("no permeability mapped for facies code {c}")))
        })
        .collect()
}

/// Run the full forward model: steady pressure once (permeability is
/// time-invariant), then tracer transport to each report time.
pub fn simulate(grid: &FaciesGrid, cfg: &SimConfig) -> Result<PredictedData> {
    cfg.validate(grid.nx(), grid.ny())?;
    if cfg.report_times.is_empty() {
        return Err(Error::validation("need at least one report time".to_string()));
    }
    let perm = permeability_from_facies(grid, cfg)?;
    let sol = solve_pressure(&perm, grid.nx(), grid.ny(), cfg)?;

    let gross: f64 = sol.well_q.iter().map(|q| q.abs()).sum();
    let net: f64 = sol.well_q.iter().sum();
    if gross > 0.0 && net.abs() > 1e-8 * gross {
        return Err(Error::numeric(format!(
            "mass-balance violation: net rate {net} vs gross {gross}"
        )));
    }

    let n = grid.nx() * grid.ny();
    let mut sat = vec![0.0f64; n];
    let mut t = 0.0;
    let max_dt = max_stable_dt(&sol, cfg, grid.nx(), grid.ny());
    let mut rows = Vec::with_capacity(cfg.report_times.len() * cfg.wells.len());
    for &target in &cfg.report_times {
        while t < target {
            let dt = max_dt.min(target - t);
            advance_tracer(&sol, cfg, grid.nx(), grid.ny(), &mut sat, dt)?;
            t += dt;
        }
        for (w, &q) in cfg.wells.iter().zip(&sol.well_q) {
            let (rate, water_cut) = match w.kind {
                WellKind::Producer => (-q, sat[w.j * grid.nx() + w.i]),
                WellKind::Injector => (q, 1.0),
            };
            rows.push(WellDatum { rate, water_cut });
        }
    }
    Ok(PredictedData {
        times: cfg.report_times.clone(),
        well_names: cfg.wells.iter().map(|w| w.name.clone()).collect(),
        rows,
    })
}
