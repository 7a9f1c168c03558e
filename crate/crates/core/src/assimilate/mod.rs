//! Ensemble smoother with multiple data assimilation in latent space:
//! schedules, observation handling, perturbation draws, and the Kalman-type
//! update with a truncated-spectrum solve.

mod workflow;

pub use workflow::{
    run_assimilation, AssimilationReport, ForwardModel, HardCell, HardDataForward,
    IterationStats, ProductionForward,
};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geomodel::OneHotImage;
use crate::neuralgen::VaeNetwork;
use crate::rng::{derive_seed, rng_from_seed};

/// Fraction of spectral energy retained when inverting `C_dd + alpha C_e`.
pub const DEFAULT_SVD_ENERGY: f64 = 0.999;

/// How a prior latent ensemble was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    /// Encoder means of geostatistical realizations (the default route).
    EncodedRealizations,
    /// Direct draws from N(0, I).
    StandardNormal,
}

/// `n_e` latent column vectors of dimension `n_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEnsemble {
    data: DMatrix<f64>,
    prior_source: PriorSource,
}

impl LatentEnsemble {
    pub fn from_matrix(data: DMatrix<f64>, prior_source: PriorSource) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::validation(format!(
                "ensemble needs at least 2 members for covariances, got {}",
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("latent ensemble contains non-finite entries".to_string()));
        }
        Ok(LatentEnsemble { data, prior_source })
    }

    pub fn from_columns(cols: &[Vec<f64>], prior_source: PriorSource) -> Result<Self> {
        let n_e = cols.len();
        let n_z = cols.first().map(|c| c.len()).unwrap_or(0);
        if cols.iter().any(|c| c.len() != n_z) {
            return Err(Error::validation("latent members have differing lengths".to_string()));
        }
        let data = DMatrix::from_fn(n_z, n_e, |r, c| cols[c][r]);
        Self::from_matrix(data, prior_source)
    }

    pub fn n_z(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_e(&self) -> usize {
        self.data.ncols()
    }

    pub fn member(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn prior_source(&self) -> PriorSource {
        self.prior_source
    }
}

/// Observation descriptor: what was measured, where, and when.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsTarget {
    /// Facies code observed at a cell; enters the smoother as the decoded
    /// probability of that code with target value 1.
    HardFacies { i: usize, j: usize, code: u8 },
    /// Well rate at a report time.
    Rate { well: String, time: f64 },
    /// Producer water cut at a report time.
    WaterCut { well: String, time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub target: ObsTarget,
    pub value: f64,
    pub variance: f64,
}

/// Observed data with per-datum error variances (diagonal C_e).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    pub entries: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(entries: Vec<Observation>) -> Result<Self> {
        let set = ObservationSet { entries };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::validation("observation set is empty".to_string()));
        }
        if self.entries.iter().any(|o| !(o.variance > 0.0)) {
            return Err(Error::validation("observation variances must be positive".to_string()));
        }
        if self.entries.iter().any(|o| !o.value.is_finite()) {
            return Err(Error::validation("observation values must be finite".to_string()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Values the smoother matches: hard facies observations map to a
    /// channel-probability target of 1, everything else to its raw value.
    pub fn smoother_values(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.entries.len(),
            self.entries.iter().map(|o| match o.target {
                ObsTarget::HardFacies { .. } => 1.0,
                _ => o.value,
            }),
        )
    }

    pub fn variances(&self) -> Vec<f64> {
        self.entries.iter().map(|o| o.variance).collect()
    }

    pub fn hard_cells(&self) -> Vec<HardCell> {
        self.entries
            .iter()
            .filter_map(|o| match o.target {
                ObsTarget::HardFacies { i, j, code } => Some(HardCell { i, j, code }),
                _ => None,
            })
            .collect()
    }

    /// Normalized data mismatch of one predicted vector:
    /// `(d - d_obs)^T C_e^{-1} (d - d_obs) / n_d`.
    pub fn normalized_mismatch(&self, predicted: &[f64]) -> Result<f64> {
        if predicted.len() != self.entries.len() {
            return Err(Error::shape(
                "mismatch data length",
                &[self.entries.len()],
                &[predicted.len()],
            ));
        }
        let d_obs = self.smoother_values();
        let sum: f64 = predicted
            .iter()
            .zip(d_obs.iter())
            .zip(self.entries.iter())
            .map(|((&d, &o), e)| (d - o) * (d - o) / e.variance)
            .sum();
        Ok(sum / self.entries.len() as f64)
    }

    /// CSV rows `time,well_or_cell,kind,value,stddev`. Hard cells encode the
    /// location as `i-j` and carry the observed code in `value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,well_or_cell,kind,value,stddev\n");
        for o in &self.entries {
            let (time, loc, kind, value) = match &o.target {
                ObsTarget::HardFacies { i, j, code } => {
                    (0.0, format!("{i}-{j}"), "hard_facies", *code as f64)
                }
                ObsTarget::Rate { well, time } => (*time, well.clone(), "rate", o.value),
                ObsTarget::WaterCut { well, time } => (*time, well.clone(), "water_cut", o.value),
            };
            s.push_str(&format!("{time},{loc},{kind},{value},{}\n", o.variance.sqrt()));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::validation(format!(
                    "observation line {} has {} fields, expected 5",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::validation(format!("bad {what} '{s}' on line {}", lineno + 1)))
            };
            let time = parse(fields[0], "time")?;
            let loc = fields[1].trim();
            let kind = fields[2].trim();
            let value = parse(fields[3], "value")?;
            let stddev = parse(fields[4], "stddev")?;
            let target = match kind {
                "hard_facies" => {
                    let (i, j) = loc
                        .split_once('-')
                        .ok_or_else(|| Error::validation(format!("bad cell '{loc}' on line {}", lineno + 1)))?;
                    ObsTarget::HardFacies {
                        i: i.parse().map_err(|_| Error::validation(format!("bad cell x '{i}'")))?,
                        j: j.parse().map_err(|_| Error::validation(format!("bad cell y '{j}'")))?,
                        code: value as u8,
                    }
                }
                "rate" => ObsTarget::Rate { well: loc.to_string(), time },
                "water_cut" => ObsTarget::WaterCut { well: loc.to_string(), time },
                other => {
                    return Err(Error::validation(format!(
                        "unknown observation kind '{other}' on line {}",
                        lineno + 1
                    )))
                }
            };
            entries.push(Observation { target, value, variance: stddev * stddev });
        }
        Self::new(entries)
    }
}

/// Inflation schedule: `sum(1/alpha_k) = 1` within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct MdaSchedule {
    alphas: Vec<f64>,
}

impl MdaSchedule {
    /// Constant inflation `alpha_k = n_a`.
    pub fn constant(n_a: usize) -> Result<Self> {
        if n_a == 0 {
            return Err(Error::validation("schedule needs at least one iteration".to_string()));
        }
        Self::from_alphas(vec![n_a as f64; n_a])
    }

    /// A user-supplied inflation list, validated.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::validation("schedule needs at least one iteration".to_string()));
        }
        if alphas.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::validation("inflation factors must be positive".to_string()));
        }
        let total: f64 = alphas.iter().map(|a| 1.0 / a).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "inverse inflation factors must sum to 1, got {total}"
            )));
        }
        Ok(MdaSchedule { alphas })
    }

    pub fn n_a(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// Constant-inflation schedule of length `n_a` (`alpha_k = n_a`).
pub fn default_schedule(n_a: usize) -> Result<MdaSchedule> {
    MdaSchedule::constant(n_a)
}

/// Draw the perturbed observation matrix: column j is
/// `d_obs + e_j`, `e_j ~ N(0, alpha C_e)`, with the per-member stream
/// `derive_seed(seed, j)`.
pub fn perturb_observations(
    obs: &ObservationSet,
    alpha: f64,
    n_e: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::validation(format!("inflation factor {alpha} must be positive")));
    }
    obs.validate()?;
    let d_obs = obs.smoother_values();
    let sds: Vec<f64> = obs.entries.iter().map(|o| (alpha * o.variance).sqrt()).collect();
    let n_d = obs.len();
    let mut m = DMatrix::zeros(n_d, n_e);
    for j in 0..n_e {
        let mut rng = rng_from_seed(derive_seed(seed, j as u64));
        for i in 0..n_d {
            let e: f64 = StandardNormal.sample(&mut rng);
            m[(i, j)] = d_obs[i] + sds[i] * e;
        }
    }
    Ok(m)
}

/// One smoother update with an explicit perturbation matrix:
/// `z_j <- z_j + C_zd (C_dd + alpha C_e)^{-1} (d_obs + e_j - d_j)`.
///
/// Covariances use the 1/(n_e - 1) sample normalization; the solve is a
/// truncated symmetric eigendecomposition keeping `svd_energy` of the
/// spectral energy (pseudo-inverse on the discarded tail).
pub fn esmda_update_with_perturbations(
    ensemble: &LatentEnsemble,
    predicted: &DMatrix<f64>,
    obs: &ObservationSet,
    alpha: f64,
    perturbed: &DMatrix<f64>,
    svd_energy: f64,
) -> Result<LatentEnsemble> {
    let n_e = ensemble.n_e();
    let n_d = obs.len();
    if predicted.ncols() != n_e {
        return Err(Error::shape("predicted data columns", &[n_e], &[predicted.ncols()]));
    }
    if predicted.nrows() != n_d {
        return Err(Error::shape("predicted data rows", &[n_d], &[predicted.nrows()]));
    }
    if perturbed.nrows() != n_d || perturbed.ncols() != n_e {
        return Err(Error::shape(
            "perturbed observation matrix",
            &[n_d, n_e],
            &[perturbed.nrows(), perturbed.ncols()],
        ));
    }
    if predicted.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("predicted data contain non-finite entries".to_string()));
    }
    if !(0.0 < svd_energy && svd_energy <= 1.0) {
        return Err(Error::validation(format!("svd energy {svd_energy} outside (0, 1]")));
    }

    let z = ensemble.matrix();
    let z_mean = z.column_mean();
    let d_mean = predicted.column_mean();
    let mut z_dev = z.clone();
    for mut col in z_dev.column_iter_mut() {
        col -= &z_mean;
    }
    let mut d_dev = predicted.clone();
    for mut col in d_dev.column_iter_mut() {
        col -= &d_mean;
    }
    let norm = 1.0 / (n_e as f64 - 1.0);
    let c_zd = (&z_dev * d_dev.transpose()) * norm;
    let mut m = (&d_dev * d_dev.transpose()) * norm;
    for (i, o) in obs.entries.iter().enumerate() {
        m[(i, i)] += alpha * o.variance;
    }

    // truncated pseudo-inverse through the symmetric eigendecomposition
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n_d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for &idx in &order {
        let l = eig.eigenvalues[idx].max(0.0);
        if l <= 0.0 {
            break;
        }
        kept.push(idx);
        acc += l;
        if acc >= svd_energy * total {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::numeric("data covariance has no positive spectrum".to_string()));
    }
    let mut m_inv = DMatrix::zeros(n_d, n_d);
    for &idx in &kept {
        let v = eig.eigenvectors.column(idx);
        let l = eig.eigenvalues[idx];
        m_inv += (&v * v.transpose()) / l;
    }

    let gain = c_zd * m_inv;
    let innovations = perturbed - predicted;
    let updated = z + gain * innovations;
    LatentEnsemble::from_matrix(updated, ensemble.prior_source())
}

/// One smoother update drawing the perturbations internally.
pub fn esmda_update(
    ensemble: &LatentEnsemble,
    predicted: &DMatrix<f64>,
    obs: &ObservationSet,
    alpha: f64,
    seed: u64,
    svd_energy: f64,
) -> Result<LatentEnsemble> {
    let perturbed = perturb_observations(obs, alpha, ensemble.n_e(), seed)?;
    esmda_update_with_perturbations(ensemble, predicted, obs, alpha, &perturbed, svd_energy)
}

/// Prior latents as the encoder means of a set of realizations, one column
/// per realization in input order.
pub fn prior_latents_from_realizations(
    net: &VaeNetwork,
    realizations: &[crate::geomodel::FaciesGrid],
) -> Result<LatentEnsemble> {
    use rayon::prelude::*;
    let k = net.input_shape()[2];
    let cols: Vec<Vec<f64>> = realizations
        .par_iter()
        .map(|g| -> Result<Vec<f64>> {
            let x: OneHotImage = crate::geomodel::to_one_hot(g, k)?;
            let (mu, _) = net.encode(&x)?;
            Ok(mu.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    LatentEnsemble::from_columns(&cols, PriorSource::EncodedRealizations)
}

/// Prior latents sampled from N(0, I), one derived stream per member.
pub fn sample_prior(n_z: usize, n_e: usize, seed: u64) -> Result<LatentEnsemble> {
    let cols: Vec<Vec<f64>> = (0..n_e)
        .map(|j| {
            let mut rng = rng_from_seed(derive_seed(seed, j as u64));
            (0..n_z).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect();
    LatentEnsemble::from_columns(&cols, PriorSource::StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_obs(variance: f64) -> ObservationSet {
        ObservationSet::new(vec![Observation {
            target: ObsTarget::Rate { well: "P1".into(), time: 1.0 },
            value: 1.0,
            variance,
        }])
        .unwrap()
    }

    #[test]
    fn default_schedule_is_constant_and_sums_to_one() {
        for n_a in [1usize, 4, 20] {
            let s = default_schedule(n_a).unwrap();
            assert_eq!(s.alphas(), vec![n_a as f64; n_a].as_slice());
            let total: f64 = s.alphas().iter().map(|a| 1.0 / a).sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn schedule_rejects_bad_alphas() {
        assert!(MdaSchedule::from_alphas(vec![2.0, 3.0]).is_err());
        assert!(MdaSchedule::from_alphas(vec![-1.0]).is_err());
        assert!(MdaSchedule::from_alphas(vec![]).is_err());
        assert!(MdaSchedule::from_alphas(vec![2.0, 2.0]).is_ok());
        assert!(MdaSchedule::from_alphas(vec![4.0, 2.0, 4.0]).is_ok());
    }

    #[test]
    fn perturbations_are_deterministic_and_centered() {
        let obs = scalar_obs(0.25);
        let a = perturb_observations(&obs, 2.0, 64, 7).unwrap();
        let b = perturb_observations(&obs, 2.0, 64, 7).unwrap();
        assert_eq!(a, b);
        let c = perturb_observations(&obs, 2.0, 64, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn perturbation_sample_covariance_matches_alpha_ce() {
        let obs = ObservationSet::new(vec![
            Observation {
                target: ObsTarget::Rate { well: "P1".into(), time: 1.0 },
                value: 5.0,
                variance: 0.5,
            },
            Observation {
                target: ObsTarget::WaterCut { well: "P1".into(), time: 1.0 },
                value: 0.3,
                variance: 0.02,
            },
        ])
        .unwrap();
        let alpha = 3.0;
        let n = 100_000;
        let m = perturb_observations(&obs, alpha, n, 11).unwrap();
        for (row, o) in obs.entries.iter().enumerate() {
            let vals: Vec<f64> = m.row(row).iter().copied().collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            let target = alpha * o.variance;
            assert!(
                (var - target).abs() <= 0.02 * target,
                "row {row}: sample var {var} vs {target}"
            );
            let obs_val = obs.smoother_values()[row];
            assert!((mean - obs_val).abs() <= 3.0 * (target / n as f64).sqrt() + 1e-9);
        }
    }

    #[test]
    fn near_zero_variance_keeps_columns_at_dobs() {
        let obs = scalar_obs(1e-30);
        let m = perturb_observations(&obs, 1.0, 16, 3).unwrap();
        for v in m.iter() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_predictions_leave_ensemble_unchanged() {
        let z = LatentEnsemble::from_columns(
            &[(0..3).map(f64::from).collect(), vec![4.0, 5.0, 6.0], vec![-1.0, 0.5, 2.0]],
            PriorSource::StandardNormal,
        )
        .unwrap();
        let obs = scalar_obs(0.01);
        let d = DMatrix::from_element(1, 3, 0.7);
        let updated = esmda_update(&z, &d, &obs, 1.0, 9, DEFAULT_SVD_ENERGY).unwrap();
        for (a, b) in z.matrix().iter().zip(updated.matrix().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_linear_gaussian_matches_bayes() {
        // prior z ~ N(0,1), d = z, d_obs = 1, C_e = 1: posterior N(0.5, 0.5)
        let n_e = 20_000;
        let prior = sample_prior(1, n_e, 13).unwrap();
        let d = DMatrix::from_fn(1, n_e, |_, j| prior.matrix()[(0, j)]);
        let obs = scalar_obs(1.0);
        let post = esmda_update(&prior, &d, &obs, 1.0, 17, DEFAULT_SVD_ENERGY).unwrap();
        let vals: Vec<f64> = post.matrix().row(0).iter().copied().collect();
        let mean = vals.iter().sum::<f64>() / n_e as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_e as f64 - 1.0);
        assert!((mean - 0.5).abs() < 0.05, "mean {mean}");
        assert!((var - 0.5).abs() < 0.05, "var {var}");
    }

    #[test]
    fn member_permutation_equivariance() {
        let n_e = 10;
        let prior = sample_prior(3, n_e, 5).unwrap();
        let d = DMatrix::from_fn(2, n_e, |r, j| {
            prior.matrix()[(r.min(2), j)] * 0.5 + 0.1 * (r as f64 + 1.0)
        });
        let obs = ObservationSet::new(vec![
            Observation {
                target: ObsTarget::Rate { well: "a".into(), time: 1.0 },
                value: 0.4,
                variance: 0.1,
            },
            Observation {
                target: ObsTarget::Rate { well: "b".into(), time: 1.0 },
                value: 0.2,
                variance: 0.2,
            },
        ])
        .unwrap();
        let e = perturb_observations(&obs, 2.0, n_e, 23).unwrap();
        let base = esmda_update_with_perturbations(&prior, &d, &obs, 2.0, &e, 1.0).unwrap();

        // reverse member order, carrying each member's perturbation along
        let perm: Vec<usize> = (0..n_e).rev().collect();
        let zp = DMatrix::from_fn(3, n_e, |r, j| prior.matrix()[(r, perm[j])]);
        let dp = DMatrix::from_fn(2, n_e, |r, j| d[(r, perm[j])]);
        let ep = DMatrix::from_fn(2, n_e, |r, j| e[(r, perm[j])]);
        let zp = LatentEnsemble::from_matrix(zp, PriorSource::StandardNormal).unwrap();
        let permuted = esmda_update_with_perturbations(&zp, &dp, &obs, 2.0, &ep, 1.0).unwrap();
        for j in 0..n_e {
            for r in 0..3 {
                let a = base.matrix()[(r, perm[j])];
                let b = permuted.matrix()[(r, j)];
                assert!(
                    (a - b).abs() <= 1e-10 * a.abs().max(1.0),
                    "member {j} row {r}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn observation_csv_round_trip() {
        let obs = ObservationSet::new(vec![
            Observation {
                target: ObsTarget::HardFacies { i: 3, j: 7, code: 1 },
                value: 1.0,
                variance: 0.01,
            },
            Observation {
                target: ObsTarget::Rate { well: "P2".into(), time: 0.25 },
                value: 123.5,
                variance: 38.0625,
            },
            Observation {
                target: ObsTarget::WaterCut { well: "P2".into(), time: 0.25 },
                value: 0.4,
                variance: 0.0004,
            },
        ])
        .unwrap();
        let csv = obs.to_csv();
        let back = ObservationSet::from_csv(&csv).unwrap();
        assert_eq!(back.entries.len(), obs.entries.len());
        for (a, b) in obs.entries.iter().zip(&back.entries) {
            assert_eq!(a.target, b.target);
            assert!((a.variance - b.variance).abs() < 1e-12 * a.variance);
        }
    }

    #[test]
    fn hard_facies_smoother_value_is_one() {
        let obs = ObservationSet::new(vec![Observation {
            target: ObsTarget::HardFacies { i: 0, j: 0, code: 0 },
            value: 0.0,
            variance: 0.01,
        }])
        .unwrap();
        assert_eq!(obs.smoother_values()[0], 1.0);
        assert_eq!(obs.hard_cells(), vec![HardCell { i: 0, j: 0, code: 0 }]);
    }

    #[test]
    fn mismatch_is_scaled_by_variance_and_count() {
        let obs = ObservationSet::new(vec![
            Observation {
                target: ObsTarget::Rate { well: "a".into(), time: 1.0 },
                value: 2.0,
                variance: 4.0,
            },
            Observation {
                target: ObsTarget::Rate { well: "b".into(), time: 1.0 },
                value: 1.0,
                variance: 1.0,
            },
        ])
        .unwrap();
        // (4/4 + 1/1) / 2 = 1
        let phi = obs.normalized_mismatch(&[4.0, 2.0]).unwrap();
        assert!((phi - 1.0).abs() < 1e-15);
    }
}
