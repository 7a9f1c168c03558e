//! Synthetic channelized facies models: grid data types, an object-based
//! channel generator for building training/validation/prior sets, and
//! bit-exact dataset I/O.

mod dataset;
mod generator;

pub use dataset::{read_dataset, write_dataset};
pub use generator::{generate_channel_realization, generate_dataset, ChannelGeometry};

use crate::error::{Error, Result};

/// 2D categorical grid of facies codes, row-major (`idx = y * nx + x`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaciesGrid {
    nx: usize,
    ny: usize,
    num_facies: u8,
    codes: Vec<u8>,
}

impl FaciesGrid {
    pub fn new(nx: usize, ny: usize, num_facies: u8, codes: Vec<u8>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::validation(format!(
                "grid extents must be positive, got {nx}x{ny}"
            )));
        }
        if num_facies < 2 {
            return Err(Error::validation(format!(
                "need at least 2 facies, got {num_facies}"
            )));
        }
        if codes.len() != nx * ny {
            return Err(Error::shape("FaciesGrid codes", &[nx * ny], &[codes.len()]));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c >= num_facies) {
            return Err(Error::validation(format!(
                "facies code {bad} out of range [0, {num_facies})"
            )));
        }
        Ok(FaciesGrid {
            nx,
            ny,
            num_facies,
            codes,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn num_facies(&self) -> u8 {
        self.num_facies
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn code_at(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.nx && y < self.ny);
        self.codes[y * self.nx + x]
    }

    /// Fraction of cells carrying `code`.
    pub fn fraction_of(&self, code: u8) -> f64 {
        let n = self.codes.iter().filter(|&&c| c == code).count();
        n as f64 / self.codes.len() as f64
    }
}

/// Per-cell channel image with one channel per facies, cell-major and
/// channel-minor (`idx = (y * nx + x) * k + c`).
///
/// Hard images carry exactly one 1 per cell; soft (decoded) images carry
/// per-channel values in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotImage {
    nx: usize,
    ny: usize,
    k: usize,
    values: Vec<f64>,
}

impl OneHotImage {
    pub fn from_values(nx: usize, ny: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny * k {
            return Err(Error::shape(
                "OneHotImage values",
                &[nx * ny * k],
                &[values.len()],
            ));
        }
        Ok(OneHotImage { nx, ny, k, values })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel_at(&self, x: usize, y: usize, c: usize) -> f64 {
        debug_assert!(x < self.nx && y < self.ny && c < self.k);
        self.values[(y * self.nx + x) * self.k + c]
    }
}

/// One-hot encode a hard grid into `k` channels.
///
/// Every code must be `< k`; the code's channel gets 1, the rest 0.
pub fn to_one_hot(grid: &FaciesGrid, k: usize) -> Result<OneHotImage> {
    if k < 2 {
        return Err(Error::validation(format!("need k >= 2 channels, got {k}")));
    }
    if let Some(&bad) = grid.codes.iter().find(|&&c| c as usize >= k) {
        return Err(Error::validation(format!(
            "facies code {bad} does not fit in {k} channels"
        )));
    }
    let mut values = vec![0.0; grid.nx * grid.ny * k];
    for (cell, &code) in grid.codes.iter().enumerate() {
        values[cell * k + code as usize] = 1.0;
    }
    Ok(OneHotImage {
        nx: grid.nx,
        ny: grid.ny,
        k,
        values,
    })
}

/// Collapse a (soft or hard) channel image back to a categorical grid by
/// per-cell argmax. Ties break toward the lowest channel index.
pub fn from_soft(image: &OneHotImage) -> Result<FaciesGrid> {
    if image.k < 2 {
        return Err(Error::validation(format!(
            "need k >= 2 channels, got {}",
            image.k
        )));
    }
    if image.k > u8::MAX as usize + 1 {
        return Err(Error::validation(format!(
            "{} channels exceed the facies code range",
            image.k
        )));
    }
    let mut codes = Vec::with_capacity(image.nx * image.ny);
    for cell in 0..image.nx * image.ny {
        let vals = &image.values[cell * image.k..(cell + 1) * image.k];
        let mut best = 0usize;
        for (c, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = c;
            }
        }
        codes.push(best as u8);
    }
    FaciesGrid::new(image.nx, image.ny, image.k as u8, codes)
}

/// Which grid axis the channels traverse end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Channels run left-right: the centerline is a function y(x).
    X,
    /// Channels run bottom-top: the centerline is a function x(y).
    Y,
}

/// Parameter bands for the object-based channel generator. Each realization
/// draws per-channel geometry uniformly from these bands.
#[derive(Debug, Clone)]
pub struct ChannelGenParams {
    pub n_channels_min: usize,
    pub n_channels_max: usize,
    /// Channel band thickness in cells.
    pub width_min: f64,
    pub width_max: f64,
    /// Sinusoid amplitude in cells.
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    /// Sinusoid wavelength in cells.
    pub wavelength_min: f64,
    pub wavelength_max: f64,
    pub orientation: Orientation,
    /// Center of the acceptable channel-fraction band.
    pub target_fraction: f64,
    /// Half-width of the acceptable channel-fraction band.
    pub fraction_tol: f64,
    /// Rejection-sampling cap; after this many draws the last one is kept.
    pub max_attempts: usize,
}

impl Default for ChannelGenParams {
    fn default() -> Self {
        ChannelGenParams {
            n_channels_min: 2,
            n_channels_max: 4,
            width_min: 3.0,
            width_max: 6.0,
            amplitude_min: 2.0,
            amplitude_max: 6.0,
            wavelength_min: 24.0,
            wavelength_max: 64.0,
            orientation: Orientation::X,
            target_fraction: 0.3,
            fraction_tol: 0.1,
            max_attempts: 100,
        }
    }
}

impl ChannelGenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels_min > self.n_channels_max || self.n_channels_min == 0 {
            return Err(Error::validation(format!(
                "channel count band [{}, {}] invalid",
                self.n_channels_min, self.n_channels_max
            )));
        }
        for (name, lo, hi) in [
            ("width", self.width_min, self.width_max),
            ("amplitude", self.amplitude_min, self.amplitude_max),
            ("wavelength", self.wavelength_min, self.wavelength_max),
        ] {
            if !(lo <= hi) {
                return Err(Error::validation(format!("{name} band [{lo}, {hi}] invalid")));
            }
        }
        if self.width_min < 1.0 {
            return Err(Error::validation(format!(
                "channel width must be at least one cell, got {}",
                self.width_min
            )));
        }
        if self.wavelength_min <= 0.0 {
            return Err(Error::validation("wavelength must be positive".to_string()));
        }
        let lo = self.target_fraction - self.fraction_tol;
        let hi = self.target_fraction + self.fraction_tol;
        if !(0.0 < lo && hi < 1.0) {
            return Err(Error::validation(format!(
                "channel-fraction band [{lo}, {hi}] must lie inside (0, 1)"
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::validation("max_attempts must be positive".to_string()));
        }
        Ok(())
    }

    pub fn fraction_band(&self) -> (f64, f64) {
        (
            self.target_fraction - self.fraction_tol,
            self.target_fraction + self.fraction_tol,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nx: usize, ny: usize, codes: Vec<u8>) -> FaciesGrid {
        FaciesGrid::new(nx, ny, 2, codes).unwrap()
    }

    #[test]
    fn one_hot_places_one_at_code_channel() {
        let g = grid(1, 1, vec![1]);
        let img = to_one_hot(&g, 2).unwrap();
        assert_eq!(img.values(), &[0.0, 1.0]);
    }

    #[test]
    fn one_hot_rejects_code_out_of_range() {
        let g = FaciesGrid::new(1, 1, 3, vec![2]).unwrap();
        assert!(to_one_hot(&g, 2).is_err());
    }

    #[test]
    fn from_soft_tie_breaks_to_lowest_channel() {
        let img = OneHotImage::from_values(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let g = from_soft(&img).unwrap();
        assert_eq!(g.codes(), &[0]);
    }

    #[test]
    fn round_trip_is_identity_on_hard_grids() {
        let g = grid(3, 2, vec![0, 1, 1, 0, 0, 1]);
        let back = from_soft(&to_one_hot(&g, 2).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn one_hot_rows_sum_to_one() {
        let g = FaciesGrid::new(4, 3, 3, vec![0, 1, 2, 0, 1, 2, 2, 1, 0, 0, 0, 2]).unwrap();
        let img = to_one_hot(&g, 3).unwrap();
        for cell in 0..12 {
            let s: f64 = img.values()[cell * 3..cell * 3 + 3].iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn grid_rejects_bad_code_and_length() {
        assert!(FaciesGrid::new(2, 2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(FaciesGrid::new(2, 2, 2, vec![0, 1]).is_err());
    }
}
