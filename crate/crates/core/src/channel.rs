//! Rayleigh uplink channels, the real-valued lifting of the complex model and
//! one-bit quantized observations.
//!
//! The complex model `y = H P x + n` is rewritten as `r = G s + w` with
//!
//! ```text
//! G = [ Re(HP)  -Im(HP) ]     s = [ Re(x) ]     w ~ N(0, sigma^2/2 I)
//!     [ Im(HP)   Re(HP) ]         [ Im(x) ]
//! ```
//!
//! and the base station only sees `b = sign(r)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};

/// Complex uplink channel `H` (M x K) with per-user transmit powers and
/// large-scale variances.
#[derive(Debug, Clone)]
pub struct ComplexChannel {
    h: DMatrix<Complex64>,
    powers: Vec<f64>,
    variances: Vec<f64>,
}

impl ComplexChannel {
    /// Wraps an explicit channel matrix.
    pub fn new(h: DMatrix<Complex64>, powers: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let (m, k) = h.shape();
        if m == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "channel needs M, K >= 1, got {m} x {k}"
            )));
        }
        check_len("powers", powers.len(), k)?;
        check_len("variances", variances.len(), k)?;
        check_positive("power", &powers)?;
        check_positive("variance", &variances)?;
        Ok(Self {
            h,
            powers,
            variances,
        })
    }

    pub fn antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn users(&self) -> usize {
        self.h.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `H diag(sqrt(p))`.
    pub fn effective_matrix(&self) -> DMatrix<Complex64> {
        let mut hp = self.h.clone();
        for (k, mut col) in hp.column_iter_mut().enumerate() {
            col *= Complex64::from(self.powers[k].sqrt());
        }
        hp
    }

    /// Real-domain system for noise variance `sigma2`.
    pub fn lift_to_real(&self, sigma2: f64) -> Result<RealizedSystem> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive and finite, got {sigma2}"
            )));
        }
        let hp = self.effective_matrix();
        let (m, k) = hp.shape();
        let g = DMatrix::from_fn(2 * m, 2 * k, |row, col| {
            let z = hp[(row % m, col % k)];
            match (row < m, col < k) {
                (true, true) | (false, false) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
            }
        });
        let sys = RealizedSystem {
            g,
            gamma: 2.0 / sigma2,
            sigma2,
        };
        debug_assert!(sys.has_block_structure());
        Ok(sys)
    }
}

/// Draws `H` with independent columns `h_k ~ CN(0, v_k^2 I_M)`.
///
/// The complex Gaussian is proper: real and imaginary parts are independent
/// `N(0, v_k^2 / 2)`.
pub fn draw_channel<R: Rng + ?Sized>(
    rng: &mut R,
    antennas: usize,
    users: usize,
    powers: &[f64],
    variances: &[f64],
) -> Result<ComplexChannel> {
    if antennas == 0 || users == 0 {
        return Err(Error::InvalidParameter(format!(
            "channel needs M, K >= 1, got M = {antennas}, K = {users}"
        )));
    }
    check_len("powers", powers.len(), users)?;
    check_len("variances", variances.len(), users)?;
    check_positive("power", powers)?;
    check_positive("variance", variances)?;

    let mut h = DMatrix::zeros(antennas, users);
    for (k, mut col) in h.column_iter_mut().enumerate() {
        let sd = (variances[k] / 2.0).sqrt();
        for z in col.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z = Complex64::new(sd * re, sd * im);
        }
    }
    Ok(ComplexChannel {
        h,
        powers: powers.to_vec(),
        variances: variances.to_vec(),
    })
}

/// Stacks `[Re(x); Im(x)]`.
pub fn lift_symbols(x: &[Complex64]) -> Vec<f64> {
    x.iter().map(|z| z.re).chain(x.iter().map(|z| z.im)).collect()
}

/// Real-domain channel `G` (2M x 2K) together with the noise parameters.
#[derive(Debug, Clone)]
pub struct RealizedSystem {
    g: DMatrix<f64>,
    gamma: f64,
    sigma2: f64,
}

impl RealizedSystem {
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `gamma = 2 / sigma^2`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn antennas(&self) -> usize {
        self.g.nrows() / 2
    }

    pub fn users(&self) -> usize {
        self.g.ncols() / 2
    }

    /// Checks that `G` is the real lifting of some complex matrix.
    pub fn has_block_structure(&self) -> bool {
        let (m, k) = (self.antennas(), self.users());
        (0..m).all(|i| {
            (0..k).all(|j| {
                self.g[(i, j)] == self.g[(i + m, j + k)]
                    && self.g[(i, j + k)] == -self.g[(i + m, j)]
            })
        })
    }

    /// Noiseless received vector `G s`.
    pub fn noiseless(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("symbol vector", s.len(), self.g.ncols())?;
        let mut r = vec![0.0; self.g.nrows()];
        for (col, &sn) in self.g.column_iter().zip(s) {
            for (ri, gi) in r.iter_mut().zip(col.iter()) {
                *ri += gi * sn;
            }
        }
        Ok(r)
    }

    /// One-bit observation `b = sign(G s + w)` with `w ~ N(0, sigma^2/2 I)`.
    /// `sign(0)` is `+1`.
    pub fn transmit<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<OneBitObservation> {
        let sd = (self.sigma2 / 2.0).sqrt();
        let bits = self
            .noiseless(s)?
            .into_iter()
            .map(|r| {
                let w: f64 = rng.sample(StandardNormal);
                if r + sd * w >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        Ok(OneBitObservation { bits })
    }
}

/// Sign vector `b` in `{-1, +1}^{2M}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneBitObservation {
    bits: Vec<i8>,
}

impl OneBitObservation {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::InvalidInput(format!(
                "one-bit observations must be +1 or -1, found {b}"
            )));
        }
        Ok(Self { bits })
    }

    /// `sign(r)` with `sign(0) = +1`.
    pub fn from_signs(r: &[f64]) -> Self {
        Self {
            bits: r.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect(),
        }
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Large-scale variance `(lambda / 4 pi)^2 (d / d0)^nu`, exactly as the model
/// is usually printed. Note that it grows with distance; see
/// [`PathLossModel`] for the conventional decaying variant.
pub fn pathloss_variance(distance_m: f64, d0: f64, nu: f64, lambda_m: f64) -> Result<f64> {
    for (name, v) in [
        ("distance", distance_m),
        ("d0", d0),
        ("nu", nu),
        ("lambda", lambda_m),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    let free_space = lambda_m / (4.0 * std::f64::consts::PI);
    Ok(free_space * free_space * (distance_m / d0).powf(nu))
}

/// Sign of the distance exponent in the path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExponentSign {
    /// `(d / d0)^{+nu}`: the literal form, variance grows with distance.
    AsPrinted,
    /// `(d / d0)^{-nu}`: the conventional form, variance decays with distance.
    Decaying,
}

impl ExponentSign {
    pub fn as_i8(self) -> i8 {
        match self {
            ExponentSign::AsPrinted => 1,
            ExponentSign::Decaying => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    pub d0: f64,
    pub nu: f64,
    pub lambda: f64,
    pub exponent_sign: ExponentSign,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            d0: 100.0,
            nu: 3.2,
            lambda: 0.15,
            exponent_sign: ExponentSign::AsPrinted,
        }
    }
}

impl PathLossModel {
    pub fn variance(&self, distance_m: f64) -> Result<f64> {
        let nu = match self.exponent_sign {
            ExponentSign::AsPrinted => self.nu,
            ExponentSign::Decaying => -self.nu,
        };
        // The literal formula handles both signs; validate with |nu|.
        pathloss_variance(distance_m, self.d0, self.nu, self.lambda)?;
        let free_space = self.lambda / (4.0 * std::f64::consts::PI);
        Ok(free_space * free_space * (distance_m / self.d0).powf(nu))
    }
}

/// Users dropped uniformly over an annulus around the base-station foot point;
/// distances are 3-D to an antenna array mounted at `bs_height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub radius: f64,
    pub min_distance: f64,
    pub bs_height: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            radius: 500.0,
            min_distance: 10.0,
            bs_height: 100.0,
        }
    }
}

impl Placement {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_distance >= 0.0
            && self.radius > self.min_distance
            && self.bs_height >= 0.0
            && self.radius.is_finite()
            && self.bs_height.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "placement needs 0 <= min_distance < radius and bs_height >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// 3-D distance of one uniformly placed user.
    pub fn sample_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (r0, r1) = (self.min_distance, self.radius);
        let u: f64 = rng.gen();
        let horizontal = (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt();
        horizontal.hypot(self.bs_height)
    }
}

fn check_positive(name: &str, values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "every {name} must be positive and finite, found {v}"
        )));
    }
    Ok(())
}
