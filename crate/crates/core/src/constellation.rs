//! Normalized square QAM alphabets and their per-dimension PAM components.
//!
//! A square `Q`-QAM symbol is `x = x_I + j x_Q` with both coordinates drawn
//! from the same `sqrt(Q)`-level PAM alphabet
//!
//! ```text
//! S = { a (2q - 1 - sqrt(Q)) : q = 1..sqrt(Q) },   a = sqrt(3 / (2 (Q - 1)))
//! ```
//!
//! which makes the complex alphabet zero mean with unit average energy.
//! Decisions are made on the real-valued stacking `s = [Re(x); Im(x)]`, so most
//! of the work in this crate happens on [`PamConstellation`].

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A `sqrt(Q)`-level PAM alphabet, levels ascending and symmetric about zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PamConstellation {
    qam_order: usize,
    order: usize,
    scale: f64,
    levels: Vec<f64>,
}

impl PamConstellation {
    /// Builds the PAM alphabet underlying a square `Q`-QAM constellation.
    ///
    /// `Q` must be at least 4 and a perfect square. Odd roots (e.g. `Q = 9`)
    /// are accepted: the level formula is well defined for them.
    pub fn new(qam_order: usize) -> Result<Self> {
        let order = integer_sqrt(qam_order).ok_or_else(|| {
            Error::InvalidConstellation(format!("Q = {qam_order} is not a perfect square"))
        })?;
        if qam_order < 4 {
            return Err(Error::InvalidConstellation(format!(
                "Q = {qam_order} is below the minimum order 4"
            )));
        }
        let scale = (3.0 / (2.0 * (qam_order as f64 - 1.0))).sqrt();
        let levels = (0..order)
            .map(|i| scale * unit_level(i, order))
            .collect();
        Ok(Self {
            qam_order,
            order,
            scale,
            levels,
        })
    }

    /// Number of real levels, `sqrt(Q)`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// The QAM order `Q` this alphabet belongs to.
    pub fn qam_order(&self) -> usize {
        self.qam_order
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> f64 {
        self.levels[index]
    }

    /// Distance between adjacent levels.
    pub fn spacing(&self) -> f64 {
        2.0 * self.scale
    }

    /// Magnitude of the outermost level; the half-width of the relaxation box.
    pub fn max_level(&self) -> f64 {
        self.scale * (self.order as f64 - 1.0)
    }

    /// Closest level to `v`. Exact midpoints resolve to the lower index.
    pub fn nearest(&self, v: f64) -> Result<(usize, f64)> {
        check_finite(v)?;
        let index = self.nearest_index(v);
        Ok((index, self.levels[index]))
    }

    /// Closest level to `v` after excluding the nearest one. Exact midpoints
    /// resolve to the lower index.
    pub fn second_nearest(&self, v: f64) -> Result<f64> {
        check_finite(v)?;
        if self.order < 2 {
            return Err(Error::InvalidConstellation(
                "second-nearest level needs at least two levels".into(),
            ));
        }
        Ok(self.levels[self.second_nearest_index(v)])
    }

    /// Unchecked nearest-level index, for hot loops where `v` is known finite.
    pub fn nearest_index(&self, v: f64) -> usize {
        // Work in units of the half-spacing so symmetric ties compare exactly.
        let u = v / self.scale;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for i in 0..self.order {
            let dist = (u - unit_level(i, self.order)).abs();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }

    pub fn second_nearest_index(&self, v: f64) -> usize {
        let first = self.nearest_index(v);
        let u = v / self.scale;
        let mut best = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for i in (0..self.order).filter(|&i| i != first) {
            let dist = (u - unit_level(i, self.order)).abs();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }

    /// Maps every entry of `v` to its nearest level.
    pub fn quantize(&self, v: &[f64]) -> Result<Vec<f64>> {
        v.iter().map(|&x| self.nearest(x).map(|(_, s)| s)).collect()
    }
}

/// Square `Q`-QAM alphabet with unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct QamConstellation {
    pam: PamConstellation,
}

impl QamConstellation {
    pub fn new(qam_order: usize) -> Result<Self> {
        Ok(Self {
            pam: PamConstellation::new(qam_order)?,
        })
    }

    pub fn order(&self) -> usize {
        self.pam.qam_order()
    }

    pub fn pam(&self) -> &PamConstellation {
        &self.pam
    }

    /// All `Q` complex symbols, in-phase index major.
    pub fn symbols(&self) -> Vec<Complex64> {
        let levels = self.pam.levels();
        levels
            .iter()
            .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re, im)))
            .collect()
    }
}

/// Rebuilds `K` complex symbols from the stacked real vector `[Re; Im]`.
pub fn reconstruct_complex(s_hat: &[f64], users: usize) -> Result<Vec<Complex64>> {
    if s_hat.len() != 2 * users {
        return Err(Error::Shape(format!(
            "expected a real vector of length 2K = {}, got {}",
            2 * users,
            s_hat.len()
        )));
    }
    let (re, im) = s_hat.split_at(users);
    Ok(re
        .iter()
        .zip(im)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect())
}

// Level `i` of an `order`-level alphabet in units of the scale factor:
// -(order-1), -(order-3), ..., order-1.
fn unit_level(i: usize, order: usize) -> f64 {
    (2 * i + 1) as f64 - order as f64
}

fn integer_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

fn check_finite(v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("expected a finite value, got {v}")));
    }
    Ok(())
}
