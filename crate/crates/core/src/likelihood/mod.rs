//! Negative log-likelihood of one-bit observations.
//!
//! For `b = sign(G s + w)` the likelihood of a candidate `s` is
//!
//! ```text
//! f(s) = - sum_m ln Q(t_m),     t_m = -sqrt(gamma) b_m g_m^T s
//! ```
//!
//! which is convex in `s`. Its gradient and the diagonal curvature weights
//! `d_m(s)` both reduce to the inverse Mills ratio `lambda(t) = phi(t)/Q(t)`:
//!
//! ```text
//! grad f(s) = sum_m lambda(t_m) a_m,           a_m = -sqrt(gamma) b_m g_m
//! d_m(s)    = gamma lambda(t_m) (lambda(t_m) - t_m)
//! ```
//!
//! and `||G||_2^2 max_m d_m(s)` bounds the Hessian norm at `s`.

mod tail;

use nalgebra::{DMatrix, DVector};

pub use tail::{log_q, mills, normal_pdf, q_function, SATURATION};
pub(crate) use tail::{log_q_raw, mills_raw, mills_with_excess};

use crate::channel::{OneBitObservation, RealizedSystem};
use crate::error::{check_len, Error, Result};

/// Detection problem for a fixed channel, observation and noise level.
#[derive(Debug, Clone)]
pub struct LikelihoodProblem {
    g: DMatrix<f64>,
    bits: Vec<i8>,
    gamma: f64,
    // Rows of G scaled by -sqrt(gamma) b_m, so that t = A s.
    scaled: DMatrix<f64>,
    g_norm_sq: Option<f64>,
}

impl LikelihoodProblem {
    pub fn new(g: DMatrix<f64>, obs: &OneBitObservation, gamma: f64) -> Result<Self> {
        check_len("observation", obs.len(), g.nrows())?;
        if g.ncols() == 0 || g.nrows() == 0 {
            return Err(Error::Shape("channel matrix must be nonempty".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        let root = gamma.sqrt();
        let mut scaled = g.clone();
        for (i, &b) in obs.bits().iter().enumerate() {
            let w = -root * f64::from(b);
            scaled.row_mut(i).scale_mut(w);
        }
        Ok(Self {
            g,
            bits: obs.bits().to_vec(),
            gamma,
            scaled,
            g_norm_sq: None,
        })
    }

    pub fn from_system(sys: &RealizedSystem, obs: &OneBitObservation) -> Result<Self> {
        Self::new(sys.g().clone(), obs, sys.gamma())
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Length of the real symbol vector, `2K`.
    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    /// Number of observations, `2M`.
    pub fn observations(&self) -> usize {
        self.g.nrows()
    }

    /// Cached `||G||_2^2`, if computed.
    pub fn g_norm_sq(&self) -> Option<f64> {
        self.g_norm_sq
    }

    /// Stores a precomputed `||G||_2^2`. It must dominate every squared column
    /// norm (up to rounding).
    pub fn set_g_norm_sq(&mut self, value: f64) -> Result<()> {
        let max_col = self
            .g
            .column_iter()
            .map(|c| c.norm_squared())
            .fold(0.0, f64::max);
        if !(value.is_finite() && value >= max_col * (1.0 - 1e-9)) {
            return Err(Error::InvalidParameter(format!(
                "||G||^2 = {value} is below the largest squared column norm {max_col}"
            )));
        }
        self.g_norm_sq = Some(value);
        Ok(())
    }

    /// Computes and caches `||G||_2^2` by power iteration.
    pub fn cache_spectral_norm(&mut self, tol: f64, max_iters: usize) -> f64 {
        let v = crate::solver::spectral_norm_sq(&self.g, tol, max_iters);
        self.g_norm_sq = Some(v);
        v
    }

    pub(crate) fn scaled(&self) -> &DMatrix<f64> {
        &self.scaled
    }

    /// Arguments `t_m = -sqrt(gamma) b_m g_m^T s`.
    pub fn arguments(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("symbol vector", s.len(), self.dim())?;
        Ok(self.arguments_raw(s))
    }

    pub(crate) fn arguments_raw(&self, s: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.scaled.nrows()];
        for (col, &sn) in self.scaled.column_iter().zip(s) {
            if sn != 0.0 {
                for (ti, ai) in t.iter_mut().zip(col.iter()) {
                    *ti += ai * sn;
                }
            }
        }
        t
    }

    /// `f(s)`.
    pub fn objective(&self, s: &[f64]) -> Result<f64> {
        check_len("symbol vector", s.len(), self.dim())?;
        Ok(self.objective_raw(s))
    }

    pub(crate) fn objective_raw(&self, s: &[f64]) -> f64 {
        objective_from_arguments(&self.arguments_raw(s))
    }

    /// `grad f(s)`.
    pub fn gradient(&self, s: &[f64]) -> Result<DVector<f64>> {
        check_len("symbol vector", s.len(), self.dim())?;
        let t = self.arguments_raw(s);
        let weights = DVector::from_iterator(t.len(), t.iter().map(|&x| mills_raw(x)));
        Ok(self.scaled.tr_mul(&weights))
    }

    /// Curvature weights `d_m(s)`, one per observation.
    pub fn curvature(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("symbol vector", s.len(), self.dim())?;
        let gamma = self.gamma;
        Ok(self
            .arguments_raw(s)
            .into_iter()
            .map(|t| curvature_weight(gamma, t))
            .collect())
    }

    /// Upper bound `||G||_2^2 max_m d_m(s)` on the Hessian norm at `s`.
    /// Requires the cached spectral norm.
    pub fn local_smoothness(&self, s: &[f64]) -> Result<f64> {
        let g_norm_sq = self.g_norm_sq.ok_or_else(|| {
            Error::State("||G||^2 has not been computed for this problem".into())
        })?;
        let d = self.curvature(s)?;
        Ok(g_norm_sq * d.into_iter().fold(0.0, f64::max))
    }

    /// Gradient and `max_m d_m` from a single pass over the observations.
    pub(crate) fn gradient_and_max_curvature(&self, s: &[f64]) -> (DVector<f64>, f64) {
        let t = self.arguments_raw(s);
        let mut weights = DVector::zeros(t.len());
        let mut d_max = 0.0f64;
        for (w, &x) in weights.iter_mut().zip(&t) {
            let (lam, excess) = mills_with_excess(x);
            *w = lam;
            d_max = d_max.max(self.gamma * lam * excess);
        }
        (self.scaled.tr_mul(&weights), d_max)
    }
}

/// `- sum ln Q(t_m)` for precomputed arguments.
pub(crate) fn objective_from_arguments(t: &[f64]) -> f64 {
    t.iter().map(|&x| -log_q_raw(x)).sum()
}

#[inline]
fn curvature_weight(gamma: f64, t: f64) -> f64 {
    let (lam, excess) = mills_with_excess(t);
    gamma * lam * excess
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy() -> LikelihoodProblem {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        LikelihoodProblem::new(g, &OneBitObservation::new(vec![1, 1]).unwrap(), 1.0).unwrap()
    }

    fn random_problem(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gamma: f64) -> LikelihoodProblem {
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.7);
        let bits = (0..rows).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        LikelihoodProblem::new(g, &OneBitObservation::new(bits).unwrap(), gamma).unwrap()
    }

    #[test]
    fn objective_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_problem(&mut rng, 12, 4, 3.0);
        assert_relative_eq!(
            p.objective(&[0.0; 4]).unwrap(),
            12.0 * std::f64::consts::LN_2,
            max_relative = 1e-14
        );
    }

    #[test]
    fn objective_toy_value() {
        // -2 ln Q(-1), reference from 60-digit mpmath.
        assert_relative_eq!(
            toy().objective(&[1.0, 0.0]).unwrap(),
            0.345_507_558_046_899_8,
            max_relative = 1e-12
        );
    }

    #[test]
    fn flipping_a_consistent_bit_increases_objective() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 0.8, 0.2, -1.0]);
        let s = [0.7, 0.7];
        let bits: Vec<i8> = OneBitObservation::from_signs(
            (&g * DVector::from_row_slice(&s)).as_slice(),
        )
        .bits()
        .to_vec();
        let base = LikelihoodProblem::new(g.clone(), &OneBitObservation::new(bits.clone()).unwrap(), 2.0)
            .unwrap()
            .objective(&s)
            .unwrap();
        for m in 0..3 {
            let mut flipped = bits.clone();
            flipped[m] = -flipped[m];
            let f = LikelihoodProblem::new(g.clone(), &OneBitObservation::new(flipped).unwrap(), 2.0)
                .unwrap()
                .objective(&s)
                .unwrap();
            assert!(f > base);
        }
    }

    #[test]
    fn gradient_at_origin_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gamma = 2.5;
        let p = random_problem(&mut rng, 10, 4, gamma);
        let grad = p.gradient(&[0.0; 4]).unwrap();
        let b = DVector::from_iterator(10, p.bits().iter().map(|&b| f64::from(b)));
        let want = p.g().tr_mul(&b) * -(2.0 * gamma / std::f64::consts::PI).sqrt();
        for (a, w) in grad.iter().zip(want.iter()) {
            assert_relative_eq!(a, w, max_relative = 1e-13, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 16, 4, 4.0);
            let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.7..0.7)).collect();
            let grad = p.gradient(&s).unwrap();
            let fd = central_difference(&p, &s);
            let err = (&grad - &fd).norm() / grad.norm().max(1e-12);
            assert!(err < 1e-5, "relative error {err}");
        }
    }

    #[test]
    fn gradient_sign_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 8, 2, 4.0);
        let neg_bits: Vec<i8> = p.bits().iter().map(|b| -b).collect();
        let q = LikelihoodProblem::new(
            p.g().clone(),
            &OneBitObservation::new(neg_bits).unwrap(),
            4.0,
        )
        .unwrap();
        let s = [0.3, -0.6];
        let neg_s = [-0.3, 0.6];
        let a = p.gradient(&s).unwrap();
        let b = q.gradient(&neg_s).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(*x, -*y, max_relative = 1e-14);
        }
    }

    #[test]
    fn curvature_at_zero_argument() {
        let p = toy();
        for d in p.curvature(&[0.0, 0.0]).unwrap() {
            assert_relative_eq!(d, 2.0 / std::f64::consts::PI, max_relative = 1e-14);
        }
    }

    #[test]
    fn curvature_is_second_derivative_of_scalar_loss() {
        // d_m = gamma * h''(u) where h(u) = -ln Q(u), u = -sqrt(gamma) b g^T s.
        let gamma = 1.0;
        for t in [-6.0, -2.0, -0.5, 0.0, 0.7, 3.0, 7.5, 12.0] {
            let h = 1e-4;
            let second = (-log_q_raw(t + h) + 2.0 * log_q_raw(t) - log_q_raw(t - h)) / (h * h);
            let d = curvature_weight(gamma, t);
            assert!(d >= 0.0);
            assert!((d - second).abs() < 1e-5 * (1.0 + second.abs()), "t = {t}: {d} vs {second}");
        }
    }

    #[test]
    fn curvature_vanishes_for_confident_rows() {
        assert!(curvature_weight(3.0, -40.0) < 1e-300);
        assert!(curvature_weight(3.0, -10.0) < 1e-18);
        // Deep in the wrong-sign region d tends to gamma.
        assert_relative_eq!(curvature_weight(3.0, 1e4), 3.0, max_relative = 1e-6);
    }

    #[test]
    fn smoothness_needs_cached_norm() {
        let p = toy();
        assert!(matches!(p.local_smoothness(&[0.0, 0.0]), Err(Error::State(_))));
        let mut p = p;
        let n = p.cache_spectral_norm(1e-12, 1000);
        assert_relative_eq!(n, 2.0, max_relative = 1e-10);
        assert_relative_eq!(
            p.local_smoothness(&[0.0, 0.0]).unwrap(),
            2.0 * 2.0 / std::f64::consts::PI,
            max_relative = 1e-9
        );
    }

    #[test]
    fn smoothness_scales_with_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = random_problem(&mut rng, 8, 2, 2.0);
        p.cache_spectral_norm(1e-13, 10_000);
        let c = 3.0;
        let obs = OneBitObservation::new(p.bits().to_vec()).unwrap();
        let mut scaled = LikelihoodProblem::new(p.g() * c, &obs, 2.0).unwrap();
        scaled.cache_spectral_norm(1e-13, 10_000);
        let s = [0.4, -0.2];
        let s_over_c = [0.4 / c, -0.2 / c];
        assert_relative_eq!(
            scaled.local_smoothness(&s_over_c).unwrap(),
            c * c * p.local_smoothness(&s).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn shape_errors() {
        let p = toy();
        assert!(matches!(p.objective(&[0.0]), Err(Error::Shape(_))));
        assert!(matches!(p.gradient(&[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(p.curvature(&[]), Err(Error::Shape(_))));
        let g = DMatrix::zeros(3, 2);
        assert!(LikelihoodProblem::new(g.clone(), &OneBitObservation::new(vec![1, 1]).unwrap(), 1.0).is_err());
        assert!(LikelihoodProblem::new(g, &OneBitObservation::new(vec![1, 1, 1]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn rejects_understated_norm() {
        let mut p = toy();
        assert!(p.set_g_norm_sq(1.0).is_err());
        assert!(p.set_g_norm_sq(2.0).is_ok());
    }

    #[test]
    fn convex_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let gamma = rng.gen_range(0.1..50.0);
            let p = random_problem(&mut rng, 12, 4, gamma);
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (fa, fb) = (p.objective(&a).unwrap(), p.objective(&b).unwrap());
            for i in 0..=10 {
                let l = i as f64 / 10.0;
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| l * x + (1.0 - l) * y).collect();
                let fm = p.objective(&mid).unwrap();
                assert!(fm >= 0.0);
                assert!(fm <= l * fa + (1.0 - l) * fb + 1e-9 * (1.0 + fa.max(fb)));
            }
        }
    }

    fn central_difference(p: &LikelihoodProblem, s: &[f64]) -> DVector<f64> {
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let h = 1e-5 * (1.0 + norm);
        DVector::from_iterator(
            s.len(),
            (0..s.len()).map(|i| {
                let mut up = s.to_vec();
                let mut down = s.to_vec();
                up[i] += h;
                down[i] -= h;
                (p.objective(&up).unwrap() - p.objective(&down).unwrap()) / (2.0 * h)
            }),
        )
    }
}
