//! Tensor-product first-order B-spline approximation on the unit cube.
//!
//! The univariate bump is the sawtooth `ψ(t) = t` on `[0, 1]`, `2 - t` on
//! `(1, 2]`, and `0` elsewhere; the multivariate basis is the product
//! `M_{p,j}(x) = ∏_k ψ(2^p x_k - j_k)` over index vectors
//! `j ∈ {0, …, 2^p - 1}^d`. Fitting reads one function value per basis
//! element, at the peak node `x = 2^{-p}(j + 1)`, so the approximant
//! interpolates the function on the dyadic grid and is piecewise multilinear
//! in between. With `N = 2^{pd}` coefficients, an `(L, α)`-Hölder function is
//! approximated to sup-error at most `2 L d · N^{-α/d}`; [`verify_rate`]
//! audits that bound on a finer evaluation grid.

use thiserror::Error;

/// Errors from spline fitting and rate verification.
#[derive(Debug, Error)]
pub enum SplineError {
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("level {level} with dimension {dim} needs {needed} coefficients, above the cap {cap}")]
    TooManyCoefficients { level: u32, dim: usize, needed: u128, cap: usize },
    #[error("input has length {found}, expected {expected}")]
    InputLength { expected: usize, found: usize },
    #[error("evaluation grid must be at least {min}x finer than the knot grid (got {found})")]
    GridTooCoarse { min: usize, found: usize },
}

/// Coefficient-count cap guarding against accidental exponential fits.
const MAX_COEFFS: usize = 1 << 24;

/// The univariate sawtooth bump: `t` on `[0, 1]`, `2 - t` on `(1, 2]`, else 0.
pub fn sawtooth(t: f64) -> f64 {
    if (0.0..=1.0).contains(&t) {
        t
    } else if t > 1.0 && t <= 2.0 {
        2.0 - t
    } else {
        0.0
    }
}

/// The tensor basis element `M_{p,j}(x) = ∏_k ψ(2^p x_k - j_k)`.
pub fn tensor_bspline(x: &[f64], level: u32, index: &[usize]) -> f64 {
    debug_assert_eq!(x.len(), index.len());
    let scale = (1u64 << level) as f64;
    x.iter()
        .zip(index)
        .map(|(&xk, &jk)| sawtooth(scale * xk - jk as f64))
        .product()
}

/// A fitted tensor-spline approximant on `[0, 1]^d`.
#[derive(Debug, Clone)]
pub struct SplineApprox {
    level: u32,
    dim: usize,
    /// Coefficients over `j ∈ {0..2^p - 1}^d`, row-major (last coordinate
    /// fastest).
    coeffs: Vec<f64>,
}

impl SplineApprox {
    /// Fits `f` by reading one value per basis element at its peak node
    /// `2^{-p}(j + 1)`.
    pub fn fit(
        f: impl Fn(&[f64]) -> f64,
        level: u32,
        dim: usize,
    ) -> Result<Self, SplineError> {
        if dim == 0 {
            return Err(SplineError::ZeroDim);
        }
        let side = 1usize << level;
        let needed = (side as u128).pow(dim as u32);
        if needed > MAX_COEFFS as u128 {
            return Err(SplineError::TooManyCoefficients {
                level,
                dim,
                needed,
                cap: MAX_COEFFS,
            });
        }
        let n = needed as usize;
        let h = 1.0 / side as f64;
        let mut coeffs = vec![0.0; n];
        let mut index = vec![0usize; dim];
        let mut node = vec![0.0; dim];
        for (flat, c) in coeffs.iter_mut().enumerate() {
            let mut rem = flat;
            for k in (0..dim).rev() {
                index[k] = rem % side;
                rem /= side;
            }
            for k in 0..dim {
                node[k] = h * (index[k] + 1) as f64;
            }
            *c = f(&node);
        }
        Ok(Self { level, dim, coeffs })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total coefficient count `N = 2^{pd}`.
    pub fn n_coeffs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Evaluates the approximant, visiting only the at-most-`2^d` basis
    /// elements whose support contains `x`: per coordinate, `ψ(2^p x_k - j)`
    /// is nonzero only for the two integers in `(2^p x_k - 2, 2^p x_k)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, SplineError> {
        if x.len() != self.dim {
            return Err(SplineError::InputLength { expected: self.dim, found: x.len() });
        }
        let side = 1usize << self.level;
        let scale = side as f64;
        // Candidate indices and their ψ-weights per coordinate.
        let mut active: Vec<[(usize, f64); 2]> = Vec::with_capacity(self.dim);
        let mut counts = Vec::with_capacity(self.dim);
        for &xk in x {
            let t = scale * xk;
            let hi = t.ceil() as i64 - 1; // largest integer < t (or t-1 when t integral)
            let mut slot = [(0usize, 0.0); 2];
            let mut m = 0;
            for j in [hi - 1, hi] {
                if j < 0 || j >= side as i64 {
                    continue;
                }
                let w = sawtooth(t - j as f64);
                if w != 0.0 {
                    slot[m] = (j as usize, w);
                    m += 1;
                }
            }
            active.push(slot);
            counts.push(m);
        }
        // Cartesian product over the active indices.
        let mut total = 0.0;
        let combos: usize = counts.iter().product();
        if combos == 0 {
            return Ok(0.0);
        }
        let mut pick = vec![0usize; self.dim];
        loop {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for k in 0..self.dim {
                let (j, w) = active[k][pick[k]];
                weight *= w;
                flat = flat * side + j;
            }
            total += weight * self.coeffs[flat];
            // Odometer increment.
            let mut k = self.dim;
            loop {
                if k == 0 {
                    return Ok(total);
                }
                k -= 1;
                pick[k] += 1;
                if pick[k] < counts[k] {
                    break;
                }
                pick[k] = 0;
            }
        }
    }
}

/// One row of a rate audit: approximation error at level `p` against the
/// guaranteed bound `2 L d · N^{-α/d}`.
#[derive(Debug, Clone, Copy)]
pub struct RateRow {
    pub level: u32,
    pub n_coeffs: usize,
    pub constant: f64,
    pub exponent: f64,
    pub sup_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Fits `f` at each level and measures the sup-error on a uniform grid at
/// least `grid_factor ≥ 4` times finer than the knot grid, comparing against
/// `2 L d · N^{-α/d} + 1e-9`. `f` must be `(constant, exponent)`-Hölder on
/// `[0, 1]^dim` for the bound to be guaranteed; the audit makes the failure
/// visible when it is not.
pub fn verify_rate(
    f: impl Fn(&[f64]) -> f64,
    dim: usize,
    constant: f64,
    exponent: f64,
    levels: &[u32],
    grid_factor: usize,
) -> Result<Vec<RateRow>, SplineError> {
    if grid_factor < 4 {
        return Err(SplineError::GridTooCoarse { min: 4, found: grid_factor });
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let spline = SplineApprox::fit(&f, level, dim)?;
        let n = spline.n_coeffs();
        let side = (1usize << level) * grid_factor;
        let mut sup_error = 0.0f64;
        let mut index = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        let points = (side as u128 + 1).pow(dim as u32);
        if points > MAX_COEFFS as u128 {
            return Err(SplineError::TooManyCoefficients {
                level,
                dim,
                needed: points,
                cap: MAX_COEFFS,
            });
        }
        for flat in 0..points as usize {
            let mut rem = flat;
            for k in (0..dim).rev() {
                index[k] = rem % (side + 1);
                rem /= side + 1;
            }
            for k in 0..dim {
                x[k] = index[k] as f64 / side as f64;
            }
            let err = (spline.evaluate(&x)? - f(&x)).abs();
            sup_error = sup_error.max(err);
        }
        let bound =
            2.0 * constant * dim as f64 * (n as f64).powf(-exponent / dim as f64);
        rows.push(RateRow {
            level,
            n_coeffs: n,
            constant,
            exponent,
            sup_error,
            bound,
            pass: sup_error <= bound + 1e-9,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Test family with an analytic smoothness certificate
// ---------------------------------------------------------------------------

/// A seeded test function with a closed-form Lipschitz certificate: the
/// lower envelope `g(x) = min_i (v_i + L_g‖x - a_i‖₂)` of random anchors
/// (exactly `L_g`-Lipschitz as a minimum of `L_g`-Lipschitz cones) times the
/// tent product `∏_k min(2 x_k, 2 - 2 x_k)`, which pins the function to zero
/// on the cube boundary where the spline basis loses its partition of unity.
#[derive(Debug, Clone)]
pub struct EnvelopeTestFunction {
    dim: usize,
    /// Anchor coordinates, row-major `n × dim`.
    anchors: Vec<f64>,
    values: Vec<f64>,
    envelope_constant: f64,
}

impl EnvelopeTestFunction {
    pub fn new(dim: usize, n_anchors: usize, envelope_constant: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let anchors: Vec<f64> =
            (0..n_anchors * dim).map(|_| rng.random::<f64>()).collect();
        let values: Vec<f64> = (0..n_anchors).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { dim, anchors, values, envelope_constant }
    }

    /// The envelope factor `g` alone.
    pub fn envelope(&self, x: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for (a, &v) in self.anchors.chunks_exact(self.dim).zip(&self.values) {
            let dist: f64 = a
                .iter()
                .zip(x)
                .map(|(ak, xk)| (ak - xk) * (ak - xk))
                .sum::<f64>()
                .sqrt();
            best = best.min(v + self.envelope_constant * dist);
        }
        best
    }

    /// The tent factor `∏_k min(2 x_k, 2 - 2 x_k)` (zero on the boundary,
    /// peak 1 at the center).
    pub fn tent(&self, x: &[f64]) -> f64 {
        x.iter().map(|&t| (2.0 * t).min(2.0 - 2.0 * t).max(0.0)).product()
    }

    /// The test function `g · tent`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.envelope(x) * self.tent(x)
    }

    /// Closed-form bound on `sup |g|` over the cube: anchor values plus one
    /// cone slope across the diameter `√d`.
    pub fn sup_envelope(&self) -> f64 {
        let vmax = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        vmax + self.envelope_constant * (self.dim as f64).sqrt()
    }

    /// Certified Lipschitz constant of the product: with `‖tent‖∞ ≤ 1` and
    /// `‖∇tent‖₂ ≤ 2√d`, the product rule gives
    /// `L ≤ L_g + 2√d · sup|g|`.
    pub fn certified_lipschitz(&self) -> f64 {
        self.envelope_constant + 2.0 * (self.dim as f64).sqrt() * self.sup_envelope()
    }

    /// Hölder-`α` constant derived from the Lipschitz one on the cube:
    /// `|Δf| ≤ L‖Δx‖ ≤ L·diam^{1-α}·‖Δx‖^α` with `diam = √d`.
    pub fn certified_holder(&self, exponent: f64) -> f64 {
        self.certified_lipschitz() * (self.dim as f64).sqrt().powf(1.0 - exponent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sawtooth_hits_the_pinned_values() {
        for (t, want) in [
            (-0.1, 0.0),
            (0.0, 0.0),
            (0.5, 0.5),
            (1.0, 1.0),
            (1.5, 0.5),
            (2.0, 0.0),
            (2.5, 0.0),
        ] {
            assert_eq!(sawtooth(t), want, "sawtooth({t})");
        }
    }

    #[test]
    fn basis_sums_to_one_away_from_the_left_boundary() {
        let level = 3u32;
        let side = 1usize << level;
        for dim in [1usize, 2] {
            let mut index = vec![0usize; dim];
            // Sample points strictly inside (2^-p, 1]^d.
            for step in 0..20 {
                let x: Vec<f64> = (0..dim)
                    .map(|k| {
                        let t = ((step * 7 + k * 3) % 23) as f64 / 23.0;
                        1.0 / side as f64 + 1e-6 + t * (1.0 - 1.0 / side as f64 - 2e-6)
                    })
                    .collect();
                let mut total = 0.0;
                let n = side.pow(dim as u32);
                for flat in 0..n {
                    let mut rem = flat;
                    for k in (0..dim).rev() {
                        index[k] = rem % side;
                        rem /= side;
                    }
                    total += tensor_bspline(&x, level, &index);
                }
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "partition of unity failed at {x:?}: {total}"
                );
            }
        }
    }

    #[test]
    fn fit_interpolates_the_dyadic_nodes_exactly() {
        let f = |x: &[f64]| (3.1 * x[0]).sin() + 0.5 * (2.0 * x[1]).cos();
        let level = 3;
        let spline = SplineApprox::fit(f, level, 2).unwrap();
        let side = 1usize << level;
        let h = 1.0 / side as f64;
        for j0 in 0..side {
            for j1 in 0..side {
                let node = [h * (j0 + 1) as f64, h * (j1 + 1) as f64];
                assert_eq!(spline.evaluate(&node).unwrap(), f(&node));
            }
        }
    }

    #[test]
    fn linear_functions_are_reproduced_exactly() {
        // Nodal interpolation with the tent basis is exact on multilinear
        // functions, everywhere including the left boundary wedge.
        let spline1 = SplineApprox::fit(|x: &[f64]| x[0], 4, 1).unwrap();
        for step in 0..=100 {
            let x = [step as f64 / 100.0];
            assert!((spline1.evaluate(&x).unwrap() - x[0]).abs() < 1e-14);
        }
        let spline2 = SplineApprox::fit(|x: &[f64]| x[0] * x[1], 3, 2).unwrap();
        for i in 0..=20 {
            for j in 0..=20 {
                let x = [i as f64 / 20.0, j as f64 / 20.0];
                let got = spline2.evaluate(&x).unwrap();
                assert!(
                    (got - x[0] * x[1]).abs() < 1e-12,
                    "bilinear reproduction failed at {x:?}: {got}"
                );
            }
        }
    }

    #[test]
    fn coefficient_cap_rejects_exponential_fits() {
        let err = SplineApprox::fit(|_: &[f64]| 0.0, 10, 4).unwrap_err();
        assert!(matches!(err, SplineError::TooManyCoefficients { .. }));
    }

    #[test]
    fn grid_factor_below_four_is_rejected() {
        let err = verify_rate(|x: &[f64]| x[0], 1, 1.0, 1.0, &[2], 3).unwrap_err();
        assert!(matches!(err, SplineError::GridTooCoarse { min: 4, found: 3 }));
    }
}
