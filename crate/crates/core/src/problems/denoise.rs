use nalgebra::{DMatrix, DVector};

use crate::engine::LassoForm;
use crate::error::{PathError, Result};
use crate::linalg::{BandedCholesky, SparseBandedMatrix};
use crate::Scalar;

/// Anisotropic total-variation denoising of an `m × n` image, rewritten as a
/// lasso over neighbor differences.
///
/// Pixels are stacked column by column. `D` holds one row per vertical and
/// horizontal neighbor pair; `V` appends a row selecting the last pixel, which
/// makes it full column rank. The lasso variable is `x` with `u = Bx`,
/// `B = (VᵗV)⁻¹Vᵗ`; every coordinate but the last is penalized.
#[derive(Debug, Clone)]
pub struct DenoiseProblem<T: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub image: DVector<T>,
    pub blur: Option<DMatrix<T>>,
    /// Row `k` of `D` is `u[pairs[k].0] − u[pairs[k].1]`.
    pairs: Vec<(usize, usize)>,
    vtv: SparseBandedMatrix<T>,
    factor: BandedCholesky<T>,
}

/// Builds the difference structure and factors `VᵗV` once.
pub fn denoise_build<T: Scalar>(
    m: usize,
    n: usize,
    w: &DVector<T>,
    blur: Option<DMatrix<T>>,
) -> Result<DenoiseProblem<T>> {
    if m < 2 || n < 2 {
        return Err(PathError::InvalidProblem(format!(
            "image must be at least 2x2, got {m}x{n}"
        )));
    }
    let p = m * n;
    if w.len() != p {
        return Err(PathError::DimensionMismatch {
            context: "denoise image",
            expected: p,
            found: w.len(),
        });
    }
    if let Some(k) = &blur {
        if k.shape() != (p, p) {
            return Err(PathError::DimensionMismatch {
                context: "blur operator",
                expected: p,
                found: k.nrows(),
            });
        }
    }
    let idx = |r: usize, c: usize| r + c * m;
    let mut pairs = Vec::with_capacity(2 * p - m - n);
    for c in 0..n {
        for r in 0..m - 1 {
            pairs.push((idx(r + 1, c), idx(r, c)));
        }
    }
    for c in 0..n - 1 {
        for r in 0..m {
            pairs.push((idx(r, c + 1), idx(r, c)));
        }
    }
    let mut trip = Vec::with_capacity(3 * pairs.len() + 1);
    for &(a, b) in &pairs {
        trip.push((a, a, T::one()));
        trip.push((b, b, T::one()));
        trip.push((a, b, -T::one()));
    }
    trip.push((p - 1, p - 1, T::one()));
    let vtv = SparseBandedMatrix::from_triplets(p, &trip);
    let factor = vtv.cholesky()?;
    Ok(DenoiseProblem {
        rows: m,
        cols: n,
        image: w.clone(),
        blur,
        pairs,
        vtv,
        factor,
    })
}

/// The image `u = (VᵗV)⁻¹Vᵗx` for lasso coordinates `x`.
pub fn denoise_reconstruct<T: Scalar>(problem: &DenoiseProblem<T>, x: &DVector<T>) -> DVector<T> {
    problem.to_image(x)
}

impl<T: Scalar> DenoiseProblem<T> {
    pub fn num_pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Rows of `D`: `2mn − m − n`.
    pub fn num_differences(&self) -> usize {
        self.pairs.len()
    }

    /// Nonzero entries of `D`.
    pub fn difference_nnz(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn normal_matrix(&self) -> &SparseBandedMatrix<T> {
        &self.vtv
    }

    pub fn factor(&self) -> &BandedCholesky<T> {
        &self.factor
    }

    /// Drops small off-diagonal entries of the stored factor.
    pub fn truncate_factor(&mut self, tol: T) {
        self.factor.truncate(tol);
    }

    /// Same size and factor, different observed image.
    pub fn with_image(&self, w: &DVector<T>) -> Result<Self> {
        if w.len() != self.num_pixels() {
            return Err(PathError::DimensionMismatch {
                context: "denoise image",
                expected: self.num_pixels(),
                found: w.len(),
            });
        }
        Ok(Self {
            image: w.clone(),
            ..self.clone()
        })
    }

    /// Dense `V` (for checks on small images).
    pub fn v_matrix(&self) -> DMatrix<T> {
        let p = self.num_pixels();
        let mut v = DMatrix::zeros(self.pairs.len() + 1, p);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            v[(k, a)] = T::one();
            v[(k, b)] = -T::one();
        }
        v[(self.pairs.len(), p - 1)] = T::one();
        v
    }

    /// `x = Vu`.
    pub fn apply_v(&self, u: &DVector<T>) -> DVector<T> {
        let mut x = DVector::zeros(self.pairs.len() + 1);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            x[k] = u[a] - u[b];
        }
        x[self.pairs.len()] = u[self.num_pixels() - 1];
        x
    }

    /// `Vᵗx`.
    pub fn apply_vt(&self, x: &DVector<T>) -> DVector<T> {
        let mut u = DVector::zeros(self.num_pixels());
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            u[a] += x[k];
            u[b] -= x[k];
        }
        u[self.num_pixels() - 1] += x[self.pairs.len()];
        u
    }

    /// `u = Bx`.
    pub fn to_image(&self, x: &DVector<T>) -> DVector<T> {
        self.factor.solve(&self.apply_vt(x))
    }

    /// `Bᵗz`.
    fn apply_bt(&self, z: &DVector<T>) -> DVector<T> {
        self.apply_v(&self.factor.solve(z))
    }

    fn blurred(&self, u: DVector<T>) -> DVector<T> {
        match &self.blur {
            Some(k) => k * u,
            None => u,
        }
    }

    fn blurred_t(&self, r: DVector<T>) -> DVector<T> {
        match &self.blur {
            Some(k) => k.transpose() * r,
            None => r,
        }
    }

    /// `KBx − w`.
    fn residual(&self, x: &DVector<T>) -> DVector<T> {
        self.blurred(self.to_image(x)) - &self.image
    }
}

impl<T: Scalar> LassoForm<T> for DenoiseProblem<T> {
    fn dim(&self) -> usize {
        self.pairs.len() + 1
    }
    fn is_penalized(&self, j: usize) -> bool {
        j < self.pairs.len()
    }
    fn loss(&self, x: &DVector<T>) -> T {
        self.residual(x).norm_squared() * T::lit(0.5)
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.apply_bt(&self.blurred_t(self.residual(x)))
    }
    fn hessian_column(&self, j: usize) -> DVector<T> {
        let mut e = DVector::zeros(self.dim());
        e[j] = T::one();
        let kb = self.blurred(self.to_image(&e));
        self.apply_bt(&self.blurred_t(kb))
    }
}
