use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::Scalar;

/// Orthonormal basis of the null space of an active constraint matrix `U`.
///
/// Maintains a full orthogonal `Q` and upper triangular `R` with `Uᵗ = Q[:, ..k] R`,
/// so the trailing `n − k` columns of `Q` span `null(U)`. Rows are added or
/// dropped one at a time with Givens rotations instead of refactoring.
#[derive(Debug, Clone)]
pub struct NullBasis<T: Scalar> {
    q: DMatrix<T>,
    r: DMatrix<T>,
    /// Caller-supplied tag for each row of `U`, in factorization order.
    tags: Vec<usize>,
}

fn givens<T: Scalar>(a: T, b: T) -> (T, T, T) {
    if b == T::zero() {
        return (T::one(), T::zero(), a);
    }
    let r = a.hypot(b);
    (a / r, b / r, r)
}

fn rotate_columns<T: Scalar>(q: &mut DMatrix<T>, i: usize, j: usize, c: T, s: T) {
    for row in 0..q.nrows() {
        let (a, b) = (q[(row, i)], q[(row, j)]);
        q[(row, i)] = c * a + s * b;
        q[(row, j)] = c * b - s * a;
    }
}

/// Signed unit-vector rows: `Some((column, sign))` per row when every row is `±e_c`.
fn unit_rows<T: Scalar>(u: &DMatrix<T>) -> Option<Vec<(usize, T)>> {
    let mut out = Vec::with_capacity(u.nrows());
    let mut seen = vec![false; u.ncols()];
    for i in 0..u.nrows() {
        let mut hit = None;
        for j in 0..u.ncols() {
            let v = u[(i, j)];
            if v == T::zero() {
                continue;
            }
            if hit.is_some() || (v != T::one() && v != -T::one()) {
                return None;
            }
            hit = Some((j, v));
        }
        let (c, s) = hit?;
        if seen[c] {
            return None;
        }
        seen[c] = true;
        out.push((c, s));
    }
    Some(out)
}

impl<T: Scalar> NullBasis<T> {
    /// Builds the basis for `u` (rows tagged `0..u.nrows()`).
    ///
    /// Rows that are signed Euclidean unit vectors are recognized and the
    /// basis is assembled from the complementary unit vectors directly.
    pub fn new(u: &DMatrix<T>, rank_tol: T) -> Result<Self> {
        let tags: Vec<usize> = (0..u.nrows()).collect();
        Self::with_tags(u, tags, rank_tol)
    }

    pub fn with_tags(u: &DMatrix<T>, tags: Vec<usize>, rank_tol: T) -> Result<Self> {
        let (k, n) = u.shape();
        assert_eq!(tags.len(), k, "one tag per row");
        if k > n {
            return Err(PathError::RankDeficient { rows: Vec::new() });
        }
        if let Some(units) = unit_rows(u) {
            let mut q = DMatrix::zeros(n, n);
            let mut used = vec![false; n];
            for (i, &(c, s)) in units.iter().enumerate() {
                q[(c, i)] = s;
                used[c] = true;
            }
            for (col, c) in (k..n).zip((0..n).filter(|&c| !used[c])) {
                q[(c, col)] = T::one();
            }
            return Ok(Self {
                q,
                r: DMatrix::identity(k, k),
                tags,
            });
        }

        let mut basis = Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::zeros(0, 0),
            tags: Vec::new(),
        };
        for (i, tag) in tags.into_iter().enumerate() {
            basis = basis.add_row(&u.row(i).transpose(), tag, rank_tol)?;
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn active_rows(&self) -> usize {
        self.r.nrows()
    }

    pub fn tags(&self) -> &[usize] {
        &self.tags
    }

    /// `Y`: `n × (n − k)` with orthonormal columns spanning `null(U)`.
    pub fn basis(&self) -> DMatrix<T> {
        let k = self.active_rows();
        self.q.columns(k, self.dim() - k).into_owned()
    }

    /// Orthogonal projector `Y Yᵗ` onto the null space.
    pub fn projector(&self) -> DMatrix<T> {
        let y = self.basis();
        &y * y.transpose()
    }

    /// Appends row `a` to `U`. Fails with `RankDeficient` when `a` lies (to
    /// `rank_tol` relative) in the span of the rows already present.
    pub fn add_row(&self, a: &DVector<T>, tag: usize, rank_tol: T) -> Result<Self> {
        let n = self.dim();
        let k = self.active_rows();
        if a.len() != n {
            return Err(PathError::DimensionMismatch {
                context: "null basis row",
                expected: n,
                found: a.len(),
            });
        }
        if k == n {
            return Err(PathError::RankDeficient { rows: Vec::new() });
        }
        let mut q = self.q.clone();
        let mut w = q.tr_mul(a);
        for i in ((k + 1)..n).rev() {
            let (c, s, r) = givens(w[i - 1], w[i]);
            w[i - 1] = r;
            w[i] = T::zero();
            rotate_columns(&mut q, i - 1, i, c, s);
        }
        let norm = a.norm();
        if norm == T::zero() || w[k].abs() <= rank_tol * norm {
            return Err(PathError::RankDeficient { rows: Vec::new() });
        }
        let mut r = DMatrix::zeros(k + 1, k + 1);
        r.view_mut((0, 0), (k, k)).copy_from(&self.r);
        for i in 0..=k {
            r[(i, k)] = w[i];
        }
        let mut tags = self.tags.clone();
        tags.push(tag);
        Ok(Self { q, r, tags })
    }

    /// Removes the row carrying `tag`.
    pub fn drop_row(&self, tag: usize) -> Result<Self> {
        let p = self
            .tags
            .iter()
            .position(|&t| t == tag)
            .ok_or_else(|| PathError::Contract(format!("row tag {tag} not in null basis")))?;
        let k = self.active_rows();
        let mut q = self.q.clone();
        // delete column p: R becomes upper Hessenberg from column p on
        let mut r = self.r.clone().remove_column(p);
        for j in p..(k - 1) {
            let (c, s, rr) = givens(r[(j, j)], r[(j + 1, j)]);
            for col in j..(k - 1) {
                let (a, b) = (r[(j, col)], r[(j + 1, col)]);
                r[(j, col)] = c * a + s * b;
                r[(j + 1, col)] = c * b - s * a;
            }
            r[(j, j)] = rr;
            r[(j + 1, j)] = T::zero();
            rotate_columns(&mut q, j, j + 1, c, s);
        }
        let r = r.remove_row(k - 1);
        let mut tags = self.tags.clone();
        tags.remove(p);
        Ok(Self { q, r, tags })
    }

    /// Reconstructs `U` (rows in factorization order) from `Q R`.
    pub fn active_matrix(&self) -> DMatrix<T> {
        let k = self.active_rows();
        (self.q.columns(0, k) * &self.r).transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_row_in_plane() {
        let u = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = NullBasis::new(&u, 1e-10).unwrap();
        let y = b.basis();
        assert_eq!(y.shape(), (2, 1));
        assert!((y[(0, 0)]).abs() < 1e-15 && (y[(1, 0)].abs() - 1.0).abs() < 1e-15);
        let full = b.add_row(&DVector::from_vec(vec![0.0, 1.0]), 1, 1e-10).unwrap();
        assert_eq!(full.basis().ncols(), 0);
    }

    #[test]
    fn general_rows_take_the_givens_route() {
        let u = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let b = NullBasis::new(&u, 1e-10).unwrap();
        let y = b.basis();
        assert!((&u * &y).amax() < 1e-14);
        assert!((y.tr_mul(&y) - DMatrix::identity(1, 1)).amax() < 1e-14);
        assert!((b.active_matrix() - u).amax() < 1e-14);
    }

    #[test]
    fn dependent_row_is_rank_deficient() {
        let u = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(
            NullBasis::new(&u, 1e-10),
            Err(PathError::RankDeficient { .. })
        ));
    }

    #[test]
    fn updated_projector_matches_fresh_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 8;
        let u = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        let base = NullBasis::new(&u.rows(0, 2).into_owned(), 1e-10).unwrap();
        let grown = base.add_row(&u.row(2).transpose(), 2, 1e-10).unwrap();
        let fresh = NullBasis::new(&u, 1e-10).unwrap();
        assert!((grown.projector() - fresh.projector()).amax() < 1e-9);

        let shrunk = fresh.drop_row(0).unwrap();
        let fresh12 = NullBasis::new(&u.rows(1, 2).into_owned(), 1e-10).unwrap();
        assert!((shrunk.projector() - fresh12.projector()).amax() < 1e-9);
        assert!((shrunk.active_matrix() - u.rows(1, 2)).amax() < 1e-12);
    }

    #[test]
    fn unit_rows_give_complementary_unit_columns() {
        let u = DMatrix::from_row_slice(2, 4, &[0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = NullBasis::new(&u, 1e-10).unwrap();
        let y = b.basis();
        assert_eq!(y.ncols(), 2);
        assert!((&u * &y).amax() == 0.0);
        assert!((b.active_matrix() - u).amax() == 0.0);
    }
}
