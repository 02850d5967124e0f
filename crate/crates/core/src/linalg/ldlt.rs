use nalgebra::{DMatrix, DVector};

use crate::error::{PathError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot {
    One,
    Two,
}

/// Bunch–Kaufman factorization `P A Pᵗ = L D Lᵗ` of a symmetric matrix, with
/// `D` block diagonal in 1×1 and 2×2 blocks.
///
/// Used for the bordered KKT systems `[[H, Uᵗ], [U, 0]]`, which are symmetric
/// but indefinite whenever constraints are active.
#[derive(Debug, Clone)]
pub struct SymmetricIndefinite<T: Scalar> {
    /// Unit lower triangle holds `L`; diagonal and first subdiagonal of 2×2
    /// blocks hold `D`.
    factor: DMatrix<T>,
    pivots: Vec<Pivot>,
    perm: Vec<usize>,
}

impl<T: Scalar> SymmetricIndefinite<T> {
    /// Factors `a`, reading only its lower triangle. Fails with
    /// [`PathError::SingularKkt`] when a pivot block is numerically singular.
    pub fn new(a: &DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(PathError::DimensionMismatch {
                context: "symmetric indefinite factorization",
                expected: n,
                found: a.ncols(),
            });
        }
        let mut w = a.clone();
        for j in 0..n {
            for i in 0..j {
                w[(i, j)] = w[(j, i)];
            }
        }
        let scale = w.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let tiny = T::machine_eps() * T::from_usize_lossy(n.max(1)) * scale;
        let alpha = (T::one() + T::lit(17.0).sqrt()) / T::lit(8.0);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut pivots = vec![Pivot::One; n];

        let swap = |w: &mut DMatrix<T>, perm: &mut Vec<usize>, p: usize, q: usize| {
            if p != q {
                w.swap_rows(p, q);
                w.swap_columns(p, q);
                perm.swap(p, q);
            }
        };

        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let (imax, colmax) = ((k + 1)..n)
                .map(|i| (i, w[(i, k)].abs()))
                .fold((k, T::zero()), |best, c| if c.1 > best.1 { c } else { best });

            if absakk.max(colmax) <= tiny {
                return Err(PathError::SingularKkt);
            }

            let kind;
            if absakk >= alpha * colmax {
                kind = Pivot::One;
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| w[(imax, j)].abs())
                    .fold(T::zero(), |m, x| m.max(x));
                if absakk * rowmax >= alpha * colmax * colmax {
                    kind = Pivot::One;
                } else if w[(imax, imax)].abs() >= alpha * rowmax {
                    swap(&mut w, &mut perm, k, imax);
                    kind = Pivot::One;
                } else {
                    swap(&mut w, &mut perm, k + 1, imax);
                    kind = Pivot::Two;
                }
            }

            match kind {
                Pivot::One => {
                    let d = w[(k, k)];
                    if d.abs() <= tiny {
                        return Err(PathError::SingularKkt);
                    }
                    for i in (k + 1)..n {
                        let lik = w[(i, k)] / d;
                        for j in (k + 1)..=i {
                            let upd = lik * w[(j, k)];
                            w[(i, j)] -= upd;
                            w[(j, i)] = w[(i, j)];
                        }
                    }
                    for i in (k + 1)..n {
                        w[(i, k)] /= d;
                    }
                    pivots[k] = Pivot::One;
                    k += 1;
                }
                Pivot::Two => {
                    let d11 = w[(k, k)];
                    let d21 = w[(k + 1, k)];
                    let d22 = w[(k + 1, k + 1)];
                    let det = d11 * d22 - d21 * d21;
                    if det.abs() <= tiny * scale.max(T::one()) {
                        return Err(PathError::SingularKkt);
                    }
                    // rows i > k+1: [l_i,k  l_i,k+1] = [w_ik  w_i,k+1] D⁻¹
                    let mut l = Vec::with_capacity(n.saturating_sub(k + 2));
                    for i in (k + 2)..n {
                        let a = w[(i, k)];
                        let b = w[(i, k + 1)];
                        l.push(((a * d22 - b * d21) / det, (b * d11 - a * d21) / det));
                    }
                    for (ii, i) in ((k + 2)..n).enumerate() {
                        for j in (k + 2)..=i {
                            let upd = l[ii].0 * w[(j, k)] + l[ii].1 * w[(j, k + 1)];
                            w[(i, j)] -= upd;
                            w[(j, i)] = w[(i, j)];
                        }
                    }
                    for (ii, i) in ((k + 2)..n).enumerate() {
                        w[(i, k)] = l[ii].0;
                        w[(i, k + 1)] = l[ii].1;
                    }
                    pivots[k] = Pivot::Two;
                    pivots[k + 1] = Pivot::Two;
                    k += 2;
                }
            }
        }
        Ok(Self {
            factor: w,
            pivots,
            perm,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of (positive, negative) eigenvalues of the factored matrix.
    pub fn inertia(&self) -> (usize, usize) {
        let n = self.dim();
        let (mut pos, mut neg) = (0, 0);
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One => {
                    if self.factor[(k, k)] > T::zero() {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                    k += 1;
                }
                Pivot::Two => {
                    // det < 0 for a Bunch–Kaufman 2×2 block: one of each sign
                    let det = self.factor[(k, k)] * self.factor[(k + 1, k + 1)]
                        - self.factor[(k + 1, k)] * self.factor[(k + 1, k)];
                    if det < T::zero() {
                        pos += 1;
                        neg += 1;
                    } else if self.factor[(k, k)] > T::zero() {
                        pos += 2;
                    } else {
                        neg += 2;
                    }
                    k += 2;
                }
            }
        }
        (pos, neg)
    }

    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let n = self.dim();
        assert_eq!(b.len(), n, "rhs length");
        let f = &self.factor;
        let mut z = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        // L z = b'
        let mut k = 0;
        while k < n {
            let width = if self.pivots[k] == Pivot::Two { 2 } else { 1 };
            for c in k..k + width {
                let zc = z[c];
                for i in (k + width)..n {
                    z[i] -= f[(i, c)] * zc;
                }
            }
            k += width;
        }
        // D w = z
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One => {
                    z[k] /= f[(k, k)];
                    k += 1;
                }
                Pivot::Two => {
                    let (d11, d21, d22) = (f[(k, k)], f[(k + 1, k)], f[(k + 1, k + 1)]);
                    let det = d11 * d22 - d21 * d21;
                    let (a, b2) = (z[k], z[k + 1]);
                    z[k] = (d22 * a - d21 * b2) / det;
                    z[k + 1] = (d11 * b2 - d21 * a) / det;
                    k += 2;
                }
            }
        }
        // Lᵗ v = w
        let mut starts = Vec::new();
        let mut k = 0;
        while k < n {
            starts.push(k);
            k += if self.pivots[k] == Pivot::Two { 2 } else { 1 };
        }
        for &k in starts.iter().rev() {
            let width = if self.pivots[k] == Pivot::Two { 2 } else { 1 };
            for c in k..k + width {
                let mut acc = z[c];
                for i in (k + width)..n {
                    acc -= f[(i, c)] * z[i];
                }
                z[c] = acc;
            }
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }
}
