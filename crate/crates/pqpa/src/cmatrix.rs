//! Small dense complex matrices, row-major.
//!
//! Dimensions here are tiny (at most a few hundred), so the naive
//! O(n^3) product is fine and keeps the layout identical to the
//! registry file format.

use num_complex::Complex64;

#[derive(Clone, PartialEq)]
pub struct CMatrix {
    pub dim: usize,
    /// Row-major entries, `data[r * dim + c]`.
    pub data: Vec<Complex64>,
}

impl std::fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "CMatrix[{}x{}]", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|c| {
                    let z = self[(r, c)];
                    format!("{:.3}{:+.3}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.dim + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.dim + c]
    }
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix { dim, data: vec![Complex64::ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = CMatrix::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    /// Build from rows of `(re, im)` pairs.
    pub fn from_rows(rows: &[Vec<(f64, f64)>]) -> Option<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut m = CMatrix::zeros(dim);
        for (r, row) in rows.iter().enumerate() {
            for (c, &(re, im)) in row.iter().enumerate() {
                m[(r, c)] = Complex64::new(re, im);
            }
        }
        Some(m)
    }

    pub fn from_real(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut m = CMatrix::zeros(dim);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim);
            for (c, &re) in row.iter().enumerate() {
                m[(r, c)] = Complex64::new(re, 0.0);
            }
        }
        m
    }

    pub fn mul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self[(r, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                for c in 0..n {
                    out[(r, c)] += a * rhs[(k, c)];
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim);
        let mut out = self.clone();
        for (o, r) in out.data.iter_mut().zip(rhs.data.iter()) {
            *o += r;
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> CMatrix {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= s;
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn kron(&self, rhs: &CMatrix) -> CMatrix {
        let (n, m) = (self.dim, rhs.dim);
        let mut out = CMatrix::zeros(n * m);
        for r1 in 0..n {
            for c1 in 0..n {
                let a = self[(r1, c1)];
                if a == Complex64::ZERO {
                    continue;
                }
                for r2 in 0..m {
                    for c2 in 0..m {
                        out[(r1 * m + r2, c1 * m + c2)] = a * rhs[(r2, c2)];
                    }
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, rhs: &CMatrix) -> f64 {
        assert_eq!(self.dim, rhs.dim);
        self.data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, eps: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= eps
    }

    pub fn is_unitary(&self, eps: f64) -> bool {
        self.adjoint().mul(self).max_abs_diff(&CMatrix::identity(self.dim)) <= eps
    }

    pub fn is_projector(&self, eps: f64) -> bool {
        self.is_hermitian(eps) && self.mul(self).max_abs_diff(self) <= eps
    }

    /// Positive semidefiniteness within `eps`, by Cholesky on `M + eps I`.
    pub fn is_psd(&self, eps: f64) -> bool {
        if !self.is_hermitian(eps.max(1e-12)) {
            return false;
        }
        let n = self.dim;
        let mut a = self.clone();
        for i in 0..n {
            a[(i, i)] += Complex64::new(eps, 0.0);
        }
        // In-place Cholesky; a negative or non-real pivot means a
        // negative eigenvalue below -eps.
        let mut l = CMatrix::zeros(n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d < -eps {
                return false;
            }
            let d = d.max(0.0).sqrt();
            l[(j, j)] = Complex64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = if d > 0.0 { v / d } else { Complex64::ZERO };
            }
        }
        true
    }

    /// Round-trip-stable fingerprint at the given granularity.
    pub fn fingerprint(&self, granularity: f64) -> Vec<(i64, i64)> {
        self.data
            .iter()
            .map(|z| {
                (
                    (z.re / granularity).round() as i64,
                    (z.im / granularity).round() as i64,
                )
            })
            .collect()
    }
}

/// Common gates.
pub mod gates {
    use super::CMatrix;
    use num_complex::Complex64;

    pub fn hadamard() -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        CMatrix::from_real(&[&[s, s], &[s, -s]])
    }

    pub fn pauli_x() -> CMatrix {
        CMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn pauli_y() -> CMatrix {
        let mut m = CMatrix::zeros(2);
        m[(0, 1)] = Complex64::new(0.0, -1.0);
        m[(1, 0)] = Complex64::new(0.0, 1.0);
        m
    }

    pub fn pauli_z() -> CMatrix {
        CMatrix::from_real(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    /// CNOT with the first listed target as control.
    pub fn cnot() -> CMatrix {
        CMatrix::from_real(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 1.0, 0.0],
        ])
    }

    /// Controlled-Hadamard with the first listed target as control.
    pub fn ch() -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        CMatrix::from_real(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, s, s],
            &[0.0, 0.0, s, -s],
        ])
    }

    /// Projector onto the computational basis state `k` of `n` qubits.
    pub fn basis_projector(n: usize, k: usize) -> CMatrix {
        let dim = 1 << n;
        let mut m = CMatrix::zeros(dim);
        m[(k, k)] = Complex64::ONE;
        m
    }

    /// Density matrix of the basis state `|k>` of `n` qubits.
    pub fn basis_state(n: usize, k: usize) -> CMatrix {
        basis_projector(n, k)
    }

    /// Density matrix of a single qubit `|+>`.
    pub fn plus_state() -> CMatrix {
        CMatrix::from_real(&[&[0.5, 0.5], &[0.5, 0.5]])
    }

    /// Density matrix of the Bell state (|00> + |11>)/sqrt(2).
    pub fn bell_state() -> CMatrix {
        CMatrix::from_real(&[
            &[0.5, 0.0, 0.0, 0.5],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.5, 0.0, 0.0, 0.5],
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::gates::*;
    use super::*;

    #[test]
    fn hadamard_is_unitary_involution() {
        let h = hadamard();
        assert!(h.is_unitary(1e-12));
        assert!(h.mul(&h).max_abs_diff(&CMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn projector_checks() {
        assert!(basis_projector(1, 0).is_projector(1e-12));
        assert!(!hadamard().is_projector(1e-9));
    }

    #[test]
    fn kron_dimensions() {
        let m = hadamard().kron(&CMatrix::identity(2));
        assert_eq!(m.dim, 4);
        assert!(m.is_unitary(1e-12));
    }

    #[test]
    fn psd_detects_negative_eigenvalue() {
        let ok = CMatrix::from_real(&[&[0.5, 0.0], &[0.0, 0.5]]);
        assert!(ok.is_psd(1e-9));
        let bad = CMatrix::from_real(&[&[0.5, 0.6], &[0.6, 0.5]]);
        assert!(!bad.is_psd(1e-9));
    }
}
