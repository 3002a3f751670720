//! Symmetric banded matrix with a small dense border, factorised by banded
//! Cholesky plus a Schur complement on the border block.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct BorderedBanded {
    n: usize,
    bw: usize,
    nb: usize,
    /// Row-major lower band: `band[i * (bw + 1) + d] = A[i][i - d]`.
    band: Vec<f64>,
    /// A[band rows, border cols].
    border: DMatrix<f64>,
    corner: DMatrix<f64>,
}

pub struct Factorization {
    n: usize,
    bw: usize,
    chol: Vec<f64>,
    /// B^{-1} b for each border column.
    inv_border: DMatrix<f64>,
    border: DMatrix<f64>,
    schur: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl BorderedBanded {
    pub fn new(n_band: usize, bandwidth: usize, n_border: usize) -> Self {
        Self {
            n: n_band,
            bw: bandwidth,
            nb: n_border,
            band: vec![0.0; n_band * (bandwidth + 1)],
            border: DMatrix::zeros(n_band, n_border),
            corner: DMatrix::zeros(n_border, n_border),
        }
    }

    pub fn dim(&self) -> usize {
        self.n + self.nb
    }

    pub fn clear(&mut self) {
        self.band.iter_mut().for_each(|v| *v = 0.0);
        self.border.fill(0.0);
        self.corner.fill(0.0);
    }

    /// Adds `v` to A[i][j] (and, implicitly, A[j][i]). Diagonal entries are
    /// added once; off-diagonal pairs should be added once per unordered pair.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j >= self.n {
            let (a, b) = (i - self.n, j - self.n);
            self.corner[(a, b)] += v;
            if a != b {
                self.corner[(b, a)] += v;
            }
        } else if i >= self.n {
            self.border[(j, i - self.n)] += v;
        } else {
            let d = i - j;
            assert!(d <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
            self.band[i * (self.bw + 1) + d] += v;
        }
    }

    /// Adds the symmetric outer product `scale * a a^T` for a sparse vector.
    pub fn add_outer(&mut self, idx: &[usize], val: &[f64], scale: f64) {
        for (p, (&i, &vi)) in idx.iter().zip(val).enumerate() {
            for (&j, &vj) in idx[..=p].iter().zip(&val[..=p]) {
                self.add(i, j, scale * vi * vj);
            }
        }
    }

    /// Factorises A + shift I. Returns `None` if not positive definite.
    pub fn factor(&self, shift: f64) -> Option<Factorization> {
        self.factor_impl(shift, false).map(|(f, _)| f)
    }

    /// Modified Cholesky in the Gill-Murray style: pivots that are too small
    /// (or negative) are raised so the factor exists with bounded entries,
    /// giving a positive definite matrix close to A where A is well behaved.
    /// Returns the factor and whether any pivot was modified.
    pub fn factor_modified(&self, shift: f64) -> (Factorization, bool) {
        self.factor_impl(shift, true).expect("modified factorisation always succeeds")
    }

    fn factor_impl(&self, shift: f64, modify: bool) -> Option<(Factorization, bool)> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            l[i * w] += shift;
        }
        let (mut gamma, mut xi) = (0.0_f64, 0.0_f64);
        if modify {
            for i in 0..n {
                gamma = gamma.max(l[i * w].abs());
                for d in 1..=bw.min(i) {
                    xi = xi.max(l[i * w + d].abs());
                }
            }
        }
        let nn = (n.max(2) as f64).powi(2) - 1.0;
        let beta2 = gamma.max(xi / nn.sqrt()).max(f64::EPSILON);
        let delta = f64::EPSILON * (gamma + xi).max(1.0);
        let mut modified = false;
        let mut col = vec![0.0; bw];
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut s = l[j * w];
            for k in lo..j {
                let v = l[j * w + (j - k)];
                s -= v * v;
            }
            let hi = (j + bw + 1).min(n);
            let mut theta = 0.0_f64;
            for i in (j + 1)..hi {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut c = l[i * w + (i - j)];
                for k in lo_i..j {
                    c -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                col[i - j - 1] = c;
                theta = theta.max(c.abs());
            }
            if modify {
                let d = s.abs().max(delta).max(theta * theta / beta2);
                if d != s {
                    modified = true;
                }
                s = d;
            }
            if !(s > 0.0) || !s.is_finite() {
                return None;
            }
            let djj = s.sqrt();
            l[j * w] = djj;
            for i in (j + 1)..hi {
                l[i * w + (i - j)] = col[i - j - 1] / djj;
            }
        }
        let mut f = Factorization {
            n,
            bw,
            chol: l,
            inv_border: DMatrix::zeros(n, self.nb),
            border: self.border.clone(),
            schur: None,
        };
        if self.nb > 0 {
            let mut inv = DMatrix::zeros(n, self.nb);
            for c in 0..self.nb {
                let col: Vec<f64> = self.border.column(c).iter().copied().collect();
                let x = f.band_solve(&col);
                inv.column_mut(c).copy_from_slice(&x);
            }
            let mut s = self.corner.clone();
            for i in 0..self.nb {
                s[(i, i)] += shift;
            }
            s -= self.border.transpose() * &inv;
            f.inv_border = inv;
            let chol = match nalgebra::Cholesky::new(s.clone()) {
                Some(c) => c,
                None if modify => {
                    // symmetric eigen-repair of the small Schur block
                    let eig = s.symmetric_eigen();
                    let floor = 1e-8 * eig.eigenvalues.amax().max(1.0);
                    let d = eig.eigenvalues.map(|v| v.abs().max(floor));
                    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
                    modified = true;
                    nalgebra::Cholesky::new(repaired)?
                }
                None => return None,
            };
            f.schur = Some(chol);
        }
        Some((f, modified))
    }
}

impl Factorization {
    fn band_solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let l = &self.chol;
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= l[i * w + (i - k)] * y[k];
            }
            y[i] = s / l[i * w];
        }
        for i in (0..n).rev() {
            let hi = (i + bw + 1).min(n);
            let mut s = y[i];
            for k in (i + 1)..hi {
                s -= l[k * w + (k - i)] * y[k];
            }
            y[i] = s / l[i * w];
        }
        y
    }

    /// Solves (A + shift I) x = rhs.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let wb = self.band_solve(&rhs[..n]);
        let Some(schur) = &self.schur else {
            return wb;
        };
        let r_border = DVector::from_column_slice(&rhs[n..]);
        let wbv = DVector::from_column_slice(&wb);
        let s_rhs = r_border - self.border.transpose() * &wbv;
        let yb = schur.solve(&s_rhs);
        let xb = wbv - &self.inv_border * &yb;
        let mut out: Vec<f64> = xb.iter().copied().collect();
        out.extend(yb.iter());
        out
    }
}
