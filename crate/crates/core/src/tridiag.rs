//! Partial symmetric eigensolver: Householder reduction to tridiagonal form,
//! all eigenvalues by implicit QL, and selected eigenvectors by inverse
//! iteration.
//!
//! The Fantope projection only needs eigenvectors for eigenvalues above the
//! water level, which after the first few ADMM iterations is about `k` of
//! them; this avoids accumulating the full orthogonal factor.

use nalgebra::DMatrix;

pub(crate) struct Tridiagonal {
    n: usize,
    diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    off: Vec<f64>,
    /// Reflector `k` acts on coordinates `k + 1..n` as `I - beta v v^T`.
    reflectors: Vec<(Vec<f64>, f64)>,
}

/// Reduces the lower triangle of the symmetric matrix `m`.
pub(crate) fn tridiagonalize(m: &DMatrix<f64>) -> Tridiagonal {
    let n = m.nrows();
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(2));
    let mut q = vec![0.0; n];

    for k in 0..n.saturating_sub(1) {
        let s = k + 1;
        let x: Vec<f64> = a[k * n + s..(k + 1) * n].to_vec();
        let tail: f64 = x[1..].iter().map(|v| v * v).sum();
        if k + 2 >= n || tail == 0.0 {
            off[k] = x[0];
            reflectors.push((Vec::new(), 0.0));
            continue;
        }
        let norm = (x[0] * x[0] + tail).sqrt();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let beta = 2.0 / (v[0] * v[0] + tail);
        off[k] = alpha;

        // q = beta A22 v from the lower triangle
        q[s..].iter_mut().for_each(|e| *e = 0.0);
        for c in s..n {
            let col = &a[c * n + c + 1..(c + 1) * n];
            let vc = v[c - s];
            let vt = &v[c - s + 1..];
            let qt = &mut q[c + 1..n];
            let mut acc = 0.0;
            for ((qr, &ar), &vr) in qt.iter_mut().zip(col).zip(vt) {
                *qr += ar * vc;
                acc += ar * vr;
            }
            q[c] += a[c * n + c] * vc + acc;
        }
        let mut qv = 0.0;
        for r in s..n {
            q[r] *= beta;
            qv += q[r] * v[r - s];
        }
        let half = 0.5 * beta * qv;
        for r in s..n {
            q[r] -= half * v[r - s];
        }
        // A22 -= v w^T + w v^T on the lower triangle, with w = q
        for c in s..n {
            let (vc, wc) = (v[c - s], q[c]);
            let col = &mut a[c * n + c..(c + 1) * n];
            for ((ar, &vr), &qr) in col.iter_mut().zip(&v[c - s..]).zip(&q[c..n]) {
                *ar -= vr * wc + qr * vc;
            }
        }
        reflectors.push((v, beta));
    }
    for (i, d) in diag.iter_mut().enumerate() {
        *d = a[i * n + i];
    }
    Tridiagonal {
        n,
        diag,
        off,
        reflectors,
    }
}

impl Tridiagonal {
    fn norm(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < self.n {
                    self.off[i].abs()
                } else {
                    0.0
                };
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// All eigenvalues in descending order; `None` if QL fails to converge.
    pub(crate) fn eigenvalues(&self) -> Option<Vec<f64>> {
        let n = self.n;
        let mut d = self.diag.clone();
        let mut e = self.off.clone();
        e.push(0.0);
        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                iter += 1;
                if iter > 60 {
                    return None;
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = (g * g + 1.0).sqrt();
                g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r } else { -r });
                let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
                let mut i = m;
                let mut deflated = false;
                while i > l {
                    i -= 1;
                    let f = s * e[i];
                    let b = c * e[i];
                    r = (f * f + g * g).sqrt();
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        deflated = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                }
                if deflated {
                    continue;
                }
                d[l] -= p;
                e[l] = g;
                e[m] = 0.0;
            }
        }
        d.sort_by(|a, b| b.total_cmp(a));
        Some(d)
    }

    /// Eigenvectors of the original matrix for the given eigenvalues, which
    /// must be sorted descending. `None` if inverse iteration does not reach
    /// a small residual.
    pub(crate) fn eigenvectors(&self, values: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.n;
        let norm = self.norm().max(f64::MIN_POSITIVE);
        let cluster_tol = 1e-3 * norm;
        let resid_tol = 1e-11 * norm.max(1.0) * (n as f64).sqrt();
        let mut out = DMatrix::zeros(n, values.len());
        let mut cluster: Vec<Vec<f64>> = Vec::new();
        let mut prev = f64::INFINITY;
        let mut seed = 0x9e37_79b9_7f4a_7c15u64;

        for (j, &value) in values.iter().enumerate() {
            let mut shift = value;
            if prev - value > cluster_tol {
                cluster.clear();
            } else if j > 0 {
                // separate the factorizations of (near-)equal eigenvalues
                let pert = 10.0 * f64::EPSILON * value.abs().max(norm);
                if prev - shift < pert {
                    shift = prev - pert;
                }
            }
            prev = shift;
            let lu = TridiagLu::factor(&self.diag, &self.off, shift, norm);
            let mut z: Vec<f64> = (0..n)
                .map(|_| {
                    seed = seed
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
                })
                .collect();
            let mut ok = false;
            for it in 0..8 {
                lu.solve(&mut z);
                for u in &cluster {
                    let dot: f64 = u.iter().zip(&z).map(|(a, b)| a * b).sum();
                    z.iter_mut().zip(u).for_each(|(zi, ui)| *zi -= dot * ui);
                }
                let len = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(len.is_finite() && len > 0.0) {
                    return None;
                }
                z.iter_mut().for_each(|v| *v /= len);
                if it >= 1 && self.residual(&z, value) <= resid_tol {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return None;
            }
            let mut y = z.clone();
            self.back_transform(&mut y);
            out.column_mut(j).copy_from_slice(&y);
            cluster.push(z);
        }
        Some(out)
    }

    fn residual(&self, z: &[f64], value: f64) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut r = (self.diag[i] - value) * z[i];
                if i > 0 {
                    r += self.off[i - 1] * z[i - 1];
                }
                if i + 1 < n {
                    r += self.off[i] * z[i + 1];
                }
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    fn back_transform(&self, y: &mut [f64]) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            let tail = &mut y[k + 1..];
            let dot: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
            let f = beta * dot;
            tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= f * vi);
        }
    }
}

/// LU factorization with partial pivoting of `T - shift I`.
struct TridiagLu {
    lower: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagLu {
    fn factor(diag: &[f64], off: &[f64], shift: f64, norm: f64) -> Self {
        let n = diag.len();
        let tiny = f64::EPSILON * norm;
        let mut d: Vec<f64> = diag.iter().map(|v| v - shift).collect();
        let mut lower = off.to_vec();
        let mut du = off.to_vec();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= lower[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let fact = lower[i] / d[i];
                lower[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / lower[i];
                d[i] = lower[i];
                lower[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if let Some(last) = d.last_mut() {
            if *last == 0.0 {
                *last = tiny;
            }
        }
        TridiagLu {
            lower,
            d,
            du,
            du2,
            swapped,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
            }
            b[i + 1] -= self.lower[i] * b[i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            if i + 1 < n {
                v -= self.du[i] * b[i + 1];
            }
            if i + 2 < n {
                v -= self.du2[i] * b[i + 2];
            }
            b[i] = v / self.d[i];
        }
    }
}
