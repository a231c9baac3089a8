//! Random-matrix spectra: Wigner ensembles, a cyclic Jacobi eigensolver
//! for dense symmetric matrices, semicircle-law moment checks, and the
//! eigenvalue scaling of squared symmetric matrices.

use crate::rng::{domain, CounterRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RmtError {
    #[error("matrix dimension must be at least 1, got {0}")]
    TooSmall(usize),
    #[error("dense eigensolver is limited to n <= {limit}, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("Jacobi sweep limit reached after {sweeps} sweeps (off-diagonal {offdiag:.3e})")]
    NoConvergence { sweeps: usize, offdiag: f64 },
    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
}

const MAX_DENSE_N: usize = 2048;
const MAX_SWEEPS: usize = 50;

/// Dense symmetric matrix in packed lower-triangle storage, symmetric by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    n: usize,
    tri: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix {
            n,
            tri: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = SymmetricMatrix::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        SymmetricMatrix::from_diagonal(&vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.tri[Self::idx(i, j)]
        } else {
            self.tri[Self::idx(j, i)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        if j <= i {
            self.tri[Self::idx(i, j)] = v;
        } else {
            self.tri[Self::idx(j, i)] = v;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_squared(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..=i {
                let v = self.tri[Self::idx(i, j)];
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.tri.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += self.get(i, j) * xj;
            }
            *yi = acc;
        }
        y
    }

    /// The square M * M, symmetric positive semidefinite.
    pub fn square(&self) -> SymmetricMatrix {
        let n = self.n;
        let dense = self.to_dense();
        let mut out = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += dense[i * n + k] * dense[j * n + k];
                }
                out.tri[Self::idx(i, j)] = acc;
            }
        }
        out
    }

    fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = self.get(i, j);
            }
        }
        d
    }

    fn check_finite(&self) -> Result<(), RmtError> {
        for i in 0..self.n {
            for j in 0..=i {
                if !self.tri[Self::idx(i, j)].is_finite() {
                    return Err(RmtError::NonFinite { i, j });
                }
            }
        }
        Ok(())
    }
}

/// Entry distribution for Wigner sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WignerEnsemble {
    Gaussian,
    /// Fair signs scaled to the requested entry standard deviation.
    Rademacher,
}

/// Symmetric matrix with iid upper-triangle (and diagonal) entries of the
/// given standard deviation, mirrored.
pub fn sample_wigner_with(
    n: usize,
    ensemble: WignerEnsemble,
    entry_std: f64,
    seed: u64,
) -> SymmetricMatrix {
    let rng = CounterRng::new(seed).stream(domain::WIGNER);
    let mut m = SymmetricMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let draw = match ensemble {
                WignerEnsemble::Gaussian => rng.normal(&[j as u64, i as u64]),
                WignerEnsemble::Rademacher => rng.sign(&[j as u64, i as u64]),
            };
            m.set(i, j, entry_std * draw);
        }
    }
    m
}

/// Unit-variance Gaussian Wigner matrix.
pub fn sample_wigner(n: usize, seed: u64) -> SymmetricMatrix {
    sample_wigner_with(n, WignerEnsemble::Gaussian, 1.0, seed)
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Final off-diagonal l1 norm of the rotated matrix; bounds the
    /// eigenvalue backward error.
    pub residual: f64,
    pub sweeps: usize,
}

/// Cyclic Jacobi eigensolver (rotations only, no eigenvector accumulation).
pub fn eigenvalues(m: &SymmetricMatrix) -> Result<Spectrum, RmtError> {
    let n = m.dim();
    if n < 1 {
        return Err(RmtError::TooSmall(n));
    }
    if n > MAX_DENSE_N {
        return Err(RmtError::TooLarge {
            n,
            limit: MAX_DENSE_N,
        });
    }
    m.check_finite()?;
    if n == 1 {
        return Ok(Spectrum {
            eigenvalues: vec![m.get(0, 0)],
            residual: 0.0,
            sweeps: 0,
        });
    }

    let mut a = m.to_dense();
    let scale = m.max_abs_entry().max(f64::MIN_POSITIVE);
    let stop = 1e-15 * scale * (n * n) as f64;

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                s += a[p * n + q].abs();
            }
        }
        s
    };

    let mut sweeps = 0;
    loop {
        let sm = off(&a);
        if sm <= stop {
            let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
            eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
            return Ok(Spectrum {
                eigenvalues: eig,
                residual: sm,
                sweeps,
            });
        }
        if sweeps >= MAX_SWEEPS {
            return Err(RmtError::NoConvergence {
                sweeps,
                offdiag: sm,
            });
        }
        // threshold strategy: skip tiny elements during the first sweeps
        let tresh = if sweeps < 3 {
            0.2 * sm / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let g = 100.0 * apq.abs();
                // after a few sweeps, zero negligible elements outright
                if sweeps > 3
                    && a[p * n + p].abs() + g == a[p * n + p].abs()
                    && a[q * n + q].abs() + g == a[q * n + q].abs()
                {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                if apq.abs() <= tresh {
                    continue;
                }
                let h = a[q * n + q] - a[p * n + p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        t = -t;
                    }
                    t
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                a[p * n + p] -= h;
                a[q * n + q] += h;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for j in 0..n {
                    if j == p || j == q {
                        continue;
                    }
                    let ajp = a[j * n + p];
                    let ajq = a[j * n + q];
                    let njp = ajp - s * (ajq + tau * ajp);
                    let njq = ajq + s * (ajp - tau * ajq);
                    a[j * n + p] = njp;
                    a[p * n + j] = njp;
                    a[j * n + q] = njq;
                    a[q * n + j] = njq;
                }
            }
        }
        sweeps += 1;
    }
}

/// Closed-form CDF of the semicircle density (2/pi) sqrt(1 - x^2) on [-1, 1].
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -1.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        0.5 + (x * (1.0 - x * x).sqrt() + x.asin()) / std::f64::consts::PI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemicircleReport {
    pub n: usize,
    pub trials: usize,
    /// Moments of the unit-interval eigenvalue coordinate
    /// s = lambda / (4 sqrt n) + 1/2, the affine map of the spectrum onto
    /// [0, 1] whose limit law is Beta(3/2, 3/2).
    pub first_moment: f64,
    pub second_moment: f64,
    /// Sup distance between the empirical CDF of the semicircle-normalized
    /// eigenvalues lambda / (2 sqrt n) and the closed-form semicircle CDF.
    pub cdf_sup_distance: f64,
}

/// Pool the spectra of `trials` unit-variance Wigner matrices of size n.
pub fn semicircle_check(n: usize, trials: usize, seed: u64) -> Result<SemicircleReport, RmtError> {
    if n < 2 {
        return Err(RmtError::TooSmall(n));
    }
    let spectra: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let m = sample_wigner(n, CounterRng::new(seed).bits(&[domain::TRIAL, t]));
            eigenvalues(&m).map(|s| s.eigenvalues)
        })
        .collect::<Result<_, _>>()?;
    let root = (n as f64).sqrt();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut xs: Vec<f64> = Vec::with_capacity(n * trials);
    for spec in &spectra {
        for &ev in spec {
            let s = ev / (4.0 * root) + 0.5;
            s1 += s;
            s2 += s * s;
            xs.push(ev / (2.0 * root));
        }
    }
    let count = (n * trials) as f64;
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sup: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = semicircle_cdf(x);
        sup = sup.max((f - i as f64 / count).abs());
        sup = sup.max(((i + 1) as f64 / count - f).abs());
    }
    Ok(SemicircleReport {
        n,
        trials,
        first_moment: s1 / count,
        second_moment: s2 / count,
        cdf_sup_distance: sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    /// Mean eigenvalue of the squared matrix, equal to the mean squared
    /// eigenvalue of its square root.
    pub mean_eigenvalue: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Log-log slope of mean eigenvalue versus n.
    pub slope: f64,
    pub ensemble: WignerEnsemble,
    pub entry_std: f64,
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..xs.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}

/// Mean eigenvalue of S^2 for Wigner S across sizes. The default generator
/// uses entries of standard deviation 1/2, the normalization in which the
/// spectrum of S maps affinely onto the unit interval and the mean
/// eigenvalue of S^2 is n/4.
pub fn squared_spectrum_scaling(
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ScalingReport, RmtError> {
    squared_spectrum_scaling_with(n_list, trials, WignerEnsemble::Gaussian, 0.5, seed)
}

pub fn squared_spectrum_scaling_with(
    n_list: &[usize],
    trials: usize,
    ensemble: WignerEnsemble,
    entry_std: f64,
    seed: u64,
) -> Result<ScalingReport, RmtError> {
    let mut points = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let means: Vec<f64> = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let s = sample_wigner_with(
                    n,
                    ensemble,
                    entry_std,
                    CounterRng::new(seed).bits(&[domain::TRIAL, ni as u64, t]),
                );
                // spectrum of S^2 is the elementwise square of the spectrum of S
                eigenvalues(&s)
                    .map(|sp| sp.eigenvalues.iter().map(|l| l * l).sum::<f64>() / n as f64)
            })
            .collect::<Result<_, _>>()?;
        let mean = means.iter().sum::<f64>() / trials as f64;
        points.push(ScalingPoint {
            n,
            mean_eigenvalue: mean,
            target: entry_std * entry_std * n as f64,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_eigenvalue).collect();
    Ok(ScalingReport {
        points,
        slope: log_log_slope(&xs, &ys),
        ensemble,
        entry_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal_spectra() {
        let id = SymmetricMatrix::identity(5);
        let s = eigenvalues(&id).unwrap();
        for ev in &s.eigenvalues {
            assert!((ev - 1.0).abs() < 1e-12);
        }
        let d = SymmetricMatrix::from_diagonal(&[3.0, 1.0, 2.0]);
        let s = eigenvalues(&d).unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 2.0).abs() < 1e-12);
        assert!((s.eigenvalues[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn wigner_entry_moments_and_symmetry() {
        let n = 512;
        let m = sample_wigner(n, 77);
        for (i, j) in [(0, 5), (100, 3), (511, 510)] {
            assert_eq!(m.get(i, j), m.get(j, i));
        }
        let count = (n * (n + 1) / 2) as f64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            for j in 0..=i {
                sum += m.get(i, j);
                sumsq += m.get(i, j) * m.get(i, j);
            }
        }
        let mean = sum / count;
        let var = sumsq / count - mean * mean;
        // five standard errors
        assert!(mean.abs() < 5.0 / count.sqrt(), "mean {mean}");
        assert!(
            (var - 1.0).abs() < 5.0 * (2.0f64 / count).sqrt(),
            "var {var}"
        );
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = sample_wigner(64, 9);
        let b = sample_wigner(64, 9);
        assert_eq!(a, b);
        let c = sample_wigner(64, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn trace_and_frobenius_identities() {
        for seed in 0..5 {
            let m = sample_wigner(48, seed);
            let s = eigenvalues(&m).unwrap();
            let tr: f64 = s.eigenvalues.iter().sum();
            let fr: f64 = s.eigenvalues.iter().map(|l| l * l).sum();
            let rel_t = (tr - m.trace()).abs() / m.trace().abs().max(1.0);
            let rel_f = (fr - m.frobenius_squared()).abs() / m.frobenius_squared();
            assert!(rel_t < 1e-8, "trace rel err {rel_t}");
            assert!(rel_f < 1e-8, "frobenius rel err {rel_f}");
        }
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial_roots() {
        // brute-force oracle: det(A - lambda I) sign changes plus bisection
        let n = 8;
        let m = sample_wigner(n, 3);
        let det = |lambda: f64| -> f64 {
            let mut a = vec![0.0f64; n * n];
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] = m.get(i, j) - if i == j { lambda } else { 0.0 };
                }
            }
            let mut sign = 1.0f64;
            let mut detv = 1.0f64;
            for col in 0..n {
                let mut piv = col;
                for r in col + 1..n {
                    if a[r * n + col].abs() > a[piv * n + col].abs() {
                        piv = r;
                    }
                }
                if a[piv * n + col] == 0.0 {
                    return 0.0;
                }
                if piv != col {
                    for c in 0..n {
                        a.swap(col * n + c, piv * n + c);
                    }
                    sign = -sign;
                }
                detv *= a[col * n + col];
                for r in col + 1..n {
                    let f = a[r * n + col] / a[col * n + col];
                    for c in col..n {
                        a[r * n + c] -= f * a[col * n + c];
                    }
                }
            }
            sign * detv
        };
        let bound = 1.0 + n as f64 * m.max_abs_entry();
        let grid = 4000;
        let mut roots = Vec::new();
        let mut prev_x = -bound;
        let mut prev_f = det(prev_x);
        for g in 1..=grid {
            let x = -bound + 2.0 * bound * g as f64 / grid as f64;
            let f = det(x);
            if f.signum() != prev_f.signum() {
                let (mut a_, mut b_) = (prev_x, x);
                let mut fa = prev_f;
                for _ in 0..80 {
                    let mid = 0.5 * (a_ + b_);
                    let fm = det(mid);
                    if fm.signum() == fa.signum() {
                        a_ = mid;
                        fa = fm;
                    } else {
                        b_ = mid;
                    }
                }
                roots.push(0.5 * (a_ + b_));
            }
            prev_x = x;
            prev_f = f;
        }
        assert_eq!(roots.len(), n, "oracle found {} roots", roots.len());
        let s = eigenvalues(&m).unwrap();
        for (ev, root) in s.eigenvalues.iter().zip(roots.iter()) {
            assert!((ev - root).abs() < 1e-6, "{ev} vs oracle {root}");
        }
    }

    #[test]
    fn square_spectrum_is_elementwise_square() {
        let m = sample_wigner(32, 21);
        let s = eigenvalues(&m).unwrap();
        let sq = eigenvalues(&m.square()).unwrap();
        let mut expect: Vec<f64> = s.eigenvalues.iter().map(|l| l * l).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let scale = expect.last().unwrap().max(1.0);
        for (a, b) in sq.eigenvalues.iter().zip(expect.iter()) {
            assert!((a - b).abs() / scale < 1e-6, "{a} vs {b}");
        }
        // squares are positive semidefinite
        assert!(sq.eigenvalues[0] >= -1e-6 * 32.0);
    }

    #[test]
    fn semicircle_cdf_matches_quadrature() {
        // Simpson quadrature oracle over the stated density
        let density = |x: f64| 2.0 / std::f64::consts::PI * (1.0 - x * x).max(0.0).sqrt();
        for &x in &[-0.9, -0.5, 0.0, 0.3, 0.8] {
            let steps = 20_000;
            let a = -1.0;
            let h = (x - a) / steps as f64;
            let mut acc = density(a) + density(x);
            for k in 1..steps {
                let xk = a + k as f64 * h;
                acc += density(xk) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = acc * h / 3.0;
            assert!(
                (quad - semicircle_cdf(x)).abs() < 5e-7,
                "x={x}: {quad} vs {}",
                semicircle_cdf(x)
            );
        }
    }

    #[test]
    fn semicircle_moments_small() {
        let r = semicircle_check(128, 8, 5).unwrap();
        assert!((r.first_moment - 0.5).abs() < 0.02, "{}", r.first_moment);
        assert!(
            (r.second_moment - 0.3125).abs() < 0.02,
            "{}",
            r.second_moment
        );
        assert!(r.cdf_sup_distance < 0.12, "{}", r.cdf_sup_distance);
    }

    #[test]
    fn squared_scaling_small() {
        let r = squared_spectrum_scaling(&[32, 64, 128], 6, 11).unwrap();
        for p in &r.points {
            let rel = (p.mean_eigenvalue - p.target).abs() / p.target;
            assert!(
                rel < 0.15,
                "n={}: mean {} target {}",
                p.n,
                p.mean_eigenvalue,
                p.target
            );
        }
        assert!((r.slope - 1.0).abs() < 0.1, "slope {}", r.slope);
        // universality: sign entries give the same scaling
        let r2 =
            squared_spectrum_scaling_with(&[32, 64], 6, WignerEnsemble::Rademacher, 0.5, 13)
                .unwrap();
        for p in &r2.points {
            let rel = (p.mean_eigenvalue - p.target).abs() / p.target;
            assert!(rel < 0.15, "rademacher n={}: {}", p.n, p.mean_eigenvalue);
        }
    }

    #[test]
    fn solver_rejects_oversized_and_non_finite() {
        let big = SymmetricMatrix::zeros(MAX_DENSE_N + 1);
        assert!(matches!(eigenvalues(&big), Err(RmtError::TooLarge { .. })));
        let mut bad = SymmetricMatrix::zeros(4);
        bad.set(1, 0, f64::NAN);
        assert!(matches!(
            eigenvalues(&bad),
            Err(RmtError::NonFinite { i: 1, j: 0 })
        ));
    }
}
