//! Matrix-free restarted GMRES and conjugate gradients for complex systems.

use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `sum conj(a) b`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub restart: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { restart: 30, tol: 1e-6, max_iter: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` as tracked by the solver.
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` with `x` as the initial guess. `apply(v, out)` writes
/// `A v` into `out`.
pub fn gmres<F>(mut apply: F, b: &[C64], x: &mut [C64], cfg: &GmresConfig) -> SolveReport
where
    F: FnMut(&[C64], &mut [C64]),
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = ZERO);
        return SolveReport { iterations: 0, residual: 0.0, converged: true };
    }
    let m = cfg.restart.max(1);
    let mut r = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![vec![ZERO; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![ZERO; m];
    let mut g = vec![ZERO; m + 1];
    let mut total = 0;

    loop {
        apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= cfg.tol || total >= cfg.max_iter {
            return SolveReport { iterations: total, residual: rel, converged: rel <= cfg.tol };
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = ZERO);
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            if total >= cfg.max_iter {
                break;
            }
            apply(&basis[j], &mut w);
            total += 1;
            // Modified Gram-Schmidt.
            for i in 0..=j {
                let hij = dot(&basis[i], &w);
                hess[i][j] = hij;
                for (wv, bv) in w.iter_mut().zip(&basis[i]) {
                    *wv -= hij * bv;
                }
            }
            let hnext = norm(&w);
            hess[j + 1][j] = C64::new(hnext, 0.0);
            for i in 0..j {
                let (a, bb) = (hess[i][j], hess[i + 1][j]);
                hess[i][j] = cs[i] * a + sn[i] * bb;
                hess[i + 1][j] = -sn[i].conj() * a + cs[i] * bb;
            }
            let (a, bb) = (hess[j][j], hess[j + 1][j]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = ZERO;
            } else if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = bb.conj() / bb.norm();
            } else {
                cs[j] = a.norm() / denom;
                sn[j] = (a / a.norm()) * bb.conj() / denom;
            }
            hess[j][j] = cs[j] * a + sn[j] * bb;
            hess[j + 1][j] = ZERO;
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];
            k_used = j + 1;
            let est = g[j + 1].norm() / bnorm;
            if est <= cfg.tol || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= hess[i][l] * y[l];
            }
            y[i] = s / hess[i][i];
        }
        for (l, yl) in y.iter().enumerate() {
            for (xv, bv) in x.iter_mut().zip(&basis[l]) {
                *xv += yl * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Relative residual of the returned iterate.
    pub residual: f64,
    pub converged: bool,
    /// Non-positive curvature was met; the iterate before it is returned.
    pub breakdown: bool,
}

/// Conjugate gradients for Hermitian positive (semi-)definite `A`, from a
/// zero initial guess. Returns the last iterate, which minimizes the
/// quadratic model over the Krylov space even when the residual norm does
/// not decrease monotonically.
pub fn cg<F>(mut apply: F, b: &[C64], tol: f64, max_iter: usize) -> (Vec<C64>, CgReport)
where
    F: FnMut(&[C64], &mut [C64]),
{
    let n = b.len();
    let mut x = vec![ZERO; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return (x, CgReport { iterations: 0, residual: 0.0, converged: true, breakdown: false });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![ZERO; n];
    let mut rr = dot(&r, &r).re;
    let mut res = 1.0;
    let mut iterations = 0;
    let mut breakdown = false;
    while iterations < max_iter {
        apply(&p, &mut ap);
        let curv = dot(&p, &ap).re;
        if !(curv > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = rr / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let rr_new = dot(&r, &r).re;
        res = rr_new.sqrt() / bnorm;
        if res <= tol {
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    (x, CgReport { iterations, residual: res, converged: res <= tol, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<C64>> {
        (0..n).map(|_| (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()).collect()
    }

    fn matvec(a: &[Vec<C64>], x: &[C64], out: &mut [C64]) {
        for (o, row) in out.iter_mut().zip(a) {
            *o = row.iter().zip(x).map(|(p, q)| p * q).sum();
        }
    }

    #[test]
    fn gmres_solves_shifted_nonnormal_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let mut a = random_matrix(n, &mut rng);
        for (i, row) in a.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= 0.05;
            }
            row[i] += C64::new(1.0, 0.2);
        }
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).cos(), 1.0)).collect();
        let mut x = vec![ZERO; n];
        let cfg = GmresConfig { restart: 10, tol: 1e-10, max_iter: 500 };
        let rep = gmres(|v, o| matvec(&a, v, o), &b, &mut x, &cfg);
        assert!(rep.converged, "{rep:?}");
        let mut ax = vec![ZERO; n];
        matvec(&a, &x, &mut ax);
        let res: Vec<C64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&res) / norm(&b) <= 1e-10);
    }

    #[test]
    fn gmres_zero_rhs_and_identity() {
        let b = vec![ZERO; 5];
        let mut x = vec![C64::new(1.0, 1.0); 5];
        let rep = gmres(|v, o| o.copy_from_slice(v), &b, &mut x, &GmresConfig::default());
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|v| *v == ZERO));
        let b = vec![C64::new(2.0, -1.0); 5];
        let mut x = b.clone();
        let rep = gmres(|v, o| o.copy_from_slice(v), &b, &mut x, &GmresConfig::default());
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn gmres_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(40, &mut rng);
        let b = vec![C64::new(1.0, 0.0); 40];
        let mut x = vec![ZERO; 40];
        let rep = gmres(|v, o| matvec(&a, v, o), &b, &mut x, &GmresConfig { restart: 3, tol: 1e-12, max_iter: 9 });
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 9);
        assert!(rep.residual > 1e-12);
    }

    #[test]
    fn cg_solves_hermitian_positive_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let m = random_matrix(n, &mut rng);
        // A = M^H M + I
        let mut a = vec![vec![ZERO; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| m[k][i].conj() * m[k][j]).sum::<C64>();
            }
            a[i][i] += 1.0;
        }
        let b: Vec<C64> = (0..n).map(|i| C64::new(1.0, i as f64 * 0.1)).collect();
        let (x, rep) = cg(|v, o| matvec(&a, v, o), &b, 1e-12, 200);
        assert!(rep.converged && !rep.breakdown);
        let mut ax = vec![ZERO; n];
        matvec(&a, &x, &mut ax);
        let res: Vec<C64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&res) / norm(&b) <= 1e-11);

        let (x0, rep0) = cg(|v, o| matvec(&a, v, o), &vec![ZERO; n], 1e-12, 200);
        assert_eq!(rep0.iterations, 0);
        assert!(x0.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn cg_flags_indefinite_operator() {
        let b = vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        let (_, rep) = cg(|v, o| {
            o[0] = v[0];
            o[1] = -3.0 * v[1];
        }, &b, 1e-12, 10);
        assert!(rep.breakdown);
    }
}
