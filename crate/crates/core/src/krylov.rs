//! Restarted GMRES and a thick-restart Krylov eigensolver for the
//! largest-magnitude eigenvalues of a real operator.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use faer::{c64, Mat};

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { restart: 60, rel_tol: 1e-13, max_iters: 3000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Solves A x = b with right preconditioning: GMRES on A M⁻¹ u = b,
/// x = M⁻¹ u. `precond(r, z)` writes z = M⁻¹ r.
pub fn gmres(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    opts: GmresOptions,
) -> Result<(Vec<f64>, GmresStats)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, GmresStats { iterations: 0, rel_residual: 0.0 }));
    }
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut r = b.to_vec();
    let mut tmp = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        let beta = norm(&r);
        if beta / bnorm <= opts.rel_tol {
            return Ok((x, GmresStats { iterations: total, rel_residual: beta / bnorm }));
        }
        if total >= opts.max_iters {
            return Err(Error::numerical(format!(
                "GMRES stalled at relative residual {:.3e} after {total} iterations",
                beta / bnorm
            )));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond(&v[k], &mut z);
            apply(&z, &mut tmp);
            let mut w = tmp.clone();
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let hij = dot(&w, vi);
                    h[i][k] += hij;
                    w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hij * b);
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() / bnorm <= opts.rel_tol || hn == 0.0 || total >= opts.max_iters {
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            y[i] = (g[i] - (i + 1..k_used).map(|j| h[i][j] * y[j]).sum::<f64>()) / h[i][i];
        }
        let mut u = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            u.iter_mut().zip(vi).for_each(|(a, b)| *a += yi * b);
        }
        precond(&u, &mut z);
        x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
        apply(&x, &mut tmp);
        r.iter_mut().zip(b.iter().zip(&tmp)).for_each(|(ri, (bi, ti))| *ri = bi - ti);
    }
}

/// Eigenpair (θ, x) of the operator S, with ‖x‖ = 1.
#[derive(Debug, Clone)]
pub struct RitzPair {
    pub value: c64,
    pub vector: Vec<c64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Number of largest-|θ| Ritz pairs that must converge.
    pub n_want: usize,
    pub basis_size: usize,
    pub max_restarts: usize,
}

/// Thick-restart Rayleigh–Ritz on a growing Krylov basis for the `n_want`
/// eigenvalues of S of largest modulus. `accept(θ, x)` decides convergence
/// of a Ritz pair (typically via a residual of the original operator).
pub fn largest_magnitude_eigs(
    n: usize,
    apply_s: &mut dyn FnMut(&[f64], &mut [f64]) -> Result<()>,
    accept: &mut dyn FnMut(c64, &[c64]) -> bool,
    start: &[f64],
    opts: EigOptions,
) -> Result<Vec<RitzPair>> {
    let m = opts.basis_size.max(opts.n_want + 8).min(n);
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut sq: Vec<Vec<f64>> = Vec::new();
    let s0 = norm(start);
    if s0 == 0.0 {
        return Err(Error::numerical("zero start vector"));
    }
    let mut cand: Vec<f64> = start.iter().map(|x| x / s0).collect();
    for _cycle in 0..=opts.max_restarts {
        while q.len() < m {
            let mut w = cand.clone();
            for _ in 0..2 {
                for qi in &q {
                    let c = dot(&w, qi);
                    w.iter_mut().zip(qi).for_each(|(a, b)| *a -= c * b);
                }
            }
            let wn = norm(&w);
            if wn < 1e-12 {
                // Invariant subspace reached: perturb deterministically.
                w = (0..n).map(|i| ((i as f64 + 1.0) * 0.754_877_666).fract() - 0.5).collect();
                for _ in 0..2 {
                    for qi in &q {
                        let c = dot(&w, qi);
                        w.iter_mut().zip(qi).for_each(|(a, b)| *a -= c * b);
                    }
                }
                let wn = norm(&w);
                w.iter_mut().for_each(|x| *x /= wn);
            } else {
                w.iter_mut().for_each(|x| *x /= wn);
            }
            let mut sw = vec![0.0; n];
            apply_s(&w, &mut sw)?;
            cand = sw.clone();
            q.push(w);
            sq.push(sw);
        }
        let p = q.len();
        let h = Mat::<f64>::from_fn(p, p, |i, j| dot(&q[i], &sq[j]));
        let evd = h.eigen().map_err(|e| Error::numerical(format!("projected eigensolve failed: {e:?}")))?;
        let vals: Vec<c64> = (0..p).map(|i| evd.S()[i]).collect();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| vals[b].norm().partial_cmp(&vals[a].norm()).unwrap().then(a.cmp(&b)));
        let u = evd.U();
        let mut pairs = Vec::new();
        let mut all_ok = true;
        let mut keep_cols: Vec<Vec<c64>> = Vec::new();
        for &i in order.iter().take(opts.n_want) {
            let y: Vec<c64> = (0..p).map(|r| u[(r, i)]).collect();
            let mut x = vec![c64::new(0.0, 0.0); n];
            for (r, qr) in q.iter().enumerate() {
                let yr = y[r];
                x.iter_mut().zip(qr).for_each(|(a, b)| *a += yr * *b);
            }
            let xn = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            x.iter_mut().for_each(|z| *z /= xn);
            let ok = accept(vals[i], &x);
            all_ok &= ok;
            keep_cols.push(y);
            pairs.push(RitzPair { value: vals[i], vector: x });
        }
        if all_ok {
            return Ok(pairs);
        }
        // Restart on the real span of the wanted Ritz vectors, plus a few
        // extra directions so the basis does not collapse.
        let extra = (opts.n_want / 2).max(2);
        for &i in order.iter().skip(opts.n_want).take(extra) {
            keep_cols.push((0..p).map(|r| u[(r, i)]).collect());
        }
        let mut coeff: Vec<Vec<f64>> = Vec::new();
        for y in &keep_cols {
            for part in [y.iter().map(|z| z.re).collect::<Vec<f64>>(), y.iter().map(|z| z.im).collect()] {
                let mut c = part;
                for _ in 0..2 {
                    for e in &coeff {
                        let d = dot(&c, e);
                        c.iter_mut().zip(e).for_each(|(a, b)| *a -= d * b);
                    }
                }
                let cn = norm(&c);
                if cn > 1e-10 {
                    c.iter_mut().for_each(|x| *x /= cn);
                    coeff.push(c);
                }
            }
        }
        let combine = |basis: &[Vec<f64>], c: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (ci, bi) in c.iter().zip(basis) {
                out.iter_mut().zip(bi).for_each(|(a, b)| *a += ci * b);
            }
            out
        };
        let new_q: Vec<Vec<f64>> = coeff.iter().map(|c| combine(&q, c)).collect();
        let new_sq: Vec<Vec<f64>> = coeff.iter().map(|c| combine(&sq, c)).collect();
        q = new_q;
        sq = new_sq;
        cand = sq.last().cloned().unwrap_or_else(|| start.to_vec());
    }
    Err(Error::numerical(format!(
        "Krylov eigensolver did not converge within {} restarts",
        opts.max_restarts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_diagonal_system() {
        let d: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                y[i] = d[i] * x[i] + if i > 0 { 0.3 * x[i - 1] } else { 0.0 };
            }
        };
        let id = |x: &[f64], y: &mut [f64]| y.copy_from_slice(x);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (x, st) = gmres(&apply, &id, &b, GmresOptions::default()).unwrap();
        let mut ax = vec![0.0; 50];
        apply(&x, &mut ax);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-11, "{err} {st:?}");
    }

    #[test]
    fn largest_eigs_of_shifted_rotation_blocks() {
        // Block diagonal with 2×2 rotation-scaling blocks: eigenvalues r_k e^{±iφ_k}.
        let n = 40;
        let apply = |x: &[f64], y: &mut [f64]| {
            for b in 0..n / 2 {
                let r = 1.0 / (1.0 + b as f64);
                let (c, s) = (0.3 * b as f64).sin_cos();
                y[2 * b] = r * (c * x[2 * b] - s * x[2 * b + 1]);
                y[2 * b + 1] = r * (s * x[2 * b] + c * x[2 * b + 1]);
            }
        };
        let mut s = |x: &[f64], y: &mut [f64]| -> Result<()> {
            apply(x, y);
            Ok(())
        };
        let mut acc = |th: c64, x: &[c64]| {
            let re: Vec<f64> = x.iter().map(|z| z.re).collect();
            let im: Vec<f64> = x.iter().map(|z| z.im).collect();
            let (mut ar, mut ai) = (vec![0.0; n], vec![0.0; n]);
            apply(&re, &mut ar);
            apply(&im, &mut ai);
            let r: f64 = (0..n).map(|i| (c64::new(ar[i], ai[i]) - th * x[i]).norm_sqr()).sum::<f64>().sqrt();
            r < 1e-10
        };
        let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let opts = EigOptions { n_want: 4, basis_size: 16, max_restarts: 50 };
        let pairs = largest_magnitude_eigs(n, &mut s, &mut acc, &start, opts).unwrap();
        let mut mags: Vec<f64> = pairs.iter().map(|p| p.value.norm()).collect();
        mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((mags[0] - 1.0).abs() < 1e-10 && (mags[3] - 0.5).abs() < 1e-10);
    }
}
