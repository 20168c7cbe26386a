//! Log-domain special functions shared by the coherent-basis machinery.
//!
//! Everything here exists because the displaced-basis matrix elements and
//! coherent-state overlaps multiply factorials, binomials and powers at
//! photon cutoffs of 100-150, where naive f64 arithmetic overflows long
//! before the final (always bounded) result is assembled.

use ndarray::Array2;

/// ln(n!) for n = 0..=n, by direct summation (exact enough at these sizes).
pub fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// ln C(n, k) from a precomputed ln-factorial table.
pub fn ln_binomial(lnf: &[f64], n: usize, k: usize) -> f64 {
    debug_assert!(k <= n && n < lnf.len());
    lnf[n] - lnf[k] - lnf[n - k]
}

/// A real number carried as (sign, ln|x|) to survive huge dynamic range.
#[derive(Clone, Copy, Debug)]
pub struct LogReal {
    pub sign: f64,
    pub ln: f64,
}

impl LogReal {
    pub fn zero() -> Self {
        LogReal { sign: 0.0, ln: f64::NEG_INFINITY }
    }

    pub fn from_value(x: f64) -> Self {
        if x == 0.0 {
            Self::zero()
        } else {
            LogReal { sign: x.signum(), ln: x.abs().ln() }
        }
    }

}

/// Matrix of displaced-Fock overlaps d[(m, n)] = <m|D(beta)|n> for real
/// displacement beta, up to cutoff `n_max`, via the associated-Laguerre
/// closed form evaluated in log magnitude + sign.
///
/// For m >= n:  <m|D(b)|n> = sqrt(n!/m!) b^(m-n) e^(-b^2/2) L_n^(m-n)(b^2),
/// and <m|D(b)|n> = (-1)^(m+n) <n|D(b)|m> covers the lower triangle.
pub fn displaced_fock_overlaps(n_max: usize, beta: f64) -> Array2<f64> {
    let dim = n_max + 1;
    let mut d = Array2::<f64>::zeros((dim, dim));
    if beta == 0.0 {
        for i in 0..dim {
            d[[i, i]] = 1.0;
        }
        return d;
    }
    let x = beta * beta;
    let lnf = ln_factorials(n_max);
    let ln_abs_beta = beta.abs().ln();
    let beta_sign = beta.signum();

    // For each order difference a = m - n >= 0, march the Laguerre
    // recurrence upward in n with explicit rescaling.
    for a in 0..dim {
        let mut lag_prev = LogReal::zero(); // L_{-1}
        let mut lag = LogReal::from_value(1.0); // L_0^(a) = 1
        for n in 0..dim - a {
            let m = n + a;
            // ln sqrt(n!/m!) + (m-n) ln|beta| - beta^2/2 + ln|L_n^(a)(x)|
            let ln_mag =
                0.5 * (lnf[n] - lnf[m]) + a as f64 * ln_abs_beta - 0.5 * x + lag.ln;
            let sign = lag.sign * beta_sign.powi(a as i32);
            let v = sign * ln_mag.exp();
            d[[m, n]] = v;
            if m != n {
                d[[n, m]] = if (m + n) % 2 == 0 { v } else { -v };
            }
            // Advance L_{n} -> L_{n+1}:
            // (n+1) L_{n+1}^(a) = (2n + 1 + a - x) L_n^(a) - (n + a) L_{n-1}^(a)
            // Evaluated relative to the larger magnitude so a term passing
            // exactly through zero (e.g. L_1(1) = 0) does not kill the chain.
            let np1 = (n + 1) as f64;
            let c1 = (2 * n + 1 + a) as f64 - x;
            let c2 = (n + a) as f64;
            let scale_ln = lag.ln.max(lag_prev.ln);
            let next = if scale_ln == f64::NEG_INFINITY {
                LogReal::zero()
            } else {
                let cur_rel =
                    if lag.sign == 0.0 { 0.0 } else { lag.sign * (lag.ln - scale_ln).exp() };
                let prev_rel = if lag_prev.sign == 0.0 {
                    0.0
                } else {
                    lag_prev.sign * (lag_prev.ln - scale_ln).exp()
                };
                let t = (c1 * cur_rel - c2 * prev_rel) / np1;
                if t == 0.0 {
                    LogReal::zero()
                } else {
                    LogReal { sign: t.signum(), ln: scale_ln + t.abs().ln() }
                }
            };
            lag_prev = lag;
            lag = next;
        }
    }
    d
}

/// Same overlaps through the two-term ladder recurrence; used as an
/// independent cross-check of the Laguerre route.
pub fn displaced_fock_overlaps_recurrence(n_max: usize, beta: f64) -> Array2<f64> {
    let dim = n_max + 1;
    let mut d = Array2::<f64>::zeros((dim, dim));
    let lnf = ln_factorials(n_max);
    // Column 0: <m|D(b)|0> = e^(-b^2/2) b^m / sqrt(m!)
    for m in 0..dim {
        let ln_mag = -0.5 * beta * beta + m as f64 * beta.abs().ln() - 0.5 * lnf[m];
        d[[m, 0]] = beta.signum().powi(m as i32) * ln_mag.exp();
    }
    // d[m][n] = (sqrt(m) d[m-1][n-1] - beta d[m][n-1]) / sqrt(n)
    for n in 1..dim {
        let sn = (n as f64).sqrt();
        for m in 0..dim {
            let up = if m > 0 { (m as f64).sqrt() * d[[m - 1, n - 1]] } else { 0.0 };
            d[[m, n]] = (up - beta * d[[m, n - 1]]) / sn;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Brute-force D(beta) = exp(beta (a^dag - a)) with generous padding,
    /// via scaled Taylor series on a dense matrix.
    fn displacement_brute_force(n_keep: usize, beta: f64) -> Array2<f64> {
        let dim = n_keep + 1 + 40; // padding absorbs truncation
        let mut x = Array2::<f64>::zeros((dim, dim));
        for n in 0..dim - 1 {
            let s = ((n + 1) as f64).sqrt();
            x[[n + 1, n]] = beta * s; // a^dag
            x[[n, n + 1]] = -beta * s; // -a
        }
        // exp via scaling and squaring with a plain Taylor kernel.
        let s = 10u32;
        let xs = x.mapv(|v| v / f64::from(1u32 << s));
        let mut term = Array2::<f64>::eye(dim);
        let mut acc = Array2::<f64>::eye(dim);
        for k in 1..30 {
            term = term.dot(&xs) / k as f64;
            acc += &term;
        }
        for _ in 0..s {
            acc = acc.dot(&acc);
        }
        acc.slice(ndarray::s![..=n_keep, ..=n_keep]).to_owned()
    }

    #[test]
    fn laguerre_matches_brute_force() {
        // beta = 1 exercises an exact zero of the recurrence (L_1(1) = 0).
        for &beta in &[0.18, 0.7, -0.45, 1.0, 2.3] {
            let d = displaced_fock_overlaps(12, beta);
            let oracle = displacement_brute_force(12, beta);
            for m in 0..=12 {
                for n in 0..=12 {
                    assert_abs_diff_eq!(d[[m, n]], oracle[[m, n]], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn laguerre_matches_recurrence_at_large_cutoff() {
        let beta = 1.8257418583505538e-1; // 2*gamma/(omega*sqrt(2j)) at j=60, gamma=1
        let d1 = displaced_fock_overlaps(150, beta);
        let d2 = displaced_fock_overlaps_recurrence(150, beta);
        for m in 0..=150 {
            for n in 0..=150 {
                assert_abs_diff_eq!(d1[[m, n]], d2[[m, n]], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn overlap_matrix_is_near_orthogonal() {
        // D(beta) is unitary; away from the cutoff corner the truncated
        // matrix must satisfy sum_k d[k,m] d[k,n] = delta_mn.
        let beta = 0.6;
        let d = displaced_fock_overlaps(80, beta);
        for m in 0..=40 {
            for n in 0..=40 {
                let dot: f64 = (0..=80).map(|k| d[[k, m]] * d[[k, n]]).sum();
                let expect = if m == n { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn ln_factorial_table() {
        let lnf = ln_factorials(10);
        assert_abs_diff_eq!(lnf[0], 0.0);
        assert_abs_diff_eq!(lnf[5], 120f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_binomial(&lnf, 10, 3), 120f64.ln(), epsilon = 1e-12);
    }
}
