//! Coordinate descent for a quadratic loss with per-coordinate L1/L2 penalties.
//!
//! Minimizes `1/2 b'Gb - c'b + 1/2 y'y + sum_j pen_j(b_j)` where `G = X'X`.
//! Each sweep is O(p^2) on the Gram matrix, so the cost is independent of the
//! number of days once `G` is formed. Every coordinate update is an exact
//! minimization, so the objective never increases. After coordinate descent
//! stalls, the active set is solved exactly and the result kept only when it
//! lowers the objective.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    None,
    /// `w * |b|`
    L1(f64),
    /// `w / 2 * b^2`
    L2(f64),
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub p: usize,
    pub gram: Vec<f64>,
    pub xty: Vec<f64>,
    pub yty: f64,
    pub penalty: Vec<Penalty>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when one sweep lowers the objective by less than this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 20_000 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub coef: Vec<f64>,
    /// Objective after initialization and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl Problem {
    /// Accumulate `X'X`, `X'y` and `y'y` from rows.
    pub fn from_rows<'a>(
        p: usize,
        rows: impl Iterator<Item = (&'a [f64], f64)>,
        penalty: Vec<Penalty>,
    ) -> Self {
        let mut gram = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        for (x, y) in rows {
            for a in 0..p {
                let xa = x[a];
                if xa == 0.0 {
                    continue;
                }
                xty[a] += xa * y;
                let row = &mut gram[a * p..(a + 1) * p];
                for b in a..p {
                    row[b] += xa * x[b];
                }
            }
            yty += y * y;
        }
        for a in 0..p {
            for b in 0..a {
                gram[a * p + b] = gram[b * p + a];
            }
        }
        Self { p, gram, xty, yty, penalty }
    }

    fn g(&self, a: usize, b: usize) -> f64 {
        self.gram[a * self.p + b]
    }

    fn gram_times(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.p).map(|a| (0..self.p).map(|b| self.g(a, b) * coef[b]).sum()).collect()
    }

    fn objective_with(&self, coef: &[f64], gb: &[f64]) -> f64 {
        let mut f = 0.5 * self.yty;
        for j in 0..self.p {
            f += 0.5 * coef[j] * gb[j] - self.xty[j] * coef[j];
            f += match self.penalty[j] {
                Penalty::None => 0.0,
                Penalty::L1(w) => w * coef[j].abs(),
                Penalty::L2(w) => 0.5 * w * coef[j] * coef[j],
            };
        }
        f
    }

    pub fn solve(&self, init: Vec<f64>, opts: &SolverOptions) -> Solution {
        let mut coef = init;
        let mut gb = self.gram_times(&coef);
        let mut f = self.objective_with(&coef, &gb);
        let mut trace = vec![f];
        let mut sweeps = 0;
        let mut converged = false;

        let mut polish_attempts = 0;
        while sweeps < opts.max_sweeps {
            sweeps += 1;
            for j in 0..self.p {
                let gjj = self.g(j, j);
                let old = coef[j];
                let new = if gjj <= 0.0 {
                    0.0
                } else {
                    let rho = gjj * old - (gb[j] - self.xty[j]);
                    match self.penalty[j] {
                        Penalty::None => rho / gjj,
                        Penalty::L1(w) => soft_threshold(rho, w) / gjj,
                        Penalty::L2(w) => rho / (gjj + w),
                    }
                };
                let step = new - old;
                if step != 0.0 {
                    coef[j] = new;
                    for (a, g) in gb.iter_mut().enumerate().take(self.p) {
                        *g += self.g(a, j) * step;
                    }
                }
            }
            let f_new = self.objective_with(&coef, &gb);
            let drop = f - f_new;
            f = f_new;
            trace.push(f);
            let stalled = drop < opts.tol;
            if stalled || sweeps % 200 == 0 {
                if stalled {
                    polish_attempts += 1;
                }
                // periodic polishing breaks the slow crawl along correlated hinge columns
                if polish_attempts <= 4 {
                    if let Some(better) = self.polish(&coef) {
                        let gb_p = self.gram_times(&better);
                        let f_p = self.objective_with(&better, &gb_p);
                        if f_p < f {
                            coef = better;
                            gb = gb_p;
                            f = f_p;
                            trace.push(f);
                            continue;
                        }
                    }
                }
                if stalled {
                    converged = true;
                    break;
                }
            }
        }
        Solution { coef, objective_trace: trace, sweeps, converged }
    }

    /// Solve the stationarity conditions exactly on the current active set,
    /// with L1 signs held fixed. Returns `None` if the system is singular or
    /// the solution flips any sign.
    fn polish(&self, coef: &[f64]) -> Option<Vec<f64>> {
        let active: Vec<usize> = (0..self.p)
            .filter(|&j| match self.penalty[j] {
                Penalty::L1(_) => coef[j] != 0.0,
                _ => self.g(j, j) > 0.0,
            })
            .collect();
        let k = active.len();
        if k == 0 {
            return None;
        }
        let mut a = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (r, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                a[r * k + c] = self.g(i, j);
            }
            rhs[r] = self.xty[i];
            match self.penalty[i] {
                Penalty::None => {}
                Penalty::L1(w) => rhs[r] -= w * coef[i].signum(),
                Penalty::L2(w) => a[r * k + r] += w,
            }
        }
        let sol = cholesky_solve(&mut a, &mut rhs, k)?;
        let mut out = vec![0.0; self.p];
        for (r, &i) in active.iter().enumerate() {
            if let Penalty::L1(_) = self.penalty[i] {
                if sol[r].signum() != coef[i].signum() {
                    return None;
                }
            }
            out[i] = sol[r];
        }
        Some(out)
    }
}

fn soft_threshold(x: f64, w: f64) -> f64 {
    if x > w {
        x - w
    } else if x < -w {
        x + w
    } else {
        0.0
    }
}

/// In-place Cholesky solve of the symmetric positive definite `a` (k x k).
pub(crate) fn cholesky_solve(a: &mut [f64], b: &mut [f64], k: usize) -> Option<Vec<f64>> {
    let max_diag = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
    let floor = max_diag * 1e-13;
    for j in 0..k {
        let mut d = a[j * k + j];
        for m in 0..j {
            d -= a[j * k + m] * a[j * k + m];
        }
        if d <= floor {
            return None;
        }
        let d = libm::sqrt(d);
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= a[i * k + m] * a[j * k + m];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s -= a[i * k + m] * b[m];
        }
        b[i] = s / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for m in i + 1..k {
            s -= a[m * k + i] * b[m];
        }
        b[i] = s / a[i * k + i];
    }
    Some(b.to_vec())
}
