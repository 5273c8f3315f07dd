//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Solves `max c.x  s.t.  A x = b, x >= 0`. Sized for the small LPs of the
//! post-processing baseline (a few hundred columns, a few dozen rows).

use crate::error::{Error, Result};

const EPS: f64 = 1e-10;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub x: Vec<f64>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// number of structural + artificial columns (rhs is the last entry)
    width: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f.abs() > 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximises `cost` over columns `< allowed`.
    fn optimise(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .rows
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &bj)| cost[bj] * row[j])
                        .sum::<f64>();
                reduced > EPS
            });
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio <= lr + EPS && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Solver("objective is unbounded".into()));
            };
            self.pivot(r, c);
        }
        Err(Error::Solver("pivot limit reached".into()))
    }
}

pub(crate) fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let nv = c.len();
    let m = a.len();
    let width = nv + m;
    let mut rows = Vec::with_capacity(m);
    for (row, &bi) in a.iter().zip(b) {
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r = vec![0.0; width + 1];
        for (v, x) in r.iter_mut().zip(row) {
            *v = sign * x;
        }
        r[nv + rows.len()] = 1.0;
        r[width] = sign * bi;
        rows.push(r);
    }
    let mut t = Tableau {
        rows,
        basis: (nv..nv + m).collect(),
        width,
    };

    // phase 1: drive artificial variables to zero
    let mut phase1 = vec![0.0; width];
    for v in &mut phase1[nv..] {
        *v = -1.0;
    }
    t.optimise(&phase1, width)?;
    let infeasibility: f64 = (0..t.rows.len()).filter(|&i| t.basis[i] >= nv).map(|i| t.rhs(i)).sum();
    if infeasibility > 1e-8 {
        return Err(Error::Solver("problem is infeasible".into()));
    }
    // pivot remaining artificials out, dropping redundant rows
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= nv {
            match (0..nv).find(|&j| t.rows[i][j].abs() > 1e-9) {
                Some(j) => {
                    t.pivot(i, j);
                    i += 1;
                }
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }

    let mut cost = vec![0.0; width];
    cost[..nv].copy_from_slice(c);
    t.optimise(&cost, nv)?;

    let mut x = vec![0.0; nv];
    for (i, &bj) in t.basis.iter().enumerate() {
        if bj < nv {
            x[bj] = t.rhs(i).max(0.0);
        }
    }
    Ok(LpSolution { x })
}
