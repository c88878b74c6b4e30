//! Bounded-variable revised primal simplex.
//!
//! Every row `r` gets a logical variable `s_r` with `A x - s = 0`, so the
//! constraint relation turns into bounds on `s_r`. Phase 1 minimizes the sum
//! of basic bound violations with the cost vector rebuilt every iteration;
//! phase 2 minimizes the true objective. Pricing is Dantzig's rule, switching
//! to Bland's rule after a run of degenerate pivots.

use super::lu::BasisFactor;
use super::model::{Model, Relation, Sense};
use super::{MathProgError, SolverOptions};

const PIVOT_TOL: f64 = 1e-9;

/// Column-compressed form of a model's LP relaxation, in minimization form.
#[derive(Debug, Clone)]
pub(crate) struct LpProblem {
    pub n: usize,
    pub m: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cost: Vec<f64>,
    /// +1 for minimization, -1 when the model maximizes.
    pub sign: f64,
    pub constant: f64,
    /// `(structural, row)` pairs for the starting basis.
    pub hints: Vec<(usize, usize)>,
}

impl LpProblem {
    pub fn from_model(model: &Model) -> Self {
        let n = model.num_vars();
        let m = model.constraints().len();
        let mut cols = vec![Vec::new(); n];
        let mut lo = Vec::with_capacity(n + m);
        let mut hi = Vec::with_capacity(n + m);
        for v in model.vars() {
            lo.push(v.lower);
            hi.push(v.upper);
        }
        for (r, c) in model.constraints().iter().enumerate() {
            for &(v, a) in &c.terms {
                cols[v.index()].push((r, a));
            }
            let (l, h) = match c.relation {
                Relation::Le => (f64::NEG_INFINITY, c.rhs),
                Relation::Ge => (c.rhs, f64::INFINITY),
                Relation::Eq => (c.rhs, c.rhs),
            };
            lo.push(l);
            hi.push(h);
        }
        let obj = model.objective();
        let sign = match obj.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost = vec![0.0; n + m];
        for &(v, c) in &obj.terms {
            cost[v.index()] = sign * c;
        }
        let hints = model.basis_hints().iter().map(|(v, r)| (v.index(), r.index())).collect();
        Self { n, m, cols, lo, hi, cost, sign, constant: obj.constant, hints }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpResult {
    pub status: LpStatus,
    /// Values of all structural and logical variables.
    pub x: Vec<f64>,
    /// Row duals of the minimization form.
    pub y: Vec<f64>,
    /// Objective of the minimization form, without the constant.
    pub min_objective: f64,
    pub pivots: usize,
}

struct Simplex<'a> {
    p: &'a LpProblem,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Basis position of each variable, `usize::MAX` when nonbasic.
    pos: Vec<usize>,
    factor: BasisFactor,
    opts: &'a SolverOptions,
    pivots: usize,
}

pub(crate) fn solve(p: &LpProblem, lo: &[f64], hi: &[f64], opts: &SolverOptions) -> Result<LpResult, MathProgError> {
    let n = p.n;
    let m = p.m;
    let mut lo_all = lo.to_vec();
    let mut hi_all = hi.to_vec();
    lo_all.extend_from_slice(&p.lo[n..]);
    hi_all.extend_from_slice(&p.hi[n..]);
    for k in 0..n + m {
        if lo_all[k] > hi_all[k] + opts.primal_tol {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                y: Vec::new(),
                min_objective: f64::NAN,
                pivots: 0,
            });
        }
    }
    let mut x = vec![0.0; n + m];
    for j in 0..n {
        x[j] = initial_value(lo_all[j], hi_all[j]);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut hinted = vec![false; n];
    for &(j, r) in &p.hints {
        if basis[r] == n + r && lo_all[j] < hi_all[j] && !hinted[j] {
            hinted[j] = true;
            basis[r] = j;
            x[n + r] = initial_value(lo_all[n + r], hi_all[n + r]);
        }
    }
    let mut pos = vec![usize::MAX; n + m];
    for (i, &b) in basis.iter().enumerate() {
        pos[b] = i;
    }
    let mut s = Simplex { p, lo: lo_all, hi: hi_all, x, basis, pos, factor: BasisFactor::default(), opts, pivots: 0 };
    s.run()
}

fn initial_value(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() && hi.is_finite() {
        if lo.abs() <= hi.abs() {
            lo
        } else {
            hi
        }
    } else if lo.is_finite() {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}

impl Simplex<'_> {
    fn column(&self, k: usize) -> Vec<(usize, f64)> {
        if k < self.p.n {
            self.p.cols[k].clone()
        } else {
            vec![(k - self.p.n, -1.0)]
        }
    }

    fn refactor(&mut self) -> Result<(), MathProgError> {
        let m = self.p.m;
        for _attempt in 0..m + 2 {
            let cols: Vec<Vec<(usize, f64)>> = self.basis.iter().map(|&k| self.column(k)).collect();
            match BasisFactor::factorize(m, &cols) {
                Ok(f) => {
                    self.factor = f;
                    self.recompute_basics();
                    return Ok(());
                }
                Err(sing) => {
                    // Swap the dependent columns for logicals of the uncovered rows.
                    for (&bpos, &row) in sing.cols.iter().zip(&sing.rows) {
                        let old = self.basis[bpos];
                        let logical = self.p.n + row;
                        if self.pos[logical] != usize::MAX {
                            continue;
                        }
                        self.pos[old] = usize::MAX;
                        self.x[old] = clamp_to_bound(self.x[old], self.lo[old], self.hi[old]);
                        self.basis[bpos] = logical;
                        self.pos[logical] = bpos;
                    }
                }
            }
        }
        Err(MathProgError::Numerical("basis could not be repaired".into()))
    }

    fn recompute_basics(&mut self) {
        let m = self.p.m;
        let mut rhs = vec![0.0; m];
        for k in 0..self.p.n + m {
            if self.pos[k] != usize::MAX {
                continue;
            }
            let xv = self.x[k];
            if xv == 0.0 {
                continue;
            }
            if k < self.p.n {
                for &(r, a) in &self.p.cols[k] {
                    rhs[r] -= a * xv;
                }
            } else {
                rhs[k - self.p.n] += xv;
            }
        }
        self.factor.ftran(&mut rhs);
        for (i, &b) in self.basis.iter().enumerate() {
            self.x[b] = rhs[i];
        }
    }

    fn run(&mut self) -> Result<LpResult, MathProgError> {
        let n = self.p.n;
        let m = self.p.m;
        let ptol = self.opts.primal_tol;
        let dtol = self.opts.dual_tol;
        let max_pivots = self.opts.max_pivots.unwrap_or(50 * (n + m) + 10_000);
        self.refactor()?;
        let mut degenerate_run = 0usize;
        let mut cost_b = vec![0.0; m];
        let mut d = vec![0.0; n + m];
        loop {
            if self.factor.num_etas() >= self.opts.refactor_interval {
                self.refactor()?;
            }
            // Phase selection.
            let mut phase1 = false;
            for (i, &b) in self.basis.iter().enumerate() {
                let v = self.x[b];
                cost_b[i] = if v < self.lo[b] - ptol {
                    phase1 = true;
                    -1.0
                } else if v > self.hi[b] + ptol {
                    phase1 = true;
                    1.0
                } else {
                    0.0
                };
            }
            if !phase1 {
                for (i, &b) in self.basis.iter().enumerate() {
                    cost_b[i] = self.p.cost[b];
                }
            }
            let mut y = cost_b.clone();
            self.factor.btran(&mut y);

            // Pricing.
            let bland = degenerate_run > self.opts.bland_after;
            let mut enter: Option<(usize, f64, f64)> = None; // (var, direction, |d|)
            for k in 0..n + m {
                if self.pos[k] != usize::MAX {
                    continue;
                }
                let ck = if phase1 { 0.0 } else { self.p.cost[k] };
                let dk =
                    if k < n { ck - self.p.cols[k].iter().map(|&(r, a)| a * y[r]).sum::<f64>() } else { ck + y[k - n] };
                d[k] = dk;
                if self.lo[k] == self.hi[k] {
                    continue;
                }
                let xv = self.x[k];
                let dir = if dk < -dtol && xv < self.hi[k] {
                    1.0
                } else if dk > dtol && xv > self.lo[k] {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    enter = Some((k, dir, dk.abs()));
                    break;
                }
                if enter.is_none_or(|(_, _, best)| dk.abs() > best) {
                    enter = Some((k, dir, dk.abs()));
                }
            }

            let Some((q, dir, _)) = enter else {
                if phase1 {
                    return Ok(self.finish(LpStatus::Infeasible, Vec::new()));
                }
                return Ok(self.finish(LpStatus::Optimal, y));
            };

            if self.pivots >= max_pivots {
                return Err(MathProgError::Numerical(format!("pivot budget of {max_pivots} exhausted")));
            }
            self.pivots += 1;

            let mut alpha = vec![0.0; m];
            for (r, a) in self.column(q) {
                alpha[r] = a;
            }
            self.factor.ftran(&mut alpha);

            // Harris two-pass ratio test.
            let flip_range = self.hi[q] - self.lo[q];
            let mut t_relaxed = flip_range;
            for (i, &b) in self.basis.iter().enumerate() {
                let a = alpha[i];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * a;
                let (lo_eff, hi_eff) = self.effective_bounds(b, ptol);
                let t =
                    if rate < 0.0 { (self.x[b] - lo_eff + ptol) / -rate } else { (hi_eff - self.x[b] + ptol) / rate };
                if t < t_relaxed {
                    t_relaxed = t;
                }
            }
            let mut leave: Option<(usize, f64, f64)> = None; // (position, step, |alpha|)
            if t_relaxed < flip_range || flip_range.is_infinite() {
                for (i, &b) in self.basis.iter().enumerate() {
                    let a = alpha[i];
                    if a.abs() <= PIVOT_TOL {
                        continue;
                    }
                    let rate = -dir * a;
                    let (lo_eff, hi_eff) = self.effective_bounds(b, ptol);
                    let t = if rate < 0.0 { (self.x[b] - lo_eff) / -rate } else { (hi_eff - self.x[b]) / rate };
                    if t.is_finite() && t <= t_relaxed {
                        let better = match leave {
                            None => true,
                            Some((bi, _, ba)) => {
                                if bland {
                                    self.basis[i] < self.basis[bi]
                                } else {
                                    a.abs() > ba
                                }
                            }
                        };
                        if better {
                            leave = Some((i, t.max(0.0), a.abs()));
                        }
                    }
                }
            }

            match leave {
                None if flip_range.is_infinite() => {
                    if phase1 {
                        return Err(MathProgError::Numerical("unbounded phase-1 direction".into()));
                    }
                    return Ok(self.finish(LpStatus::Unbounded, Vec::new()));
                }
                None => {
                    // Entering variable moves to its opposite bound.
                    let t = flip_range;
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                    for (i, &b) in self.basis.iter().enumerate() {
                        self.x[b] -= dir * t * alpha[i];
                    }
                    degenerate_run = 0;
                }
                Some((p_out, t, _)) => {
                    let leaving = self.basis[p_out];
                    let rate = -dir * alpha[p_out];
                    let (lo_eff, hi_eff) = self.effective_bounds(leaving, ptol);
                    for (i, &b) in self.basis.iter().enumerate() {
                        self.x[b] -= dir * t * alpha[i];
                    }
                    self.x[q] += dir * t;
                    self.x[leaving] = if rate < 0.0 { lo_eff } else { hi_eff };
                    self.basis[p_out] = q;
                    self.pos[q] = p_out;
                    self.pos[leaving] = usize::MAX;
                    self.factor.push_eta(p_out, &alpha);
                    if t <= 1e-12 {
                        degenerate_run += 1;
                    } else {
                        degenerate_run = 0;
                    }
                }
            }
        }
    }

    /// Bounds a basic variable respects during the ratio test; phase 1 relaxes the violated side.
    fn effective_bounds(&self, k: usize, ptol: f64) -> (f64, f64) {
        let v = self.x[k];
        if v < self.lo[k] - ptol {
            (f64::NEG_INFINITY, self.lo[k])
        } else if v > self.hi[k] + ptol {
            (self.hi[k], f64::INFINITY)
        } else {
            (self.lo[k], self.hi[k])
        }
    }

    fn finish(&mut self, status: LpStatus, y: Vec<f64>) -> LpResult {
        if status == LpStatus::Optimal {
            // Snap nonbasic values and clean basics against drift.
            self.recompute_basics();
        }
        let min_objective = (0..self.p.n).map(|j| self.p.cost[j] * self.x[j]).sum();
        LpResult { status, x: self.x.clone(), y, min_objective, pivots: self.pivots }
    }
}

fn clamp_to_bound(v: f64, lo: f64, hi: f64) -> f64 {
    if lo.is_finite() && (v <= lo || !hi.is_finite() || (v - lo).abs() <= (hi - v).abs()) {
        lo
    } else if hi.is_finite() {
        hi
    } else {
        0.0
    }
}
