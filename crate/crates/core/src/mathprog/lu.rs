//! Sparse LU factorization of simplex bases with product-form updates.
//!
//! The factorization uses right-looking Gaussian elimination with a Markowitz
//! pivot search restricted to a few low-count columns and threshold partial
//! pivoting. Basis changes between refactorizations are kept as eta columns.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const DROP_TOL: f64 = 1e-14;
const PIVOT_THRESHOLD: f64 = 0.1;
const SINGULAR_TOL: f64 = 1e-11;
const SEARCH_COLS: usize = 4;

/// Columns and rows left unpivoted when the basis is (numerically) singular.
#[derive(Debug, Clone)]
pub(crate) struct Singular {
    pub cols: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    /// Off-pivot entries of the entering column, by basis position.
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BasisFactor {
    m: usize,
    pivot_row: Vec<usize>,
    pivot_col: Vec<usize>,
    pivot_val: Vec<f64>,
    /// Multipliers of step k: (row, multiplier).
    lower: Vec<Vec<(usize, f64)>>,
    /// Off-pivot entries of U row k: (basis position, value).
    upper: Vec<Vec<(usize, f64)>>,
    etas: Vec<Eta>,
}

impl BasisFactor {
    /// Factorizes the m x m matrix whose column `k` is `columns[k]` (row, value) pairs.
    pub fn factorize(m: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self, Singular> {
        debug_assert_eq!(columns.len(), m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (c, col) in columns.iter().enumerate() {
            for &(r, v) in col {
                if v.abs() > DROP_TOL {
                    rows[r].push((c, v));
                    col_rows[c].push(r);
                }
            }
        }
        let mut row_done = vec![false; m];
        let mut col_done = vec![false; m];
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..m).map(|c| Reverse((col_count[c], c))).collect();

        let mut f = BasisFactor {
            m,
            pivot_row: Vec::with_capacity(m),
            pivot_col: Vec::with_capacity(m),
            pivot_val: Vec::with_capacity(m),
            lower: Vec::with_capacity(m),
            upper: Vec::with_capacity(m),
            etas: Vec::new(),
        };

        let mut work = vec![0.0f64; m];
        let mut mark = vec![usize::MAX; m];
        let mut singular_cols = Vec::new();
        let mut candidates: Vec<usize> = Vec::with_capacity(SEARCH_COLS);

        while let Some(Reverse((count, c))) = heap.pop() {
            if col_done[c] || count != col_count[c] {
                continue;
            }
            candidates.clear();
            candidates.push(c);
            let mut stash = Vec::new();
            while candidates.len() < SEARCH_COLS {
                match heap.pop() {
                    Some(Reverse((cnt, cc))) => {
                        if col_done[cc] || cnt != col_count[cc] || candidates.contains(&cc) {
                            continue;
                        }
                        candidates.push(cc);
                        stash.push(Reverse((cnt, cc)));
                    }
                    None => break,
                }
            }

            // Markowitz search over the candidate columns.
            let mut best: Option<(usize, usize, usize, f64)> = None; // (cost, row, col, value)
            for &cc in &candidates {
                col_rows[cc].retain(|&r| !row_done[r]);
                let mut colmax = 0.0f64;
                for &r in &col_rows[cc] {
                    if let Some(v) = lookup(&rows[r], cc) {
                        colmax = colmax.max(v.abs());
                    }
                }
                if colmax <= SINGULAR_TOL {
                    continue;
                }
                let ccount = col_rows[cc].len();
                for &r in &col_rows[cc] {
                    if let Some(v) = lookup(&rows[r], cc) {
                        if v.abs() >= PIVOT_THRESHOLD * colmax {
                            let cost = (rows[r].len() - 1) * (ccount - 1);
                            let better = match best {
                                None => true,
                                Some((bc, _, _, bv)) => cost < bc || (cost == bc && v.abs() > bv.abs()),
                            };
                            if better {
                                best = Some((cost, r, cc, v));
                            }
                        }
                    }
                }
            }

            let Some((_, pr, pc, pv)) = best else {
                // None of the candidates has an acceptable pivot: they are singular.
                for &cc in &candidates {
                    col_rows[cc].retain(|&r| !row_done[r]);
                    let colmax =
                        col_rows[cc].iter().filter_map(|&r| lookup(&rows[r], cc)).fold(0.0f64, |a, v| a.max(v.abs()));
                    if colmax <= SINGULAR_TOL {
                        col_done[cc] = true;
                        singular_cols.push(cc);
                    }
                }
                for s in stash {
                    heap.push(s);
                }
                heap.push(Reverse((col_count[c], c)));
                continue;
            };
            for s in stash {
                heap.push(s);
            }
            if pc != c && !col_done[c] {
                heap.push(Reverse((col_count[c], c)));
            }

            // Eliminate column pc using row pr.
            row_done[pr] = true;
            col_done[pc] = true;
            let pivot_row_entries: Vec<(usize, f64)> =
                rows[pr].iter().copied().filter(|&(j, _)| j != pc && !col_done[j]).collect();
            let mut lcol = Vec::new();
            let others: Vec<usize> = col_rows[pc].iter().copied().filter(|&r| r != pr && !row_done[r]).collect();
            for r in others {
                let Some(a) = lookup(&rows[r], pc) else { continue };
                let mult = a / pv;
                lcol.push((r, mult));
                // Scatter row r.
                let row = std::mem::take(&mut rows[r]);
                let mut newrow: Vec<(usize, f64)> = Vec::with_capacity(row.len() + pivot_row_entries.len());
                for (j, v) in row {
                    if j == pc {
                        continue;
                    }
                    work[j] = v;
                    mark[j] = r;
                    newrow.push((j, 0.0));
                }
                for &(j, u) in &pivot_row_entries {
                    if mark[j] == r {
                        work[j] -= mult * u;
                    } else {
                        mark[j] = r;
                        work[j] = -mult * u;
                        newrow.push((j, 0.0));
                        col_rows[j].push(r);
                        col_count[j] += 1;
                    }
                }
                newrow.retain_mut(|e| {
                    e.1 = work[e.0];
                    mark[e.0] = usize::MAX;
                    if e.1.abs() > DROP_TOL {
                        true
                    } else {
                        col_count[e.0] = col_count[e.0].saturating_sub(1);
                        false
                    }
                });
                rows[r] = newrow;
            }
            for &(j, _) in &pivot_row_entries {
                col_count[j] = col_count[j].saturating_sub(1);
                heap.push(Reverse((col_count[j], j)));
            }
            f.pivot_row.push(pr);
            f.pivot_col.push(pc);
            f.pivot_val.push(pv);
            f.lower.push(lcol);
            f.upper.push(pivot_row_entries);
            rows[pr].clear();
        }

        if f.pivot_row.len() < m {
            let mut cols: Vec<usize> = (0..m).filter(|&c| !f.pivot_col.contains(&c)).collect();
            cols.sort_unstable();
            let rows_left: Vec<usize> = (0..m).filter(|&r| !row_done[r]).collect();
            debug_assert!(singular_cols.iter().all(|c| cols.contains(c)));
            return Err(Singular { cols, rows: rows_left });
        }
        Ok(f)
    }

    pub fn num_etas(&self) -> usize {
        self.etas.len()
    }

    /// Solves B x = b in place; `b` is indexed by row on input and by basis position on output.
    pub fn ftran(&self, b: &mut Vec<f64>) {
        let m = self.m;
        for k in 0..m {
            let v = b[self.pivot_row[k]];
            if v != 0.0 {
                for &(i, mult) in &self.lower[k] {
                    b[i] -= mult * v;
                }
            }
        }
        let mut x = vec![0.0; m];
        for k in (0..m).rev() {
            let mut v = b[self.pivot_row[k]];
            for &(j, u) in &self.upper[k] {
                v -= u * x[j];
            }
            x[self.pivot_col[k]] = v / self.pivot_val[k];
        }
        for eta in &self.etas {
            let vp = x[eta.pos] / eta.pivot;
            x[eta.pos] = vp;
            if vp != 0.0 {
                for &(i, a) in &eta.entries {
                    x[i] -= a * vp;
                }
            }
        }
        *b = x;
    }

    /// Solves B^T y = c in place; `c` is indexed by basis position on input and by row on output.
    pub fn btran(&self, c: &mut Vec<f64>) {
        let m = self.m;
        for eta in self.etas.iter().rev() {
            let mut v = c[eta.pos];
            for &(i, a) in &eta.entries {
                v -= a * c[i];
            }
            c[eta.pos] = v / eta.pivot;
        }
        let mut w = vec![0.0; m];
        let mut acc = vec![0.0; m];
        for k in 0..m {
            let col = self.pivot_col[k];
            let v = (c[col] - acc[col]) / self.pivot_val[k];
            w[self.pivot_row[k]] = v;
            if v != 0.0 {
                for &(j, u) in &self.upper[k] {
                    acc[j] += u * v;
                }
            }
        }
        for k in (0..m).rev() {
            let mut v = w[self.pivot_row[k]];
            for &(i, mult) in &self.lower[k] {
                v -= mult * w[i];
            }
            w[self.pivot_row[k]] = v;
        }
        *c = w;
    }

    /// Records that basis position `pos` is replaced by a column whose FTRAN image is `alpha`.
    pub fn push_eta(&mut self, pos: usize, alpha: &[f64]) {
        let entries =
            alpha.iter().enumerate().filter(|&(i, &a)| i != pos && a.abs() > DROP_TOL).map(|(i, &a)| (i, a)).collect();
        self.etas.push(Eta { pos, pivot: alpha[pos], entries });
    }
}

fn lookup(row: &[(usize, f64)], col: usize) -> Option<f64> {
    row.iter().find(|&&(j, _)| j == col).map(|&(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_mul(m: usize, cols: &[Vec<(usize, f64)>], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (c, col) in cols.iter().enumerate() {
            for &(r, v) in col {
                out[r] += v * x[c];
            }
        }
        out
    }

    fn random_nonsingular(m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, f64)>> {
        // Diagonally dominant sparse matrix under a random row permutation.
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        (0..m)
            .map(|c| {
                let mut col = vec![(perm[c], 4.0 + rng.random::<f64>())];
                for _ in 0..2 {
                    let r = rng.random_range(0..m);
                    if r != perm[c] {
                        col.push((r, rng.random::<f64>() - 0.5));
                    }
                }
                col.sort_by_key(|e| e.0);
                col.dedup_by_key(|e| e.0);
                col
            })
            .collect()
    }

    #[test]
    fn ftran_and_btran_invert_the_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [1, 2, 5, 30, 120] {
            let cols = random_nonsingular(m, &mut rng);
            let f = BasisFactor::factorize(m, &cols).expect("nonsingular");
            let x: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut b = dense_mul(m, &cols, &x);
            f.ftran(&mut b);
            for (a, e) in b.iter().zip(&x) {
                assert!((a - e).abs() < 1e-10);
            }
            // B^T y = c  <=>  c_k = col_k . y
            let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut c: Vec<f64> = cols.iter().map(|col| col.iter().map(|&(r, v)| v * y[r]).sum()).collect();
            f.btran(&mut c);
            for (a, e) in c.iter().zip(&y) {
                assert!((a - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eta_updates_track_column_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 25;
        let mut cols = random_nonsingular(m, &mut rng);
        let mut f = BasisFactor::factorize(m, &cols).unwrap();
        for step in 0..10 {
            let pos = (step * 7) % m;
            // Scaled old column plus a small new entry keeps column diagonal dominance.
            let mut newcol: Vec<(usize, f64)> = cols[pos].iter().map(|&(r, v)| (r, 2.0 * v)).collect();
            let extra = (pos + 3) % m;
            match newcol.iter_mut().find(|e| e.0 == extra) {
                Some(e) => e.1 += 0.3,
                None => newcol.push((extra, 0.3)),
            }
            let mut alpha = vec![0.0; m];
            for &(r, v) in &newcol {
                alpha[r] = v;
            }
            f.ftran(&mut alpha);
            f.push_eta(pos, &alpha);
            cols[pos] = newcol;
        }
        let x: Vec<f64> = (0..m).map(|i| (i as f64).sin()).collect();
        let mut b = dense_mul(m, &cols, &x);
        f.ftran(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-9);
        }
        let y: Vec<f64> = (0..m).map(|i| (i as f64).cos()).collect();
        let mut c: Vec<f64> = cols.iter().map(|col| col.iter().map(|&(r, v)| v * y[r]).sum()).collect();
        f.btran(&mut c);
        for (a, e) in c.iter().zip(&y) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_basis_reports_unpivoted_columns() {
        let cols = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 2.0), (1, 2.0)], vec![(2, 1.0)]];
        let err = BasisFactor::factorize(3, &cols).unwrap_err();
        assert_eq!(err.cols.len(), 1);
        assert_eq!(err.rows.len(), 1);
    }
}
