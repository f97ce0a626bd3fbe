//! Exact discrete optimal transport.
//!
//! [`ot_solve`] runs the transportation simplex on the support submatrix,
//! starting from the north-west corner basis in index order. On sorted 1D
//! points with a convex cost that start is already optimal. Dual potentials
//! come from the optimal basis and are turned into a c-conjugate pair by two
//! c-transform passes.

use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::measures::ProbVector;
use crate::metric::PowerTypeCost;
use crate::numerics::{dot, neumaier_sum};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSolution {
    /// Rows follow `nu`, columns follow `mu`.
    pub plan: SquareMatrix,
    pub primal_cost: f64,
    /// Potential on the `nu` side.
    pub psi: Vec<f64>,
    /// Potential on the `mu` side.
    pub phi: Vec<f64>,
    pub duality_gap: f64,
    pub support_pairs: Vec<(usize, usize)>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    r: usize,
    c: usize,
    flow: f64,
}

struct Simplex<'a> {
    rows: Vec<usize>,
    cols: Vec<usize>,
    cost: &'a SquareMatrix,
    basis: Vec<Cell>,
    slot: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

const NOT_BASIC: usize = usize::MAX;

impl<'a> Simplex<'a> {
    fn new(nu: &ProbVector, mu: &ProbVector, cost: &'a SquareMatrix) -> Self {
        let rows = nu.support().to_vec();
        let cols = mu.support().to_vec();
        let (m, k) = (rows.len(), cols.len());
        let a: Vec<f64> = rows.iter().map(|&i| nu.get(i)).collect();
        let b: Vec<f64> = cols.iter().map(|&j| mu.get(j)).collect();

        let mut basis = Vec::with_capacity(m + k - 1);
        let (mut r, mut c) = (0, 0);
        let (mut ra, mut rb) = (a[0], b[0]);
        loop {
            if r == m - 1 && c == k - 1 {
                basis.push(Cell { r, c, flow: ra.max(0.0) });
                break;
            }
            if r == m - 1 || (c < k - 1 && rb < ra) {
                let x = rb.max(0.0);
                basis.push(Cell { r, c, flow: x });
                ra -= x;
                c += 1;
                rb = b[c];
            } else if c == k - 1 || ra < rb {
                let x = ra.max(0.0);
                basis.push(Cell { r, c, flow: x });
                rb -= x;
                r += 1;
                ra = a[r];
            } else {
                // equal remainders: degenerate step down, column left empty
                basis.push(Cell { r, c, flow: ra.max(0.0) });
                r += 1;
                ra = a[r];
                rb = 0.0;
            }
        }
        debug_assert_eq!(basis.len(), m + k - 1);
        let mut slot = vec![NOT_BASIC; m * k];
        for (s, cell) in basis.iter().enumerate() {
            slot[cell.r * k + cell.c] = s;
        }
        Self { rows, cols, cost, basis, slot, u: vec![0.0; m], v: vec![0.0; k] }
    }

    #[inline]
    fn c(&self, r: usize, c: usize) -> f64 {
        self.cost.get(self.rows[r], self.cols[c])
    }

    /// Adjacency of the basis tree; rows are nodes `0..m`, columns `m..m+k`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let m = self.rows.len();
        let mut adj = vec![Vec::new(); m + self.cols.len()];
        for (s, cell) in self.basis.iter().enumerate() {
            adj[cell.r].push(s);
            adj[m + cell.c].push(s);
        }
        adj
    }

    fn compute_duals(&mut self, adj: &[Vec<usize>]) {
        let m = self.rows.len();
        let mut seen = vec![false; adj.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &s in &adj[node] {
                let Cell { r, c, .. } = self.basis[s];
                let (other, is_col) = if node < m { (m + c, true) } else { (r, false) };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if is_col {
                    self.v[c] = self.c(r, c) - self.u[r];
                } else {
                    self.u[r] = self.c(r, c) - self.v[c];
                }
                queue.push_back(other);
            }
        }
    }

    /// Basis slots on the tree path from row node `r` to column node `m + c`,
    /// listed from the column end.
    fn path(&self, adj: &[Vec<usize>], r: usize, c: usize) -> Vec<usize> {
        let m = self.rows.len();
        let target = m + c;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
        let mut seen = vec![false; adj.len()];
        let mut queue = VecDeque::from([r]);
        seen[r] = true;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &s in &adj[node] {
                let cell = self.basis[s];
                let other = if node < m { m + cell.c } else { cell.r };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, s));
                    queue.push_back(other);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = target;
        while node != r {
            let (prev, s) = parent[node].expect("basis is a spanning tree");
            out.push(s);
            node = prev;
        }
        out
    }

    fn run(&mut self, max_pivots: usize) -> Result<usize> {
        let (m, k) = (self.rows.len(), self.cols.len());
        let scale = self.cost.max().abs().max(1.0);
        let eps = 1e-12 * scale;
        let mut pivots = 0;
        let mut degenerate_run = 0;
        loop {
            let adj = self.adjacency();
            self.compute_duals(&adj);
            let bland = degenerate_run > 2 * (m + k);
            let mut entering: Option<(usize, usize)> = None;
            let mut best = -eps;
            'scan: for r in 0..m {
                let ur = self.u[r];
                let crow = self.cost.row(self.rows[r]);
                for c in 0..k {
                    if self.slot[r * k + c] != NOT_BASIC {
                        continue;
                    }
                    let red = crow[self.cols[c]] - ur - self.v[c];
                    if red < best {
                        entering = Some((r, c));
                        if bland {
                            break 'scan;
                        }
                        best = red;
                    }
                }
            }
            let Some((re, ce)) = entering else {
                return Ok(pivots);
            };
            if pivots >= max_pivots {
                return Err(Error::SolverStall(max_pivots));
            }
            pivots += 1;

            let path = self.path(&adj, re, ce);
            let mut theta = f64::INFINITY;
            let mut leave: Option<usize> = None;
            for (t, &s) in path.iter().enumerate() {
                if t % 2 == 1 {
                    continue;
                }
                let cell = self.basis[s];
                let key = cell.r * k + cell.c;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let lc = self.basis[l];
                        cell.flow < theta || (cell.flow == theta && key < lc.r * k + lc.c)
                    }
                };
                if better {
                    theta = cell.flow;
                    leave = Some(s);
                }
            }
            let leave = leave.expect("cycle has a decreasing edge");
            for (t, &s) in path.iter().enumerate() {
                if t % 2 == 0 {
                    self.basis[s].flow = (self.basis[s].flow - theta).max(0.0);
                } else {
                    self.basis[s].flow += theta;
                }
            }
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
            let old = self.basis[leave];
            self.slot[old.r * k + old.c] = NOT_BASIC;
            self.basis[leave] = Cell { r: re, c: ce, flow: theta };
            self.slot[re * k + ce] = leave;
        }
    }
}

/// Optimal coupling of `nu` (rows) and `mu` (columns) for `cost`.
pub fn ot_solve(nu: &ProbVector, mu: &ProbVector, cost: &SquareMatrix) -> Result<TransportSolution> {
    nu.check_same_space(mu)?;
    let n = nu.len();
    if cost.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cost.n() });
    }
    let mut sx = Simplex::new(nu, mu, cost);
    let (m, k) = (sx.rows.len(), sx.cols.len());
    let max_pivots = 100 * m * k + 1000;
    let pivots = sx.run(max_pivots)?;

    let mut plan = SquareMatrix::zeros(n);
    let mut support_pairs = Vec::new();
    for cell in &sx.basis {
        let (i, j) = (sx.rows[cell.r], sx.cols[cell.c]);
        plan.set(i, j, cell.flow);
        if cell.flow > 0.0 {
            support_pairs.push((i, j));
        }
    }
    support_pairs.sort_unstable();

    // pass 1: mu-side potential from the basis duals on supp(nu)
    let mut phi = vec![0.0; n];
    for (j, phij) in phi.iter_mut().enumerate() {
        *phij = (0..m)
            .map(|r| cost.get(sx.rows[r], j) - sx.u[r])
            .fold(f64::INFINITY, f64::min);
    }
    // pass 2: nu-side potential as the full c-transform
    let mut psi = c_transform(&phi, cost, Side::Nu);
    let anchor = nu.support().iter().map(|&i| psi[i]).fold(f64::INFINITY, f64::min);
    psi.iter_mut().for_each(|x| *x -= anchor);
    phi.iter_mut().for_each(|x| *x += anchor);

    let primal_cost =
        neumaier_sum(support_pairs.iter().map(|&(i, j)| plan.get(i, j) * cost.get(i, j)));
    let dual = dot(&psi, nu.weights()) + dot(&phi, mu.weights());
    let mut duality_gap = primal_cost - dual;
    if duality_gap < 0.0 && duality_gap > -1e-12 * primal_cost.abs().max(1.0) {
        duality_gap = 0.0;
    }
    Ok(TransportSolution { plan, primal_cost, psi, phi, duality_gap, support_pairs, pivots })
}

/// Which marginal a c-transform produces a potential for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `out(x) = min_y c(x, y) - g(y)`, a potential on the `nu` (row) side.
    Nu,
    /// `out(y) = min_x c(x, y) - g(x)`, a potential on the `mu` (column) side.
    Mu,
}

/// Pointwise infimum over the finite space.
pub fn c_transform(g: &[f64], cost: &SquareMatrix, side: Side) -> Vec<f64> {
    let n = cost.n();
    assert_eq!(g.len(), n, "c_transform: function length must match the cost");
    match side {
        Side::Nu => (0..n)
            .map(|x| {
                let row = cost.row(x);
                (0..n).map(|y| row[y] - g[y]).fold(f64::INFINITY, f64::min)
            })
            .collect(),
        Side::Mu => {
            let mut out = vec![f64::INFINITY; n];
            for x in 0..n {
                let row = cost.row(x);
                for y in 0..n {
                    out[y] = out[y].min(row[y] - g[x]);
                }
            }
            out
        }
    }
}

/// `s_i = min { dtilde[i][j] : (i, j) in the plan support }` for `i` charged by
/// the plan's first marginal.
pub fn subdifferential_distances(
    solution: &TransportSolution,
    dtilde: &SquareMatrix,
) -> Vec<Option<f64>> {
    row_minima(solution, dtilde)
}

/// Same as [`subdifferential_distances`] with the cost in place of `dtilde`,
/// which equals `s_i^{p_o}` without a round trip through the root.
pub fn subdifferential_costs(solution: &TransportSolution, cost: &SquareMatrix) -> Vec<Option<f64>> {
    row_minima(solution, cost)
}

fn row_minima(solution: &TransportSolution, m: &SquareMatrix) -> Vec<Option<f64>> {
    let mut out: Vec<Option<f64>> = vec![None; solution.plan.n()];
    for &(i, j) in &solution.support_pairs {
        let v = m.get(i, j);
        out[i] = Some(out[i].map_or(v, |s: f64| s.min(v)));
    }
    out
}

/// Entrywise `c ∧ level`.
pub fn truncate_cost(cost: &PowerTypeCost, level: f64) -> Result<PowerTypeCost> {
    cost.truncated(level)
}

/// Worst violations of the optimality certificate of a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolutionCheck {
    pub marginal_error: f64,
    pub feasibility_violation: f64,
    pub slackness_error: f64,
    pub duality_gap: f64,
}

pub fn check_solution(
    sol: &TransportSolution,
    nu: &ProbVector,
    mu: &ProbVector,
    cost: &SquareMatrix,
) -> SolutionCheck {
    let n = cost.n();
    let mut marginal_error: f64 = 0.0;
    for i in 0..n {
        let row = neumaier_sum((0..n).map(|j| sol.plan.get(i, j)));
        let col = neumaier_sum((0..n).map(|j| sol.plan.get(j, i)));
        marginal_error = marginal_error.max((row - nu.get(i)).abs()).max((col - mu.get(i)).abs());
    }
    let mut feasibility_violation: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            feasibility_violation =
                feasibility_violation.max(sol.psi[i] + sol.phi[j] - cost.get(i, j));
        }
    }
    let slackness_error = sol
        .support_pairs
        .iter()
        .map(|&(i, j)| (sol.psi[i] + sol.phi[j] - cost.get(i, j)).abs())
        .fold(0.0, f64::max);
    SolutionCheck {
        marginal_error,
        feasibility_violation,
        slackness_error,
        duality_gap: sol.duality_gap,
    }
}

impl TransportSolution {
    /// Rows `(i, j, mass)` over the plan support.
    pub fn plan_csv_rows(&self) -> Vec<(usize, usize, f64)> {
        self.support_pairs.iter().map(|&(i, j)| (i, j, self.plan.get(i, j))).collect()
    }

    /// Rows `(index, psi, phi)`.
    pub fn potential_csv_rows(&self) -> Vec<(usize, f64, f64)> {
        (0..self.psi.len()).map(|i| (i, self.psi[i], self.phi[i])).collect()
    }
}
