//! Exact depth-first branch and bound for 0-1 programs.
//!
//! The problem is split into independent blocks of the variable/constraint
//! incidence graph, each searched separately. Nodes are pruned with a
//! Lagrangian bound: rows of the form `sum x <= 1` with unit coefficients
//! are kept as a per-row choice, every other row is priced into the
//! variable costs with multipliers tuned by subgradient steps at the root.
//! Any multiplier vector gives a valid bound, so pruning stays exact.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::ilp::problem::{IlpProblem, Relation, Solution, SolveStatus};

const PRUNE_TOL: f64 = 1e-9;
const DEADLINE_CHECK_EVERY: u64 = 4096;
const SUBGRADIENT_ITERS: usize = 300;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct SearchStats {
    pub components: usize,
    pub nodes: u64,
}

/// Solves to optimality, or returns the incumbent with
/// [`SolveStatus::BoundLimit`] once `time_limit` has passed. A component
/// with no incumbent at the deadline keeps searching until it finds one, up
/// to twice the limit, and then fails with [`Error::Timeout`].
pub fn solve_exact(problem: &IlpProblem, time_limit: Option<Duration>) -> Result<Solution> {
    solve_exact_with_stats(problem, time_limit).map(|(s, _)| s)
}

pub fn solve_exact_with_stats(problem: &IlpProblem, time_limit: Option<Duration>) -> Result<(Solution, SearchStats)> {
    let start = Instant::now();
    let deadline = time_limit.map(|t| (start + t, start + t * 2));
    let n = problem.num_vars();
    let mut values = vec![false; n];
    let mut stats = SearchStats::default();
    let mut timed_out = false;

    for c in problem.constraints() {
        if c.terms.is_empty() && !c.is_satisfied(&[]) {
            return Err(Error::Infeasible);
        }
    }

    for comp in components(problem) {
        if comp.rows.is_empty() {
            for &v in &comp.vars {
                values[v] = problem.objective()[v] < 0.0;
            }
            continue;
        }
        stats.components += 1;
        let mut search = Search::new(problem, &comp, deadline);
        let outcome = search.run();
        stats.nodes += search.nodes;
        timed_out |= search.timed_out;
        match outcome {
            Some(local) => {
                for (k, &v) in comp.vars.iter().enumerate() {
                    values[v] = local[k];
                }
            }
            None if search.hard_stop => return Err(Error::Timeout),
            None => return Err(Error::Infeasible),
        }
    }

    debug_assert!(problem.is_feasible(&values));
    let status = if timed_out { SolveStatus::BoundLimit } else { SolveStatus::Optimal };
    Ok((
        Solution {
            objective: problem.objective_value(&values),
            values,
            status,
        },
        stats,
    ))
}

struct Component {
    vars: Vec<usize>,
    rows: Vec<usize>,
}

/// Connected blocks of the incidence graph, ordered by smallest variable.
fn components(problem: &IlpProblem) -> Vec<Component> {
    let n = problem.num_vars();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for c in problem.constraints() {
        if let Some(&(first, _)) = c.terms.first() {
            for &(v, _) in &c.terms[1..] {
                let (a, b) = (find(&mut parent, first), find(&mut parent, v));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut comps: Vec<Component> = Vec::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Component {
                vars: Vec::new(),
                rows: Vec::new(),
            });
        }
        comps[slot[r]].vars.push(v);
    }
    for (k, c) in problem.constraints().iter().enumerate() {
        if let Some(&(v, _)) = c.terms.first() {
            let r = find(&mut parent, v);
            comps[slot[r]].rows.push(k);
        }
    }
    comps
}

const FREE: i8 = -1;

struct Row {
    terms: Vec<(u32, i32)>,
    relation: Relation,
    rhs: i64,
    max_abs: i64,
}

struct Search {
    cost: Vec<f64>,
    rows: Vec<Row>,
    var_rows: Vec<Vec<(u32, i32)>>,
    val: Vec<i8>,
    fixed: Vec<i64>,
    neg_free: Vec<i64>,
    pos_free: Vec<i64>,
    trail: Vec<u32>,
    /// Equality rows that became unbalanced, most recent last.
    open: Vec<u32>,
    fixed_cost: f64,
    /// Rows violated when all free variables are zero.
    bad_at_zero: usize,
    queue: Vec<u32>,
    queued: Vec<bool>,

    /// Rows kept as "choose at most one" in the bound.
    packing: Vec<u32>,
    in_packing: Vec<bool>,
    /// Rows priced into the costs; their multipliers.
    dualized: Vec<u32>,
    lambda: Vec<f64>,
    reduced: Vec<f64>,
    bound_const: f64,

    order: Vec<u32>,
    best: f64,
    incumbent: Option<Vec<bool>>,
    nodes: u64,
    deadline: Option<(Instant, Instant)>,
    timed_out: bool,
    hard_stop: bool,
}

struct Frame {
    trail_len: usize,
    open_len: usize,
    pos: usize,
    var: u32,
    zero_tried: bool,
}

impl Search {
    fn new(problem: &IlpProblem, comp: &Component, deadline: Option<(Instant, Instant)>) -> Self {
        let mut local = vec![u32::MAX; problem.num_vars()];
        for (k, &v) in comp.vars.iter().enumerate() {
            local[v] = k as u32;
        }
        let n = comp.vars.len();
        let cost: Vec<f64> = comp.vars.iter().map(|&v| problem.objective()[v]).collect();
        let mut var_rows = vec![Vec::new(); n];
        let rows: Vec<Row> = comp
            .rows
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let c = &problem.constraints()[k];
                let terms: Vec<(u32, i32)> = c.terms.iter().map(|&(v, a)| (local[v], a)).collect();
                for &(v, a) in &terms {
                    var_rows[v as usize].push((r as u32, a));
                }
                Row {
                    max_abs: terms.iter().map(|&(_, a)| (a as i64).abs()).max().unwrap_or(0),
                    terms,
                    relation: c.relation,
                    rhs: c.rhs as i64,
                }
            })
            .collect();
        let m = rows.len();
        let neg_free: Vec<i64> = rows.iter().map(|r| r.terms.iter().map(|&(_, a)| (a as i64).min(0)).sum()).collect();
        let pos_free: Vec<i64> = rows.iter().map(|r| r.terms.iter().map(|&(_, a)| (a as i64).max(0)).sum()).collect();

        let mut in_packing = vec![false; n];
        let mut packing = Vec::new();
        let mut dualized = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let is_packing = row.relation == Relation::Le
                && row.rhs == 1
                && row.terms.iter().all(|&(v, a)| a == 1 && !in_packing[v as usize]);
            if is_packing {
                for &(v, _) in &row.terms {
                    in_packing[v as usize] = true;
                }
                packing.push(r as u32);
            } else {
                dualized.push(r as u32);
            }
        }

        let bad_at_zero = rows
            .iter()
            .filter(|r| match r.relation {
                Relation::Le => 0 > r.rhs,
                Relation::Eq => 0 != r.rhs,
            })
            .count();
        let rows_open_at_root: Vec<u32> = (0..m as u32)
            .filter(|&r| rows[r as usize].relation == Relation::Eq && rows[r as usize].rhs != 0)
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| cost[a as usize].total_cmp(&cost[b as usize]).then(a.cmp(&b)));

        Search {
            reduced: cost.clone(),
            cost,
            rows,
            var_rows,
            val: vec![FREE; n],
            fixed: vec![0; m],
            neg_free,
            pos_free,
            trail: Vec::new(),
            open: rows_open_at_root,
            fixed_cost: 0.0,
            bad_at_zero,
            queue: (0..m as u32).collect(),
            queued: vec![true; m],
            packing,
            in_packing,
            dualized,
            lambda: vec![0.0; m],
            bound_const: 0.0,
            order,
            best: f64::INFINITY,
            incumbent: None,
            nodes: 0,
            deadline,
            timed_out: false,
            hard_stop: false,
        }
    }

    fn zero_ok(&self, r: usize) -> bool {
        let row = &self.rows[r];
        match row.relation {
            Relation::Le => self.fixed[r] <= row.rhs,
            Relation::Eq => self.fixed[r] == row.rhs,
        }
    }

    fn assign(&mut self, v: u32, one: bool) {
        debug_assert_eq!(self.val[v as usize], FREE);
        self.val[v as usize] = one as i8;
        self.trail.push(v);
        if one {
            self.fixed_cost += self.cost[v as usize];
        }
        for k in 0..self.var_rows[v as usize].len() {
            let (r, a) = self.var_rows[v as usize][k];
            let r = r as usize;
            if a < 0 {
                self.neg_free[r] -= a as i64;
            } else {
                self.pos_free[r] -= a as i64;
            }
            if one {
                let before = self.zero_ok(r);
                self.fixed[r] += a as i64;
                let after = self.zero_ok(r);
                self.bad_at_zero = self.bad_at_zero + (before && !after) as usize - (!before && after) as usize;
                if self.rows[r].relation == Relation::Eq && !after {
                    self.open.push(r as u32);
                }
            }
            if !self.queued[r] {
                self.queued[r] = true;
                self.queue.push(r as u32);
            }
        }
    }

    fn undo(&mut self, len: usize, open_len: usize) {
        while self.trail.len() > len {
            let v = self.trail.pop().unwrap();
            let one = self.val[v as usize] == 1;
            self.val[v as usize] = FREE;
            if one {
                self.fixed_cost -= self.cost[v as usize];
            }
            for k in 0..self.var_rows[v as usize].len() {
                let (r, a) = self.var_rows[v as usize][k];
                let r = r as usize;
                if a < 0 {
                    self.neg_free[r] += a as i64;
                } else {
                    self.pos_free[r] += a as i64;
                }
                if one {
                    let before = self.zero_ok(r);
                    self.fixed[r] -= a as i64;
                    let after = self.zero_ok(r);
                    self.bad_at_zero = self.bad_at_zero + (before && !after) as usize - (!before && after) as usize;
                }
            }
        }
        self.open.truncate(open_len);
        for &r in &self.queue {
            self.queued[r as usize] = false;
        }
        self.queue.clear();
    }

    /// Activity-based fixing until a fixpoint; false on a conflict.
    fn propagate(&mut self) -> bool {
        while let Some(r) = self.queue.pop() {
            let r = r as usize;
            self.queued[r] = false;
            let row = &self.rows[r];
            let min_act = self.fixed[r] + self.neg_free[r];
            let max_act = self.fixed[r] + self.pos_free[r];
            if min_act > row.rhs || (row.relation == Relation::Eq && max_act < row.rhs) {
                for &q in &self.queue {
                    self.queued[q as usize] = false;
                }
                self.queue.clear();
                return false;
            }
            let le_tight = row.rhs - min_act < row.max_abs;
            let ge_tight = row.relation == Relation::Eq && max_act - row.rhs < row.max_abs;
            if !le_tight && !ge_tight {
                continue;
            }
            let mut forced: Vec<(u32, bool)> = Vec::new();
            for &(v, a) in &row.terms {
                if self.val[v as usize] != FREE {
                    continue;
                }
                let a = a as i64;
                if le_tight {
                    if a > 0 && min_act + a > row.rhs {
                        forced.push((v, false));
                        continue;
                    }
                    if a < 0 && min_act - a > row.rhs {
                        forced.push((v, true));
                        continue;
                    }
                }
                if ge_tight {
                    if a > 0 && max_act - a < row.rhs {
                        forced.push((v, true));
                    } else if a < 0 && max_act + a < row.rhs {
                        forced.push((v, false));
                    }
                }
            }
            for (v, one) in forced {
                if self.val[v as usize] == FREE {
                    self.assign(v, one);
                }
            }
        }
        true
    }

    /// Lagrangian value under the current fixings. Fills `choice` with the
    /// minimizer when given.
    fn lagrangian(&self, mut choice: Option<&mut Vec<bool>>) -> f64 {
        let mut total = self.bound_const;
        if let Some(c) = choice.as_deref_mut() {
            c.iter_mut().for_each(|x| *x = false);
        }
        for (v, &rc) in self.reduced.iter().enumerate() {
            let take = match self.val[v] {
                1 => true,
                0 => false,
                _ => !self.in_packing[v] && rc < 0.0,
            };
            if take {
                total += rc;
                if let Some(c) = choice.as_deref_mut() {
                    c[v] = true;
                }
            }
        }
        for &r in &self.packing {
            let row = &self.rows[r as usize];
            if self.fixed[r as usize] > 0 {
                continue;
            }
            let mut best: Option<(f64, u32)> = None;
            for &(v, _) in &row.terms {
                let rc = self.reduced[v as usize];
                if self.val[v as usize] == FREE && rc < 0.0 && best.is_none_or(|(b, _)| rc < b) {
                    best = Some((rc, v));
                }
            }
            if let Some((rc, v)) = best {
                total += rc;
                if let Some(c) = choice.as_deref_mut() {
                    c[v as usize] = true;
                }
            }
        }
        total
    }

    fn set_lambda(&mut self, lambda: &[f64]) {
        self.lambda.copy_from_slice(lambda);
        self.reduced.copy_from_slice(&self.cost);
        self.bound_const = 0.0;
        for &r in &self.dualized {
            let l = self.lambda[r as usize];
            if l == 0.0 {
                continue;
            }
            let row = &self.rows[r as usize];
            self.bound_const -= l * row.rhs as f64;
            for &(v, a) in &row.terms {
                self.reduced[v as usize] += l * a as f64;
            }
        }
    }

    /// Subgradient ascent on the multipliers of the dualized rows, from the
    /// root fixings, using `upper` as the target value.
    fn tune_multipliers(&mut self, upper: f64) {
        if self.dualized.is_empty() {
            return;
        }
        let n = self.cost.len();
        let mut choice = vec![false; n];
        let mut lambda = self.lambda.clone();
        let mut best_val = self.lagrangian(None);
        let mut best_lambda = lambda.clone();
        let mut step_scale = 2.0;
        let mut stall = 0;
        for _ in 0..SUBGRADIENT_ITERS {
            let val = self.lagrangian(Some(&mut choice));
            if val > best_val + 1e-12 {
                best_val = val;
                best_lambda.copy_from_slice(&lambda);
                stall = 0;
            } else {
                stall += 1;
                if stall >= 20 {
                    step_scale *= 0.5;
                    stall = 0;
                }
            }
            if upper - best_val < 1e-9 || step_scale < 1e-4 {
                break;
            }
            let mut grad = vec![0.0; self.rows.len()];
            let mut norm = 0.0;
            for &r in &self.dualized {
                let row = &self.rows[r as usize];
                let act: i64 = row.terms.iter().filter(|&&(v, _)| choice[v as usize]).map(|&(_, a)| a as i64).sum();
                let mut g = (act - row.rhs) as f64;
                if row.relation == Relation::Le && lambda[r as usize] <= 0.0 && g < 0.0 {
                    g = 0.0;
                }
                grad[r as usize] = g;
                norm += g * g;
            }
            if norm == 0.0 {
                break;
            }
            let t = step_scale * (upper - val).max(1e-6) / norm;
            for &r in &self.dualized {
                let r = r as usize;
                lambda[r] += t * grad[r];
                if self.rows[r].relation == Relation::Le && lambda[r] < 0.0 {
                    lambda[r] = 0.0;
                }
            }
            self.set_lambda(&lambda);
        }
        self.set_lambda(&best_lambda);
    }

    fn check_deadline(&mut self) {
        let Some((soft, hard)) = self.deadline else { return };
        let now = Instant::now();
        if now >= soft {
            self.timed_out = true;
        }
        if now >= hard {
            self.hard_stop = true;
        }
    }

    /// Completing the current fixings with zeros is feasible; keep it if
    /// it improves the incumbent.
    fn try_zero_completion(&mut self) {
        if self.bad_at_zero == 0 && self.fixed_cost < self.best {
            self.best = self.fixed_cost;
            self.incumbent = Some(self.val.iter().map(|&x| x == 1).collect());
        }
    }

    /// Next branching variable: the cheapest free variable that can close
    /// the most recently opened equality row, else the cheapest free
    /// variable overall.
    fn pick_branch(&self, pos: &mut usize) -> Option<u32> {
        for &r in self.open.iter().rev() {
            let r = r as usize;
            let deficit = self.rows[r].rhs - self.fixed[r];
            if deficit == 0 {
                continue;
            }
            let best = self.rows[r]
                .terms
                .iter()
                .filter(|&&(v, a)| self.val[v as usize] == FREE && (a as i64) * deficit > 0)
                .map(|&(v, _)| v)
                .min_by(|&x, &y| self.cost[x as usize].total_cmp(&self.cost[y as usize]).then(x.cmp(&y)));
            if best.is_some() {
                return best;
            }
        }
        while *pos < self.order.len() && self.val[self.order[*pos] as usize] != FREE {
            *pos += 1;
        }
        self.order.get(*pos).copied()
    }

    /// Re-derives the multipliers from the root fixings with the current
    /// incumbent as target, then restores the search state.
    fn retune(&mut self, root_len: usize, root_open: usize) {
        let saved: Vec<(u32, bool)> = self.trail[root_len..].iter().map(|&v| (v, self.val[v as usize] == 1)).collect();
        self.undo(root_len, root_open);
        self.tune_multipliers(self.best);
        for (v, one) in saved {
            self.assign(v, one);
        }
        for &r in &self.queue {
            self.queued[r as usize] = false;
        }
        self.queue.clear();
    }

    fn run(&mut self) -> Option<Vec<bool>> {
        if !self.propagate() {
            return None;
        }
        let (root_len, root_open) = (self.trail.len(), self.open.len());
        self.try_zero_completion();
        let mut retuned = false;
        if self.incumbent.is_some() {
            self.tune_multipliers(self.best);
        }
        let root_best = self.best;
        let mut stack: Vec<Frame> = Vec::new();
        let mut pos = 0usize;
        let mut at_node = true;
        loop {
            if at_node {
                self.nodes += 1;
                if self.nodes % DEADLINE_CHECK_EVERY == 0 {
                    self.check_deadline();
                    if self.hard_stop || (self.timed_out && self.incumbent.is_some()) {
                        break;
                    }
                }
                self.try_zero_completion();
                if !retuned && self.best < root_best {
                    retuned = true;
                    self.retune(root_len, root_open);
                }
                if self.lagrangian(None) >= self.best - PRUNE_TOL {
                    at_node = false;
                    continue;
                }
                let Some(v) = self.pick_branch(&mut pos) else {
                    // all fixed; the zero completion above covered this leaf
                    at_node = false;
                    continue;
                };
                stack.push(Frame {
                    trail_len: self.trail.len(),
                    open_len: self.open.len(),
                    pos,
                    var: v,
                    zero_tried: false,
                });
                self.assign(v, true);
                at_node = self.propagate();
            } else {
                let Some(frame) = stack.last_mut() else { break };
                let (len, open_len, fpos, var, zero_tried) = (frame.trail_len, frame.open_len, frame.pos, frame.var, frame.zero_tried);
                frame.zero_tried = true;
                self.undo(len, open_len);
                if zero_tried {
                    stack.pop();
                    continue;
                }
                pos = fpos;
                self.assign(var, false);
                at_node = self.propagate();
            }
        }
        self.incumbent.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(p: &IlpProblem) -> Option<f64> {
        let n = p.num_vars();
        (0u64..1 << n)
            .map(|m| (0..n).map(|b| m >> b & 1 == 1).collect::<Vec<_>>())
            .filter(|v| p.is_feasible(v))
            .map(|v| p.objective_value(&v))
            .min_by(f64::total_cmp)
    }

    #[test]
    fn empty_problem() {
        let s = solve_exact(&IlpProblem::new(), None).unwrap();
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.status, SolveStatus::Optimal);
    }

    #[test]
    fn unconstrained_variables_follow_sign() {
        let mut p = IlpProblem::new();
        p.add_var("a", -1.0);
        p.add_var("b", 2.0);
        let s = solve_exact(&p, None).unwrap();
        assert_eq!(s.values, vec![true, false]);
    }

    #[test]
    fn infeasible_reported() {
        let mut p = IlpProblem::new();
        let a = p.add_var("a", 1.0);
        let b = p.add_var("b", 1.0);
        p.add_constraint([(a, 1), (b, 1)], Relation::Eq, 3);
        assert!(matches!(solve_exact(&p, None), Err(Error::Infeasible)));
        let mut q = IlpProblem::new();
        q.add_var("a", 1.0);
        q.add_constraint([], Relation::Eq, 1);
        assert!(matches!(solve_exact(&q, None), Err(Error::Infeasible)));
    }

    #[test]
    fn random_problems_match_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.random_range(1..=10);
            let mut p = IlpProblem::new();
            for i in 0..n {
                p.add_var(format!("x{i}"), rng.random_range(-5.0..5.0));
            }
            for _ in 0..rng.random_range(0..6) {
                let k = rng.random_range(1..=n.min(4));
                let terms: Vec<(usize, i32)> = (0..k).map(|_| (rng.random_range(0..n), rng.random_range(-2..=2))).collect();
                let rel = if rng.random_bool(0.3) { Relation::Eq } else { Relation::Le };
                p.add_constraint(terms, rel, rng.random_range(-1..=2));
            }
            if rng.random_bool(0.5) {
                let k = rng.random_range(1..=n);
                p.add_constraint((0..k).map(|v| (v, 1)), Relation::Le, 1);
            }
            match (brute(&p), solve_exact(&p, None)) {
                (None, r) => assert!(matches!(r, Err(Error::Infeasible))),
                (Some(best), Ok(s)) => {
                    assert!(p.is_feasible(&s.values));
                    assert!((s.objective - best).abs() < 1e-9, "{} vs {best}\n{}", s.objective, p.to_lp());
                    assert_eq!(s.objective, p.objective_value(&s.values));
                }
                (Some(_), Err(e)) => panic!("{e}"),
            }
        }
    }
}
