use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
}

/// `sum(coef * x) <relation> rhs` over binary variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(usize, i32)>,
    pub relation: Relation,
    pub rhs: i32,
}

impl Constraint {
    pub fn activity(&self, values: &[bool]) -> i64 {
        self.terms.iter().map(|&(v, a)| if values[v] { a as i64 } else { 0 }).sum()
    }

    pub fn is_satisfied(&self, values: &[bool]) -> bool {
        let act = self.activity(values);
        match self.relation {
            Relation::Le => act <= self.rhs as i64,
            Relation::Eq => act == self.rhs as i64,
        }
    }
}

/// A 0-1 integer program: minimize `objective . x` subject to linear
/// constraints with integer coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IlpProblem {
    names: Vec<String>,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ProblemStats {
    pub variables: usize,
    pub constraints: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// The time limit was reached; the solution is feasible but not proven optimal.
    BoundLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub values: Vec<bool>,
    pub objective: f64,
    pub status: SolveStatus,
}

impl Solution {
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.iter().enumerate().filter_map(|(i, &v)| v.then_some(i))
    }
}

impl IlpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.names.push(name.into());
        self.objective.push(cost);
        self.names.len() - 1
    }

    /// Adds a constraint; repeated variables are merged and zero terms dropped.
    pub fn add_constraint(&mut self, terms: impl IntoIterator<Item = (usize, i32)>, relation: Relation, rhs: i32) -> usize {
        let mut merged: Vec<(usize, i32)> = Vec::new();
        for (v, a) in terms {
            assert!(v < self.names.len(), "constraint references undeclared variable {v}");
            match merged.iter_mut().find(|(u, _)| *u == v) {
                Some((_, b)) => *b += a,
                None => merged.push((v, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0);
        self.constraints.push(Constraint {
            terms: merged,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.objective[var] = cost;
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn stats(&self) -> ProblemStats {
        ProblemStats {
            variables: self.num_vars(),
            constraints: self.num_constraints(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective_value(&self, values: &[bool]) -> f64 {
        self.objective.iter().zip(values).filter(|(_, &v)| v).map(|(c, _)| c).sum()
    }

    /// First violated constraint, if any.
    pub fn first_violation(&self, values: &[bool]) -> Option<usize> {
        assert_eq!(values.len(), self.num_vars());
        self.constraints.iter().position(|c| !c.is_satisfied(values))
    }

    pub fn is_feasible(&self, values: &[bool]) -> bool {
        self.first_violation(values).is_none()
    }

    /// CPLEX-LP text. Constraints without terms are trivially satisfiable
    /// and are left out, since the format cannot express them.
    pub fn to_lp(&self) -> String {
        fn write_terms(s: &mut String, terms: impl Iterator<Item = (String, f64)>) {
            let mut first = true;
            let mut on_line = 0;
            for (name, c) in terms {
                if on_line == 8 {
                    s.push_str("\n   ");
                    on_line = 0;
                }
                let sign = if c < 0.0 { "-" } else if first { "" } else { "+" };
                let mag = c.abs();
                if first && sign.is_empty() {
                    write!(s, " {mag} {name}").unwrap();
                } else {
                    write!(s, " {sign} {mag} {name}").unwrap();
                }
                first = false;
                on_line += 1;
            }
        }
        let mut s = String::new();
        s.push_str("\\ 0-1 program\nMinimize\n obj:");
        let nonzero: Vec<_> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (self.names[i].clone(), c))
            .collect();
        if nonzero.is_empty() {
            if let Some(n) = self.names.first() {
                write!(s, " 0 {n}").unwrap();
            }
        } else {
            write_terms(&mut s, nonzero.into_iter());
        }
        s.push_str("\nSubject To\n");
        for (k, c) in self.constraints.iter().enumerate() {
            if c.terms.is_empty() {
                continue;
            }
            write!(s, " c{k}:").unwrap();
            write_terms(&mut s, c.terms.iter().map(|&(v, a)| (self.names[v].clone(), a as f64)));
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
            };
            writeln!(s, " {rel} {}", c.rhs).unwrap();
        }
        s.push_str("Binary\n");
        for n in &self.names {
            writeln!(s, " {n}").unwrap();
        }
        s.push_str("End\n");
        s
    }

    pub fn write_lp(&self, path: &Path) -> Result<()> {
        fsutil::write_file_atomic(path, self.to_lp().as_bytes())
    }
}

/// Names of the selected variables plus the objective.
pub fn solution_to_text(problem: &IlpProblem, solution: &Solution) -> String {
    let mut s = String::new();
    writeln!(s, "# objective: {}", solution.objective).unwrap();
    let status = match solution.status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::BoundLimit => "bound-limit",
    };
    writeln!(s, "# status: {status}").unwrap();
    for v in solution.selected() {
        writeln!(s, "{}", problem.names()[v]).unwrap();
    }
    s
}

pub fn write_solution(problem: &IlpProblem, solution: &Solution, path: &Path) -> Result<()> {
    fsutil::write_file_atomic(path, solution_to_text(problem, solution).as_bytes())
}

/// Reads a solution file against `problem`, e.g. one produced by an
/// external solver from the LP dump.
pub fn read_solution(problem: &IlpProblem, path: &Path) -> Result<Solution> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: String| Error::format("solution file", path, d);
    let index: std::collections::HashMap<&str, usize> = problem.names().iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut values = vec![false; problem.num_vars()];
    let mut status = SolveStatus::Optimal;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(st) = line.strip_prefix("# status: ") {
            status = match st {
                "optimal" => SolveStatus::Optimal,
                "bound-limit" => SolveStatus::BoundLimit,
                other => return Err(bad(format!("unknown status {other:?}"))),
            };
        } else if line.starts_with('#') {
            continue;
        } else {
            let &v = index.get(line).ok_or_else(|| bad(format!("unknown variable {line:?}")))?;
            values[v] = true;
        }
    }
    if let Some(k) = problem.first_violation(&values) {
        return Err(bad(format!("selection violates constraint c{k}")));
    }
    Ok(Solution {
        objective: problem.objective_value(&values),
        values,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> IlpProblem {
        let mut p = IlpProblem::new();
        let a = p.add_var("a", -2.0);
        let b = p.add_var("b", 1.5);
        p.add_constraint([(a, 1), (b, 1)], Relation::Le, 1);
        p.add_constraint([(a, 1), (b, -1), (a, 1)], Relation::Eq, 2);
        p
    }

    #[test]
    fn merges_repeated_terms() {
        let p = small();
        assert_eq!(p.constraints()[1].terms, vec![(0, 2), (1, -1)]);
        assert!(p.is_feasible(&[true, false]));
        assert!(!p.is_feasible(&[true, true]));
        assert_eq!(p.objective_value(&[true, false]), -2.0);
    }

    #[test]
    fn lp_text() {
        let lp = small().to_lp();
        assert!(lp.contains("Minimize\n obj: - 2 a + 1.5 b\n"), "{lp}");
        assert!(lp.contains(" c0: 1 a + 1 b <= 1\n"), "{lp}");
        assert!(lp.contains(" c1: 2 a - 1 b = 2\n"), "{lp}");
        assert!(lp.ends_with("Binary\n a\n b\nEnd\n"), "{lp}");
    }

    #[test]
    fn solution_file_round_trip() {
        let p = small();
        let s = Solution {
            values: vec![true, false],
            objective: -2.0,
            status: SolveStatus::Optimal,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sol.txt");
        write_solution(&p, &s, &path).unwrap();
        assert_eq!(read_solution(&p, &path).unwrap(), s);
        fs::write(&path, "a\nb\n").unwrap();
        assert!(read_solution(&p, &path).is_err());
    }
}
