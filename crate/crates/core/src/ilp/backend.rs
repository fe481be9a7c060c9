//! Choice of exact solver for a 0-1 program.
//!
//! The built-in branch and bound handles small and medium instances. Whole
//! volumes go to HiGHS in-process, or to any external program that reads the
//! LP dump and writes a solution file.

use std::process::Command;
use std::str::FromStr;
use std::time::{Duration, Instant};

use highs::{HighsModelStatus, RowProblem, Sense};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilp::problem::{read_solution, IlpProblem, Relation, Solution, SolveStatus};
use crate::ilp::solver::solve_exact;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    BuiltIn,
    Highs,
    /// Runs `program args...`, replacing `{lp}` and `{solution}` in the
    /// arguments with the problem dump and the expected solution file.
    Command { program: String, args: Vec<String> },
}

impl Backend {
    pub fn solve(&self, problem: &IlpProblem, time_limit: Option<Duration>) -> Result<Solution> {
        match self {
            Backend::BuiltIn => solve_exact(problem, time_limit),
            Backend::Highs => solve_highs(problem, time_limit),
            Backend::Command { program, args } => solve_command(problem, program, args),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Backend::BuiltIn => "built-in",
            Backend::Highs => "highs",
            Backend::Command { program, .. } => program,
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    /// `built-in`, `highs`, or `command:<program> [args...]`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "built-in" | "builtin" => Ok(Backend::BuiltIn),
            "highs" => Ok(Backend::Highs),
            _ => {
                let cmd = s
                    .strip_prefix("command:")
                    .ok_or_else(|| Error::InvalidParam(format!("unknown solver backend {s:?}")))?;
                let mut words = cmd.split_whitespace().map(String::from);
                let program = words.next().ok_or_else(|| Error::InvalidParam("empty solver command".into()))?;
                Ok(Backend::Command {
                    program,
                    args: words.collect(),
                })
            }
        }
    }
}

/// Branch and cut in HiGHS, single-threaded with zero gap tolerance so the
/// answer is exact and repeatable. The returned objective is recomputed
/// from the rounded selection.
pub fn solve_highs(problem: &IlpProblem, time_limit: Option<Duration>) -> Result<Solution> {
    let n = problem.num_vars();
    if n == 0 {
        for c in problem.constraints() {
            if !c.is_satisfied(&[]) {
                return Err(Error::Infeasible);
            }
        }
        return Ok(Solution {
            values: Vec::new(),
            objective: 0.0,
            status: SolveStatus::Optimal,
        });
    }
    let start = Instant::now();
    let mut rp = RowProblem::default();
    let cols: Vec<_> = problem.objective().iter().map(|&c| rp.add_integer_column(c, 0..=1)).collect();
    for c in problem.constraints() {
        let terms = c.terms.iter().map(|&(v, a)| (cols[v], a as f64));
        let rhs = c.rhs as f64;
        match c.relation {
            Relation::Le => rp.add_row(..=rhs, terms),
            Relation::Eq => rp.add_row(rhs..=rhs, terms),
        }
    }
    let mut model = rp.optimise(Sense::Minimise);
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    model.set_option("mip_rel_gap", 0.0);
    model.set_option("mip_abs_gap", 1e-7);
    if let Some(t) = time_limit {
        model.set_option("time_limit", t.as_secs_f64());
    }
    let solved = model.try_solve().map_err(|e| Error::Backend(format!("highs: {e:?}")))?;
    let status = match solved.status() {
        HighsModelStatus::Optimal => SolveStatus::Optimal,
        HighsModelStatus::Infeasible => return Err(Error::Infeasible),
        HighsModelStatus::ReachedTimeLimit => SolveStatus::BoundLimit,
        other => return Err(Error::Backend(format!("highs stopped with status {other:?}"))),
    };
    let values: Vec<bool> = solved.get_solution().columns().iter().map(|&x| x > 0.5).collect();
    if values.len() != n || !problem.is_feasible(&values) {
        return match status {
            SolveStatus::BoundLimit => Err(Error::Timeout),
            SolveStatus::Optimal => Err(Error::Backend("highs returned an infeasible selection".into())),
        };
    }
    log::debug!("highs: {n} variables in {:?}, {status:?}", start.elapsed());
    Ok(Solution {
        objective: problem.objective_value(&values),
        values,
        status,
    })
}

fn solve_command(problem: &IlpProblem, program: &str, args: &[String]) -> Result<Solution> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let lp = dir.path().join("problem.lp");
    let sol = dir.path().join("problem.sol");
    problem.write_lp(&lp)?;
    let args: Vec<String> = args
        .iter()
        .map(|a| a.replace("{lp}", &lp.to_string_lossy()).replace("{solution}", &sol.to_string_lossy()))
        .collect();
    let out = Command::new(program).args(&args).output().map_err(|e| Error::io(program, e))?;
    if !out.status.success() {
        return Err(Error::Backend(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    read_solution(problem, &sol)
}
