//! Task CSV files: header `env,<state columns>`, one task per row.

use super::{EnvId, Task};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub fn header(env: EnvId) -> String {
    let mut h = String::from("env");
    for c in env.state_columns() {
        h.push(',');
        h.push_str(c);
    }
    h
}

pub fn write_row(out: &mut String, task: &Task) {
    out.push_str(task.env.name());
    for v in &task.state0 {
        let _ = write!(out, ",{v:?}");
    }
    out.push('\n');
}

pub fn tasks_to_csv(env: EnvId, tasks: &[Task]) -> String {
    let mut out = header(env);
    out.push('\n');
    for t in tasks {
        write_row(&mut out, t);
    }
    out
}

/// Parses `env,v1,..,vk` cells starting at `cells[0]`.
pub fn parse_task_cells(cells: &[&str], line: usize) -> Result<Task> {
    let env: EnvId = cells
        .first()
        .ok_or_else(|| Error::Parse(format!("line {line}: empty row")))?
        .parse()?;
    let dim = env.state_dim();
    if cells.len() < dim + 1 {
        return Err(Error::Parse(format!(
            "line {line}: {} needs {dim} state columns, found {}",
            env.name(),
            cells.len() - 1
        )));
    }
    let state0 = cells[1..=dim]
        .iter()
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {line}: bad value '{c}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Task::new(env, state0).map_err(|e| Error::Parse(format!("line {line}: {e}")))
}

pub fn tasks_from_csv(text: &str) -> Result<Vec<Task>> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty task file".into()))?;
    if !head.starts_with("env,") {
        return Err(Error::Parse("task file header must start with 'env,'".into()));
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cells: Vec<&str> = l.split(',').collect();
            parse_task_cells(&cells, i + 1)
        })
        .collect()
}

pub fn save_tasks(path: &Path, env: EnvId, tasks: &[Task]) -> Result<()> {
    std::fs::write(path, tasks_to_csv(env, tasks))?;
    Ok(())
}

pub fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    tasks_from_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::sample_tasks;
    use crate::numcore::Rng;

    #[test]
    fn round_trip_every_env() {
        let mut rng = Rng::new(4);
        for env in [EnvId::MULTI_KEY_NAV, EnvId::CartPoleVar, EnvId::PointMass] {
            let tasks = sample_tasks(env, 25, &mut rng, None).unwrap();
            let csv = tasks_to_csv(env, &tasks);
            assert!(csv.starts_with(&header(env)));
            assert_eq!(tasks_from_csv(&csv).unwrap(), tasks);
        }
    }

    #[test]
    fn invalid_rows_rejected() {
        let bad = "env,location,key_a,key_b,key_c,key_d,door_bit1,door_bit2\nmultikeynav,1.5,0,0,0,0,0,0\n";
        assert!(tasks_from_csv(bad).is_err());
        let short = "env,x\ncartpolevar,0.0\n";
        assert!(tasks_from_csv(short).is_err());
    }
}
