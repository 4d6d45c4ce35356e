//! Ordinal constraints: MI triplets and difficulty pairs over a task pool.
//!
//! Task references are row indices into the pool the outcome table was
//! built from. Files are CSV with header `kind,task1,task2,task3,label,est1,est2`;
//! pair rows leave `task3` empty.

use super::OutcomeTable;
use crate::error::{Error, Result};
use crate::numcore::Rng;
use std::fmt::Write as _;
use std::path::Path;

/// `label` is true iff Î(s1; s2) > Î(s1; s3). `est` holds both estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletConstraint {
    pub tasks: [usize; 3],
    pub label: bool,
    pub est: [f64; 2],
}

/// `label` is true iff PoS(s4) > PoS(s5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConstraint {
    pub tasks: [usize; 2],
    pub label: bool,
    pub est: [f64; 2],
}

impl TripletConstraint {
    /// (anchor, more similar, less similar)
    pub fn ordered(&self) -> [usize; 3] {
        let [a, b, c] = self.tasks;
        if self.label {
            [a, b, c]
        } else {
            [a, c, b]
        }
    }
}

impl PairConstraint {
    /// (easier, harder)
    pub fn ordered(&self) -> [usize; 2] {
        let [a, b] = self.tasks;
        if self.label {
            [a, b]
        } else {
            [b, a]
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub triplets: Vec<TripletConstraint>,
    pub pairs: Vec<PairConstraint>,
}

impl ConstraintSet {
    pub fn max_task_index(&self) -> Option<usize> {
        self.triplets
            .iter()
            .flat_map(|t| t.tasks)
            .chain(self.pairs.iter().flat_map(|p| p.tasks))
            .max()
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintConfig {
    pub triplets: usize,
    pub pairs: usize,
    /// Repetitions per agent behind each PoS estimate.
    pub pos_reps: usize,
    /// Discard triplets with |Î_12 − Î_13| below this.
    pub drop_ties: Option<f64>,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            triplets: 5000,
            pairs: 5000,
            pos_reps: 10,
            drop_ties: None,
        }
    }
}

const MAX_TIE_REDRAWS: u64 = 1_000_000;

/// Samples task indices i.i.d. from the table's pool and labels them from
/// its shared outcomes. Exact MI ties fall to the (s1, s3) direction.
pub fn gen_constraints(table: &OutcomeTable, cfg: &ConstraintConfig, rng: &mut Rng) -> Result<ConstraintSet> {
    let n = table.num_tasks();
    if n == 0 {
        return Err(Error::InvalidArgument("constraint generation needs a non-empty task pool".into()));
    }
    if cfg.pos_reps == 0 {
        return Err(Error::InvalidArgument("pos_reps must be at least 1".into()));
    }
    let mut triplets = Vec::with_capacity(cfg.triplets);
    let mut redraws = 0u64;
    while triplets.len() < cfg.triplets {
        let tasks = [rng.index(n), rng.index(n), rng.index(n)];
        let est = [table.mi(tasks[0], tasks[1])?, table.mi(tasks[0], tasks[2])?];
        if let Some(eps) = cfg.drop_ties {
            if (est[0] - est[1]).abs() < eps {
                redraws += 1;
                if redraws > MAX_TIE_REDRAWS {
                    return Err(Error::FilterExhausted(MAX_TIE_REDRAWS));
                }
                continue;
            }
        }
        triplets.push(TripletConstraint {
            tasks,
            label: est[0] > est[1],
            est,
        });
    }
    let mut pairs = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let tasks = [rng.index(n), rng.index(n)];
        let est = [
            table.pos_with(tasks[0], None, cfg.pos_reps)?,
            table.pos_with(tasks[1], None, cfg.pos_reps)?,
        ];
        pairs.push(PairConstraint {
            tasks,
            label: est[0] > est[1],
            est,
        });
    }
    Ok(ConstraintSet { triplets, pairs })
}

pub const HEADER: &str = "kind,task1,task2,task3,label,est1,est2";

pub fn constraints_to_csv(set: &ConstraintSet) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for t in &set.triplets {
        let [a, b, c] = t.tasks;
        let _ = writeln!(out, "triplet,{a},{b},{c},{},{:?},{:?}", u8::from(t.label), t.est[0], t.est[1]);
    }
    for p in &set.pairs {
        let [a, b] = p.tasks;
        let _ = writeln!(out, "pair,{a},{b},,{},{:?},{:?}", u8::from(p.label), p.est[0], p.est[1]);
    }
    out
}

pub fn constraints_from_csv(text: &str) -> Result<ConstraintSet> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(Error::Parse(format!("constraint file must start with '{HEADER}'"))),
    }
    let mut set = ConstraintSet::default();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what}", i + 1));
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let idx = |c: &str| c.parse::<usize>().map_err(|_| bad(&format!("bad task index '{c}'")));
        let est = |c: &str| c.parse::<f64>().map_err(|_| bad(&format!("bad estimate '{c}'")));
        let label = match cells[4] {
            "0" => false,
            "1" => true,
            c => return Err(bad(&format!("label must be 0 or 1, got '{c}'"))),
        };
        let est = [est(cells[5])?, est(cells[6])?];
        match cells[0] {
            "triplet" => set.triplets.push(TripletConstraint {
                tasks: [idx(cells[1])?, idx(cells[2])?, idx(cells[3])?],
                label,
                est,
            }),
            "pair" => {
                if !cells[3].is_empty() {
                    return Err(bad("pair rows leave task3 empty"));
                }
                set.pairs.push(PairConstraint {
                    tasks: [idx(cells[1])?, idx(cells[2])?],
                    label,
                    est,
                })
            }
            k => return Err(bad(&format!("unknown kind '{k}'"))),
        }
    }
    Ok(set)
}

pub fn save_constraints(path: &Path, set: &ConstraintSet) -> Result<()> {
    std::fs::write(path, constraints_to_csv(set))?;
    Ok(())
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSet> {
    constraints_from_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;

    fn table() -> OutcomeTable {
        // tasks 0,1 correlated through agent identity, task 2 a coin, task 3 trivial
        let pool = TablePool {
            probs: vec![
                vec![1.0, 0.9, 0.5, 1.0],
                vec![0.0, 0.1, 0.5, 1.0],
                vec![1.0, 1.0, 0.5, 1.0],
                vec![0.0, 0.0, 0.5, 1.0],
            ],
        };
        OutcomeTable::build(&(0..4).map(task).collect::<Vec<_>>(), &pool, 50, 3).unwrap()
    }

    #[test]
    fn requested_counts_returned() {
        let cfg = ConstraintConfig {
            triplets: 500,
            pairs: 300,
            ..ConstraintConfig::default()
        };
        let set = gen_constraints(&table(), &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(set.triplets.len(), 500);
        assert_eq!(set.pairs.len(), 300);
        for t in &set.triplets {
            assert_eq!(t.label, t.est[0] > t.est[1]);
        }
    }

    #[test]
    fn labels_flip_under_swap() {
        let tb = table();
        let (a, b, c) = (0, 1, 2);
        let fwd = tb.mi(a, b).unwrap() > tb.mi(a, c).unwrap();
        let back = tb.mi(a, c).unwrap() > tb.mi(a, b).unwrap();
        assert_ne!(tb.mi(a, b).unwrap(), tb.mi(a, c).unwrap());
        assert_ne!(fwd, back);
        assert!(fwd, "correlated pair must be more similar than the coin");
    }

    #[test]
    fn trivial_task_is_easier() {
        let tb = table();
        assert_eq!(tb.pos(3).unwrap(), 1.0);
        assert!(tb.pos(3).unwrap() > tb.pos(2).unwrap());
    }

    #[test]
    fn drop_ties_removes_near_equal() {
        let cfg = ConstraintConfig {
            triplets: 200,
            pairs: 0,
            drop_ties: Some(1e-3),
            ..ConstraintConfig::default()
        };
        let set = gen_constraints(&table(), &cfg, &mut Rng::new(2)).unwrap();
        assert!(set.triplets.iter().all(|t| (t.est[0] - t.est[1]).abs() >= 1e-3));
        // every triplet with s2 = s3 is an exact tie
        assert!(set.triplets.iter().all(|t| t.tasks[1] != t.tasks[2]));
    }

    #[test]
    fn csv_round_trip() {
        let cfg = ConstraintConfig {
            triplets: 50,
            pairs: 40,
            ..ConstraintConfig::default()
        };
        let set = gen_constraints(&table(), &cfg, &mut Rng::new(3)).unwrap();
        let text = constraints_to_csv(&set);
        assert!(text.starts_with("kind,task1,task2,task3,label,est1,est2\n"));
        assert_eq!(constraints_from_csv(&text).unwrap(), set);
    }

    #[test]
    fn malformed_rows_rejected() {
        for body in [
            "triplet,1,2,3,2,0.1,0.2",
            "pair,1,2,3,1,0.1,0.2",
            "triplet,1,2,3,1,0.1",
            "quad,1,2,3,1,0.1,0.2",
            "triplet,-1,2,3,1,0.1,0.2",
        ] {
            assert!(constraints_from_csv(&format!("{HEADER}\n{body}\n")).is_err(), "{body}");
        }
        assert!(constraints_from_csv("nope\n").is_err());
    }
}
