//! Shared outcome tables: every agent attempts every task `reps` times, and
//! the outcomes are stored as bitsets so that MI and PoS for any pair of
//! tasks are popcounts over the same paired samples.
//!
//! Sample `(agent, rep)` of one task is paired with sample `(agent, rep)` of
//! another, which is the estimator's draw-θ-then-roll-out-both scheme with
//! agents stratified instead of drawn uniformly.

use super::MiCounts;
use crate::envs::Task;
use crate::error::{Error, Result};
use crate::numcore::Rng;
use crate::population::AgentPool;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct OutcomeTable {
    agents: usize,
    reps: usize,
    words: usize,
    /// `bits[task][agent * words + w]`
    bits: Vec<Vec<u64>>,
}

impl OutcomeTable {
    /// Rollout seeds derive from `(seed, task_key, agent)`, where `task_key`
    /// is the task's position in `tasks` offset by `first_key`.
    pub fn build<P: AgentPool + ?Sized>(tasks: &[Task], pool: &P, reps: usize, seed: u64) -> Result<Self> {
        Self::build_keyed(tasks, 0, pool, reps, seed)
    }

    fn build_keyed<P: AgentPool + ?Sized>(tasks: &[Task], first_key: usize, pool: &P, reps: usize, seed: u64) -> Result<Self> {
        if reps == 0 {
            return Err(Error::InvalidArgument("outcome table needs at least one repetition".into()));
        }
        let agents = pool.num_agents();
        let words = reps.div_ceil(64);
        for t in tasks {
            if t.env != pool.env() {
                return Err(Error::EnvMismatch {
                    expected: pool.env().name().into(),
                    got: t.env.name().into(),
                });
            }
        }
        let cells: Vec<(usize, usize)> = (0..tasks.len())
            .flat_map(|t| (0..agents).map(move |a| (t, a)))
            .collect();
        let filled = cells
            .par_iter()
            .map(|&(t, a)| -> Result<Vec<u64>> {
                let mut rng = Rng::derived(seed, &[(first_key + t) as u64, a as u64]);
                let mut w = vec![0u64; words];
                for r in 0..reps {
                    if pool.attempt(a, &tasks[t], &mut rng)? {
                        w[r / 64] |= 1 << (r % 64);
                    }
                }
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut bits = vec![Vec::with_capacity(agents * words); tasks.len()];
        for ((t, _), w) in cells.iter().zip(filled) {
            bits[*t].extend(w);
        }
        Ok(Self {
            agents,
            reps,
            words,
            bits,
        })
    }

    /// Appends rows for more tasks, seeded as if they had been part of the
    /// original `build` call.
    pub fn extend<P: AgentPool + ?Sized>(&mut self, tasks: &[Task], pool: &P, seed: u64) -> Result<()> {
        if pool.num_agents() != self.agents {
            return Err(Error::Shape("pool size differs from the table's".into()));
        }
        let more = Self::build_keyed(tasks, self.bits.len(), pool, self.reps, seed)?;
        self.bits.extend(more.bits);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.bits.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    fn row(&self, task: usize, agent: usize) -> &[u64] {
        &self.bits[task][agent * self.words..(agent + 1) * self.words]
    }

    /// Masks off bits at or beyond `reps` in word `w`.
    fn word_mask(&self, reps: usize, w: usize) -> u64 {
        let lo = w * 64;
        if reps >= lo + 64 {
            u64::MAX
        } else if reps <= lo {
            0
        } else {
            (1u64 << (reps - lo)) - 1
        }
    }

    fn check_task(&self, t: usize) -> Result<()> {
        if t >= self.bits.len() {
            return Err(Error::InvalidArgument(format!(
                "task {t} out of range for a table of {}",
                self.bits.len()
            )));
        }
        Ok(())
    }

    fn agents_iter<'a>(&self, agents: Option<&'a [usize]>) -> Box<dyn Iterator<Item = usize> + 'a> {
        match agents {
            Some(a) => Box::new(a.iter().copied()),
            None => Box::new(0..self.agents),
        }
    }

    /// Counts over the first `reps` repetitions of the chosen agents (all
    /// agents when `agents` is `None`).
    pub fn counts(&self, i: usize, j: usize, agents: Option<&[usize]>, reps: usize) -> Result<MiCounts> {
        self.check_task(i)?;
        self.check_task(j)?;
        let reps = reps.min(self.reps);
        let mut c = MiCounts::default();
        for a in self.agents_iter(agents) {
            if a >= self.agents {
                return Err(Error::InvalidArgument(format!("agent {a} out of range")));
            }
            let (ri, rj) = (self.row(i, a), self.row(j, a));
            for w in 0..self.words {
                let m = self.word_mask(reps, w);
                let (x, y) = (ri[w] & m, rj[w] & m);
                c.n_i += u64::from(x.count_ones());
                c.n_j += u64::from(y.count_ones());
                c.n_ij1 += u64::from((x & y).count_ones());
                c.n_ij0 += u64::from((x & !y).count_ones());
            }
            c.n += reps as u64;
        }
        Ok(c)
    }

    pub fn mi(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.counts(i, j, None, self.reps)?.value())
    }

    pub fn mi_over(&self, i: usize, j: usize, agents: &[usize]) -> Result<f64> {
        Ok(self.counts(i, j, Some(agents), self.reps)?.value())
    }

    /// Success rate over the first `reps` repetitions of the chosen agents.
    pub fn pos_with(&self, i: usize, agents: Option<&[usize]>, reps: usize) -> Result<f64> {
        let c = self.counts(i, i, agents, reps)?;
        if c.n == 0 {
            return Err(Error::InvalidArgument("no samples selected".into()));
        }
        Ok(c.n_i as f64 / c.n as f64)
    }

    pub fn pos(&self, i: usize) -> Result<f64> {
        self.pos_with(i, None, self.reps)
    }

    /// Success rate of one agent on task `i` over all repetitions.
    pub fn agent_pos(&self, i: usize, agent: usize) -> Result<f64> {
        self.pos_with(i, Some(&[agent]), self.reps)
    }

    /// Outcome of repetition `rep` of `agent` on task `i`.
    pub fn outcome(&self, i: usize, agent: usize, rep: usize) -> bool {
        self.row(i, agent)[rep / 64] >> (rep % 64) & 1 == 1
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use proptest::prelude::*;

    fn pool() -> TablePool {
        TablePool {
            probs: vec![
                vec![0.9, 0.8, 0.1, 0.5],
                vec![0.2, 0.3, 0.9, 0.5],
                vec![1.0, 0.0, 0.5, 0.5],
            ],
        }
    }

    fn tasks() -> Vec<Task> {
        (0..4).map(task).collect()
    }

    #[test]
    fn counts_match_explicit_loop() {
        let p = pool();
        let t = OutcomeTable::build(&tasks(), &p, 70, 9).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut c = MiCounts::default();
                for a in 0..3 {
                    for r in 0..70 {
                        c.push(t.outcome(i, a, r), t.outcome(j, a, r));
                    }
                }
                assert_eq!(t.counts(i, j, None, 70).unwrap(), c);
            }
        }
        let mut c = MiCounts::default();
        for r in 0..10 {
            c.push(t.outcome(0, 1, r), t.outcome(2, 1, r));
        }
        assert_eq!(t.counts(0, 2, Some(&[1]), 10).unwrap(), c);
    }

    #[test]
    fn symmetric_nonnegative_and_self_maximal() {
        let p = pool();
        let t = OutcomeTable::build(&tasks(), &p, 100, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (t.mi(i, j).unwrap(), t.mi(j, i).unwrap());
                assert!((a - b).abs() < 1e-12);
                assert!(a >= -1e-12);
                assert!(t.mi(i, i).unwrap() >= a - 0.02);
            }
        }
    }

    #[test]
    fn matches_exact_mi_on_deterministic_pool() {
        let p = TablePool {
            probs: vec![
                vec![1.0, 1.0, 0.0],
                vec![1.0, 0.0, 1.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 1.0, 1.0],
            ],
        };
        let t = OutcomeTable::build(&(0..3).map(task).collect::<Vec<_>>(), &p, 10, 2).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((t.mi(i, j).unwrap() - exact_mi(&p, i, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn extend_matches_single_build() {
        let p = pool();
        let all = tasks();
        let whole = OutcomeTable::build(&all, &p, 20, 5).unwrap();
        let mut part = OutcomeTable::build(&all[..2], &p, 20, 5).unwrap();
        part.extend(&all[2..], &p, 5).unwrap();
        assert_eq!(whole.bits, part.bits);
    }

    #[test]
    fn out_of_range_rejected() {
        let t = OutcomeTable::build(&tasks(), &pool(), 4, 0).unwrap();
        assert!(t.mi(0, 9).is_err());
        assert!(t.mi_over(0, 1, &[7]).is_err());
        assert!(OutcomeTable::build(&tasks(), &pool(), 0, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn mi_properties_hold_on_random_pools(
            probs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..5),
            seed in any::<u64>(),
        ) {
            let p = TablePool { probs };
            let t = OutcomeTable::build(&(0..3).map(task).collect::<Vec<_>>(), &p, 30, seed).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let v = t.mi(i, j).unwrap();
                    prop_assert!(v >= -1e-12);
                    prop_assert!((v - t.mi(j, i).unwrap()).abs() < 1e-12);
                    let pos = t.pos(i).unwrap();
                    prop_assert!((0.0..=1.0).contains(&pos));
                }
            }
        }
    }
}
