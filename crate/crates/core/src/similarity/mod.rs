//! Task similarity as mutual information between Bernoulli optimality
//! variables, estimated by plug-in counting over a population.

mod constraints;
mod table;

pub use constraints::{
    constraints_from_csv, constraints_to_csv, gen_constraints, load_constraints, save_constraints,
    ConstraintConfig, ConstraintSet, PairConstraint, TripletConstraint,
};
pub use table::OutcomeTable;

use crate::envs::Task;
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, Rng};
use crate::population::AgentPool;
use rayon::prelude::*;

/// Entropy in nats of a Bernoulli(p) variable.
pub fn bernoulli_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    Ok(hb(p))
}

pub(crate) fn hb(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// The four counters of the estimator, over `n` paired samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MiCounts {
    pub n: u64,
    /// Samples where task i was solved.
    pub n_i: u64,
    /// Samples where task j was solved.
    pub n_j: u64,
    /// Both solved.
    pub n_ij1: u64,
    /// Task i solved, task j failed.
    pub n_ij0: u64,
}

impl MiCounts {
    pub fn push(&mut self, oi: bool, oj: bool) {
        self.n += 1;
        self.n_i += u64::from(oi);
        self.n_j += u64::from(oj);
        self.n_ij1 += u64::from(oi && oj);
        self.n_ij0 += u64::from(oi && !oj);
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            n: self.n + o.n,
            n_i: self.n_i + o.n_i,
            n_j: self.n_j + o.n_j,
            n_ij1: self.n_ij1 + o.n_ij1,
            n_ij0: self.n_ij0 + o.n_ij0,
        }
    }

    /// The same samples with the roles of i and j exchanged.
    pub fn swapped(self) -> Self {
        Self {
            n: self.n,
            n_i: self.n_j,
            n_j: self.n_i,
            n_ij1: self.n_ij1,
            n_ij0: self.n_j - self.n_ij1,
        }
    }

    /// `H(n_i/N) − (n_j/N)·H(n_ij1/n_j) − (1 − n_j/N)·H(n_ij0/(N − n_j))`;
    /// conditional terms with an empty conditioning event are 0.
    pub fn value(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let pj = self.n_j as f64 / n;
        let cond1 = if self.n_j == 0 {
            0.0
        } else {
            pj * hb(self.n_ij1 as f64 / self.n_j as f64)
        };
        let rest = self.n - self.n_j;
        let cond0 = if rest == 0 {
            0.0
        } else {
            (1.0 - pj) * hb(self.n_ij0 as f64 / rest as f64)
        };
        hb(self.n_i as f64 / n) - cond1 - cond0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub value: f64,
    pub counts: MiCounts,
}

impl From<MiCounts> for MiEstimate {
    fn from(counts: MiCounts) -> Self {
        Self {
            value: counts.value(),
            counts,
        }
    }
}

const SAMPLE_CHUNK: usize = 256;

/// Draws `n` agents uniformly from `pool`; each rolls out once from `s_i` and
/// once from `s_j`. Chunks of samples run in parallel with seeds derived from
/// one draw of `rng`, so results do not depend on the thread count.
pub fn estimate_mi<P: AgentPool + ?Sized>(s_i: &Task, s_j: &Task, pool: &P, n: usize, rng: &mut Rng) -> Result<MiEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("estimate_mi needs at least one sample".into()));
    }
    for t in [s_i, s_j] {
        if t.env != pool.env() {
            return Err(Error::EnvMismatch {
                expected: pool.env().name().into(),
                got: t.env.name().into(),
            });
        }
    }
    let root = rng.next_seed();
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<MiCounts> {
            let mut rng = Rng::new(derive_seed(root, &[c as u64]));
            let mut acc = MiCounts::default();
            let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            for _ in 0..len {
                let agent = rng.index(pool.num_agents());
                let oi = pool.attempt(agent, s_i, &mut rng)?;
                let oj = pool.attempt(agent, s_j, &mut rng)?;
                acc.push(oi, oj);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(MiCounts::default(), MiCounts::merge);
    Ok(counts.into())
}

#[cfg(test)]
pub(crate) mod testing {
    //! Synthetic populations whose outcome distributions are known exactly.
    use crate::envs::{EnvId, Task};
    use crate::error::Result;
    use crate::numcore::Rng;
    use crate::population::AgentPool;

    /// Agent `k` solves task `t` with probability `probs[k][key(t)]`, where
    /// `key` reads the task's location coordinate as an index.
    pub struct TablePool {
        pub probs: Vec<Vec<f64>>,
    }

    pub fn task(k: usize) -> Task {
        let mut s = vec![0.0; 7];
        s[0] = k as f64 / 100.0;
        Task::new(EnvId::MULTI_KEY_NAV, s).unwrap()
    }

    fn key(t: &Task) -> usize {
        (t.state0[0] * 100.0).round() as usize
    }

    impl AgentPool for TablePool {
        fn env(&self) -> EnvId {
            EnvId::MULTI_KEY_NAV
        }
        fn num_agents(&self) -> usize {
            self.probs.len()
        }
        fn attempt(&self, agent: usize, t: &Task, rng: &mut Rng) -> Result<bool> {
            Ok(rng.bernoulli(self.probs[agent][key(t)]))
        }
    }

    /// Exact MI of the joint distribution the pool induces on two tasks.
    pub fn exact_mi(pool: &TablePool, i: usize, j: usize) -> f64 {
        let a = pool.probs.len() as f64;
        let mut joint = [[0.0; 2]; 2];
        for p in &pool.probs {
            let (pi, pj) = (p[i], p[j]);
            joint[1][1] += pi * pj / a;
            joint[1][0] += pi * (1.0 - pj) / a;
            joint[0][1] += (1.0 - pi) * pj / a;
            joint[0][0] += (1.0 - pi) * (1.0 - pj) / a;
        }
        let mut mi = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                let pxy: f64 = joint[x][y];
                let px = joint[x][0] + joint[x][1];
                let py = joint[0][y] + joint[1][y];
                if pxy > 0.0 {
                    mi += pxy * (pxy / (px * py)).ln();
                }
            }
        }
        mi
    }
}
