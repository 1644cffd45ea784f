//! Population metaheuristics over box-bounded continuous spaces.
//!
//! Fitness is minimized. Every random draw comes from a ChaCha8 stream keyed
//! by `(iteration, candidate)`, so runs are reproducible no matter how the
//! fitness evaluations are scheduled.

mod fox;
mod hyper;
mod igwo;
mod mgto;
mod tune;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

pub use fox::{fox_distance, fox_exploit, fox_jump, fox_step, min_mean_time};
pub use hyper::{HyperSpace, Hyperparams, DIM};
pub use igwo::{
    cosine_control, igwo_leader_target, igwo_step, linear_control, rescale_control, tent_init, tent_map,
    TentSequence,
};
pub use mgto::{cicd_inverse, eobl, mgto_step, tfo};
pub use tune::{tune, validation_report, TuneConfig, TuneResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
    integer: Vec<bool>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        Self::with_integer(lower, upper, vec![false; n])
    }

    pub fn with_integer(lower: Vec<f64>, upper: Vec<f64>, integer: Vec<bool>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != integer.len() {
            return Err(Error::contract("bounds need matching, nonempty lower/upper/integer vectors"));
        }
        for (d, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::contract(format!("dimension {d}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper, integer })
    }

    /// The same interval on every one of `dim` axes.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn integer(&self) -> &[bool] {
        &self.integer
    }

    pub fn span(&self, d: usize) -> f64 {
        self.upper[d] - self.lower[d]
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            // NaN would survive f64::clamp; pin it to the lower bound.
            *v = if v.is_nan() { *l } else { v.clamp(*l, *u) };
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *l <= *v && *v <= *u)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim())
            .map(|d| self.lower[d] + self.span(d) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub position: Vec<f64>,
    pub fitness: f64,
    /// Index of the RNG stream family this candidate draws from.
    pub stream: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Igwo,
    Fox,
    Mgto,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Igwo, Algorithm::Fox, Algorithm::Mgto];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Igwo => "igwo",
            Algorithm::Fox => "fox",
            Algorithm::Mgto => "mgto",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::domain(format!("unknown algorithm `{s}` (expected igwo, fox or mgto)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerParams {
    pub algorithm: Algorithm,
    pub pop_size: usize,
    pub max_iter: usize,
    /// mGTO probability of a random restart.
    #[serde(default = "defaults::pp")]
    pub pp: f64,
    /// FOX jump coefficients.
    #[serde(default = "defaults::c1")]
    pub c1: f64,
    #[serde(default = "defaults::c2")]
    pub c2: f64,
    /// IGWO control-factor range.
    #[serde(default = "defaults::a_min")]
    pub a_min: f64,
    #[serde(default = "defaults::a_max")]
    pub a_max: f64,
}

mod defaults {
    pub fn pp() -> f64 {
        0.02
    }
    pub fn c1() -> f64 {
        0.19
    }
    pub fn c2() -> f64 {
        0.80
    }
    pub fn a_min() -> f64 {
        0.02
    }
    pub fn a_max() -> f64 {
        2.3
    }
}

impl OptimizerParams {
    pub fn new(algorithm: Algorithm, pop_size: usize, max_iter: usize) -> Self {
        Self {
            algorithm,
            pop_size,
            max_iter,
            pp: defaults::pp(),
            c1: defaults::c1(),
            c2: defaults::c2(),
            a_min: defaults::a_min(),
            a_max: defaults::a_max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size == 0 {
            return Err(Error::contract("population size must be positive"));
        }
        for (name, v) in [("pp", self.pp), ("c1", self.c1), ("c2", self.c2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.a_min >= 0.0 && self.a_min < self.a_max && self.a_max.is_finite()) {
            return Err(Error::contract(format!(
                "need 0 <= a_min < a_max, got {} and {}",
                self.a_min, self.a_max
            )));
        }
        Ok(())
    }
}

/// Stream index used for population-level draws within an iteration.
pub const LEADER_STREAM: u32 = u32::MAX;

/// Shared state of one run, handed to every step function.
pub struct StepContext<'a, F> {
    pub bounds: &'a Bounds,
    pub params: &'a OptimizerParams,
    objective: &'a F,
    seed: u64,
    exec: Execution,
}

impl<'a, F> StepContext<'a, F>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    pub fn new(bounds: &'a Bounds, params: &'a OptimizerParams, objective: &'a F, seed: u64, exec: Execution) -> Self {
        Self {
            bounds,
            params,
            objective,
            seed,
            exec,
        }
    }

    /// The RNG of candidate `stream` at iteration `t`.
    pub fn rng(&self, t: usize, stream: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((t as u64) << 32) | u64::from(stream));
        rng
    }

    /// Fitness of each position, computed concurrently, in input order.
    pub fn evaluate(&self, positions: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.exec
            .map(positions, |x| {
                let f = (self.objective)(x)?;
                if f.is_nan() {
                    Err(Error::domain(format!("objective returned NaN at {x:?}")))
                } else {
                    Ok(f)
                }
            })
            .into_iter()
            .collect()
    }

    /// Clamps, evaluates and wraps positions as candidates `0..n`.
    pub fn candidates(&self, mut positions: Vec<Vec<f64>>) -> Result<Vec<Candidate>> {
        positions.iter_mut().for_each(|x| self.bounds.clamp(x));
        let fitness = self.evaluate(&positions)?;
        Ok(positions
            .into_iter()
            .zip(fitness)
            .enumerate()
            .map(|(i, (position, fitness))| Candidate {
                position,
                fitness,
                stream: i as u32,
            })
            .collect())
    }
}

/// Index of the fittest candidate; ties go to the lowest index.
pub fn best_index(pop: &[Candidate]) -> usize {
    let mut best = 0;
    for (i, c) in pop.iter().enumerate().skip(1) {
        if c.fitness < pop[best].fitness {
            best = i;
        }
    }
    best
}

/// Indices sorted by fitness, stable on ties.
pub fn ranking(pop: &[Candidate]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pop.len()).collect();
    idx.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness));
    idx
}

/// Keeps the previous best alive: if no new candidate beats it, it takes the
/// place of the worst newcomer.
pub(crate) fn retain_elite(previous: &[Candidate], next: &mut [Candidate]) {
    let old = &previous[best_index(previous)];
    if next[best_index(next)].fitness > old.fitness {
        let worst = *ranking(next).last().expect("nonempty");
        let stream = next[worst].stream;
        next[worst] = Candidate {
            stream,
            ..old.clone()
        };
    }
}

pub(crate) fn check_population(pop: &[Candidate]) -> Result<()> {
    if pop.is_empty() {
        Err(Error::contract("population is empty"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Best fitness seen up to and including this iteration.
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Candidate,
    /// Row 0 is the initial population, row `t` follows step `t`.
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

impl SearchResult {
    pub fn write_trace_csv(&self, out: impl Write) -> Result<()> {
        write_trace_csv(&self.trace, out)
    }
}

pub fn write_trace_csv(trace: &[TraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "best_fitness", "mean_fitness"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            r.best_fitness.to_string(),
            r.mean_fitness.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A configured run. `warm_start` positions replace the first random
/// initial candidates.
#[derive(Debug, Clone)]
pub struct Search {
    pub bounds: Bounds,
    pub params: OptimizerParams,
    pub seed: u64,
    pub exec: Execution,
    pub warm_start: Vec<Vec<f64>>,
}

impl Search {
    pub fn new(bounds: Bounds, params: OptimizerParams, seed: u64) -> Self {
        Self {
            bounds,
            params,
            seed,
            exec: Execution::default(),
            warm_start: Vec::new(),
        }
    }

    pub fn run<F>(&self, objective: F) -> Result<SearchResult>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        self.run_observed(objective, |_, _| {})
    }

    /// Like [`Search::run`], calling `observe(t, population)` after
    /// initialization (`t = 0`) and after every step.
    pub fn run_observed<F, O>(&self, objective: F, mut observe: O) -> Result<SearchResult>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
        O: FnMut(usize, &[Candidate]),
    {
        self.params.validate()?;
        if self.warm_start.len() > self.params.pop_size {
            return Err(Error::contract("more warm-start positions than population slots"));
        }
        if let Some(bad) = self.warm_start.iter().find(|x| !self.bounds.contains(x)) {
            return Err(Error::contract(format!("warm-start position {bad:?} lies outside the bounds")));
        }
        let ctx = StepContext::new(&self.bounds, &self.params, &objective, self.seed, self.exec);
        let n = self.params.pop_size;
        let mut positions: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = ctx.rng(0, i as u32);
                match self.params.algorithm {
                    Algorithm::Igwo => tent_init(&self.bounds, &mut rng),
                    _ => self.bounds.sample(&mut rng),
                }
            })
            .collect();
        for (slot, w) in positions.iter_mut().zip(&self.warm_start) {
            slot.clone_from(w);
        }
        let mut pop = ctx.candidates(positions)?;
        let mut evaluations = n;
        let mut best = pop[best_index(&pop)].clone();
        let mut trace = vec![row(0, &best, &pop)];
        observe(0, &pop);

        let max_iter = self.params.max_iter;
        for t in 0..max_iter {
            let step = match self.params.algorithm {
                Algorithm::Igwo => igwo_step(&pop, t, &ctx)?,
                Algorithm::Fox => fox_step(&pop, t, &ctx)?,
                Algorithm::Mgto => mgto_step(&pop, t, &ctx)?,
            };
            evaluations += step.evaluations;
            pop = step.population;
            let i = best_index(&pop);
            if pop[i].fitness < best.fitness {
                best = pop[i].clone();
            }
            trace.push(row(t + 1, &best, &pop));
            observe(t + 1, &pop);
        }
        Ok(SearchResult {
            best,
            trace,
            evaluations,
        })
    }
}

/// Output of one step function.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub population: Vec<Candidate>,
    pub evaluations: usize,
}

fn row(iteration: usize, best: &Candidate, pop: &[Candidate]) -> TraceRow {
    TraceRow {
        iteration,
        best_fitness: best.fitness,
        mean_fitness: pop.iter().map(|c| c.fitness).sum::<f64>() / pop.len() as f64,
    }
}

/// Minimizes `objective` over `bounds` with the parallel executor.
pub fn optimize<F>(objective: F, bounds: &Bounds, params: &OptimizerParams, seed: u64) -> Result<SearchResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    Search::new(bounds.clone(), *params, seed).run(objective)
}

/// `Σ xᵢ²`.
pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_obj(x: &[f64]) -> Result<f64> {
        Ok(sphere(x))
    }

    #[test]
    fn bounds_validate_and_clamp() {
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![0.0, 0.0], vec![1.0]).is_err());
        let b = Bounds::uniform(3, -1.0, 1.0).unwrap();
        let mut x = vec![-3.0, 0.5, f64::NAN];
        b.clamp(&mut x);
        assert_eq!(x, vec![-1.0, 0.5, -1.0]);
        assert!(b.contains(&x));
    }

    #[test]
    fn constant_objective_best_at_iteration_zero() {
        for algorithm in Algorithm::ALL {
            let b = Bounds::uniform(2, -1.0, 1.0).unwrap();
            let r = optimize(|_: &[f64]| Ok(7.5), &b, &OptimizerParams::new(algorithm, 5, 4), 1).unwrap();
            assert_eq!(r.trace[0].best_fitness, 7.5);
            assert_eq!(r.best.fitness, 7.5);
            assert_eq!(r.trace.len(), 5);
        }
    }

    #[test]
    fn empty_population_rejected() {
        let b = Bounds::uniform(2, -1.0, 1.0).unwrap();
        assert!(optimize(sphere_obj, &b, &OptimizerParams::new(Algorithm::Fox, 0, 3), 0).is_err());
    }

    #[test]
    fn parallel_and_sequential_runs_match() {
        let b = Bounds::uniform(4, -5.0, 5.0).unwrap();
        for algorithm in Algorithm::ALL {
            let mut s = Search::new(b.clone(), OptimizerParams::new(algorithm, 8, 15), 42);
            s.exec = Execution::Sequential;
            let a = s.run(sphere_obj).unwrap();
            s.exec = Execution::Parallel;
            let p = s.run(sphere_obj).unwrap();
            assert_eq!(a.trace, p.trace);
            assert_eq!(a.best, p.best);
        }
    }

    #[test]
    fn warm_start_is_used() {
        let b = Bounds::uniform(2, -5.0, 5.0).unwrap();
        let mut s = Search::new(b, OptimizerParams::new(Algorithm::Mgto, 1, 0), 3);
        s.warm_start = vec![vec![0.0, 0.0]];
        let r = s.run(sphere_obj).unwrap();
        assert_eq!(r.best.position, vec![0.0, 0.0]);
        s.warm_start = vec![vec![9.0, 0.0]];
        assert!(s.run(sphere_obj).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let trace = [TraceRow {
            iteration: 0,
            best_fitness: 2.0,
            mean_fitness: 3.5,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,best_fitness,mean_fitness\n0,2,3.5\n");
    }

    #[test]
    fn algorithm_names_parse() {
        assert_eq!("IGWO".parse::<Algorithm>().unwrap(), Algorithm::Igwo);
        assert_eq!("mgto".parse::<Algorithm>().unwrap(), Algorithm::Mgto);
        assert!("pso".parse::<Algorithm>().is_err());
    }
}
