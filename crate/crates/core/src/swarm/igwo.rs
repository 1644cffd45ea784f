use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    best_index, check_population, ranking, retain_elite, Bounds, Candidate, StepContext, StepOutput, LEADER_STREAM,
};
use crate::error::Result;

/// `y ↦ (2y) mod 1`.
pub fn tent_map(y: f64) -> f64 {
    (2.0 * y).fract()
}

/// Tent-map orbit. Doubling in binary floating point shifts one mantissa bit
/// out per step, so every orbit reaches the fixed point 0 within about 53
/// steps; the sequence reseeds itself from `rng` when that happens.
#[derive(Debug, Clone)]
pub struct TentSequence {
    state: f64,
}

impl TentSequence {
    pub fn new(rng: &mut impl Rng) -> Self {
        let mut s = Self { state: 0.0 };
        s.reseed(rng);
        s
    }

    fn reseed(&mut self, rng: &mut impl Rng) {
        // Open interval (0, 1).
        self.state = loop {
            let y: f64 = rng.random();
            if y > 0.0 {
                break y;
            }
        };
    }

    pub fn next(&mut self, rng: &mut impl Rng) -> f64 {
        let out = self.state;
        self.state = tent_map(self.state);
        if self.state == 0.0 {
            self.reseed(rng);
        }
        out
    }
}

/// Chaotic initial position: each coordinate is `l + (u − l)·y` for
/// successive tent-map values `y`.
pub fn tent_init(bounds: &Bounds, rng: &mut impl Rng) -> Vec<f64> {
    let mut seq = TentSequence::new(rng);
    (0..bounds.dim())
        .map(|d| bounds.lower()[d] + bounds.span(d) * seq.next(rng))
        .collect()
}

/// `a = 2 − 2t/T`.
pub fn linear_control(t: usize, max_iter: usize) -> f64 {
    2.0 - 2.0 * t as f64 / max_iter as f64
}

/// `a' = 2·cos(π/2 · t/T)`.
pub fn cosine_control(t: usize, max_iter: usize) -> f64 {
    2.0 * (std::f64::consts::FRAC_PI_2 * t as f64 / max_iter as f64).cos()
}

/// Maps a control value on `[0, 2]` affinely onto `[a_min, a_max]`.
pub fn rescale_control(a: f64, a_min: f64, a_max: f64) -> f64 {
    a_min + (a_max - a_min) * a / 2.0
}

/// `X_p − A·|C·X_p − X|` for one coordinate.
pub fn igwo_leader_target(leader: f64, x: f64, a_coef: f64, c_coef: f64) -> f64 {
    let d = (c_coef * leader - x).abs();
    leader - a_coef * d
}

/// One IGWO iteration: every wolf moves to the mean of its alpha-, beta- and
/// delta-guided targets under the rescaled cosine control factor, with
/// coefficients drawn from a tent-map sequence. The alpha then receives a
/// greedy Gaussian mutation whose width shrinks linearly to zero.
pub fn igwo_step<F>(pop: &[Candidate], t: usize, ctx: &StepContext<'_, F>) -> Result<StepOutput>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_population(pop)?;
    let params = ctx.params;
    let bounds = ctx.bounds;
    let order = ranking(pop);
    let leader = |r: usize| &pop[order[r.min(order.len() - 1)]].position;
    let leaders = [leader(0), leader(1), leader(2)];
    let a = rescale_control(cosine_control(t, params.max_iter), params.a_min, params.a_max);

    let positions: Vec<Vec<f64>> = pop
        .iter()
        .map(|wolf| {
            let mut rng = ctx.rng(t + 1, wolf.stream);
            let mut tent = TentSequence::new(&mut rng);
            let mut next = vec![0.0; bounds.dim()];
            for lead in leaders {
                for (d, n) in next.iter_mut().enumerate() {
                    let a_coef = 2.0 * a * tent.next(&mut rng) - a;
                    let c_coef = 2.0 * tent.next(&mut rng);
                    *n += igwo_leader_target(lead[d], wolf.position[d], a_coef, c_coef) / 3.0;
                }
            }
            next
        })
        .collect();
    let mut next = ctx.candidates(positions)?;
    for (c, old) in next.iter_mut().zip(pop) {
        c.stream = old.stream;
    }
    retain_elite(pop, &mut next);

    let alpha = best_index(&next);
    let mut rng = ctx.rng(t + 1, LEADER_STREAM);
    let shrink = 1.0 - t as f64 / params.max_iter as f64;
    let mut mutant = next[alpha].position.clone();
    for (d, m) in mutant.iter_mut().enumerate() {
        let sigma = 0.1 * bounds.span(d) * shrink;
        if sigma > 0.0 {
            *m += Normal::new(0.0, sigma).expect("positive sigma").sample(&mut rng);
        }
    }
    bounds.clamp(&mut mutant);
    let f = ctx.evaluate(std::slice::from_ref(&mutant))?[0];
    if f < next[alpha].fitness {
        next[alpha].position = mutant;
        next[alpha].fitness = f;
    }
    Ok(StepOutput {
        population: next,
        evaluations: pop.len() + 1,
    })
}
