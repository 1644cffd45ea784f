use rand::Rng;

use super::{best_index, check_population, retain_elite, Candidate, StepContext, StepOutput};
use crate::error::Result;

const GRAVITY: f64 = 9.81;

/// `Jump = ½·g·t²`.
pub fn fox_jump(t: f64) -> f64 {
    0.5 * GRAVITY * t * t
}

/// `(Dist_S_T, Dist_Fox_Prey)` for sound speed `speed` and travel time `time`.
pub fn fox_distance(speed: f64, time: f64) -> (f64, f64) {
    let dist_st = speed * time;
    (dist_st, 0.5 * dist_st)
}

/// Smallest row mean of a time matrix.
pub fn min_mean_time(times: &[Vec<f64>]) -> f64 {
    times
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Exploitation move: `Dist_S_T = Sp_S⊙Time` with `Sp_S = BestX/Time`, half
/// of it is the fox-prey distance, scaled by the jump at the mean time and
/// by `c`.
pub fn fox_exploit(best: &[f64], time: &[f64], c: f64) -> Vec<f64> {
    let mean_t = time.iter().sum::<f64>() / time.len() as f64;
    let jump = fox_jump(mean_t);
    best.iter()
        .zip(time)
        .map(|(&b, &tm)| fox_distance(b / tm, tm).1 * jump * c)
        .collect()
}

/// One FOX iteration. Each fox flips a fair coin between exploitation and
/// the best-guided exploration `BestX⊙rand·MinT·a`, `a = 2(1 − t/T)`.
pub fn fox_step<F>(pop: &[Candidate], t: usize, ctx: &StepContext<'_, F>) -> Result<StepOutput>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_population(pop)?;
    let params = ctx.params;
    let dim = ctx.bounds.dim();
    let best = &pop[best_index(pop)].position;
    let a = 2.0 * (1.0 - t as f64 / params.max_iter as f64);

    let mut rngs: Vec<_> = pop.iter().map(|c| ctx.rng(t + 1, c.stream)).collect();
    // Time per dimension on (0, 1].
    let times: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|rng| (0..dim).map(|_| 1.0 - rng.random::<f64>()).collect())
        .collect();
    let min_t = min_mean_time(&times);

    let positions: Vec<Vec<f64>> = rngs
        .iter_mut()
        .zip(&times)
        .map(|(rng, time)| {
            if rng.random_bool(0.5) {
                let c = if rng.random_bool(0.5) { params.c1 } else { params.c2 };
                fox_exploit(best, time, c)
            } else {
                best.iter().map(|&b| b * rng.random::<f64>() * min_t * a).collect()
            }
        })
        .collect();
    let mut next = ctx.candidates(positions)?;
    for (c, old) in next.iter_mut().zip(pop) {
        c.stream = old.stream;
    }
    retain_elite(pop, &mut next);
    Ok(StepOutput {
        population: next,
        evaluations: pop.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_and_distances() {
        assert!((fox_jump(0.5) - 1.22625).abs() < 1e-15);
        assert!(fox_jump(-3.0) >= 0.0);
        assert_eq!(fox_distance(2.0, 0.5), (1.0, 0.5));
        let x = fox_exploit(&[1.0], &[0.5], 1.0);
        assert!((x[0] - 0.5 * fox_jump(0.5)).abs() < 1e-15);
    }

    #[test]
    fn min_of_mean_times() {
        let t = vec![vec![0.2, 0.2], vec![0.7, 0.7], vec![0.4, 0.4]];
        assert_eq!(min_mean_time(&t), 0.2);
    }
}
