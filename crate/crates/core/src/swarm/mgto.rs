use rand::Rng;

use super::{best_index, check_population, Candidate, StepContext, StepOutput, LEADER_STREAM};
use crate::error::Result;

/// Elite opposition `y + z − x`.
pub fn eobl(x: f64, y: f64, z: f64) -> f64 {
    y + z - x
}

/// Standard Cauchy quantile `tan(π(p − ½))`.
pub fn cicd_inverse(p: f64) -> f64 {
    (std::f64::consts::PI * (p - 0.5)).tan()
}

/// Tangent flight factor `tan(vπ/2)`.
pub fn tfo(v: f64) -> f64 {
    (v * std::f64::consts::FRAC_PI_2).tan()
}

/// A random peer index other than `i` (or `i` itself for a population of one).
fn peer(rng: &mut impl Rng, i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let j = rng.random_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

/// One mGTO iteration.
///
/// Every gorilla proposes a move from the three-case rule (random restart
/// with probability `pp`, a migration toward a peer, or a peer-relative
/// shift), using `C = (cos 2r + 1)(1 − t/T)`, `L = C·l` with `l ~ U(−1, 1)`
/// and `H = Z⊙X`, `Z ~ U(−C, C)`. Proposals replace their parent only when
/// fitter. The leader then tries its elite-opposite point, a Cauchy step and
/// a tangent-flight move toward a random peer, keeping the fittest if it
/// improves.
pub fn mgto_step<F>(pop: &[Candidate], t: usize, ctx: &StepContext<'_, F>) -> Result<StepOutput>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_population(pop)?;
    let params = ctx.params;
    let bounds = ctx.bounds;
    let n = pop.len();
    let dim = bounds.dim();
    let decay = 1.0 - t as f64 / params.max_iter as f64;

    let positions: Vec<Vec<f64>> = pop
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng = ctx.rng(t + 1, g.stream);
            let big_f = (2.0 * rng.random::<f64>()).cos() + 1.0;
            let c = big_f * decay;
            let l = c * rng.random_range(-1.0..=1.0);
            let x = &g.position;
            let xr = &pop[peer(&mut rng, i, n)].position;
            if rng.random::<f64>() < params.pp {
                bounds.sample(&mut rng)
            } else if rng.random::<f64>() >= 0.5 {
                let r2: f64 = rng.random();
                (0..dim)
                    .map(|d| {
                        let z = if c > 0.0 { rng.random_range(-c..=c) } else { 0.0 };
                        (r2 - c) * xr[d] + l * z * x[d]
                    })
                    .collect()
            } else {
                let r3: f64 = rng.random();
                (0..dim)
                    .map(|d| {
                        let diff = x[d] - xr[d];
                        x[d] - l * (l * diff + r3 * diff)
                    })
                    .collect()
            }
        })
        .collect();
    let proposals = ctx.candidates(positions)?;
    let mut next: Vec<Candidate> = pop
        .iter()
        .zip(proposals)
        .map(|(old, new)| {
            if new.fitness < old.fitness {
                Candidate {
                    stream: old.stream,
                    ..new
                }
            } else {
                old.clone()
            }
        })
        .collect();

    let lead = best_index(&next);
    let leader = next[lead].position.clone();
    let mut rng = ctx.rng(t + 1, LEADER_STREAM);
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..dim)
        .map(|d| {
            next.iter()
                .map(|c| c.position[d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
        })
        .unzip();
    let opposite: Vec<f64> = (0..dim).map(|d| eobl(leader[d], lo[d], hi[d])).collect();
    let cauchy: Vec<f64> = (0..dim)
        .map(|d| leader[d] + cicd_inverse(rng.random()) * 0.1 * bounds.span(d) * decay)
        .collect();
    let xr = &next[peer(&mut rng, lead, n)].position;
    let flight = tfo(rng.random_range(-1.0..1.0));
    let tangent: Vec<f64> = (0..dim).map(|d| leader[d] + flight * 0.1 * (leader[d] - xr[d])).collect();

    let variants = ctx.candidates(vec![opposite, cauchy, tangent])?;
    let best_variant = &variants[best_index(&variants)];
    if best_variant.fitness < next[lead].fitness {
        next[lead].position.clone_from(&best_variant.position);
        next[lead].fitness = best_variant.fitness;
    }
    Ok(StepOutput {
        population: next,
        evaluations: n + 3,
    })
}
