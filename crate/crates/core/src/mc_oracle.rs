//! Independent brute-force verification by exact pathwise simulation.
//!
//! Paths are simulated event by event: the phase chain jumps at exponential
//! times, the Erlang clock completes exponential stages, and the level is
//! integrated exactly between events (it is piecewise linear, so every
//! functional of a path is exact up to round-off; there is no time
//! discretization). Path `j` draws from its own counter-indexed stream of
//! a seeded ChaCha generator, so results are reproducible and independent
//! of how paths are scheduled across threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ErlangClock, FluidModel};

/// Everything needed to generate a reproducible batch of paths.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    /// Model to simulate (the caller's phase ordering is used throughout).
    pub model: FluidModel,
    /// Erlang horizon.
    pub clock: ErlangClock,
    /// Starting level for both the walk and the queue.
    pub initial_level: f64,
    /// Starting phase, caller ordering.
    pub initial_phase: usize,
    /// Number of paths.
    pub paths: usize,
    /// Base seed; path `j` uses stream `j`.
    pub seed: u64,
}

impl SimulationPlan {
    /// Validate the plan.
    pub fn new(
        model: FluidModel,
        clock: ErlangClock,
        initial_level: f64,
        initial_phase: usize,
        paths: usize,
        seed: u64,
    ) -> Result<Self> {
        if paths == 0 {
            return Err(Error::InvalidPlan("need at least one path".into()));
        }
        if initial_phase >= model.num_phases() {
            return Err(Error::InvalidPlan(format!(
                "initial phase {} out of range for {} phases",
                initial_phase,
                model.num_phases()
            )));
        }
        if initial_level < 0.0 || !initial_level.is_finite() {
            return Err(Error::InvalidPlan(format!(
                "initial level {initial_level} must be >= 0"
            )));
        }
        Ok(Self {
            model,
            clock,
            initial_level,
            initial_phase,
            paths,
            seed,
        })
    }
}

/// First return of the walk to its starting level, if it happened before
/// the horizon: the Erlang stage it happened in and the phase on arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstReturn {
    /// Erlang stage (0-based) running when the walk re-crossed its start.
    pub stage: u32,
    /// Phase (caller ordering) at the crossing.
    pub phase: usize,
}

/// Exact functionals of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    /// Walk level at the horizon.
    pub x_t: f64,
    /// Running minimum of the walk over the whole horizon.
    pub min_walk: f64,
    /// Running maximum of the walk.
    pub max_walk: f64,
    /// Queue level at the horizon.
    pub z_t: f64,
    /// Running minimum of the queue.
    pub min_queue: f64,
    /// Running maximum of the queue.
    pub max_queue: f64,
    /// Phase at the horizon, caller ordering.
    pub terminal_phase: usize,
    /// Number of embedded phase jumps completed before the horizon. For a
    /// model with constant total exit rate `q` this count is negative
    /// binomial: L successes of rate `nu` against failures of rate `q`.
    pub terminal_stage: u32,
    /// First return of the walk to its starting level, if any.
    pub first_return: Option<FirstReturn>,
}

/// Simulate every path of the plan. Deterministic in the seed: the same
/// plan yields bitwise-identical summaries, regardless of thread count.
pub fn simulate(plan: &SimulationPlan) -> Result<Vec<PathSummary>> {
    let summaries: Vec<PathSummary> = (0..plan.paths)
        .into_par_iter()
        .map(|j| simulate_path(plan, j as u64))
        .collect();
    Ok(summaries)
}

fn draw_exp(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.gen();
    -(-u).ln_1p() / rate
}

fn simulate_path(plan: &SimulationPlan, index: u64) -> PathSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(index);

    let a = plan.model.generator_user();
    let c = plan.model.rates_user();
    let m = plan.model.num_phases();
    let nu = plan.clock.rate();
    let l = plan.clock.stages();
    let start = plan.initial_level;

    let mut x = start;
    let mut z = start;
    let (mut min_x, mut max_x) = (x, x);
    let (mut min_z, mut max_z) = (z, z);
    let mut phase = plan.initial_phase;
    let mut stage: usize = 0;
    let mut jumps: u32 = 0;
    let mut first_return: Option<FirstReturn> = None;

    loop {
        let exit_rate = -a[(phase, phase)];
        let dt_phase = draw_exp(&mut rng, exit_rate);
        let dt_stage = draw_exp(&mut rng, nu);
        let stage_first = dt_stage < dt_phase;
        let dt = if stage_first { dt_stage } else { dt_phase };

        let rate = c[phase];
        let x_new = x + rate * dt;
        let z_new = if rate >= 0.0 {
            z + rate * dt
        } else {
            (z + rate * dt).max(0.0)
        };
        if first_return.is_none() {
            let crossed_down = x > start && x_new <= start;
            let crossed_up = x < start && x_new >= start;
            if crossed_down || crossed_up {
                first_return = Some(FirstReturn {
                    stage: stage as u32,
                    phase,
                });
            }
        }
        x = x_new;
        z = z_new;
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_z = min_z.min(z);
        max_z = max_z.max(z);

        if stage_first {
            stage += 1;
            if stage == l {
                break;
            }
        } else {
            let u: f64 = rng.gen::<f64>() * exit_rate;
            let mut acc = 0.0;
            let mut next = phase;
            let mut last_positive = phase;
            for j in 0..m {
                if j == phase {
                    continue;
                }
                let w = a[(phase, j)];
                if w > 0.0 {
                    last_positive = j;
                    acc += w;
                    if u < acc {
                        next = j;
                        break;
                    }
                }
            }
            // Round-off guard: land on the last admissible target.
            phase = if next == phase { last_positive } else { next };
            jumps += 1;
        }
    }

    PathSummary {
        x_t: x,
        min_walk: min_x,
        max_walk: max_x,
        z_t: z,
        min_queue: min_z,
        max_queue: max_z,
        terminal_phase: phase,
        terminal_stage: jumps,
        first_return,
    }
}

/// Which functional of a path an empirical CDF refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    /// Walk level at the horizon.
    Walk,
    /// Queue level at the horizon.
    Queue,
    /// Walk running minimum.
    MinWalk,
    /// Walk running maximum.
    MaxWalk,
    /// Queue running minimum.
    MinQueue,
    /// Queue running maximum.
    MaxQueue,
}

impl Functional {
    fn value(self, s: &PathSummary) -> f64 {
        match self {
            Functional::Walk => s.x_t,
            Functional::Queue => s.z_t,
            Functional::MinWalk => s.min_walk,
            Functional::MaxWalk => s.max_walk,
            Functional::MinQueue => s.min_queue,
            Functional::MaxQueue => s.max_queue,
        }
    }
}

/// Empirical CDF of one functional on a grid: `(estimates, standard errors)`.
///
/// The standard error is the binomial `sqrt(p(1-p)/N)`; it is zero at
/// degenerate estimates.
pub fn empirical_cdf(
    summaries: &[PathSummary],
    functional: Functional,
    grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if summaries.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = summaries.len() as f64;
    let mut estimates = Vec::with_capacity(grid.len());
    let mut errors = Vec::with_capacity(grid.len());
    for &x in grid {
        let count = summaries
            .iter()
            .filter(|s| functional.value(s) <= x)
            .count();
        let p = count as f64 / n;
        estimates.push(p);
        errors.push((p * (1.0 - p) / n).sqrt());
    }
    Ok((estimates, errors))
}

/// Empirical joint CDF `P[f1 <= x, f2 <= y]` at the given points.
pub fn empirical_joint_cdf(
    summaries: &[PathSummary],
    f1: Functional,
    f2: Functional,
    points: &[(f64, f64)],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if summaries.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = summaries.len() as f64;
    let mut estimates = Vec::with_capacity(points.len());
    let mut errors = Vec::with_capacity(points.len());
    for &(x, y) in points {
        let count = summaries
            .iter()
            .filter(|s| f1.value(s) <= x && f2.value(s) <= y)
            .count();
        let p = count as f64 / n;
        estimates.push(p);
        errors.push((p * (1.0 - p) / n).sqrt());
    }
    Ok((estimates, errors))
}

/// One grid point of a verification run.
#[derive(Debug, Clone)]
pub struct PointCheck {
    /// Level coordinate.
    pub x: f64,
    /// Second coordinate, for joint laws.
    pub y: Option<f64>,
    /// Analytic value.
    pub analytic: f64,
    /// Empirical estimate.
    pub estimate: f64,
    /// Standard error of the estimate.
    pub std_error: f64,
    /// |analytic - estimate| in standard-error units.
    pub z_score: f64,
}

/// Outcome of comparing an analytic curve against empirical estimates.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    /// Per-point diagnostics.
    pub points: Vec<PointCheck>,
    /// Largest z-score over the grid.
    pub max_z: f64,
    /// Pass threshold on the z-score.
    pub threshold: f64,
    /// Whether every point passed.
    pub pass: bool,
    /// Kolmogorov-Smirnov-style statistic: the largest absolute gap.
    pub ks_stat: f64,
}

impl VerificationReport {
    /// The worst point, when any exist.
    pub fn worst(&self) -> Option<&PointCheck> {
        self.points
            .iter()
            .max_by(|a, b| a.z_score.total_cmp(&b.z_score))
    }
}

/// Compare analytic values against empirical `(estimate, std error)` pairs
/// from `sample_size` paths. Degenerate estimates (SE = 0) fall back to a
/// `1/N` floor so exact matches pass and real gaps fail loudly.
pub fn compare(
    coords: &[(f64, Option<f64>)],
    analytic: &[f64],
    estimates: &[f64],
    std_errors: &[f64],
    sample_size: usize,
    threshold: f64,
) -> Result<VerificationReport> {
    if coords.len() != analytic.len()
        || analytic.len() != estimates.len()
        || estimates.len() != std_errors.len()
    {
        return Err(Error::GridMismatch(format!(
            "coords {}, analytic {}, estimates {}, std errors {}",
            coords.len(),
            analytic.len(),
            estimates.len(),
            std_errors.len()
        )));
    }
    let floor = 1.0 / sample_size as f64;
    let mut points = Vec::with_capacity(coords.len());
    let mut max_z = 0.0_f64;
    let mut ks = 0.0_f64;
    for i in 0..coords.len() {
        let gap = (analytic[i] - estimates[i]).abs();
        let se = std_errors[i].max(floor);
        let z = gap / se;
        max_z = max_z.max(z);
        ks = ks.max(gap);
        points.push(PointCheck {
            x: coords[i].0,
            y: coords[i].1,
            analytic: analytic[i],
            estimate: estimates[i],
            std_error: std_errors[i],
            z_score: z,
        });
    }
    Ok(VerificationReport {
        points,
        max_z,
        threshold,
        pass: max_z <= threshold,
        ks_stat: ks,
    })
}

/// Empirical distribution of the first-return stage: the direct estimator
/// of the stage-split return masses (fraction of paths returning during
/// each stage).
pub fn first_return_stage_frequencies(summaries: &[PathSummary], stages: usize) -> Vec<f64> {
    let n = summaries.len() as f64;
    let mut freq = vec![0.0; stages];
    for s in summaries {
        if let Some(fr) = s.first_return {
            if (fr.stage as usize) < stages {
                freq[fr.stage as usize] += 1.0;
            }
        }
    }
    freq.iter_mut().for_each(|v| *v /= n);
    freq
}

/// Quantile of sampled functional values (for data-driven grid ranges).
pub fn sample_quantile(summaries: &[PathSummary], functional: Functional, q: f64) -> f64 {
    let mut values: Vec<f64> = summaries.iter().map(|s| functional.value(s)).collect();
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    values[idx]
}

/// Sample mean of a functional.
pub fn sample_mean(summaries: &[PathSummary], functional: Functional) -> f64 {
    summaries.iter().map(|s| functional.value(s)).sum::<f64>() / summaries.len() as f64
}

/// Mean and standard error of a functional.
pub fn sample_mean_se(summaries: &[PathSummary], functional: Functional) -> (f64, f64) {
    let n = summaries.len() as f64;
    let mean = sample_mean(summaries, functional);
    let var = summaries
        .iter()
        .map(|s| {
            let d = functional.value(s) - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Empirical CDF split by terminal phase (diagnostic output for reports).
pub fn empirical_terminal_split(
    summaries: &[PathSummary],
    functional: Functional,
    x: f64,
    phases: usize,
) -> DVector<f64> {
    let mut hit = vec![0.0; phases];
    let mut tot = vec![0.0; phases];
    for s in summaries {
        tot[s.terminal_phase] += 1.0;
        if functional.value(s) <= x {
            hit[s.terminal_phase] += 1.0;
        }
    }
    DVector::from_fn(phases, |i, _| {
        if tot[i] > 0.0 {
            hit[i] / tot[i]
        } else {
            0.0
        }
    })
}
