//! Elitist genetic fit of device parameters to reference I–V traces.
//!
//! Each generation the worse half of the population is discarded and
//! replaced by mutated copies of the survivors. Mutation is multiplicative
//! Gaussian noise whose scale decays geometrically with the generation.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{simulate_ramp_with, DeviceParams, IVTrace, ParamName, RampConfig};
use crate::error::{Error, Result};
use crate::seeds;

/// Per-parameter search interval, stored as two parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lower: DeviceParams,
    pub upper: DeviceParams,
}

impl ParamBounds {
    /// `[x/factor, x·factor]` around every value, endpoints sorted so that
    /// negative parameters get a proper interval.
    pub fn around(p: &DeviceParams, factor: f64) -> Self {
        let mut lower = *p;
        let mut upper = *p;
        for name in ParamName::ALL {
            let x = p.get(name);
            let (a, b) = (x / factor, x * factor);
            lower.set(name, a.min(b));
            upper.set(name, a.max(b));
        }
        ParamBounds { lower, upper }
    }

    pub fn get(&self, name: ParamName) -> (f64, f64) {
        (self.lower.get(name), self.upper.get(name))
    }

    pub fn set(&mut self, name: ParamName, lo: f64, hi: f64) {
        self.lower.set(name, lo);
        self.upper.set(name, hi);
    }

    pub fn contains(&self, p: &DeviceParams) -> bool {
        ParamName::ALL.iter().all(|&n| {
            let (lo, hi) = self.get(n);
            (lo..=hi).contains(&p.get(n))
        })
    }

    fn clamp(&self, name: ParamName, x: f64) -> f64 {
        let (lo, hi) = self.get(name);
        x.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub initial_mutation_scale: f64,
    pub mutation_decay: f64,
    pub bounds: ParamBounds,
    pub frozen: Vec<ParamName>,
    pub seed: u64,
    /// Redraw variability per simulated cycle during evaluation.
    pub variability: bool,
    /// Independent simulations averaged into each individual's loss.
    pub draws_per_eval: usize,
    /// Evaluate individuals on the rayon pool.
    pub parallel: bool,
}

impl GaConfig {
    /// Defaults: the external resistor plus any parameter that starts at
    /// zero (its multiplicative search box is empty) are frozen.
    pub fn new(init: &DeviceParams, generations: usize, seed: u64) -> Self {
        GaConfig {
            population_size: 32,
            generations,
            initial_mutation_scale: 0.2,
            mutation_decay: 0.97,
            bounds: ParamBounds::around(init, 10.0),
            frozen: std::iter::once(ParamName::Rext)
                .chain(
                    ParamName::ALL
                        .into_iter()
                        .filter(|&n| n != ParamName::Rext && init.get(n) == 0.0),
                )
                .collect(),
            seed,
            variability: true,
            draws_per_eval: 1,
            parallel: true,
        }
    }

    pub fn mutation_scale(&self, generation: usize) -> f64 {
        self.initial_mutation_scale * self.mutation_decay.powi(generation as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 || self.population_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "population size must be even and at least 2, got {}",
                self.population_size
            )));
        }
        if self.draws_per_eval == 0 {
            return Err(Error::InvalidArgument(
                "draws per evaluation must be at least 1".into(),
            ));
        }
        if self.generations == 0 {
            return Err(Error::InvalidArgument(
                "generations must be at least 1".into(),
            ));
        }
        if !(self.mutation_decay > 0.0 && self.mutation_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mutation decay must lie in (0, 1], got {}",
                self.mutation_decay
            )));
        }
        if !(self.initial_mutation_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "mutation scale must be non-negative".into(),
            ));
        }
        for name in ParamName::ALL {
            let (lo, hi) = self.bounds.get(name);
            let frozen = self.frozen.contains(&name);
            if !(lo < hi || (frozen && lo <= hi)) {
                return Err(Error::InvalidArgument(format!(
                    "bounds for {name} must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub params: DeviceParams,
    /// `None` until evaluated; `+inf` when the simulation failed.
    pub loss: Option<f64>,
    pub eval_seed: u64,
}

/// Maximal runs of monotone applied voltage, as (v, i) lists.
fn monotone_runs(trace: &IVTrace) -> Vec<Vec<(f64, f64)>> {
    let mut runs: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let mut dir = 0.0f64;
    for s in &trace.samples {
        if let Some(&(pv, _)) = current.last() {
            let d = (s.v - pv).signum() * ((s.v != pv) as i32 as f64);
            if d != 0.0 && dir != 0.0 && d != dir {
                let last = *current.last().unwrap();
                runs.push(std::mem::take(&mut current));
                current.push(last);
            }
            if d != 0.0 {
                dir = d;
            }
        }
        current.push((s.v, s.i));
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

fn run_direction(run: &[(f64, f64)]) -> f64 {
    match (run.first(), run.last()) {
        (Some(a), Some(b)) => (b.0 - a.0).signum(),
        _ => 0.0,
    }
}

/// Current of a monotone run at voltage `v`, linearly interpolated and held
/// flat beyond the run's ends.
fn interp_run(run: &[(f64, f64)], v: f64) -> f64 {
    let up = run_direction(run) >= 0.0;
    // position of the first sample at or past v along the sweep
    let k = run.partition_point(|p| if up { p.0 < v } else { p.0 > v });
    if k == 0 {
        return run[0].1;
    }
    if k == run.len() {
        return run[run.len() - 1].1;
    }
    let (v0, i0) = run[k - 1];
    let (v1, i1) = run[k];
    if v1 == v {
        return i1;
    }
    i0 + (v - v0) / (v1 - v0) * (i1 - i0)
}

/// Mean over references of the summed squared current difference, with the
/// simulated curve mapped onto each reference sample by interpolation in
/// applied voltage along the matching sweep segment.
pub fn loss(sim: &IVTrace, refs: &[IVTrace]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("no reference traces".into()));
    }
    let sim_runs = monotone_runs(sim);
    if sim_runs.is_empty() {
        return Err(Error::InvalidArgument("simulated trace is empty".into()));
    }
    let mut total = 0.0;
    for r in refs {
        let mut sum = 0.0;
        let mut counted_first = false;
        for (k, run) in monotone_runs(r).iter().enumerate() {
            let dir = run_direction(run);
            let sim_run = if k < sim_runs.len() && run_direction(&sim_runs[k]) == dir {
                &sim_runs[k]
            } else {
                sim_runs
                    .iter()
                    .rev()
                    .find(|s| run_direction(s) == dir)
                    .unwrap_or(&sim_runs[sim_runs.len() - 1])
            };
            // consecutive runs share their turning sample; count it once
            let skip = usize::from(counted_first);
            for &(v, i) in &run[skip..] {
                let d = i - interp_run(sim_run, v);
                sum += d * d;
            }
            counted_first = true;
        }
        total += sum;
    }
    let l = total / refs.len() as f64;
    if l.is_nan() {
        return Err(Error::Numerical("loss is NaN".into()));
    }
    Ok(l)
}

/// Sweep used to simulate candidates against `refs`.
pub fn ramp_for(refs: &[IVTrace]) -> Result<RampConfig> {
    let r = refs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reference traces".into()))?;
    if let Some(other) = refs.iter().find(|t| t.amplitude != r.amplitude) {
        return Err(Error::InvalidArgument(format!(
            "reference amplitudes differ ({} V vs {} V)",
            r.amplitude, other.amplitude
        )));
    }
    if !(r.ramp_rate > 0.0) || r.cycles == 0 {
        return Err(Error::InvalidArgument(
            "reference trace has no complete sweep".into(),
        ));
    }
    Ok(RampConfig::new(
        r.amplitude,
        r.amplitude / r.ramp_rate,
        r.cycles,
    ))
}

fn evaluate_one(ind: &Individual, refs: &[IVTrace], ramp: &RampConfig, draws: usize) -> f64 {
    if ind.params.validate().is_err() {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for k in 0..draws {
        let seed = if draws == 1 {
            ind.eval_seed
        } else {
            seeds::derive(ind.eval_seed, &[k as u64])
        };
        match simulate_ramp_with(&ind.params, ramp, seed).and_then(|t| loss(&t, refs)) {
            Ok(l) => total += l,
            Err(_) => return f64::INFINITY,
        }
    }
    total / draws as f64
}

fn evaluate(pop: &mut [Individual], refs: &[IVTrace], ramp: &RampConfig, cfg: &GaConfig) {
    let (parallel, draws) = (cfg.parallel, cfg.draws_per_eval);
    let pending: Vec<usize> = (0..pop.len()).filter(|&k| pop[k].loss.is_none()).collect();
    let losses: Vec<f64> = if parallel {
        pending
            .par_iter()
            .map(|&k| evaluate_one(&pop[k], refs, ramp, draws))
            .collect()
    } else {
        pending
            .iter()
            .map(|&k| evaluate_one(&pop[k], refs, ramp, draws))
            .collect()
    };
    for (k, l) in pending.into_iter().zip(losses) {
        pop[k].loss = Some(l);
    }
}

fn mutate<R: Rng + ?Sized>(
    p: &DeviceParams,
    scale: f64,
    cfg: &GaConfig,
    rng: &mut R,
) -> DeviceParams {
    let mut out = *p;
    for name in ParamName::ALL {
        // draw for every parameter so the stream layout does not depend on
        // the frozen mask
        let z: f64 = rng.sample(StandardNormal);
        if cfg.frozen.contains(&name) {
            continue;
        }
        let x = p.get(name) * (1.0 + scale * z);
        out.set(name, cfg.bounds.clamp(name, x));
    }
    out
}

fn by_loss(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    let key = |i: &Individual| i.loss.unwrap_or(f64::INFINITY);
    key(a).total_cmp(&key(b))
}

/// Next generation: the better half survives unchanged, the other half is
/// mutated copies of the survivors (child `k` from survivor `k`).
/// Children are left unevaluated.
pub fn evolve<R: Rng + ?Sized>(
    pop: &[Individual],
    gen_index: usize,
    cfg: &GaConfig,
    rng: &mut R,
) -> Vec<Individual> {
    let mut sorted = pop.to_vec();
    sorted.sort_by(by_loss);
    let half = sorted.len() / 2;
    sorted.truncate(half);
    let scale = cfg.mutation_scale(gen_index);
    for k in 0..half {
        let params = mutate(&sorted[k].params, scale, cfg, rng);
        sorted.push(Individual {
            params,
            loss: None,
            eval_seed: 0,
        });
    }
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_loss: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best: DeviceParams,
    pub best_loss: f64,
    pub history: Vec<GenerationStats>,
}

const MUTATION_STREAM: u64 = 1;

/// Run the genetic fit. Generation 0 holds `init` plus mutated copies of it.
pub fn fit(refs: &[IVTrace], init: &DeviceParams, cfg: &GaConfig) -> Result<FitResult> {
    cfg.validate()?;
    if !cfg.bounds.contains(init) {
        return Err(Error::InvalidArgument(
            "initial parameters lie outside the configured bounds".into(),
        ));
    }
    let mut ramp = ramp_for(refs)?;
    ramp.variability = cfg.variability;

    let eval_seed =
        |g: usize, k: usize| seeds::derive(cfg.seed, &[seeds::stage::GENETIC, g as u64, k as u64]);
    let mut rng = seeds::stream(cfg.seed, &[seeds::stage::GENETIC, MUTATION_STREAM]);
    let mut pop: Vec<Individual> = (0..cfg.population_size)
        .map(|k| Individual {
            params: if k == 0 {
                *init
            } else {
                mutate(init, cfg.initial_mutation_scale, cfg, &mut rng)
            },
            loss: None,
            eval_seed: eval_seed(0, k),
        })
        .collect();

    let mut history = Vec::with_capacity(cfg.generations);
    for g in 0..cfg.generations {
        if g > 0 {
            pop = evolve(&pop, g - 1, cfg, &mut rng);
            for (k, ind) in pop.iter_mut().enumerate() {
                if ind.loss.is_none() {
                    ind.eval_seed = eval_seed(g, k);
                }
            }
        }
        evaluate(&mut pop, refs, &ramp, cfg);
        let losses: Vec<f64> = pop
            .iter()
            .map(|i| i.loss.unwrap_or(f64::INFINITY))
            .collect();
        let best_loss = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let finite: Vec<f64> = losses.iter().copied().filter(|l| l.is_finite()).collect();
        let mean_loss = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        history.push(GenerationStats {
            generation: g,
            best_loss,
            mean_loss,
        });
    }
    let best = pop
        .iter()
        .min_by(|a, b| by_loss(a, b))
        .expect("population is non-empty");
    let best_loss = best.loss.unwrap_or(f64::INFINITY);
    if !best_loss.is_finite() {
        return Err(Error::Numerical(
            "every candidate failed to simulate".into(),
        ));
    }
    Ok(FitResult {
        best: best.params,
        best_loss,
        history,
    })
}

impl FitResult {
    /// CSV `generation,best_loss,mean_loss`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,best_loss,mean_loss\n");
        for h in &self.history {
            let _ = writeln!(out, "{},{:e},{:e}", h.generation, h.best_loss, h.mean_loss);
        }
        out
    }

    pub fn write(
        &self,
        params_path: impl AsRef<Path>,
        history_path: impl AsRef<Path>,
    ) -> Result<()> {
        let p = params_path.as_ref();
        std::fs::write(p, self.best.to_json()).map_err(|e| Error::io(p, e))?;
        let h = history_path.as_ref();
        std::fs::write(h, self.history_csv()).map_err(|e| Error::io(h, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{simulate_ramp, Sample};

    fn quick_cfg(init: &DeviceParams, gens: usize) -> GaConfig {
        let mut cfg = GaConfig::new(init, gens, 11);
        cfg.population_size = 8;
        cfg
    }

    fn small_ref(seed: u64) -> IVTrace {
        let mut r = RampConfig::new(0.8, 0.1, 1);
        r.samples_per_cycle = 200;
        simulate_ramp_with(&DeviceParams::table4(), &r, seed).unwrap()
    }

    #[test]
    fn identical_traces_have_zero_loss() {
        let r = small_ref(1);
        assert_eq!(loss(&r, &[r.clone()]).unwrap(), 0.0);
    }

    #[test]
    fn constant_shift_gives_closed_form() {
        let r = small_ref(2);
        let mut s = r.clone();
        for x in &mut s.samples {
            x.i += 1e-6;
        }
        let n = r.samples.len() as f64;
        let l = loss(&s, &[r.clone(), r]).unwrap();
        assert!((l - n * 1e-12).abs() < 1e-9 * n * 1e-12, "{l}");
    }

    #[test]
    fn empty_refs_rejected() {
        assert!(matches!(
            loss(&small_ref(1), &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn runs_split_at_turning_points() {
        let v = [0.0, 0.5, 1.0, 0.5, 0.0, -0.5, -1.0, -0.5, 0.0];
        let samples = v
            .iter()
            .enumerate()
            .map(|(k, &v)| Sample {
                t: k as f64,
                v,
                i: v,
            })
            .collect();
        let tr = IVTrace::from_samples(samples).unwrap();
        let runs = monotone_runs(&tr);
        assert_eq!(runs.len(), 3);
        assert_eq!(runs[1].first().unwrap().0, 1.0);
        assert_eq!(runs[2].first().unwrap().0, -1.0);
        assert_eq!(interp_run(&runs[1], 0.25), 0.25);
        assert_eq!(interp_run(&runs[0], 3.0), 1.0);
    }

    #[test]
    fn zero_scale_evolution_is_identity() {
        let p = DeviceParams::table4();
        let mut cfg = quick_cfg(&p, 1);
        cfg.initial_mutation_scale = 0.0;
        let pop: Vec<Individual> = (0..8)
            .map(|_| Individual {
                params: p,
                loss: Some(1.0),
                eval_seed: 0,
            })
            .collect();
        let next = evolve(&pop, 0, &cfg, &mut seeds::stream(1, &[]));
        assert!(next.iter().all(|i| i.params == p));
    }

    #[test]
    fn mutation_respects_bounds_and_mask() {
        let p = DeviceParams::table4();
        let mut cfg = quick_cfg(&p, 1);
        cfg.initial_mutation_scale = 5.0;
        cfg.frozen = vec![ParamName::Ion0, ParamName::Rext];
        let mut rng = seeds::stream(3, &[]);
        for _ in 0..200 {
            let m = mutate(&p, 5.0, &cfg, &mut rng);
            assert!(cfg.bounds.contains(&m));
            assert_eq!(m.ion0, p.ion0);
        }
    }

    #[test]
    fn schedule_decreases() {
        let cfg = quick_cfg(&DeviceParams::table4(), 1);
        assert!((1..20).all(|g| cfg.mutation_scale(g) < cfg.mutation_scale(g - 1)));
    }

    #[test]
    fn config_validation() {
        let p = DeviceParams::table4();
        let mut cfg = quick_cfg(&p, 1);
        cfg.population_size = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_cfg(&p, 1);
        cfg.mutation_decay = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = quick_cfg(&p, 1);
        cfg.bounds.set(ParamName::Etas, 5.0, 5.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fit_history_is_monotone_and_parallel_matches_serial() {
        let refs = vec![small_ref(5)];
        let init = DeviceParams::table4().scaled(1.3);
        let mut cfg = quick_cfg(&init, 4);
        cfg.frozen = vec![ParamName::Rext, ParamName::Rpp, ParamName::H0];
        let a = fit(&refs, &init, &cfg).unwrap();
        cfg.parallel = false;
        let b = fit(&refs, &init, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a
            .history
            .windows(2)
            .all(|w| w[1].best_loss <= w[0].best_loss));
        assert_eq!(a.history.len(), 4);
        assert!(a
            .history_csv()
            .starts_with("generation,best_loss,mean_loss\n"));
    }

    #[test]
    fn ramp_matches_reference() {
        let r = simulate_ramp(&DeviceParams::table4(), 0.8, 0.1, 2, 1).unwrap();
        let cfg = ramp_for(&[r]).unwrap();
        assert_eq!(cfg.cycles, 2);
        assert!((cfg.period - 0.1).abs() < 1e-9);
    }
}
