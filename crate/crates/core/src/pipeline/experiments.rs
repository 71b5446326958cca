use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FusionError, Result};
use crate::fusion::{fuse_kalman, fuse_simple, fuse_weighted};

use super::config::{FiltersSection, PipelineConfig, TrackingMode};
use super::run::run;

/// Noise pattern of a filter comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Constant deviation; every filter is set up to compute the sample
    /// mean (simple with `w_k = 1/k`, weighted with unbounded weight, Kalman
    /// with no process noise).
    Constant,
    /// Deviation growing geometrically by the configured ramp factor; the
    /// weighted and Kalman filters are matched to the fixed weight's
    /// steady-state gain at the starting deviation.
    Ramp,
    /// No noise at all, mean-matched as in `Constant`.
    Noiseless,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Constant, Scenario::Ramp, Scenario::Noiseless];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Constant => "constant",
            Scenario::Ramp => "ramp",
            Scenario::Noiseless => "noiseless",
        }
    }
}

/// Squared estimation errors after each step of one trial, for the simple,
/// weighted and Kalman filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub scenario: Scenario,
    pub trial: usize,
    pub sigma: Vec<f64>,
    pub squared_error: Vec<[f64; 3]>,
    /// Final estimates, `None` if the voxel ended as χ.
    pub estimate: [Option<f64>; 3],
}

impl FilterTrace {
    /// Mean squared error over the last `fraction` of the steps (at least
    /// one step).
    pub fn tail_error(&self, fraction: f64) -> [f64; 3] {
        let n = self.squared_error.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let mut e = [0.0; 3];
        for row in &self.squared_error[n - k..] {
            for f in 0..3 {
                e[f] += row[f] / k as f64;
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub scenario: Scenario,
    pub trials: usize,
    /// Mean tail error of simple, weighted and Kalman.
    pub mean_tail_error: [f64; 3],
    /// Share of trials where Kalman's tail error is at most the simple
    /// filter's.
    pub kalman_win_rate: f64,
    /// Share of trials where weighted's error after five steps is at most
    /// the simple filter's.
    pub weighted_early_win_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterExperiment {
    pub traces: Vec<FilterTrace>,
    pub summaries: Vec<FilterSummary>,
}

/// Deviation of the measurement at `step` in the ramp scenario.
pub fn ramp_sigma(f: &FiltersSection, step: usize) -> f64 {
    let x = if f.steps > 1 {
        step as f64 / (f.steps - 1) as f64
    } else {
        0.0
    };
    f.sigma_start * f.ramp.powf(x)
}

/// Process variance giving a Kalman filter with measurement variance `p`
/// the steady-state gain `w`.
pub fn matched_process_variance(w: f64, p: f64) -> f64 {
    // steady state: predicted variance m satisfies w = m/(m + p) and
    // m = (1 − w)·m + Q
    w * w * p / (1.0 - w)
}

/// Runs one single-voxel trial.
pub fn filter_trial(f: &FiltersSection, scenario: Scenario, trial: usize, seed: u64) -> FilterTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
    let delta = f.truncation;
    let (mut ts, mut tw, mut tk) = (None, None, None);
    let (mut acc, mut var) = (0.0, 0.0);
    let mut sigma = Vec::with_capacity(f.steps);
    let mut squared_error = Vec::with_capacity(f.steps);
    let (w_weighted, w_max, q) = match scenario {
        Scenario::Ramp => (1.0, 1.0 / f.w_fixed - 1.0, {
            let p0 = f.sigma_start * f.sigma_start;
            matched_process_variance(f.w_fixed, p0)
        }),
        _ => (1.0, f64::INFINITY, 0.0),
    };
    for k in 0..f.steps {
        let s = match scenario {
            Scenario::Constant => f.sigma_start,
            Scenario::Ramp => ramp_sigma(f, k),
            Scenario::Noiseless => 0.0,
        };
        let draw: f64 = StandardNormal.sample(&mut rng);
        let m = f.signal + s * draw;
        let w_simple = match scenario {
            Scenario::Ramp => f.w_fixed,
            _ => 1.0 / (k + 1) as f64,
        };
        ts = fuse_simple(ts, m, w_simple, delta);
        (tw, acc) = fuse_weighted(tw, acc, m, w_weighted, w_max, delta);
        // the variance floor keeps the gain defined for noiseless input
        (tk, var) = fuse_kalman(tk, var, m, (s * s).max(1e-300), q, delta);
        let err = |t: Option<f64>| t.map_or(delta * delta, |t| (t - f.signal).powi(2));
        sigma.push(s);
        squared_error.push([err(ts), err(tw), err(tk)]);
    }
    FilterTrace {
        scenario,
        trial,
        sigma,
        squared_error,
        estimate: [ts, tw, tk],
    }
}

/// Compares the three update rules on a single voxel over seeded noise
/// sequences, for every [`Scenario`].
pub fn experiment_filters(f: &FiltersSection, seed: u64) -> Result<FilterExperiment> {
    if f.steps == 0 || f.trials == 0 {
        return Err(FusionError::InvalidConfig(
            "filters.steps and filters.trials must be positive".into(),
        ));
    }
    if !(f.w_fixed > 0.0 && f.w_fixed < 1.0 && f.sigma_start >= 0.0 && f.ramp > 0.0 && f.truncation > 0.0) {
        return Err(FusionError::InvalidConfig(
            "invalid filter experiment parameters".into(),
        ));
    }
    let mut traces = Vec::new();
    let mut summaries = Vec::new();
    for scenario in Scenario::ALL {
        let group: Vec<FilterTrace> = (0..f.trials).map(|t| filter_trial(f, scenario, t, seed)).collect();
        let mut mean = [0.0; 3];
        let (mut kalman_wins, mut weighted_wins) = (0, 0);
        for t in &group {
            let e = t.tail_error(f.tail_fraction);
            for i in 0..3 {
                mean[i] += e[i] / group.len() as f64;
            }
            kalman_wins += usize::from(e[2] <= e[0]);
            let early = t.squared_error[4.min(t.squared_error.len() - 1)];
            weighted_wins += usize::from(early[1] <= early[0]);
        }
        summaries.push(FilterSummary {
            scenario,
            trials: group.len(),
            mean_tail_error: mean,
            kalman_win_rate: kalman_wins as f64 / group.len() as f64,
            weighted_early_win_rate: weighted_wins as f64 / group.len() as f64,
        });
        traces.extend(group);
    }
    Ok(FilterExperiment { traces, summaries })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> FusionError + '_ {
    move |e| FusionError::format(path, e.to_string())
}

/// Writes `filters_trace.csv` and `filters_summary.csv` into `dir`.
pub fn write_filter_experiment(exp: &FilterExperiment, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
    let path = dir.join("filters_trace.csv");
    let err = csv_err(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&err)?;
    w.write_record([
        "scenario",
        "trial",
        "step",
        "sigma",
        "sq_err_simple",
        "sq_err_weighted",
        "sq_err_kalman",
    ])
    .map_err(&err)?;
    for t in &exp.traces {
        for (k, (s, e)) in t.sigma.iter().zip(&t.squared_error).enumerate() {
            w.write_record([
                t.scenario.name().to_string(),
                t.trial.to_string(),
                k.to_string(),
                format!("{s:.6e}"),
                format!("{:.6e}", e[0]),
                format!("{:.6e}", e[1]),
                format!("{:.6e}", e[2]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| FusionError::io(&path, e))?;

    let path = dir.join("filters_summary.csv");
    let err = csv_err(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&err)?;
    w.write_record([
        "scenario",
        "trials",
        "tail_err_simple",
        "tail_err_weighted",
        "tail_err_kalman",
        "kalman_win_rate",
        "weighted_early_win_rate",
    ])
    .map_err(&err)?;
    for s in &exp.summaries {
        w.write_record([
            s.scenario.name().to_string(),
            s.trials.to_string(),
            format!("{:.6e}", s.mean_tail_error[0]),
            format!("{:.6e}", s.mean_tail_error[1]),
            format!("{:.6e}", s.mean_tail_error[2]),
            format!("{:.4}", s.kalman_win_rate),
            format!("{:.4}", s.weighted_early_win_rate),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| FusionError::io(&path, e))
}

/// Parses `"8x8,16x8"` into `(N, M)` pairs.
pub fn parse_sweep(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || FusionError::InvalidConfig(format!("sweep entry `{item}` is not NxM"));
            let (n, m) = item.split_once(['x', 'X']).ok_or_else(bad)?;
            Ok((
                n.trim().parse().map_err(|_| bad())?,
                m.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Outcome of one sweep entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRow {
    pub blocks_per_axis: usize,
    pub voxels_per_block_axis: usize,
    pub voxel_size: f64,
    pub frames: usize,
    pub blocks: usize,
    pub payload_bytes: u64,
    pub offset_bytes: u64,
    pub memory_bytes: u64,
    pub over_threshold: bool,
    pub pool_exhausted: bool,
}

/// Fuses the configured input with ground-truth poses for every `(N, M)`
/// and reports block counts and memory.
pub fn experiment_memory(config: &PipelineConfig, sweep: &[(usize, usize)]) -> Result<Vec<MemoryRow>> {
    let mut rows = Vec::with_capacity(sweep.len());
    for &(n, m) in sweep {
        let mut c = config.clone();
        c.grid.blocks_per_axis = n;
        c.grid.voxels_per_block_axis = m;
        c.grid.pool_capacity = config.memory.pool_capacity.or(config.grid.pool_capacity);
        c.tracking = TrackingMode::GroundTruth;
        c.validate()?;
        let out = run(&c)?;
        let pool_exhausted = match out.error() {
            None => false,
            Some(FusionError::PoolExhausted { .. }) => true,
            Some(e) => return Err(FusionError::InvalidConfig(format!("sweep entry {n}x{m}: {e}"))),
        };
        let blocks = out.grid.allocated_count();
        let memory_bytes = out.grid.memory_bytes();
        rows.push(MemoryRow {
            blocks_per_axis: n,
            voxels_per_block_axis: m,
            voxel_size: out.grid.config().voxel_size(),
            frames: out.metrics.rows.len(),
            blocks,
            payload_bytes: 2 * blocks as u64 * (m as u64).pow(3),
            offset_bytes: 4 * (n as u64).pow(3),
            memory_bytes,
            over_threshold: config.memory.threshold_bytes.is_some_and(|t| memory_bytes > t),
            pool_exhausted,
        });
    }
    Ok(rows)
}

pub fn write_memory_experiment(rows: &[MemoryRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
    }
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "blocks_per_axis",
        "voxels_per_block_axis",
        "voxel_size",
        "frames",
        "blocks",
        "payload_bytes",
        "offset_bytes",
        "memory_bytes",
        "over_threshold",
        "pool_exhausted",
    ])
    .map_err(&err)?;
    for r in rows {
        w.write_record([
            r.blocks_per_axis.to_string(),
            r.voxels_per_block_axis.to_string(),
            format!("{:.6e}", r.voxel_size),
            r.frames.to_string(),
            r.blocks.to_string(),
            r.payload_bytes.to_string(),
            r.offset_bytes.to_string(),
            r.memory_bytes.to_string(),
            r.over_threshold.to_string(),
            r.pool_exhausted.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| FusionError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_noise_converges_to_mean() {
        let f = FiltersSection::default();
        let exp = experiment_filters(&f, 11).unwrap();
        let bound = 3.0 * f.sigma_start / (f.steps as f64).sqrt();
        for t in exp.traces.iter().filter(|t| t.scenario == Scenario::Constant) {
            let e = t.estimate.map(|x| x.unwrap());
            // all three compute the same sample mean
            assert!((e[0] - e[2]).abs() < 1e-12 && (e[1] - e[2]).abs() < 1e-12);
            assert!((e[2] - f.signal).abs() <= bound, "trial {}", t.trial);
        }
    }

    #[test]
    fn noiseless_filters_are_exact_from_the_first_step() {
        let exp = experiment_filters(&FiltersSection::default(), 1).unwrap();
        for t in exp.traces.iter().filter(|t| t.scenario == Scenario::Noiseless) {
            // exact up to rounding of the blend
            assert!(t
                .squared_error
                .iter()
                .all(|e| e.iter().all(|&x| x <= (1e-15 * 0.01f64).powi(2))));
        }
    }

    #[test]
    fn kalman_wins_under_ramping_noise() {
        let exp = experiment_filters(&FiltersSection::default(), 2024).unwrap();
        let ramp = exp.summaries.iter().find(|s| s.scenario == Scenario::Ramp).unwrap();
        assert!(ramp.kalman_win_rate >= 0.8, "{ramp:?}");
    }

    #[test]
    fn matched_gain_is_reached_at_steady_state() {
        let (w, p) = (0.1, 4e-6);
        let q = matched_process_variance(w, p);
        let mut var = p;
        let mut gain = 0.0;
        for _ in 0..500 {
            let m = var + q;
            gain = m / (m + p);
            var = (1.0 - gain) * m;
        }
        assert!((gain - w).abs() < 1e-9);
    }

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("8x8, 16X8,").unwrap(), vec![(8, 8), (16, 8)]);
        assert!(parse_sweep("8by8").is_err());
    }
}
