//! Closed-loop simulation with one control synthesis per integration step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{h1_full, h1_pos, h2_full, h2_pos};
use crate::controller::{control_step, ControlDecision, ControlError, Execution, StallState};
use crate::dynamics::{step, DynamicsError};
use crate::model::{canonical_pairs, in_goal_region, ConfigError, ScenarioConfig, Vec2, WorldState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// State at `t` together with the command applied from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub evaders: Vec<Vec2>,
    pub herders: Vec<Vec2>,
    pub u_h: Vec<Vec2>,
    pub h1_pos: Vec<f64>,
    pub h1_full: Vec<f64>,
    /// Indexed like `canonical_pairs(m)`.
    pub h2_pos: Vec<f64>,
    pub h2_full: Vec<f64>,
    /// Distance of each evader to the goal centre.
    pub d_goal: Vec<f64>,
    pub d_safe: Vec<f64>,
    pub relaxed: bool,
    pub min_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub success: bool,
    /// Start of the hold window that completed the task.
    pub time_to_goal: Option<f64>,
    pub final_time: f64,
    pub steps: usize,
    pub min_h2_pos: Option<f64>,
    pub min_h2_full: Option<f64>,
    pub min_c: Option<f64>,
    pub clamp_count: usize,
    /// Relaxed QP solutions, counted per solve.
    pub relax_count: usize,
    pub perturb_count: usize,
    pub herder_path_lengths: Vec<f64>,
    pub final_state: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub pairs: Vec<(usize, usize)>,
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

/// A run that stopped on an error, with everything logged up to that point.
#[derive(Debug, Error)]
#[error("simulation aborted at t = {}: {error}", partial.summary.final_time)]
pub struct RunFailure {
    pub error: SimError,
    pub partial: TrajectoryLog,
}

/// Why [`Simulation::advance`] returned without a new record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Running,
    Succeeded,
    TimedOut,
}

/// Step-by-step driver of the closed loop.
pub struct Simulation {
    cfg: ScenarioConfig,
    execution: Execution,
    state: WorldState,
    stall: StallState,
    pairs: Vec<(usize, usize)>,
    steps: usize,
    max_steps: usize,
    hold_steps: usize,
    hold_start: Option<usize>,
    records: Vec<StepRecord>,
    clamp_count: usize,
    relax_count: usize,
    perturb_count: usize,
    path_lengths: Vec<f64>,
    outcome: Outcome,
}

fn steps_for(duration: f64, dt: f64) -> usize {
    (duration / dt - 1e-9).ceil().max(0.0) as usize
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let mut cfg = cfg.clone();
        cfg.resolve();
        for warning in cfg.validate()? {
            log::warn!("{warning}");
        }
        Ok(Self {
            execution: Execution::Serial,
            state: WorldState::initial(&cfg),
            stall: StallState::new(&cfg),
            pairs: canonical_pairs(cfg.m),
            steps: 0,
            max_steps: steps_for(cfg.t_max, cfg.dt),
            hold_steps: steps_for(cfg.hold_time, cfg.dt),
            hold_start: None,
            records: Vec::new(),
            clamp_count: 0,
            relax_count: 0,
            perturb_count: 0,
            path_lengths: vec![0.0; cfg.n],
            outcome: Outcome::Running,
            cfg,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    fn check_termination(&mut self) -> Outcome {
        if self.outcome != Outcome::Running {
            return self.outcome;
        }
        let home = self.state.evaders.iter().all(|&x| in_goal_region(x, &self.cfg));
        if !home {
            self.hold_start = None;
        } else {
            let start = *self.hold_start.get_or_insert(self.steps);
            if self.steps - start >= self.hold_steps {
                self.outcome = Outcome::Succeeded;
                return self.outcome;
            }
        }
        if self.steps >= self.max_steps {
            self.outcome = Outcome::TimedOut;
        }
        self.outcome
    }

    /// Synthesises and applies one control step unless the run has ended.
    ///
    /// Returns the decision that was applied, or `None` once the run is over.
    pub fn advance(&mut self) -> Result<Option<ControlDecision>, SimError> {
        if self.check_termination() != Outcome::Running {
            return Ok(None);
        }
        let decision = control_step(&self.state, &self.cfg, &mut self.stall, self.execution)?;
        self.records.push(self.record(&decision));
        self.clamp_count += decision.clamped_count();
        self.perturb_count += decision.perturbed_count();
        self.relax_count += decision.solutions.iter().filter(|s| s.relaxed).count();
        for (len, u) in self.path_lengths.iter_mut().zip(&decision.u_h) {
            *len += u.norm() * self.cfg.dt;
        }
        let mut next = step(&self.state, &decision.u_h, &self.cfg)?;
        self.steps += 1;
        // index-based time avoids drift from repeated addition
        next.t = self.steps as f64 * self.cfg.dt;
        self.state = next;
        Ok(Some(decision))
    }

    fn record(&self, decision: &ControlDecision) -> StepRecord {
        let cfg = &self.cfg;
        let s = &self.state;
        let v = &decision.evader_velocities;
        StepRecord {
            t: s.t,
            evaders: s.evaders.clone(),
            herders: s.herders.clone(),
            u_h: decision.u_h.clone(),
            h1_pos: s.evaders.iter().map(|&x| h1_pos(x, cfg)).collect(),
            h1_full: s.evaders.iter().zip(v).map(|(&x, &vi)| h1_full(x, vi, &cfg.gains, cfg)).collect(),
            h2_pos: self.pairs.iter().map(|&(i, j)| h2_pos(s.evaders[i], s.evaders[j], cfg)).collect(),
            h2_full: self
                .pairs
                .iter()
                .map(|&(i, j)| h2_full(s.evaders[i] - s.evaders[j], v[i] - v[j], &cfg.gains, cfg))
                .collect(),
            d_goal: s.evaders.iter().map(|&x| (x - cfg.goal_center).norm()).collect(),
            d_safe: self.pairs.iter().map(|&(i, j)| (s.evaders[i] - s.evaders[j]).norm()).collect(),
            relaxed: decision.relaxed(),
            min_c: decision.min_c(),
        }
    }

    pub fn summary(&self) -> Summary {
        let fold = |f: fn(&StepRecord) -> Option<f64>| self.records.iter().filter_map(f).reduce(f64::min);
        let success = self.outcome == Outcome::Succeeded;
        Summary {
            success,
            time_to_goal: success
                .then(|| self.hold_start.map(|s| s as f64 * self.cfg.dt))
                .flatten(),
            final_time: self.state.t,
            steps: self.steps,
            min_h2_pos: fold(|r| r.h2_pos.iter().copied().reduce(f64::min)),
            min_h2_full: fold(|r| r.h2_full.iter().copied().reduce(f64::min)),
            min_c: fold(|r| r.min_c),
            clamp_count: self.clamp_count,
            relax_count: self.relax_count,
            perturb_count: self.perturb_count,
            herder_path_lengths: self.path_lengths.clone(),
            final_state: self.state.clone(),
        }
    }

    pub fn into_log(self) -> TrajectoryLog {
        TrajectoryLog {
            summary: self.summary(),
            pairs: self.pairs,
            records: self.records,
        }
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<TrajectoryLog, RunFailure> {
        loop {
            match self.advance() {
                Ok(Some(_)) => {}
                Ok(None) => return Ok(self.into_log()),
                Err(error) => {
                    return Err(RunFailure {
                        error,
                        partial: self.into_log(),
                    })
                }
            }
        }
    }
}

/// Runs a scenario serially to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<TrajectoryLog, RunFailure> {
    run_with(cfg, Execution::Serial)
}

pub fn run_with(cfg: &ScenarioConfig, execution: Execution) -> Result<TrajectoryLog, RunFailure> {
    match Simulation::new(cfg) {
        Ok(sim) => sim.with_execution(execution).run(),
        Err(error) => Err(RunFailure {
            error,
            partial: TrajectoryLog {
                pairs: canonical_pairs(cfg.m),
                records: Vec::new(),
                summary: Summary {
                    success: false,
                    time_to_goal: None,
                    final_time: 0.0,
                    steps: 0,
                    min_h2_pos: None,
                    min_h2_full: None,
                    min_c: None,
                    clamp_count: 0,
                    relax_count: 0,
                    perturb_count: 0,
                    herder_path_lengths: vec![0.0; cfg.n],
                    final_state: WorldState::initial(cfg),
                },
            },
        }),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectory log has no records")]
    EmptyLog,
}

/// Per-step series for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub t: Vec<f64>,
    /// `[evader][step]`.
    pub h1_pos: Vec<Vec<f64>>,
    /// `[pair][step]`, pairs as in [`TrajectoryLog::pairs`].
    pub h2_pos: Vec<Vec<f64>>,
    pub d_goal: Vec<Vec<f64>>,
    pub d_safe: Vec<Vec<f64>>,
}

/// Statistics over the records in the final `hold_time` of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalWindow {
    pub start: f64,
    pub end: f64,
    pub h1_pos_min: Vec<f64>,
    pub h1_pos_max: Vec<f64>,
    pub h1_pos_mean: Vec<f64>,
    pub h2_pos_min: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pairs: Vec<(usize, usize)>,
    pub summary: Summary,
    pub final_window: FinalWindow,
    pub series: Series,
}

fn transpose(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); width];
    for row in rows {
        for (col, v) in out.iter_mut().zip(row) {
            col.push(v);
        }
    }
    out
}

pub fn metrics(log: &TrajectoryLog, hold_time: f64) -> Result<Metrics, MetricsError> {
    let last = log.records.last().ok_or(MetricsError::EmptyLog)?;
    let m = last.h1_pos.len();
    let p = log.pairs.len();
    let series = Series {
        t: log.records.iter().map(|r| r.t).collect(),
        h1_pos: transpose(log.records.iter().map(|r| r.h1_pos.clone()), m),
        h2_pos: transpose(log.records.iter().map(|r| r.h2_pos.clone()), p),
        d_goal: transpose(log.records.iter().map(|r| r.d_goal.clone()), m),
        d_safe: transpose(log.records.iter().map(|r| r.d_safe.clone()), p),
    };

    let start = (log.summary.final_time - hold_time).max(0.0);
    let window: Vec<&StepRecord> = log.records.iter().filter(|r| r.t >= start - 1e-9).collect();
    let window = if window.is_empty() { vec![last] } else { window };
    let column = |f: &dyn Fn(&StepRecord) -> f64| -> Vec<f64> { window.iter().map(|r| f(r)).collect() };
    let stats = |count: usize, pick: &dyn Fn(&StepRecord, usize) -> f64| {
        let cols: Vec<Vec<f64>> = (0..count).map(|i| column(&|r| pick(r, i))).collect();
        let min = cols.iter().map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)).collect::<Vec<_>>();
        let max = cols.iter().map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect::<Vec<_>>();
        let mean = cols.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect::<Vec<_>>();
        (min, max, mean)
    };
    let (h1_min, h1_max, h1_mean) = stats(m, &|r, i| r.h1_pos[i]);
    let (h2_min, _, _) = stats(p, &|r, i| r.h2_pos[i]);

    Ok(Metrics {
        pairs: log.pairs.clone(),
        summary: log.summary.clone(),
        final_window: FinalWindow {
            start: window[0].t,
            end: last.t,
            h1_pos_min: h1_min,
            h1_pos_max: h1_max,
            h1_pos_mean: h1_mean,
            h2_pos_min: h2_min,
        },
        series,
    })
}
