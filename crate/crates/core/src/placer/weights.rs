use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sta::{CriticalPath, TimingGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    pub alpha: f64,
    /// Global-timing term, active only while the threshold is negative.
    pub beta: f64,
    /// Depth bonus for critical-path arcs.
    pub gamma: f64,
    /// Percentile of arc slacks used as the threshold `T_thr`.
    pub percentile: f64,
    pub base_min: f64,
    pub base_max: f64,
    /// Weight of arcs at or above the threshold.
    pub base_weight: f64,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            alpha: 1.5,
            beta: 0.5,
            gamma: 0.3,
            percentile: 5.0,
            base_min: 1e-3,
            base_max: 10.0,
            base_weight: 0.0,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::Validation("alpha, beta and gamma must be non-negative".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::Validation(format!(
                "percentile must lie in (0, 100), got {}",
                self.percentile
            )));
        }
        if !(self.base_min > 0.0 && self.base_max >= self.base_min) {
            return Err(Error::Validation("invalid weight base clamp".into()));
        }
        Ok(())
    }
}

/// Nearest-rank percentile of the finite slacks.
pub fn estimate_timing_threshold(slacks: &[f64], percentile: f64) -> Result<f64> {
    let mut v: Vec<f64> = slacks.iter().copied().filter(|s| s.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::Validation("no finite slacks to take a percentile of".into()));
    }
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

/// Position of an arc on a critical path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPosition {
    /// Arcs from this one to the endpoint, this one included.
    pub c_forward: usize,
    pub c_max: usize,
}

/// `b^e` with `b = clamp(1 − slack/Cl, b_min, b_max)` and
/// `e = α + β·slack/T_thr + γ·c_forward/c_max`; the β term only applies
/// for a negative threshold and the γ term only on a critical path.
pub fn slack_weight(
    slack: f64,
    path: Option<PathPosition>,
    t_thr: f64,
    clock_period: f64,
    cfg: &WeightingConfig,
) -> f64 {
    let base = (1.0 - slack / clock_period).clamp(cfg.base_min, cfg.base_max);
    let mut e = cfg.alpha;
    if t_thr < 0.0 {
        e += cfg.beta * slack / t_thr;
    }
    if let Some(p) = path {
        e += cfg.gamma * p.c_forward as f64 / p.c_max.max(1) as f64;
    }
    base.powf(e)
}

/// Timing weight of one arc: [`slack_weight`] for negative slack below the
/// threshold, `base_weight` otherwise.
pub fn timing_arc_weight(
    slack: f64,
    path: Option<PathPosition>,
    t_thr: f64,
    clock_period: f64,
    cfg: &WeightingConfig,
) -> f64 {
    if slack < t_thr && slack < 0.0 {
        slack_weight(slack, path, t_thr, clock_period, cfg)
    } else {
        cfg.base_weight
    }
}

/// Per-arc path position over several critical paths; where paths share
/// an arc the position farthest from its endpoint wins.
pub fn path_positions(graph: &TimingGraph, paths: &[CriticalPath]) -> Vec<Option<PathPosition>> {
    let mut pos: Vec<Option<PathPosition>> = vec![None; graph.arcs().len()];
    for path in paths {
        let c_max = path.c_max();
        for (k, &a) in path.arcs.iter().enumerate() {
            let cand = PathPosition {
                c_forward: path.c_forward(k),
                c_max,
            };
            let better = match pos[a] {
                None => true,
                Some(old) => (cand.c_forward as f64 / cand.c_max as f64) > (old.c_forward as f64 / old.c_max as f64),
            };
            if better {
                pos[a] = Some(cand);
            }
        }
    }
    pos
}

/// Weights for every arc of an analyzed graph.
pub fn arc_weights(
    graph: &TimingGraph,
    positions: &[Option<PathPosition>],
    t_thr: f64,
    cfg: &WeightingConfig,
) -> Vec<f64> {
    let cl = graph.clock_period;
    graph
        .arcs()
        .par_iter()
        .zip(positions.par_iter())
        .map(|(arc, &p)| timing_arc_weight(arc.slack, p, t_thr, cl, cfg))
        .collect()
}
