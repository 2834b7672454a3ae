//! Timing-driven quadratic global placement.

mod b2b;
mod global;
mod system;
mod weights;

use serde::{Deserialize, Serialize};

use crate::congestion::CongestionConfig;
use crate::device::Device;
use crate::error::{Error, Result};
use crate::legalize::LegalizeConfig;
use crate::netlist::InstId;
use crate::placement::PlacementState;
use crate::sta::{CriticalPath, LogicDelayTable, TimingGraph};

pub use b2b::{b2b_axis, b2b_coefficients, b2b_quadratic, B2bPair, B2B_EPSILON};
pub use global::{global_place, write_trace_csv, IterationRecord, PlaceResult};
pub use system::{
    assemble_quadratic_system, conjugate_gradient, solve_quadratic, AssemblyParams, CgStats, CsrMatrix, Endpoint,
    QuadTerm, QuadraticSystem, SolverConfig, TimingTerm,
};
pub use weights::{
    arc_weights, estimate_timing_threshold, path_positions, slack_weight, timing_arc_weight, PathPosition,
    WeightingConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoKind {
    /// Density anchor, scaled by `1 − λ`.
    Anchor,
    /// Clock-region attractor, scaled by `λ`; horizontal only.
    ClockRegion,
}

/// Two-pin net from an instance to a fixed target. A `None` coordinate
/// leaves that axis free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoNet {
    pub inst: InstId,
    pub x: f64,
    pub y: Option<f64>,
    pub weight: f64,
    pub kind: PseudoKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacerConfig {
    pub lambda: f64,
    /// Iterations over which λ ramps linearly from 0.
    pub warmup_iterations: usize,
    pub weighting: WeightingConfig,
    /// Required time `Cl` (ns). When absent it is set to
    /// `auto_clock_factor × CPD` at the first timing update after the
    /// initial solve.
    pub clock_period: Option<f64>,
    pub auto_clock_factor: f64,
    pub max_iterations: usize,
    /// Stop once the relative HPWL change stays below this for
    /// `hpwl_window` consecutive iterations after warm-up.
    pub hpwl_tolerance: f64,
    pub hpwl_window: usize,
    /// `w0` as a fraction of the mean net-model weight.
    pub anchor_weight_fraction: f64,
    /// Anchors grow as `w0·(1 + iter / anchor_growth)`.
    pub anchor_growth: f64,
    pub b2b_epsilon: f64,
    /// Distance clamp of timing-arc and pseudo-net terms (sites).
    pub pseudo_min_distance: f64,
    pub solver: SolverConfig,
    pub batch_size: usize,
    /// Worst paths receiving the depth bonus.
    pub critical_paths: usize,
    /// Per-arc timing weights accumulate as `m·previous + current`; 0 uses
    /// the current weights alone.
    pub weight_momentum: f64,
    /// Minimum arc count of a path considered for clock-region pulls.
    pub long_path_arcs: usize,
    pub clock_region_majority: f64,
    pub clock_region_weight: f64,
    pub legalize: LegalizeConfig,
    pub congestion: CongestionConfig,
    pub logic_delays: LogicDelayTable,
}

impl Default for PlacerConfig {
    fn default() -> Self {
        PlacerConfig {
            lambda: 0.5,
            warmup_iterations: 10,
            weighting: WeightingConfig::default(),
            clock_period: None,
            auto_clock_factor: 0.8,
            max_iterations: 60,
            hpwl_tolerance: 0.005,
            hpwl_window: 3,
            anchor_weight_fraction: 1.0,
            anchor_growth: 5.0,
            b2b_epsilon: B2B_EPSILON,
            pseudo_min_distance: 1.0,
            solver: SolverConfig::default(),
            batch_size: 256,
            critical_paths: 8,
            weight_momentum: 0.0,
            long_path_arcs: 8,
            clock_region_majority: 0.5,
            clock_region_weight: 0.25,
            legalize: LegalizeConfig::default(),
            congestion: CongestionConfig::default(),
            logic_delays: LogicDelayTable::default(),
        }
    }
}

impl PlacerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        self.weighting.validate()?;
        if let Some(cl) = self.clock_period {
            if !(cl > 0.0 && cl.is_finite()) {
                return Err(Error::Validation(format!("clock period must be positive, got {cl}")));
            }
        }
        if !(self.auto_clock_factor > 0.0) {
            return Err(Error::Validation("auto_clock_factor must be positive".into()));
        }
        if !(self.b2b_epsilon > 0.0 && self.pseudo_min_distance > 0.0) {
            return Err(Error::Validation("distance clamps must be positive".into()));
        }
        if !(self.anchor_weight_fraction >= 0.0 && self.anchor_growth > 0.0) {
            return Err(Error::Validation("invalid anchor schedule".into()));
        }
        if !(self.clock_region_majority >= 0.0 && self.clock_region_majority < 1.0) {
            return Err(Error::Validation("clock_region_majority must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.weight_momentum) {
            return Err(Error::Validation("weight_momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.solver.max_iterations == 0 {
            return Err(Error::Validation(
                "batch size and CG iterations must be positive".into(),
            ));
        }
        if !(self.legalize.bin_size > 0.0) {
            return Err(Error::Validation("bin size must be positive".into()));
        }
        Ok(())
    }

    /// λ at an iteration: linear ramp over the warm-up, then constant.
    pub fn lambda_at(&self, iteration: usize) -> f64 {
        if self.warmup_iterations == 0 {
            self.lambda
        } else {
            self.lambda * (iteration as f64 / self.warmup_iterations as f64).min(1.0)
        }
    }

    /// Anchor weight `w_mp` given the mean net-model weight.
    pub fn anchor_weight(&self, iteration: usize, mean_b2b: f64) -> f64 {
        self.anchor_weight_fraction * mean_b2b * (1.0 + iteration as f64 / self.anchor_growth)
    }
}

/// Distinct instances along each path with at least `min_arcs` arcs, in
/// signal order.
pub fn long_path_instances(graph: &TimingGraph, paths: &[CriticalPath], min_arcs: usize) -> Vec<Vec<InstId>> {
    paths
        .iter()
        .filter(|p| p.c_max() >= min_arcs.max(1))
        .map(|p| {
            let mut out: Vec<InstId> = Vec::new();
            for v in p.vertices(graph) {
                if let Some(i) = graph.vertices()[v].inst {
                    if !out.contains(&i) {
                        out.push(i);
                    }
                }
            }
            out
        })
        .collect()
}

/// For every path whose dominant clock region holds more than `majority`
/// of its instances, pulls each path instance horizontally toward that
/// region's center.
pub fn clock_region_pseudo_nets(
    paths: &[Vec<InstId>],
    placement: &PlacementState,
    device: &Device,
    majority: f64,
    weight: f64,
) -> Vec<PseudoNet> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_empty() {
            continue;
        }
        let mut count = vec![0usize; device.clock_regions.len()];
        for &i in path {
            let (x, y) = placement.get(i);
            count[device.region_of(x, y)] += 1;
        }
        // Lowest region index wins ties; a tie can only matter below the
        // majority anyway.
        let (region, &best) = count
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one region");
        if best as f64 > majority * path.len() as f64 {
            let cx = device.clock_regions[region].center_x();
            out.extend(path.iter().map(|&inst| PseudoNet {
                inst,
                x: cx,
                y: None,
                weight,
                kind: PseudoKind::ClockRegion,
            }));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn two_region_device() -> Device {
        Device::with_grid(20, 10, 1, 2, BTreeMap::new(), 24).unwrap()
    }

    fn at(xs: &[f64]) -> (Vec<InstId>, PlacementState) {
        let mut p = PlacementState::new(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            p.set(InstId(i), x, 5.0);
        }
        ((0..xs.len()).map(InstId).collect(), p)
    }

    #[test]
    fn majority_path_is_pulled() {
        let dev = two_region_device();
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 15.0, 16.0, 17.0, 18.0];
        let (path, p) = at(&xs);
        let nets = clock_region_pseudo_nets(&[path], &p, &dev, 0.5, 1.0);
        assert_eq!(nets.len(), 10);
        assert!(nets.iter().all(|n| n.x == 5.0 && n.y.is_none()));
    }

    #[test]
    fn even_split_is_not_pulled() {
        let dev = two_region_device();
        let (path, p) = at(&[1.0, 2.0, 3.0, 15.0, 16.0, 17.0]);
        assert!(clock_region_pseudo_nets(&[path], &p, &dev, 0.5, 1.0).is_empty());
    }

    #[test]
    fn lambda_ramp() {
        let cfg = PlacerConfig::default();
        assert_eq!(cfg.lambda_at(0), 0.0);
        assert_eq!(cfg.lambda_at(5), 0.25);
        assert_eq!(cfg.lambda_at(10), 0.5);
        assert_eq!(cfg.lambda_at(30), 0.5);
        assert!((cfg.anchor_weight(5, 2.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(PlacerConfig::default().validate().is_ok());
        let bad = PlacerConfig {
            lambda: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PlacerConfig {
            clock_period: Some(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
