use std::io::Write;

use serde::{Deserialize, Serialize};

use super::b2b::b2b_coefficients;
use super::system::{assemble_quadratic_system, solve_quadratic, AssemblyParams, TimingTerm};
use super::weights::{arc_weights, estimate_timing_threshold, path_positions};
use super::{clock_region_pseudo_nets, long_path_instances, PlacerConfig, PseudoKind, PseudoNet};
use crate::congestion::{compute_routing_density, GCellGrid};
use crate::delay::{FeatureContext, NetDelayModel};
use crate::device::Device;
use crate::error::{Error, Result};
use crate::legalize::{adjust_resources, detect_overflow, rough_legalize, BinGrid};
use crate::netlist::Netlist;
use crate::placement::{total_hpwl, PlacementState};
use crate::sta::{run_sta, TimingGraph, TimingSummary};

/// One trace row, describing the placement entering `iteration`. The last
/// row describes the returned placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub hpwl: f64,
    pub wns: f64,
    pub tns: f64,
    pub cpd: f64,
    pub max_utilization: f64,
    pub overflowed_bins: usize,
    pub cg_iterations: usize,
    /// HPWL of the unspread solve leaving this iteration.
    pub solved_hpwl: f64,
    pub timing_arcs: usize,
    pub clock_region_nets: usize,
    pub anchors: usize,
}

#[derive(Debug, Clone)]
pub struct PlaceResult {
    pub placement: PlacementState,
    pub trace: Vec<IterationRecord>,
    /// Required time used for slacks; `None` when no timing ran.
    pub clock_period: Option<f64>,
}

pub fn write_trace_csv(trace: &[IterationRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)
            .map_err(|e| Error::Parse(format!("trace serialization: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

/// Mean net-model weight with pair distances clamped to `min_distance`,
/// so coincident pins do not dominate the anchor scale.
fn mean_b2b_weight(netlist: &Netlist, placement: &PlacementState, eps: f64, min_distance: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for id in netlist.net_ids() {
        let net = netlist.net(id);
        if net.is_clock || net.pin_count() < 2 {
            continue;
        }
        for (axis, pairs) in crate::placement::Axis::BOTH
            .iter()
            .zip(b2b_coefficients(net, netlist, placement, eps))
        {
            let c = placement.coords(*axis);
            for q in pairs {
                let pa = netlist.pin(q.a);
                let pb = netlist.pin(q.b);
                let (oa, ob) = match axis {
                    crate::placement::Axis::X => (pa.offset.0, pb.offset.0),
                    crate::placement::Axis::Y => (pa.offset.1, pb.offset.1),
                };
                let d = (c[pa.owner.0] + oa - c[pb.owner.0] - ob).abs();
                sum += q.weight * d.max(eps) / d.max(min_distance);
                n += 1;
            }
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Runs STA at `placement`. In auto mode (`fixed` is `None`) the required
/// time follows the measured CPD, `auto_clock_factor × CPD`, from the
/// first update after the initial solve on; before that only CPD is
/// reported.
#[allow(clippy::too_many_arguments)]
fn timing_update(
    graph: &mut TimingGraph,
    netlist: &Netlist,
    placement: &PlacementState,
    grid: &GCellGrid,
    model: &dyn NetDelayModel,
    cfg: &PlacerConfig,
    clock_period: &mut Option<f64>,
    auto_ready: bool,
) -> Result<TimingSummary> {
    let ctx = FeatureContext::with_grid(netlist, placement, grid.clone());
    graph.clock_period = cfg.clock_period.or(*clock_period).unwrap_or(1.0);
    let report = run_sta(graph, &ctx, model, cfg.batch_size)?;
    if cfg.clock_period.is_some() {
        return Ok(report.summary);
    }
    let cpd = report.summary.cpd;
    if !auto_ready {
        // CPD does not depend on the required time; slacks do.
        return Ok(TimingSummary {
            wns: f64::NAN,
            tns: f64::NAN,
            cpd,
        });
    }
    let cl = cfg.auto_clock_factor * cpd;
    if !(cl > 0.0 && cl.is_finite()) {
        return Err(Error::Numerical(format!("cannot derive a clock period from CPD {cpd}")));
    }
    *clock_period = Some(cl);
    graph.clock_period = cl;
    Ok(graph.analyze().0)
}

/// Iterates timing update, weighting, quadratic solve and rough
/// legalization. `model` is required when `λ > 0`; with `λ = 0` it only
/// feeds the trace.
pub fn global_place(
    netlist: &Netlist,
    device: &Device,
    cfg: &PlacerConfig,
    model: Option<&dyn NetDelayModel>,
) -> Result<PlaceResult> {
    cfg.validate()?;
    if cfg.lambda > 0.0 && model.is_none() {
        return Err(Error::Validation(
            "timing-driven placement (lambda > 0) needs a delay model".into(),
        ));
    }
    let mut clock_period = cfg.clock_period;
    let mut graph = match model {
        Some(_) => Some(TimingGraph::from_netlist(
            netlist,
            &cfg.logic_delays,
            clock_period.unwrap_or(1.0),
        )?),
        None => None,
    };
    let mut bins = BinGrid::new(device, netlist, cfg.legalize.bin_size)?;
    let mut place = PlacementState::initial(netlist, device);
    let mut anchors: Vec<PseudoNet> = Vec::new();
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let params = |lambda| AssemblyParams {
        lambda,
        b2b_epsilon: cfg.b2b_epsilon,
        min_distance: cfg.pseudo_min_distance,
    };

    let mut iteration = 0;
    loop {
        let lambda = cfg.lambda_at(iteration);
        let grid = compute_routing_density(netlist, &place, device, &cfg.congestion)?;
        let summary = match (model, graph.as_mut()) {
            (Some(m), Some(g)) => Some(timing_update(
                g,
                netlist,
                &place,
                &grid,
                m,
                cfg,
                &mut clock_period,
                iteration >= 1,
            )?),
            _ => None,
        };
        let hpwl = total_hpwl(netlist, &place);
        trace.push(IterationRecord {
            iteration,
            lambda,
            hpwl,
            wns: summary.map_or(f64::NAN, |s| s.wns),
            tns: summary.map_or(f64::NAN, |s| s.tns),
            cpd: summary.map_or(f64::NAN, |s| s.cpd),
            max_utilization: bins.max_utilization(netlist, &place),
            overflowed_bins: detect_overflow(&place, netlist, &bins).len(),
            cg_iterations: 0,
            solved_hpwl: f64::NAN,
            timing_arcs: 0,
            clock_region_nets: 0,
            anchors: anchors.len(),
        });
        if iteration >= cfg.max_iterations || converged(&trace, cfg) {
            break;
        }

        let mut terms = Vec::new();
        let mut region_nets = Vec::new();
        if lambda > 0.0 {
            let g = graph.as_ref().expect("timing graph exists when lambda > 0");
            let slacks: Vec<f64> = g.arcs().iter().map(|a| a.slack).collect();
            if slacks.iter().any(|s| s.is_finite()) {
                let t_thr = estimate_timing_threshold(&slacks, cfg.weighting.percentile)?;
                let paths = g.worst_paths(cfg.critical_paths);
                let positions = path_positions(g, &paths);
                let mut w = arc_weights(g, &positions, t_thr, &cfg.weighting);
                if cfg.weight_momentum > 0.0 {
                    history.resize(w.len(), 0.0);
                    for (h, w) in history.iter_mut().zip(w.iter_mut()) {
                        *h = cfg.weight_momentum * *h + *w;
                        *w = *h;
                    }
                }
                for (arc, &w) in g.arcs().iter().zip(&w) {
                    if w > 0.0 {
                        if let Some(n) = arc.net {
                            let net = netlist.net(n);
                            terms.push(TimingTerm {
                                driver: net.driver,
                                load: net.loads[arc.load_index],
                                weight: w,
                            });
                        }
                    }
                }
                let long = long_path_instances(g, &paths, cfg.long_path_arcs);
                region_nets = clock_region_pseudo_nets(
                    &long,
                    &place,
                    device,
                    cfg.clock_region_majority,
                    cfg.clock_region_weight,
                );
            }
        }
        let mut pseudo = anchors.clone();
        pseudo.extend_from_slice(&region_nets);
        let system = assemble_quadratic_system(netlist, &place, &pseudo, &terms, &params(lambda))?;
        let (solved, stats) = solve_quadratic(&system, &place, device, &cfg.solver);
        {
            let last = trace.last_mut().expect("row pushed above");
            last.cg_iterations = stats[0].iterations + stats[1].iterations;
            last.solved_hpwl = total_hpwl(netlist, &solved);
            last.timing_arcs = terms.len();
            last.clock_region_nets = region_nets.len();
        }

        let spread = rough_legalize(&solved, netlist, &bins)?;
        let w_mp = cfg.anchor_weight(
            iteration,
            mean_b2b_weight(netlist, &spread.placement, cfg.b2b_epsilon, cfg.pseudo_min_distance),
        );
        place = spread.placement;
        anchors = if w_mp > 0.0 {
            netlist
                .movable()
                .map(|inst| {
                    let (x, y) = place.get(inst);
                    PseudoNet {
                        inst,
                        x,
                        y: Some(y),
                        weight: w_mp,
                        kind: PseudoKind::Anchor,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let grid = compute_routing_density(netlist, &place, device, &cfg.congestion)?;
        adjust_resources(&place, netlist, device, &mut bins, &grid, &cfg.legalize);
        iteration += 1;
    }
    Ok(PlaceResult {
        placement: place,
        trace,
        clock_period,
    })
}

/// HPWL settled for `hpwl_window` consecutive iterations after warm-up.
fn converged(trace: &[IterationRecord], cfg: &PlacerConfig) -> bool {
    let n = trace.len();
    let w = cfg.hpwl_window;
    if w == 0 || n < w + 1 || trace[n - 1].iteration < cfg.warmup_iterations + w {
        return false;
    }
    trace[n - 1 - w..].windows(2).all(|p| {
        let (a, b) = (p[0].hpwl, p[1].hpwl);
        (b - a).abs() <= cfg.hpwl_tolerance * a.abs().max(f64::MIN_POSITIVE)
    })
}
