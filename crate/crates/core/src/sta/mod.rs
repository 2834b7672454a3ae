//! Static timing analysis over a levelized timing graph.
//!
//! A run refreshes every arc's net delay from a [`NetDelayModel`] and then
//! propagates arrival and required times level by level.

mod graph;
mod propagate;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay::{FeatureContext, InferenceStats, NetDelayModel};
use crate::error::{Error, Result};
use crate::netlist::{InstanceKind, Netlist};

pub use graph::{TimingArc, TimingGraph, TimingVertex, VertexRole};
pub use propagate::{CriticalPath, TimingSummary};

/// Intrinsic delay per instance kind (ns). For sequential kinds this is the
/// clock-to-output delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogicDelayTable {
    delays: BTreeMap<InstanceKind, f64>,
}

impl Default for LogicDelayTable {
    fn default() -> Self {
        Self::parse(include_str!("../../fixtures/logic_delays.json")).expect("bundled logic delay table is valid")
    }
}

impl LogicDelayTable {
    pub fn parse(text: &str) -> Result<Self> {
        let table: LogicDelayTable = serde_json::from_str(text)?;
        if let Some((k, d)) = table.delays.iter().find(|(_, &d)| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::Validation(format!("logic delay of {k} is {d}")));
        }
        Ok(table)
    }

    pub fn uniform(delay: f64) -> Self {
        LogicDelayTable {
            delays: InstanceKind::ALL.iter().map(|&k| (k, delay)).collect(),
        }
    }

    pub fn delay(&self, kind: InstanceKind) -> f64 {
        self.delays.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, kind: InstanceKind, delay: f64) {
        self.delays.insert(kind, delay);
    }
}

#[derive(Debug, Clone)]
pub struct StaReport {
    pub summary: TimingSummary,
    pub critical_path: CriticalPath,
    pub inference: InferenceStats,
}

/// Full timing update: net delays for every timing net are predicted in
/// batches, written onto the arcs in parallel, then propagated forward and
/// backward.
pub fn run_sta(
    graph: &mut TimingGraph,
    ctx: &FeatureContext<'_>,
    model: &dyn NetDelayModel,
    batch_size: usize,
) -> Result<StaReport> {
    let nets: Vec<_> = ctx.netlist.timing_nets().collect();
    let (table, inference) = model.net_delays(ctx, &nets, batch_size.max(1))?;
    update_arc_delays(graph, |net, k| table.get(net, k));
    let (summary, critical_path) = graph.analyze();
    Ok(StaReport {
        summary,
        critical_path,
        inference,
    })
}

/// One arc of a reported path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub from: String,
    pub to: String,
    pub net: String,
    #[serde(rename = "netD")]
    pub net_delay: f64,
    pub slack: f64,
}

/// Timing report file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub wns: f64,
    pub tns: f64,
    pub cpd: f64,
    pub clock_period: f64,
    pub critical_path: Vec<PathStep>,
}

impl TimingReport {
    pub fn new(graph: &TimingGraph, netlist: &Netlist, summary: TimingSummary, path: &CriticalPath) -> Self {
        let name = |v: usize| {
            graph.vertices[v]
                .inst
                .map_or_else(|| format!("v{v}"), |i| netlist.instance(i).name.clone())
        };
        let critical_path = path
            .arcs
            .iter()
            .map(|&a| {
                let arc = &graph.arcs[a];
                PathStep {
                    from: name(arc.src),
                    to: name(arc.dst),
                    net: arc.net.map_or_else(String::new, |n| netlist.net(n).name.clone()),
                    net_delay: arc.delay,
                    slack: arc.slack,
                }
            })
            .collect();
        TimingReport {
            wns: summary.wns,
            tns: summary.tns,
            cpd: summary.cpd,
            clock_period: graph.clock_period,
            critical_path,
        }
    }
}

/// Writes one delay per arc, looked up by `(net, load index)`.
pub fn update_arc_delays(graph: &mut TimingGraph, delay_of: impl Fn(crate::netlist::NetId, usize) -> f64 + Sync) {
    graph.arcs.par_iter_mut().for_each(|arc| {
        if let Some(net) = arc.net {
            arc.delay = delay_of(net, arc.load_index);
        }
    });
}
