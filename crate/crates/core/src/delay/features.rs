//! Per-net graphs and the 25 timing features fed to the delay model.
//!
//! * 13 per net vertex: position, ten one-hot kind flags, input flag.
//! * 5 per net: HPWL, vertical width, horizontal length, fanout, mean
//!   routing density under the bounding box.
//! * 7 per driver→load pair: |Δx|, |Δy|, load index, IO/DSP/BRAM crossing
//!   flags, pin density between the two pins.

use serde::{Deserialize, Serialize};

use crate::congestion::{compute_routing_density, pin_density_between, CongestionConfig, GCellGrid, PinIndex};
use crate::device::Device;
use crate::error::{Error, Result};
use crate::netlist::{InstId, InstanceKind, NetId, Netlist};
use crate::placement::{net_bbox, BBox, PlacementState};

pub const VERTEX_DIM: usize = 13;
pub const ENV_DIM: usize = 5;
pub const PIN_DIM: usize = 7;
pub const EDGE_TYPES: usize = 4;

pub type NetVertexFeatures = [f64; VERTEX_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetEnvFeatures {
    pub hpwl: f64,
    /// Vertical extent.
    pub width: f64,
    /// Horizontal extent.
    pub length: f64,
    pub fanout: f64,
    pub avg_routing_density: f64,
}

impl NetEnvFeatures {
    pub fn to_array(&self) -> [f64; ENV_DIM] {
        [
            self.hpwl,
            self.width,
            self.length,
            self.fanout,
            self.avg_routing_density,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinRoutingFeatures {
    pub dx: f64,
    pub dy: f64,
    pub net_index: f64,
    pub io_crossing: f64,
    pub dsp_crossing: f64,
    pub bram_crossing: f64,
    pub avg_pin_density: f64,
}

impl PinRoutingFeatures {
    pub fn to_array(&self) -> [f64; PIN_DIM] {
        [
            self.dx,
            self.dy,
            self.net_index,
            self.io_crossing,
            self.dsp_crossing,
            self.bram_crossing,
            self.avg_pin_density,
        ]
    }

    pub fn manhattan(&self) -> f64 {
        self.dx + self.dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeType {
    DriverToLoad = 0,
    LoadToDriver = 1,
    DriverSelf = 2,
    LoadSelf = 3,
}

impl EdgeType {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Directed graph of one net: vertex 0 is the driver, vertex `k + 1` the
/// `k`-th load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGraph {
    pub vertices: Vec<NetVertexFeatures>,
    pub edges: Vec<(usize, usize, EdgeType)>,
}

impl NetGraph {
    /// Star topology for a net with `fanout` loads.
    pub fn star(vertices: Vec<NetVertexFeatures>) -> Self {
        let p = vertices.len();
        let mut edges = Vec::with_capacity(3 * p);
        edges.push((0, 0, EdgeType::DriverSelf));
        for l in 1..p {
            edges.push((0, l, EdgeType::DriverToLoad));
            edges.push((l, 0, EdgeType::LoadToDriver));
            edges.push((l, l, EdgeType::LoadSelf));
        }
        NetGraph { vertices, edges }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Edges with their aggregation coefficient `1/√(in(dst)·out(src))`.
    pub fn normalized_edges(&self) -> Vec<(usize, usize, EdgeType, f64)> {
        let n = self.vertices.len();
        let mut indeg = vec![0usize; n];
        let mut outdeg = vec![0usize; n];
        for &(s, d, _) in &self.edges {
            outdeg[s] += 1;
            indeg[d] += 1;
        }
        self.edges
            .iter()
            .map(|&(s, d, t)| (s, d, t, 1.0 / ((indeg[d] * outdeg[s]) as f64).sqrt()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFeatures {
    pub graph: NetGraph,
    pub env: NetEnvFeatures,
    /// One entry per load, in load order.
    pub pins: Vec<PinRoutingFeatures>,
}

fn vertex_features(kind: InstanceKind, x: f64, y: f64, is_input: bool) -> NetVertexFeatures {
    let mut v = [0.0; VERTEX_DIM];
    v[0] = x;
    v[1] = y;
    v[2 + kind.index()] = 1.0;
    v[12] = if is_input { 1.0 } else { 0.0 };
    v
}

/// Driver→load/load→driver edges plus a self-loop on every vertex, with
/// vertex features taken from the current placement.
pub fn build_net_graph(net: NetId, netlist: &Netlist, placement: &PlacementState) -> Result<NetGraph> {
    let net_ref = netlist.net(net);
    let mut vertices = Vec::with_capacity(net_ref.pin_count());
    for (k, pin) in net_ref.pins().enumerate() {
        let owner = netlist.pin(pin).owner;
        let (x, y) = placement.get(owner);
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::Validation(format!(
                "instance `{}` is not placed",
                netlist.instance(owner).name
            )));
        }
        vertices.push(vertex_features(netlist.instance(owner).kind, x, y, k > 0));
    }
    Ok(NetGraph::star(vertices))
}

/// Placement-dependent state shared by all per-net feature queries: the
/// routing-density grid, a pin index and the locations of crossing blocks.
pub struct FeatureContext<'a> {
    pub netlist: &'a Netlist,
    pub placement: &'a PlacementState,
    pub grid: GCellGrid,
    pub pin_index: PinIndex,
    /// IO, DSP and block-RAM instance locations.
    blocks: [Vec<(InstId, f64, f64)>; 3],
}

impl<'a> FeatureContext<'a> {
    pub fn new(
        netlist: &'a Netlist,
        placement: &'a PlacementState,
        device: &Device,
        congestion: &CongestionConfig,
    ) -> Result<Self> {
        let grid = compute_routing_density(netlist, placement, device, congestion)?;
        Ok(Self::with_grid(netlist, placement, grid))
    }

    pub fn with_grid(netlist: &'a Netlist, placement: &'a PlacementState, grid: GCellGrid) -> Self {
        let pin_index = PinIndex::build(netlist, placement, &grid);
        let mut blocks: [Vec<(InstId, f64, f64)>; 3] = Default::default();
        for id in netlist.instance_ids() {
            let slot = match netlist.instance(id).kind {
                InstanceKind::Io => 0,
                InstanceKind::Dsp => 1,
                InstanceKind::Ramb => 2,
                _ => continue,
            };
            let (x, y) = placement.get(id);
            blocks[slot].push((id, x, y));
        }
        FeatureContext {
            netlist,
            placement,
            grid,
            pin_index,
            blocks,
        }
    }

    pub fn env_features(&self, net: NetId) -> NetEnvFeatures {
        let n = self.netlist.net(net);
        let b = net_bbox(n, self.netlist, self.placement);
        NetEnvFeatures {
            hpwl: b.half_perimeter(),
            width: b.height(),
            length: b.width(),
            fanout: n.fanout() as f64,
            avg_routing_density: self.grid.mean_over(&b),
        }
    }

    /// Features of the pair (driver, `k`-th load).
    pub fn pin_features(&self, net: NetId, k: usize) -> PinRoutingFeatures {
        let n = self.netlist.net(net);
        let load = n.loads[k];
        let pd = self.placement.pin_position(self.netlist, n.driver);
        let pl = self.placement.pin_position(self.netlist, load);
        let b = BBox::of_points([pd, pl]).expect("two points");
        let ends = [self.netlist.pin(n.driver).owner, self.netlist.pin(load).owner];
        let crosses = |slot: usize| {
            let hit = self.blocks[slot]
                .iter()
                .any(|&(id, x, y)| !ends.contains(&id) && x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max);
            if hit {
                1.0
            } else {
                0.0
            }
        };
        PinRoutingFeatures {
            dx: (pl.0 - pd.0).abs(),
            dy: (pl.1 - pd.1).abs(),
            net_index: k as f64,
            io_crossing: crosses(0),
            dsp_crossing: crosses(1),
            bram_crossing: crosses(2),
            avg_pin_density: pin_density_between(pd, pl, &self.pin_index),
        }
    }

    pub fn net_features(&self, net: NetId) -> Result<NetFeatures> {
        let graph = build_net_graph(net, self.netlist, self.placement)?;
        let pins = (0..self.netlist.net(net).fanout())
            .map(|k| self.pin_features(net, k))
            .collect();
        Ok(NetFeatures {
            graph,
            env: self.env_features(net),
            pins,
        })
    }
}
