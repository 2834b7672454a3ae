use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::netlist::{InstId, NetId, Netlist};

use super::LogicDelayTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexRole {
    Combinational,
    /// Output side of a sequential instance; arrival is zero here.
    Launch,
    /// Input side of a sequential instance; required time is the clock period.
    Capture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingVertex {
    pub inst: Option<InstId>,
    pub role: VertexRole,
    /// Charged when the signal leaves the vertex.
    pub logic: f64,
    pub level: usize,
    /// Latest arrival at the vertex input.
    pub arrival: f64,
    /// Latest time the signal may arrive at the vertex input. `+∞` when no
    /// capture point is reachable.
    pub required: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingArc {
    pub src: usize,
    pub dst: usize,
    pub net: Option<NetId>,
    pub load_index: usize,
    pub delay: f64,
    pub slack: f64,
}

/// Levelized timing DAG. Sequential instances are split into launch and
/// capture vertices, so the graph is acyclic whenever the combinational
/// logic is.
#[derive(Debug, Clone)]
pub struct TimingGraph {
    pub(crate) vertices: Vec<TimingVertex>,
    pub(crate) arcs: Vec<TimingArc>,
    pub(crate) fanin: Vec<Vec<usize>>,
    pub(crate) fanout: Vec<Vec<usize>>,
    pub(crate) levels: Vec<Vec<usize>>,
    /// Arc ids per net, in load order.
    pub(crate) net_arcs: Vec<Vec<usize>>,
    /// Fan-in arc realizing each vertex's arrival time.
    pub(crate) best_fanin: Vec<Option<usize>>,
    pub clock_period: f64,
}

impl TimingGraph {
    /// One vertex per combinational instance; launch/capture vertices for a
    /// sequential instance only where it drives or receives a timing arc.
    /// One arc per driver→load pin pair of every timing net.
    pub fn from_netlist(netlist: &Netlist, table: &LogicDelayTable, clock_period: f64) -> Result<Self> {
        let n = netlist.num_instances();
        let mut drives = vec![false; n];
        let mut receives = vec![false; n];
        for net in netlist.timing_nets() {
            let net = netlist.net(net);
            drives[netlist.pin(net.driver).owner.0] = true;
            for &l in &net.loads {
                receives[netlist.pin(l).owner.0] = true;
            }
        }

        let mut vertices = Vec::new();
        // (launch-or-comb vertex, capture-or-comb vertex) per instance
        let mut out_vertex = vec![usize::MAX; n];
        let mut in_vertex = vec![usize::MAX; n];
        let mut push = |inst: InstId, role: VertexRole, logic: f64| {
            vertices.push(TimingVertex {
                inst: Some(inst),
                role,
                logic,
                level: 0,
                arrival: 0.0,
                required: f64::INFINITY,
            });
            vertices.len() - 1
        };
        for (i, inst) in netlist.instances().iter().enumerate() {
            if !drives[i] && !receives[i] {
                continue;
            }
            let logic = table.delay(inst.kind);
            if inst.sequential {
                if drives[i] {
                    out_vertex[i] = push(InstId(i), VertexRole::Launch, logic);
                }
                if receives[i] {
                    in_vertex[i] = push(InstId(i), VertexRole::Capture, 0.0);
                }
            } else {
                let v = push(InstId(i), VertexRole::Combinational, logic);
                out_vertex[i] = v;
                in_vertex[i] = v;
            }
        }

        let mut arcs = Vec::new();
        let mut net_arcs = vec![Vec::new(); netlist.num_nets()];
        for net_id in netlist.timing_nets() {
            let net = netlist.net(net_id);
            let src = out_vertex[netlist.pin(net.driver).owner.0];
            for (k, &l) in net.loads.iter().enumerate() {
                let dst = in_vertex[netlist.pin(l).owner.0];
                net_arcs[net_id.0].push(arcs.len());
                arcs.push(TimingArc {
                    src,
                    dst,
                    net: Some(net_id),
                    load_index: k,
                    delay: 0.0,
                    slack: f64::INFINITY,
                });
            }
        }
        Self::assemble(vertices, arcs, net_arcs, clock_period, Some(netlist))
    }

    /// Builds a graph from raw vertices `(role, logic)` and arcs
    /// `(src, dst, delay)`.
    pub fn from_edges(vertices: &[(VertexRole, f64)], arcs: &[(usize, usize, f64)], clock_period: f64) -> Result<Self> {
        let vertices = vertices
            .iter()
            .map(|&(role, logic)| TimingVertex {
                inst: None,
                role,
                logic,
                level: 0,
                arrival: 0.0,
                required: f64::INFINITY,
            })
            .collect::<Vec<_>>();
        let n = vertices.len();
        let arcs = arcs
            .iter()
            .map(|&(src, dst, delay)| {
                if src >= n || dst >= n {
                    return Err(Error::Validation(format!("arc {src}->{dst} out of range")));
                }
                Ok(TimingArc {
                    src,
                    dst,
                    net: None,
                    load_index: 0,
                    delay,
                    slack: f64::INFINITY,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(vertices, arcs, Vec::new(), clock_period, None)
    }

    fn assemble(
        mut vertices: Vec<TimingVertex>,
        arcs: Vec<TimingArc>,
        net_arcs: Vec<Vec<usize>>,
        clock_period: f64,
        netlist: Option<&Netlist>,
    ) -> Result<Self> {
        let n = vertices.len();
        let mut fanin = vec![Vec::new(); n];
        let mut fanout = vec![Vec::new(); n];
        for (a, arc) in arcs.iter().enumerate() {
            fanout[arc.src].push(a);
            fanin[arc.dst].push(a);
        }
        let levels = levelize_adjacency(&arcs, &fanin, &fanout).map_err(|stuck| {
            let name = match (vertices[stuck].inst, netlist) {
                (Some(i), Some(nl)) => nl.instance(i).name.clone(),
                _ => format!("vertex {stuck}"),
            };
            Error::CombinationalCycle(name)
        })?;
        for (l, level) in levels.iter().enumerate() {
            for &v in level {
                vertices[v].level = l;
            }
        }
        Ok(TimingGraph {
            best_fanin: vec![None; n],
            vertices,
            arcs,
            fanin,
            fanout,
            levels,
            net_arcs,
            clock_period,
        })
    }

    pub fn vertices(&self) -> &[TimingVertex] {
        &self.vertices
    }

    pub fn arcs(&self) -> &[TimingArc] {
        &self.arcs
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn fanin(&self, v: usize) -> &[usize] {
        &self.fanin[v]
    }

    pub fn fanout(&self, v: usize) -> &[usize] {
        &self.fanout[v]
    }

    /// Arc ids of one net, indexed by load position.
    pub fn net_arcs(&self, net: NetId) -> &[usize] {
        self.net_arcs.get(net.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn set_arc_delay(&mut self, arc: usize, delay: f64) {
        self.arcs[arc].delay = delay;
    }

    pub fn set_logic_delay(&mut self, vertex: usize, logic: f64) {
        self.vertices[vertex].logic = logic;
    }

    /// Vertices with no fan-in start timing paths.
    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|&v| self.fanin[v].is_empty())
    }

    pub fn captures(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|&v| self.vertices[v].role == VertexRole::Capture)
    }

    /// Vertices that neither reach a capture point nor are one.
    pub fn is_dangling(&self, v: usize) -> bool {
        self.vertices[v].required == f64::INFINITY
    }
}

/// Topological levels by Kahn's algorithm: level 0 holds every vertex
/// without fan-in, and `level(v) = 1 + max level(pred)`.
fn levelize_adjacency(
    arcs: &[TimingArc],
    fanin: &[Vec<usize>],
    fanout: &[Vec<usize>],
) -> Result<Vec<Vec<usize>>, usize> {
    let n = fanin.len();
    let mut indeg: Vec<usize> = fanin.iter().map(Vec::len).collect();
    let mut level = vec![0usize; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut done = 0;
    while let Some(v) = queue.pop_front() {
        done += 1;
        for &a in &fanout[v] {
            let w = arcs[a].dst;
            level[w] = level[w].max(level[v] + 1);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    if done < n {
        return Err((0..n).find(|&v| indeg[v] > 0).expect("some vertex left"));
    }
    let depth = level.iter().copied().max().map_or(0, |m| m + 1);
    let mut levels = vec![Vec::new(); depth];
    for (v, &l) in level.iter().enumerate() {
        levels[l].push(v);
    }
    Ok(levels)
}
