use std::fmt;

use crate::device::Device;
use crate::netlist::{InstId, InstanceKind, Netlist};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InsufficientCapacity {
        kind: InstanceKind,
        demand: usize,
        capacity: f64,
    },
    CombinationalCycle {
        instances: Vec<String>,
    },
    UnplacedFixed {
        instance: String,
    },
    FixedOutsideDie {
        instance: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InsufficientCapacity { kind, demand, capacity } => {
                write!(f, "insufficient {kind} capacity: {demand} instances, {capacity} sites")
            }
            Violation::CombinationalCycle { instances } => {
                write!(f, "combinational cycle through {}", instances.join(" -> "))
            }
            Violation::UnplacedFixed { instance } => {
                write!(f, "fixed instance `{instance}` has no location")
            }
            Violation::FixedOutsideDie { instance } => {
                write!(f, "fixed instance `{instance}` lies outside the die")
            }
        }
    }
}

/// Collects every structural problem; an empty list means the design is
/// placeable.
pub fn validate(netlist: &Netlist, device: &Device) -> Vec<Violation> {
    let mut out = Vec::new();
    for kind in InstanceKind::ALL {
        let demand = netlist.count_kind(kind);
        let capacity = device.total_capacity(kind);
        if demand > 0 && demand as f64 > capacity {
            out.push(Violation::InsufficientCapacity { kind, demand, capacity });
        }
    }
    for inst in netlist.instances() {
        if !inst.fixed {
            continue;
        }
        match inst.fixed_pos {
            None => out.push(Violation::UnplacedFixed {
                instance: inst.name.clone(),
            }),
            Some((x, y)) => {
                if !(x >= 0.0 && x < device.width_f() && y >= 0.0 && y < device.height_f()) {
                    out.push(Violation::FixedOutsideDie {
                        instance: inst.name.clone(),
                    });
                }
            }
        }
    }
    if let Some(cycle) = find_combinational_cycle(netlist) {
        out.push(Violation::CombinationalCycle {
            instances: cycle.into_iter().map(|i| netlist.instance(i).name.clone()).collect(),
        });
    }
    out
}

/// Returns the instances of one combinational cycle, if any. Sequential
/// instances break cycles; clock nets are ignored.
pub fn find_combinational_cycle(netlist: &Netlist) -> Option<Vec<InstId>> {
    let n = netlist.num_instances();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for net in netlist.timing_nets() {
        let net = netlist.net(net);
        let src = netlist.pin(net.driver).owner;
        if netlist.instance(src).sequential {
            continue;
        }
        for &l in &net.loads {
            let dst = netlist.pin(l).owner;
            if !netlist.instance(dst).sequential {
                succ[src.0].push(dst.0);
            }
        }
    }
    // Iterative DFS with colors: 0 white, 1 on stack, 2 done.
    let mut color = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = 1;
        while let Some(top) = stack.last_mut() {
            let v = top.0;
            if top.1 < succ[v].len() {
                let w = succ[v][top.1];
                top.1 += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        parent[w] = v;
                        stack.push((w, 0));
                    }
                    1 => {
                        let mut cycle = vec![InstId(w)];
                        let mut u = v;
                        while u != w {
                            cycle.push(InstId(u));
                            u = parent[u];
                        }
                        cycle.reverse();
                        cycle.rotate_right(1);
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    None
}
