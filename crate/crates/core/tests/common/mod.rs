#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tdgp_core::placement::PlacementState;
use tdgp_core::placer::{
    assemble_quadratic_system, AssemblyParams, PseudoKind, PseudoNet, QuadraticSystem, TimingTerm, B2B_EPSILON,
};
use tdgp_core::sta::VertexRole;
use tdgp_core::{synth_design, Netlist, SynthConfig, SynthDesign};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Dag = (Vec<(VertexRole, f64)>, Vec<(usize, usize, f64)>);

/// Layered DAG with integer logic and arc delays in 1..=20. Layer 0 holds
/// launch points, the last layer capture points; every other vertex has one
/// to three fan-ins from any earlier layer, so some vertices dangle.
pub fn random_dag(rng: &mut impl Rng, max_vertices: usize) -> Dag {
    let layers = rng.random_range(3..=8);
    let width = (max_vertices / layers).max(1);
    let mut verts = Vec::new();
    let mut ids: Vec<Vec<usize>> = Vec::new();
    for l in 0..layers {
        let role = match l {
            0 => VertexRole::Launch,
            l if l == layers - 1 => VertexRole::Capture,
            _ => VertexRole::Combinational,
        };
        let w = rng.random_range(1..=width);
        ids.push(
            (0..w)
                .map(|_| {
                    let logic = if role == VertexRole::Capture {
                        0.0
                    } else {
                        rng.random_range(1..=20) as f64
                    };
                    verts.push((role, logic));
                    verts.len() - 1
                })
                .collect(),
        );
    }
    let mut arcs = Vec::new();
    for l in 1..layers {
        for &v in &ids[l] {
            let k = rng.random_range(1..=3);
            let mut srcs = Vec::new();
            for _ in 0..k {
                let sl = rng.random_range(0..l);
                let s = ids[sl][rng.random_range(0..ids[sl].len())];
                if !srcs.contains(&s) {
                    srcs.push(s);
                }
            }
            for s in srcs {
                arcs.push((s, v, rng.random_range(1..=20) as f64));
            }
        }
    }
    (verts, arcs)
}

pub struct Enumerated {
    pub arrival: Vec<f64>,
    pub required: Vec<f64>,
    pub slack: Vec<f64>,
    pub wns: f64,
    pub tns: f64,
    pub cpd: f64,
}

/// Walks every path explicitly: forward from each fan-in-free vertex for
/// arrivals and full-path lengths, backward from each capture point for
/// required times.
pub fn enumerate_paths((verts, arcs): &Dag, cl: f64) -> Enumerated {
    let n = verts.len();
    let mut fanin = vec![Vec::new(); n];
    let mut fanout = vec![Vec::new(); n];
    for (a, &(s, d, _)) in arcs.iter().enumerate() {
        fanout[s].push(a);
        fanin[d].push(a);
    }
    let mut arrival = vec![f64::NEG_INFINITY; n];
    let mut through = vec![f64::NEG_INFINITY; arcs.len()];
    for root in (0..n).filter(|&v| fanin[v].is_empty()) {
        let mut stack = vec![(root, 0.0, Vec::<usize>::new())];
        while let Some((v, t, path)) = stack.pop() {
            arrival[v] = arrival[v].max(t);
            if verts[v].0 == VertexRole::Capture {
                for &a in &path {
                    through[a] = through[a].max(t);
                }
            }
            for &a in &fanout[v] {
                let mut p = path.clone();
                p.push(a);
                stack.push((arcs[a].1, t + verts[v].1 + arcs[a].2, p));
            }
        }
    }
    let mut required = vec![f64::INFINITY; n];
    for sink in (0..n).filter(|&v| verts[v].0 == VertexRole::Capture) {
        let mut stack = vec![(sink, 0.0)];
        while let Some((v, suffix)) = stack.pop() {
            required[v] = required[v].min(cl - suffix);
            for &a in &fanin[v] {
                let u = arcs[a].0;
                stack.push((u, suffix + arcs[a].2 + verts[u].1));
            }
        }
    }
    let slack = through
        .iter()
        .map(|&t| if t == f64::NEG_INFINITY { f64::INFINITY } else { cl - t })
        .collect();
    let (mut wns, mut tns, mut cpd) = (f64::INFINITY, 0.0, 0.0f64);
    for v in (0..n).filter(|&v| verts[v].0 == VertexRole::Capture) {
        wns = wns.min(cl - arrival[v]);
        tns += (cl - arrival[v]).min(0.0);
        cpd = cpd.max(arrival[v]);
    }
    Enumerated {
        arrival,
        required,
        slack,
        wns,
        tns,
        cpd,
    }
}

/// `count` nets of 3–20 pins, each on its own instances.
pub fn net_soup(count: usize, seed: u64) -> (Netlist, PlacementState) {
    let mut r = rng(seed);
    let mut instances = Vec::new();
    let mut nets = Vec::new();
    for n in 0..count {
        let pins = r.random_range(3..=20);
        let names: Vec<String> = (0..pins).map(|k| format!("i{n}_{k}")).collect();
        for name in &names {
            instances.push(json!({"name": name, "kind": "LUT"}));
        }
        nets.push(json!({
            "name": format!("n{n}"),
            "driver": {"inst": names[0]},
            "loads": names[1..].iter().map(|s| json!({"inst": s})).collect::<Vec<_>>(),
        }));
    }
    let nl = Netlist::parse(&json!({"instances": instances, "nets": nets}).to_string()).unwrap();
    let mut p = PlacementState::new(nl.num_instances());
    for id in nl.instance_ids() {
        // Some exact repeats to exercise ties.
        let x = if r.random_bool(0.1) {
            5.0
        } else {
            r.random_range(0.0..100.0)
        };
        p.set(id, x, r.random_range(0.0..100.0));
    }
    (nl, p)
}

pub fn anchors_everywhere(nl: &Netlist, p: &PlacementState, seed: u64) -> Vec<PseudoNet> {
    let mut r = rng(seed);
    nl.movable()
        .map(|id| {
            let (x, y) = p.get(id);
            PseudoNet {
                inst: id,
                x: x + r.random_range(-2.0..2.0),
                y: Some(y + r.random_range(-2.0..2.0)),
                weight: r.random_range(0.01..0.5),
                kind: PseudoKind::Anchor,
            }
        })
        .collect()
}

pub fn random_timing(nl: &Netlist, seed: u64) -> Vec<TimingTerm> {
    let mut r = rng(seed);
    nl.timing_nets()
        .flat_map(|n| {
            let net = nl.net(n);
            net.loads.iter().map(move |&l| (net.driver, l)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|(driver, load)| {
            r.random_bool(0.2).then(|| TimingTerm {
                driver,
                load,
                weight: r.random_range(0.1..3.0),
            })
        })
        .collect()
}

pub fn stamped(cells: usize, seed: u64) -> (SynthDesign, PlacementState, QuadraticSystem) {
    let d = design(cells, seed);
    let p = scattered(&d, seed);
    let anchors = anchors_everywhere(&d.netlist, &p, seed);
    let timing = random_timing(&d.netlist, seed);
    let params = AssemblyParams {
        lambda: 0.5,
        b2b_epsilon: B2B_EPSILON,
        min_distance: 1.0,
    };
    let sys = assemble_quadratic_system(&d.netlist, &p, &anchors, &timing, &params).unwrap();
    (d, p, sys)
}

pub fn design(cells: usize, seed: u64) -> SynthDesign {
    synth_design(cells, seed, &SynthConfig::default()).expect("synthetic design")
}

/// Fixed instances at their locations, movable ones uniformly on the die.
pub fn scattered(d: &SynthDesign, seed: u64) -> PlacementState {
    let mut rng = rng(seed);
    let mut p = PlacementState::initial(&d.netlist, &d.device);
    let (w, h) = (d.device.width_f(), d.device.height_f());
    for id in d.netlist.movable() {
        p.set(id, rng.random_range(0.0..w), rng.random_range(0.0..h));
    }
    p
}

/// Movable instances in a Gaussian-ish blob around the die center.
pub fn clustered(d: &SynthDesign, seed: u64, spread: f64) -> PlacementState {
    let mut rng = rng(seed);
    let mut p = PlacementState::initial(&d.netlist, &d.device);
    let (w, h) = (d.device.width_f(), d.device.height_f());
    for id in d.netlist.movable() {
        let gx: f64 = (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.5;
        let gy: f64 = (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.5;
        let x = (0.5 * w + gx * spread).clamp(0.0, w - 1e-6);
        let y = (0.5 * h + gy * spread).clamp(0.0, h - 1e-6);
        p.set(id, x, y);
    }
    p
}

/// Oracle-labelled samples for every timing net of a scattered placement.
pub fn samples(d: &SynthDesign, seed: u64) -> Vec<tdgp_core::NetSample> {
    let p = scattered(d, seed);
    let ctx = tdgp_core::FeatureContext::new(&d.netlist, &p, &d.device, &Default::default()).unwrap();
    let labels = tdgp_core::model_labels(&ctx, &d.oracle).unwrap();
    tdgp_core::extract_samples(&ctx, &labels, "").unwrap()
}

/// Worst relative error between analytic and central-difference gradients
/// of the default model on one batch of real nets. At most `per_tensor`
/// entries of each parameter tensor are probed.
pub fn gradient_check(seed: u64, per_tensor: usize) -> f64 {
    use tdgp_core::delay::TrainBatch;
    use tdgp_core::{DelayModelWeights, ModelConfig};

    let d = design(300, seed);
    let all = samples(&d, seed);
    let mut r = rng(seed);
    let batch: Vec<&tdgp_core::NetSample> = (0..8).map(|_| &all[r.random_range(0..all.len())]).collect();
    let mut w = DelayModelWeights::init(&ModelConfig::default(), seed);
    w.fit_normalization(all.iter().map(|s| &s.features));
    let nets: Vec<_> = batch.iter().map(|s| (&s.features, &s.labels[..])).collect();
    let tb = TrainBatch::new(&nets, &w.norm);
    let delta = 0.05;
    let (_, grads) = w.loss_and_gradient(&tb, delta);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for p in 0..grads.len() {
        let len = grads[p].len();
        let probes: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| r.random_range(0..len)).collect()
        };
        for i in probes {
            let orig = w.params()[p].data[i];
            w.params_mut()[p].data[i] = orig + h;
            let up = w.loss(&tb, delta);
            w.params_mut()[p].data[i] = orig - h;
            let down = w.loss(&tb, delta);
            w.params_mut()[p].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grads[p][i];
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
        }
    }
    worst
}
