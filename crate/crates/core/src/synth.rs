//! Seeded synthetic benchmarks and the ground-truth delay oracle used to
//! label them.
//!
//! Designs are layered pipelines: input IOs and flip-flop boundaries
//! enclose stages of 4–12 combinational levels, every driver has a
//! geometric fanout, and loads are drawn from the following few levels of
//! the same stage.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::congestion::{compute_routing_density, CongestionConfig};
use crate::delay::{DelayTable, FeatureContext, InferenceStats, NetDelayModel};
use crate::device::Device;
use crate::error::{Error, Result};
use crate::netlist::{InstId, Instance, InstanceKind, Net, NetId, Netlist, Pin, PinDirection, PinId};
use crate::placement::PlacementState;
use crate::sta::{run_sta, LogicDelayTable, TimingGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub fanout_mean: f64,
    pub min_levels: usize,
    pub max_levels: usize,
    /// Loads are drawn from up to this many following levels.
    pub load_window: usize,
    pub io_fraction: f64,
    /// Site count relative to the cell count.
    pub area_per_cell: f64,
    pub clock_region_rows: usize,
    pub clock_region_cols: usize,
    pub clock_capacity: usize,
    /// Half-width of the connection window, as a fraction of a layer.
    /// Cells connect to cells at a similar relative position in the
    /// neighbouring layers; 1 or more disables locality.
    pub locality: f64,
    /// Share of connections drawn from the whole layer regardless of
    /// `locality`.
    pub global_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fanout_mean: 3.0,
            min_levels: 4,
            max_levels: 12,
            load_window: 3,
            io_fraction: 0.04,
            area_per_cell: 0.92,
            clock_region_rows: 2,
            clock_region_cols: 4,
            clock_capacity: 24,
            locality: 0.05,
            global_fraction: 0.1,
        }
    }
}

/// Share of the non-IO, non-clock cells per kind.
const KIND_MIX: [(InstanceKind, f64); 8] = [
    (InstanceKind::Lut, 0.55),
    (InstanceKind::Ff, 0.25),
    (InstanceKind::Mux, 0.05),
    (InstanceKind::Carry8, 0.05),
    (InstanceKind::Lutram, 0.03),
    (InstanceKind::Dsp, 0.03),
    (InstanceKind::Ramb, 0.02),
    (InstanceKind::Shifter, 0.02),
];

/// Device sized for `cells` instances: every kind fits with room to spare.
pub fn synth_device(cells: usize, cfg: &SynthConfig) -> Result<Device> {
    let area = (cells as f64 * cfg.area_per_cell).ceil().max(16.0);
    let width = area.sqrt().ceil() as usize;
    let height = (area / width as f64).ceil() as usize;
    let mut capacity = BTreeMap::new();
    for (kind, c) in [
        (InstanceKind::Lut, 1.0),
        (InstanceKind::Ff, 1.0),
        (InstanceKind::Io, 1.0),
        (InstanceKind::ClockBuffer, 1.0),
        (InstanceKind::Mux, 0.5),
        (InstanceKind::Carry8, 0.25),
        (InstanceKind::Lutram, 0.25),
        (InstanceKind::Dsp, 0.25),
        (InstanceKind::Ramb, 0.25),
        (InstanceKind::Shifter, 0.25),
    ] {
        capacity.insert(kind, c);
    }
    Device::with_grid(
        width,
        height,
        cfg.clock_region_rows.min(height),
        cfg.clock_region_cols.min(width),
        capacity,
        cfg.clock_capacity,
    )
}

/// Largest-remainder apportioning of `total` over `shares`.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = total - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Points spread evenly along the die boundary, one per site.
fn perimeter_sites(width: usize, height: usize, count: usize) -> Vec<(f64, f64)> {
    let mut ring: Vec<(usize, usize)> = Vec::new();
    // Counter-clockwise from the lower-left corner: left, top, right, bottom.
    for y in 0..height {
        ring.push((0, y));
    }
    for x in 1..width {
        ring.push((x, height - 1));
    }
    if width > 1 {
        for y in (0..height - 1).rev() {
            ring.push((width - 1, y));
        }
    }
    if height > 1 {
        for x in (1..width - 1).rev() {
            ring.push((x, 0));
        }
    }
    (0..count)
        .map(|i| {
            let (x, y) = ring[i * ring.len() / count.max(1)];
            (x as f64 + 0.5, y as f64 + 0.5)
        })
        .collect()
}

/// Ground-truth delay `a0 + a1·D + a2·ln(1 + fanout)·D + a3·routing density
/// + a4·pin density + σ·z` with `D` the pin-pair Manhattan distance and `z`
/// a standard normal drawn from a hash of (seed, net, load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub seed: u64,
    pub coefficients: [f64; 5],
    pub sigma: f64,
    pub delay_floor: f64,
}

impl SyntheticOracle {
    pub fn new(seed: u64) -> Self {
        SyntheticOracle {
            seed,
            coefficients: [0.1, 0.01, 0.004, 0.0002, 0.001],
            sigma: 0.02,
            delay_floor: 0.01,
        }
    }

    fn noise(&self, net: &str, load: usize) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        // FNV-1a; stable across platforms and releases.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in net.bytes().chain(load.to_le_bytes()).chain(self.seed.to_le_bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let z: f64 = ChaCha8Rng::seed_from_u64(h).sample(StandardNormal);
        self.sigma * z
    }

    pub fn delay(
        &self,
        net: &str,
        load: usize,
        distance: f64,
        fanout: f64,
        routing_density: f64,
        pin_density: f64,
    ) -> f64 {
        let [a0, a1, a2, a3, a4] = self.coefficients;
        let d = a0
            + a1 * distance
            + a2 * (1.0 + fanout).ln() * distance
            + a3 * routing_density
            + a4 * pin_density
            + self.noise(net, load);
        d.max(self.delay_floor)
    }
}

impl NetDelayModel for SyntheticOracle {
    fn net_delays(
        &self,
        ctx: &FeatureContext<'_>,
        nets: &[NetId],
        _batch_size: usize,
    ) -> Result<(DelayTable, InferenceStats)> {
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = nets
            .par_iter()
            .map(|&n| {
                let net = ctx.netlist.net(n);
                let env = ctx.env_features(n);
                (0..net.fanout())
                    .map(|k| {
                        let pin = ctx.pin_features(n, k);
                        self.delay(
                            &net.name,
                            k,
                            pin.manhattan(),
                            env.fanout,
                            env.avg_routing_density,
                            pin.avg_pin_density,
                        )
                    })
                    .collect()
            })
            .collect();
        let mut table = DelayTable::default();
        let mut pairs = 0;
        for (&n, d) in nets.iter().zip(rows) {
            pairs += d.len();
            table.insert(n, d);
        }
        Ok((table, InferenceStats { nets_encoded: 0, pairs }))
    }
}

/// Critical path delay of `placement` with delays from `model`.
pub fn evaluate_cpd(
    netlist: &Netlist,
    placement: &PlacementState,
    device: &Device,
    model: &dyn NetDelayModel,
    logic: &LogicDelayTable,
    congestion: &CongestionConfig,
) -> Result<f64> {
    let grid = compute_routing_density(netlist, placement, device, congestion)?;
    let ctx = FeatureContext::with_grid(netlist, placement, grid);
    let mut graph = TimingGraph::from_netlist(netlist, logic, 1.0)?;
    Ok(run_sta(&mut graph, &ctx, model, 1024)?.summary.cpd)
}

#[derive(Debug, Clone)]
pub struct SynthDesign {
    pub netlist: Netlist,
    pub device: Device,
    pub oracle: SyntheticOracle,
}

struct Builder {
    instances: Vec<Instance>,
    nets: Vec<Net>,
    pins: Vec<Pin>,
}

impl Builder {
    fn add_inst(&mut self, name: String, kind: InstanceKind, pos: Option<(f64, f64)>) -> InstId {
        self.instances.push(Instance {
            name,
            kind,
            fixed: pos.is_some(),
            sequential: kind.default_sequential(),
            fixed_pos: pos,
            clock: None,
        });
        InstId(self.instances.len() - 1)
    }

    fn add_net(&mut self, name: String, driver: InstId, loads: &[InstId]) -> NetId {
        let id = NetId(self.nets.len());
        let dpin = PinId(self.pins.len());
        self.pins.push(Pin {
            owner: driver,
            direction: PinDirection::Driver,
            net: id,
            offset: (0.0, 0.0),
        });
        let mut lp = Vec::with_capacity(loads.len());
        for &l in loads {
            lp.push(PinId(self.pins.len()));
            self.pins.push(Pin {
                owner: l,
                direction: PinDirection::Load,
                net: id,
                offset: (0.0, 0.0),
            });
        }
        self.nets.push(Net {
            name,
            driver: dpin,
            loads: lp,
            is_clock: false,
        });
        id
    }
}

/// Generates a design of exactly `cells` instances on the device from
/// [`synth_device`].
pub fn synth_design(cells: usize, seed: u64, cfg: &SynthConfig) -> Result<SynthDesign> {
    let device = synth_device(cells, cfg)?;
    let netlist = synth_netlist(cells, seed, cfg, &device)?;
    Ok(SynthDesign {
        netlist,
        device,
        oracle: SyntheticOracle::new(seed),
    })
}

/// Generates a netlist for a given device.
pub fn synth_netlist(cells: usize, seed: u64, cfg: &SynthConfig, device: &Device) -> Result<Netlist> {
    if cells < 10 {
        return Err(Error::Validation(format!("need at least 10 cells, got {cells}")));
    }
    if !(cfg.fanout_mean >= 1.0)
        || cfg.min_levels == 0
        || cfg.max_levels < cfg.min_levels
        || !(cfg.locality > 0.0)
        || !(0.0..=1.0).contains(&cfg.global_fraction)
    {
        return Err(Error::Validation("invalid generator configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (device.width, device.height);

    let n_io = ((cells as f64 * cfg.io_fraction).round() as usize).max(2);
    let n_clk = 1 + cells / 2000;
    let rest = cells
        .checked_sub(n_io + n_clk)
        .filter(|&r| r > 0)
        .ok_or_else(|| Error::Validation("too few cells for IOs and clock buffers".into()))?;
    let perimeter = 2 * (w + h) - 4;
    if n_io > perimeter {
        return Err(Error::Validation(format!(
            "{n_io} IOs exceed the {perimeter} boundary sites"
        )));
    }
    let counts = apportion(rest, &KIND_MIX.map(|(_, s)| s));
    for (&(kind, _), &c) in KIND_MIX.iter().zip(&counts) {
        if c as f64 > device.total_capacity(kind) {
            return Err(Error::Validation(format!(
                "insufficient {kind} capacity: {c} instances, {} sites",
                device.total_capacity(kind)
            )));
        }
    }

    let mut b = Builder {
        instances: Vec::with_capacity(cells),
        nets: Vec::new(),
        pins: Vec::new(),
    };
    // Inputs take the first half of the boundary walk, outputs the second.
    let sites = perimeter_sites(w, h, n_io);
    let n_in = n_io / 2;
    let inputs: Vec<InstId> = (0..n_in)
        .map(|i| b.add_inst(format!("in{i}"), InstanceKind::Io, Some(sites[i])))
        .collect();
    let outputs: Vec<InstId> = (n_in..n_io)
        .map(|i| b.add_inst(format!("out{}", i - n_in), InstanceKind::Io, Some(sites[i])))
        .collect();
    let clk_bufs: Vec<InstId> = (0..n_clk)
        .map(|c| {
            let r = &device.clock_regions[c % device.clock_regions.len()];
            let x = r.center_x().floor() + 0.5;
            let y = (0.5 * (r.y0 + r.y1) as f64).floor() + 0.5 + (c / device.clock_regions.len()) as f64;
            b.add_inst(
                format!("bufg{c}"),
                InstanceKind::ClockBuffer,
                Some((x, y.min(h as f64 - 0.5))),
            )
        })
        .collect();

    let mut seq: Vec<InstId> = Vec::new();
    let mut comb: Vec<InstId> = Vec::new();
    for (&(kind, _), &c) in KIND_MIX.iter().zip(&counts) {
        let tag = kind.name().to_lowercase();
        for i in 0..c {
            let id = b.add_inst(format!("{tag}{i}"), kind, None);
            if kind.default_sequential() {
                seq.push(id);
            } else {
                comb.push(id);
            }
        }
    }
    seq.shuffle(&mut rng);
    comb.shuffle(&mut rng);

    // Stage count grows with the square root of the design size.
    let mut stages = ((cells as f64).sqrt() / 8.0).round().max(1.0) as usize;
    let mut depth: Vec<usize> = (0..stages)
        .map(|_| rng.random_range(cfg.min_levels..=cfg.max_levels))
        .collect();
    while stages > 1 && depth.iter().sum::<usize>() > comb.len() {
        stages -= 1;
        depth.pop();
    }
    if depth.iter().sum::<usize>() > comb.len() {
        depth = vec![comb.len().max(1)];
    }

    // Layers in signal order: a boundary, the levels of a stage, the next
    // boundary and so on; output IOs close the last stage.
    let boundaries = if stages > 1 {
        apportion(seq.len(), &vec![1.0; stages - 1])
    } else {
        Vec::new()
    };
    let level_total: usize = depth.iter().sum();
    let widths = apportion(comb.len(), &vec![1.0; level_total]);
    let mut layers: Vec<Vec<InstId>> = Vec::new();
    let mut stage_end: Vec<usize> = Vec::new();
    let mut first = inputs.clone();
    if stages == 1 {
        first.extend(seq.iter().copied());
    }
    layers.push(first);
    let (mut ci, mut si, mut li) = (0, 0, 0);
    for s in 0..stages {
        for _ in 0..depth[s] {
            let wd = widths[li];
            li += 1;
            if wd > 0 {
                layers.push(comb[ci..ci + wd].to_vec());
                ci += wd;
            }
        }
        let boundary = if s + 1 < stages {
            let n = boundaries[s];
            let v = seq[si..si + n].to_vec();
            si += n;
            v
        } else {
            outputs.clone()
        };
        stage_end.push(layers.len());
        layers.push(boundary);
    }
    layers.retain(|l| !l.is_empty());
    let mut stage_of_layer = vec![0usize; layers.len()];
    {
        // Recompute the boundary positions after dropping empty layers.
        let mut s = 0;
        for (i, l) in layers.iter().enumerate() {
            stage_of_layer[i] = s;
            let inst = &b.instances[l[0].0];
            if i > 0 && (inst.sequential || outputs.contains(&l[0])) {
                s += 1;
            }
        }
    }

    let geo =
        Geometric::new(1.0 / cfg.fanout_mean).map_err(|e| Error::Validation(format!("fanout distribution: {e}")))?;
    let mut target: Vec<usize> = vec![0; b.instances.len()];
    let mut loads: Vec<Vec<InstId>> = vec![Vec::new(); b.instances.len()];
    for l in &layers[..layers.len() - 1] {
        for &d in l {
            target[d.0] = 1 + geo.sample(&mut rng) as usize;
        }
    }
    // Every non-source cell gets one driver from the previous layer near
    // its relative position, preferring drivers with fanout to spare.
    for li in 1..layers.len() {
        let (prev, cur) = (&layers[li - 1], &layers[li]);
        for (k, &c) in cur.iter().enumerate() {
            let span = window(prev.len(), rel(k, cur.len()), cfg, &mut rng);
            let cand = &prev[span];
            let open: Vec<InstId> = cand
                .iter()
                .copied()
                .filter(|d| loads[d.0].len() < target[d.0])
                .collect();
            let d = match open.choose(&mut rng) {
                Some(&d) => d,
                None => *cand.choose(&mut rng).expect("non-empty window"),
            };
            loads[d.0].push(c);
        }
    }
    // Fill remaining fanout from the next few layers, not past the stage
    // boundary.
    for li in 0..layers.len() - 1 {
        let mut limit = li + 1;
        while limit + 1 < layers.len()
            && limit < li + cfg.load_window
            && stage_of_layer[limit] == stage_of_layer[li + 1]
            && !is_boundary(&layers[limit], &b.instances, &outputs)
        {
            limit += 1;
        }
        for (k, &d) in layers[li].iter().enumerate() {
            let u = rel(k, layers[li].len());
            let want = target[d.0].saturating_sub(loads[d.0].len());
            let mut tries = 0;
            let mut added = 0;
            while added < want && tries < 8 * want + 8 {
                tries += 1;
                let layer = &layers[rng.random_range(li + 1..=limit)];
                let span = window(layer.len(), u, cfg, &mut rng);
                let c = *layer[span].choose(&mut rng).expect("non-empty window");
                if !loads[d.0].contains(&c) {
                    loads[d.0].push(c);
                    added += 1;
                }
            }
        }
    }
    for l in &layers {
        for &d in l {
            if !loads[d.0].is_empty() {
                let name = format!("n_{}", b.instances[d.0].name);
                let ls = std::mem::take(&mut loads[d.0]);
                b.add_net(name, d, &ls);
            }
        }
    }
    // Clock domains split the sequential cells evenly.
    let clocked: Vec<InstId> = b
        .instances
        .iter()
        .enumerate()
        .filter(|(_, i)| i.sequential && !i.fixed)
        .map(|(k, _)| InstId(k))
        .collect();
    for (c, &buf) in clk_bufs.iter().enumerate() {
        let net = b.add_net(format!("clk{c}"), buf, &[]);
        b.nets[net.0].is_clock = true;
        for &i in clocked.iter().skip(c).step_by(n_clk) {
            b.instances[i.0].clock = Some(net);
        }
    }
    Netlist::from_parts(b.instances, b.nets, b.pins)
}

/// Relative position of element `k` in a layer of `n`.
fn rel(k: usize, n: usize) -> f64 {
    (k as f64 + 0.5) / n as f64
}

/// Index range of a layer of `n` to draw a partner at relative position
/// `u` from; the whole layer for the global share of draws.
fn window(n: usize, u: f64, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> std::ops::Range<usize> {
    if cfg.locality >= 1.0 || rng.random::<f64>() < cfg.global_fraction {
        return 0..n;
    }
    let half = (cfg.locality * n as f64).max(1.0);
    let mid = u * n as f64;
    let lo = (mid - half).floor().max(0.0) as usize;
    let hi = ((mid + half).ceil() as usize).clamp(lo + 1, n);
    lo.min(n - 1)..hi
}

fn is_boundary(layer: &[InstId], instances: &[Instance], outputs: &[InstId]) -> bool {
    let i = &instances[layer[0].0];
    i.sequential || outputs.contains(&layer[0])
}
