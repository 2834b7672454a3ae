//! Rough legalization: bin demand/capacity bookkeeping, greedy spreading
//! out of overflowed bins, and resource adjustment for clock usage and
//! routing congestion.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::congestion::GCellGrid;
use crate::device::Device;
use crate::error::{Error, Result};
use crate::netlist::{InstId, InstanceKind, Netlist};
use crate::placement::PlacementState;
use crate::placer::{PseudoKind, PseudoNet};

const K: usize = InstanceKind::COUNT;
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegalizeConfig {
    pub bin_size: f64,
    /// FF demand multiplier in half-columns with too many clock nets.
    pub clock_demand_factor: f64,
    /// Fraction of the clock capacity above which FF demand is inflated.
    pub clock_usage_limit: f64,
    /// Slope of the congestion capacity scale `1 / (1 + s·c / median)`.
    pub congestion_slope: f64,
}

impl Default for LegalizeConfig {
    fn default() -> Self {
        LegalizeConfig {
            bin_size: 2.0,
            clock_demand_factor: 1.5,
            clock_usage_limit: 0.8,
            congestion_slope: 0.1,
        }
    }
}

/// Bins over the die with per-kind capacity, a congestion scale per bin and
/// a demand weight per instance.
#[derive(Debug, Clone)]
pub struct BinGrid {
    pub bin_size: f64,
    pub cols: usize,
    pub rows: usize,
    width: f64,
    height: f64,
    capacity: Vec<[f64; K]>,
    pub scale: Vec<f64>,
    /// Kinds for which congestion scaling was dropped to keep total
    /// capacity above demand.
    unscaled: [bool; K],
    pub inst_demand: Vec<f64>,
}

impl BinGrid {
    pub fn new(device: &Device, netlist: &Netlist, bin_size: f64) -> Result<Self> {
        if !(bin_size > 0.0 && bin_size.is_finite()) {
            return Err(Error::Validation(format!("bin size must be positive, got {bin_size}")));
        }
        let (w, h) = (device.width_f(), device.height_f());
        let cols = ((w / bin_size).ceil() as usize).max(1);
        let rows = ((h / bin_size).ceil() as usize).max(1);
        let mut capacity = vec![[0.0; K]; cols * rows];
        for r in 0..rows {
            for c in 0..cols {
                let bw = ((c + 1) as f64 * bin_size).min(w) - c as f64 * bin_size;
                let bh = ((r + 1) as f64 * bin_size).min(h) - r as f64 * bin_size;
                for kind in InstanceKind::ALL {
                    capacity[r * cols + c][kind.index()] = device.capacity_per_site(kind) * bw * bh;
                }
            }
        }
        Ok(BinGrid {
            bin_size,
            cols,
            rows,
            width: w,
            height: h,
            capacity,
            scale: vec![1.0; cols * rows],
            unscaled: [false; K],
            inst_demand: vec![1.0; netlist.num_instances()],
        })
    }

    pub fn num_bins(&self) -> usize {
        self.cols * self.rows
    }

    fn index(v: f64, size: f64, n: usize) -> usize {
        if v.is_nan() || v <= 0.0 {
            return 0;
        }
        ((v / size) as usize).min(n - 1)
    }

    pub fn bin_of(&self, x: f64, y: f64) -> usize {
        Self::index(y, self.bin_size, self.rows) * self.cols + Self::index(x, self.bin_size, self.cols)
    }

    /// `(x0, y0, x1, y1)` clipped to the die.
    pub fn bin_rect(&self, bin: usize) -> (f64, f64, f64, f64) {
        let (r, c) = (bin / self.cols, bin % self.cols);
        let s = self.bin_size;
        (
            c as f64 * s,
            r as f64 * s,
            ((c + 1) as f64 * s).min(self.width),
            ((r + 1) as f64 * s).min(self.height),
        )
    }

    pub fn capacity(&self, bin: usize, kind: InstanceKind) -> f64 {
        self.capacity[bin][kind.index()]
    }

    pub fn effective_capacity(&self, bin: usize, kind: InstanceKind) -> f64 {
        let c = self.capacity[bin][kind.index()];
        if self.unscaled[kind.index()] {
            c
        } else {
            c * self.scale[bin]
        }
    }

    /// Effective capacity rounded down to whole instances; what spreading
    /// fills bins up to.
    pub fn usable_capacity(&self, bin: usize, kind: InstanceKind) -> f64 {
        (self.effective_capacity(bin, kind) + TOL).floor()
    }

    /// Demand per bin and kind at the given placement.
    pub fn demand(&self, netlist: &Netlist, placement: &PlacementState) -> Vec<[f64; K]> {
        let mut d = vec![[0.0; K]; self.num_bins()];
        for id in netlist.instance_ids() {
            let (x, y) = placement.get(id);
            d[self.bin_of(x, y)][netlist.instance(id).kind.index()] += self.inst_demand[id.0];
        }
        d
    }

    /// Highest demand/effective-capacity ratio over bins with capacity.
    pub fn max_utilization(&self, netlist: &Netlist, placement: &PlacementState) -> f64 {
        let d = self.demand(netlist, placement);
        let mut worst = 0.0f64;
        for (b, row) in d.iter().enumerate() {
            for kind in InstanceKind::ALL {
                let dem = row[kind.index()];
                if dem > 0.0 {
                    let cap = self.effective_capacity(b, kind);
                    worst = worst.max(if cap > 0.0 { dem / cap } else { f64::INFINITY });
                }
            }
        }
        worst
    }
}

/// Bins whose demand exceeds effective capacity for some kind, ascending.
pub fn detect_overflow(placement: &PlacementState, netlist: &Netlist, bins: &BinGrid) -> Vec<usize> {
    bins.demand(netlist, placement)
        .iter()
        .enumerate()
        .filter(|(b, row)| {
            InstanceKind::ALL
                .iter()
                .any(|&k| row[k.index()] > bins.effective_capacity(*b, k) + TOL)
        })
        .map(|(b, _)| b)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SpreadOutcome {
    pub placement: PlacementState,
    /// One anchor per moved instance at its new position, unit weight.
    pub anchors: Vec<PseudoNet>,
    pub moved: usize,
}

fn rect_distance(x: f64, y: f64, r: (f64, f64, f64, f64)) -> f64 {
    let dx = (r.0 - x).max(0.0).max(x - r.2);
    let dy = (r.1 - y).max(0.0).max(y - r.3);
    (dx * dx + dy * dy).sqrt()
}

fn inside(v: f64, lo: f64, hi: f64) -> f64 {
    v.clamp(lo, hi - hi.max(1.0) * 1e-9)
}

/// Moves movable instances out of overflowed bins, per kind, into the
/// nearest bins with room. In each overflowed bin the instances farthest
/// from the bin center leave first and land on the nearest point of their
/// target bin.
pub fn spread_instances(placement: &PlacementState, netlist: &Netlist, bins: &BinGrid) -> Result<SpreadOutcome> {
    let mut out = placement.clone();
    let mut anchors = Vec::new();
    let demand = bins.demand(netlist, placement);

    for kind in InstanceKind::ALL {
        let k = kind.index();
        let total: f64 = demand.iter().map(|r| r[k]).sum();
        if total == 0.0 {
            continue;
        }
        let cap: Vec<f64> = (0..bins.num_bins()).map(|b| bins.usable_capacity(b, kind)).collect();
        let mut load: Vec<f64> = demand.iter().map(|r| r[k]).collect();
        if !(0..bins.num_bins()).any(|b| load[b] > cap[b] + TOL) {
            continue;
        }
        let supply: f64 = cap.iter().sum();
        if total > supply + TOL {
            return Err(Error::Validation(format!(
                "insufficient {kind} capacity: demand {total:.2} exceeds {supply:.2}; run validation on the design"
            )));
        }
        let mut members: HashMap<usize, Vec<InstId>> = HashMap::new();
        for id in netlist.instance_ids() {
            let inst = netlist.instance(id);
            if inst.kind == kind && !inst.fixed {
                let (x, y) = out.get(id);
                members.entry(bins.bin_of(x, y)).or_default().push(id);
            }
        }
        for b in 0..bins.num_bins() {
            if load[b] <= cap[b] + TOL {
                continue;
            }
            let r = bins.bin_rect(b);
            let (cx, cy) = (0.5 * (r.0 + r.2), 0.5 * (r.1 + r.3));
            let mut leaving = members.remove(&b).unwrap_or_default();
            leaving.sort_by(|&a, &c| {
                let da = dist2(out.get(a), (cx, cy));
                let dc = dist2(out.get(c), (cx, cy));
                dc.total_cmp(&da).then(a.cmp(&c))
            });
            let mut staying = Vec::new();
            for id in leaving {
                if load[b] <= cap[b] + TOL {
                    staying.push(id);
                    continue;
                }
                let d = bins.inst_demand[id.0];
                let (x, y) = out.get(id);
                let t = nearest_bin_with_room(bins, b, x, y, d, &load, &cap).ok_or_else(|| {
                    Error::Validation(format!(
                        "cannot spread {kind} instance `{}`: no bin has room",
                        netlist.instance(id).name
                    ))
                })?;
                let tr = bins.bin_rect(t);
                let (nx, ny) = (inside(x, tr.0, tr.2), inside(y, tr.1, tr.3));
                out.set(id, nx, ny);
                load[b] -= d;
                load[t] += d;
                anchors.push(PseudoNet {
                    inst: id,
                    x: nx,
                    y: Some(ny),
                    weight: 1.0,
                    kind: PseudoKind::Anchor,
                });
            }
            if !staying.is_empty() {
                members.insert(b, staying);
            }
        }
    }
    let moved = anchors.len();
    Ok(SpreadOutcome {
        placement: out,
        anchors,
        moved,
    })
}

/// Order-preserving pre-pass for [`spread_instances`]. Per kind, a window
/// around each overflowed bin grows until its free capacity covers the
/// movable demand inside it; the window is then bisected recursively with
/// instances split by coordinate in proportion to capacity. Residual
/// overflow from whole-instance rounding is left to the greedy pass.
pub fn lookahead_spread(placement: &PlacementState, netlist: &Netlist, bins: &BinGrid) -> PlacementState {
    let mut out = placement.clone();
    for kind in InstanceKind::ALL {
        let mut free: Vec<f64> = (0..bins.num_bins()).map(|b| bins.usable_capacity(b, kind)).collect();
        let mut load = vec![0.0; bins.num_bins()];
        let mut any = false;
        for id in netlist.instance_ids() {
            let inst = netlist.instance(id);
            if inst.kind != kind {
                continue;
            }
            let (x, y) = out.get(id);
            let b = bins.bin_of(x, y);
            if inst.fixed {
                free[b] -= bins.inst_demand[id.0];
            } else {
                load[b] += bins.inst_demand[id.0];
                any = true;
            }
        }
        if !any {
            continue;
        }
        for f in free.iter_mut() {
            *f = f.max(0.0);
        }
        let mut hot: Vec<usize> = (0..bins.num_bins()).filter(|&b| load[b] > free[b] + TOL).collect();
        hot.sort_by(|&a, &b| (load[b] - free[b]).total_cmp(&(load[a] - free[a])).then(a.cmp(&b)));
        for b in hot {
            if load[b] <= free[b] + TOL {
                continue;
            }
            let (r, c) = (b / bins.cols, b % bins.cols);
            let mut win = Window {
                c0: c,
                c1: c,
                r0: r,
                r1: r,
            };
            let sum = |w: &Window, v: &[f64]| -> f64 { w.bins(bins.cols).map(|i| v[i]).sum() };
            while sum(&win, &load) > sum(&win, &free) + TOL {
                if !win.grow(bins.cols, bins.rows) {
                    break;
                }
            }
            if sum(&win, &load) > sum(&win, &free) + TOL {
                continue;
            }
            let mut members: Vec<InstId> = netlist
                .instance_ids()
                .filter(|&id| {
                    let inst = netlist.instance(id);
                    let (x, y) = out.get(id);
                    inst.kind == kind && !inst.fixed && win.contains(bins.bin_of(x, y), bins.cols)
                })
                .collect();
            bisect(&mut out, &mut members, win, bins, &free);
            for i in win.bins(bins.cols) {
                load[i] = 0.0;
            }
            for &id in &members {
                let (x, y) = out.get(id);
                load[bins.bin_of(x, y)] += bins.inst_demand[id.0];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Window {
    c0: usize,
    c1: usize,
    r0: usize,
    r1: usize,
}

impl Window {
    fn bins(self, cols: usize) -> impl Iterator<Item = usize> {
        (self.r0..=self.r1).flat_map(move |r| (self.c0..=self.c1).map(move |c| r * cols + c))
    }

    fn contains(self, bin: usize, cols: usize) -> bool {
        let (r, c) = (bin / cols, bin % cols);
        (self.r0..=self.r1).contains(&r) && (self.c0..=self.c1).contains(&c)
    }

    fn grow(&mut self, cols: usize, rows: usize) -> bool {
        let before = (self.c0, self.c1, self.r0, self.r1);
        self.c0 = self.c0.saturating_sub(1);
        self.r0 = self.r0.saturating_sub(1);
        self.c1 = (self.c1 + 1).min(cols - 1);
        self.r1 = (self.r1 + 1).min(rows - 1);
        before != (self.c0, self.c1, self.r0, self.r1)
    }
}

fn bisect(out: &mut PlacementState, members: &mut [InstId], win: Window, bins: &BinGrid, free: &[f64]) {
    if members.is_empty() {
        return;
    }
    let (nc, nr) = (win.c1 - win.c0 + 1, win.r1 - win.r0 + 1);
    if nc == 1 && nr == 1 {
        let r = bins.bin_rect(win.r0 * bins.cols + win.c0);
        for &id in members.iter() {
            let (x, y) = out.get(id);
            out.set(id, inside(x, r.0, r.2), inside(y, r.1, r.3));
        }
        return;
    }
    let vertical = nc >= nr;
    let (a, b) = if vertical {
        let m = win.c0 + nc / 2 - 1;
        (Window { c1: m, ..win }, Window { c0: m + 1, ..win })
    } else {
        let m = win.r0 + nr / 2 - 1;
        (Window { r1: m, ..win }, Window { r0: m + 1, ..win })
    };
    let cap = |w: Window| -> f64 { w.bins(bins.cols).map(|i| free[i]).sum() };
    let (ca, cb) = (cap(a), cap(b));
    let coord = |p: &PlacementState, id: InstId| if vertical { p.get(id).0 } else { p.get(id).1 };
    members.sort_by(|&p, &q| coord(out, p).total_cmp(&coord(out, q)).then(p.cmp(&q)));
    let total: f64 = members.iter().map(|id| bins.inst_demand[id.0]).sum();
    let target = if ca + cb > 0.0 {
        total * ca / (ca + cb)
    } else {
        0.5 * total
    };
    // Split where the prefix demand is closest to the capacity share
    // without overfilling either side when that is possible.
    let mut best = (f64::INFINITY, 0usize);
    let mut cum = 0.0;
    for s in 0..=members.len() {
        if s > 0 {
            cum += bins.inst_demand[members[s - 1].0];
        }
        let over = (cum - ca).max(0.0) + (total - cum - cb).max(0.0);
        let score = over * 1e6 + (cum - target).abs();
        if score < best.0 {
            best = (score, s);
        }
    }
    let (left, right) = members.split_at_mut(best.1);
    bisect(out, left, a, bins, free);
    bisect(out, right, b, bins, free);
}

/// Lookahead bisection followed by the greedy pass. Anchors are reported
/// for every movable instance whose position changed.
pub fn rough_legalize(placement: &PlacementState, netlist: &Netlist, bins: &BinGrid) -> Result<SpreadOutcome> {
    let pre = lookahead_spread(placement, netlist, bins);
    let fin = spread_instances(&pre, netlist, bins)?;
    let anchors: Vec<PseudoNet> = netlist
        .movable()
        .filter(|&id| fin.placement.get(id) != placement.get(id))
        .map(|id| {
            let (x, y) = fin.placement.get(id);
            PseudoNet {
                inst: id,
                x,
                y: Some(y),
                weight: 1.0,
                kind: PseudoKind::Anchor,
            }
        })
        .collect();
    Ok(SpreadOutcome {
        moved: anchors.len(),
        anchors,
        placement: fin.placement,
    })
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Ring search over bins around `from`; returns the bin with room whose
/// rectangle is closest to `(x, y)`, lowest index on ties.
fn nearest_bin_with_room(
    bins: &BinGrid,
    from: usize,
    x: f64,
    y: f64,
    demand: f64,
    load: &[f64],
    cap: &[f64],
) -> Option<usize> {
    let (r0, c0) = ((from / bins.cols) as i64, (from % bins.cols) as i64);
    let max_r = bins.cols.max(bins.rows) as i64;
    let mut best: Option<(f64, usize)> = None;
    for ring in 1..=max_r {
        if let Some((d, _)) = best {
            if (ring - 1) as f64 * bins.bin_size > d {
                break;
            }
        }
        for dr in -ring..=ring {
            for dc in -ring..=ring {
                if dr.abs() != ring && dc.abs() != ring {
                    continue;
                }
                let (r, c) = (r0 + dr, c0 + dc);
                if r < 0 || c < 0 || r >= bins.rows as i64 || c >= bins.cols as i64 {
                    continue;
                }
                let t = r as usize * bins.cols + c as usize;
                if load[t] + demand > cap[t] + TOL {
                    continue;
                }
                let d = rect_distance(x, y, bins.bin_rect(t));
                if best.is_none_or(|(bd, bt)| d < bd || (d == bd && t < bt)) {
                    best = Some((d, t));
                }
            }
        }
    }
    best.map(|(_, t)| t)
}

/// Key of a clock half-column: (clock region, bin column, upper half).
fn half_column(device: &Device, bins: &BinGrid, x: f64, y: f64) -> (usize, usize, bool) {
    let region = device.region_of(x, y);
    let r = &device.clock_regions[region];
    let mid = 0.5 * (r.y0 + r.y1) as f64;
    (region, bins.bin_of(x, y) % bins.cols, y >= mid)
}

/// (a) Inflates FF demand in clock half-columns whose distinct clock nets
/// exceed the usage limit; (b) scales bin capacity down with routing
/// density, dropping the scaling for any kind whose scaled bins could no
/// longer hold its demand in whole instances.
pub fn adjust_resources(
    placement: &PlacementState,
    netlist: &Netlist,
    device: &Device,
    bins: &mut BinGrid,
    grid: &GCellGrid,
    cfg: &LegalizeConfig,
) {
    let mut clocks: HashMap<(usize, usize, bool), BTreeSet<usize>> = HashMap::new();
    let mut ffs: HashMap<(usize, usize, bool), Vec<InstId>> = HashMap::new();
    for id in netlist.instance_ids() {
        let inst = netlist.instance(id);
        bins.inst_demand[id.0] = 1.0;
        if inst.kind != InstanceKind::Ff {
            continue;
        }
        let (x, y) = placement.get(id);
        let key = half_column(device, bins, x, y);
        if let Some(clk) = inst.clock {
            clocks.entry(key).or_default().insert(clk.0);
        }
        ffs.entry(key).or_default().push(id);
    }
    let limit = cfg.clock_usage_limit * device.clock_capacity as f64;
    for (key, set) in &clocks {
        if set.len() as f64 > limit {
            for id in &ffs[key] {
                bins.inst_demand[id.0] = cfg.clock_demand_factor;
            }
        }
    }

    let median = grid.median();
    for b in 0..bins.num_bins() {
        let r = bins.bin_rect(b);
        let c = grid.density_at_point(0.5 * (r.0 + r.2), 0.5 * (r.1 + r.3));
        bins.scale[b] = congestion_scale(c, median, cfg.congestion_slope);
    }
    bins.unscaled = [false; K];
    let demand = bins.demand(netlist, placement);
    for kind in InstanceKind::ALL {
        let k = kind.index();
        let need: f64 = demand.iter().map(|r| r[k]).sum();
        // Whole instances only: a bin scaled to 0.9 holds no DSP at all.
        let have: f64 = (0..bins.num_bins()).map(|b| bins.usable_capacity(b, kind)).sum();
        if need > have {
            bins.unscaled[k] = true;
        }
    }
}

/// `1 / (1 + slope·c / median)`; 1 when the median is zero.
pub fn congestion_scale(density: f64, median: f64, slope: f64) -> f64 {
    if median > 0.0 {
        1.0 / (1.0 + slope * density.max(0.0) / median)
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn luts(n: usize) -> Netlist {
        let insts: Vec<String> = (0..n).map(|i| format!(r#"{{"name":"l{i}","kind":"LUT"}}"#)).collect();
        Netlist::parse(&format!(r#"{{"instances":[{}],"nets":[]}}"#, insts.join(","))).unwrap()
    }

    fn device(w: usize, lut: f64) -> Device {
        Device::with_grid(
            w,
            w,
            1,
            1,
            BTreeMap::from([(InstanceKind::Lut, lut), (InstanceKind::Ff, 1.0)]),
            24,
        )
        .unwrap()
    }

    fn at(n: usize, x: f64, y: f64) -> PlacementState {
        let mut p = PlacementState::new(n);
        for i in 0..n {
            p.set(InstId(i), x, y);
        }
        p
    }

    #[test]
    fn overflow_boundary() {
        // 2×2 bin at 2 LUTs per site holds 8.
        let dev = device(4, 2.0);
        for (n, over) in [(8, false), (9, true)] {
            let nl = luts(n);
            let bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
            let got = detect_overflow(&at(n, 0.5, 0.5), &nl, &bins);
            assert_eq!(!got.is_empty(), over);
        }
    }

    #[test]
    fn excess_moves_to_neighbor() {
        let dev = device(4, 2.0);
        let nl = luts(10);
        let bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
        let p = at(10, 1.0, 1.0);
        let s = spread_instances(&p, &nl, &bins).unwrap();
        assert_eq!(s.moved, 2);
        assert_eq!(s.anchors.len(), 2);
        assert!(detect_overflow(&s.placement, &nl, &bins).is_empty());
        let d = bins.demand(&nl, &s.placement);
        assert_eq!(d[0][0], 8.0);
        assert_eq!(d.iter().map(|r| r[0]).sum::<f64>(), 10.0);
    }

    #[test]
    fn fixpoint_without_overflow() {
        let dev = device(4, 2.0);
        let nl = luts(3);
        let bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
        let p = at(3, 3.0, 1.0);
        let s = spread_instances(&p, &nl, &bins).unwrap();
        assert_eq!(s.placement, p);
        assert!(s.anchors.is_empty());
    }

    #[test]
    fn unfixable_demand_is_an_error() {
        let dev = device(2, 1.0);
        let nl = luts(5);
        let bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
        let err = spread_instances(&at(5, 0.0, 0.0), &nl, &bins).unwrap_err();
        assert!(err.to_string().contains("insufficient LUT capacity"));
    }

    #[test]
    fn clustered_design_spreads_and_is_idempotent() {
        let dev = device(20, 1.0);
        let nl = luts(300);
        let bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
        let mut p = PlacementState::new(300);
        for i in 0..300 {
            p.set(InstId(i), 9.0 + (i % 7) as f64 * 0.2, 9.5 + (i % 5) as f64 * 0.1);
        }
        let s = spread_instances(&p, &nl, &bins).unwrap();
        assert!(detect_overflow(&s.placement, &nl, &bins).is_empty());
        assert!(bins.max_utilization(&nl, &s.placement) <= 1.0 + 1e-12);
        let again = spread_instances(&s.placement, &nl, &bins).unwrap();
        assert_eq!(again.moved, 0);
        assert_eq!(again.placement, s.placement);
    }

    fn ff_design(clocks: usize) -> Netlist {
        let mut insts = Vec::new();
        let mut nets = Vec::new();
        for c in 0..clocks {
            insts.push(format!(
                r#"{{"name":"b{c}","kind":"ClockBuffer","fixed":true,"x":0,"y":0}}"#
            ));
            insts.push(format!(r#"{{"name":"f{c}","kind":"FF","clock":"clk{c}"}}"#));
            nets.push(format!(
                r#"{{"name":"clk{c}","driver":{{"inst":"b{c}"}},"loads":[{{"inst":"f{c}"}}]}}"#
            ));
        }
        Netlist::parse(&format!(
            r#"{{"instances":[{}],"nets":[{}]}}"#,
            insts.join(","),
            nets.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn clock_usage_threshold() {
        let dev = device(8, 1.0);
        for (clocks, inflated) in [(19, false), (20, true)] {
            let nl = ff_design(clocks);
            let mut bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
            let mut p = PlacementState::new(nl.num_instances());
            for i in 0..nl.num_instances() {
                p.set(InstId(i), 5.0, 1.0);
            }
            let grid = GCellGrid::empty(&dev, 4.0).unwrap();
            adjust_resources(&p, &nl, &dev, &mut bins, &grid, &LegalizeConfig::default());
            let ff = nl.find_instance("f0").unwrap();
            let buf = nl.find_instance("b0").unwrap();
            assert_eq!(bins.inst_demand[ff.0], if inflated { 1.5 } else { 1.0 });
            assert_eq!(bins.inst_demand[buf.0], 1.0);
        }
    }

    #[test]
    fn congestion_scaling_formula() {
        let dev = device(8, 1.0);
        let nl = luts(1);
        let mut bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
        let mut grid = GCellGrid::empty(&dev, 4.0).unwrap();
        grid.density = vec![1.0, 1.0, 1.0, 2.0];
        let p = at(1, 0.0, 0.0);
        adjust_resources(&p, &nl, &dev, &mut bins, &grid, &LegalizeConfig::default());
        // Bin centered at (7, 7) lies in the g-cell at twice the median.
        let b = bins.bin_of(7.0, 7.0);
        assert!((bins.scale[b] - 1.0 / 1.2).abs() < 1e-15);
        assert!((bins.effective_capacity(b, InstanceKind::Lut) - 4.0 / 1.2).abs() < 1e-12);
        let b0 = bins.bin_of(0.0, 0.0);
        assert!((bins.scale[b0] - 1.0 / 1.1).abs() < 1e-15);
        assert!(bins.scale.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn scaling_dropped_when_capacity_would_run_short() {
        let dev = device(4, 1.0);
        let nl = luts(16);
        let mut bins = BinGrid::new(&dev, &nl, 2.0).unwrap();
        let mut grid = GCellGrid::empty(&dev, 4.0).unwrap();
        grid.density = vec![5.0];
        let p = at(16, 0.0, 0.0);
        adjust_resources(&p, &nl, &dev, &mut bins, &grid, &LegalizeConfig::default());
        let total: f64 = (0..bins.num_bins())
            .map(|b| bins.effective_capacity(b, InstanceKind::Lut))
            .sum();
        assert_eq!(total, 16.0);
    }
}
