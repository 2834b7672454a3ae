//! G-cell routing density and pin density estimates.
//!
//! The die is cut into square g-cells of `cell_size` sites. Every net
//! spreads `NW(m)·HPWL(m)` uniformly over the g-cells its bounding box
//! touches, so summing the grid recovers the weighted wirelength.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::Device;
use crate::error::{Error, Result};
use crate::netlist::{Netlist, PinId};
use crate::placement::{net_bbox, BBox, PlacementState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CongestionConfig {
    /// Sites per g-cell edge.
    pub cell_size: f64,
    /// `NW(m) = 1 + pin_weight_slope · max(0, p − pin_weight_knee)`.
    pub pin_weight_slope: f64,
    pub pin_weight_knee: usize,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        CongestionConfig {
            cell_size: 4.0,
            pin_weight_slope: 0.2,
            pin_weight_knee: 3,
        }
    }
}

impl CongestionConfig {
    pub fn pin_count_weight(&self, pin_count: usize) -> f64 {
        1.0 + self.pin_weight_slope * pin_count.saturating_sub(self.pin_weight_knee) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GCellGrid {
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
    /// Row-major densities, `rows × cols`.
    pub density: Vec<f64>,
}

/// Inclusive g-cell index range covered by a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRange {
    pub c0: usize,
    pub c1: usize,
    pub r0: usize,
    pub r1: usize,
}

impl CellRange {
    pub fn count(&self) -> usize {
        (self.c1 - self.c0 + 1) * (self.r1 - self.r0 + 1)
    }
}

impl GCellGrid {
    pub fn empty(device: &Device, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Validation(format!(
                "g-cell size must be positive, got {cell_size}"
            )));
        }
        let cols = ((device.width_f() / cell_size).ceil() as usize).max(1);
        let rows = ((device.height_f() / cell_size).ceil() as usize).max(1);
        Ok(GCellGrid {
            cell_size,
            cols,
            rows,
            density: vec![0.0; rows * cols],
        })
    }

    pub fn col_of(&self, x: f64) -> usize {
        cell_index(x, self.cell_size, self.cols)
    }

    pub fn row_of(&self, y: f64) -> usize {
        cell_index(y, self.cell_size, self.rows)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.density[row * self.cols + col]
    }

    pub fn density_at_point(&self, x: f64, y: f64) -> f64 {
        self.at(self.row_of(y), self.col_of(x))
    }

    pub fn range_of(&self, b: &BBox) -> CellRange {
        CellRange {
            c0: self.col_of(b.x_min),
            c1: self.col_of(b.x_max),
            r0: self.row_of(b.y_min),
            r1: self.row_of(b.y_max),
        }
    }

    pub fn total(&self) -> f64 {
        self.density.iter().sum()
    }

    /// Mean density over the g-cells a box touches.
    pub fn mean_over(&self, b: &BBox) -> f64 {
        let r = self.range_of(b);
        let mut sum = 0.0;
        for row in r.r0..=r.r1 {
            sum += self.density[row * self.cols + r.c0..=row * self.cols + r.c1]
                .iter()
                .sum::<f64>();
        }
        sum / r.count() as f64
    }

    pub fn median(&self) -> f64 {
        let mut v = self.density.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in 0..self.rows {
            let line: Vec<String> = (0..self.cols).map(|c| format!("{}", self.at(row, c))).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn cell_index(v: f64, size: f64, n: usize) -> usize {
    let i = (v / size).floor();
    if i.is_nan() || i < 0.0 {
        0
    } else {
        (i as usize).min(n - 1)
    }
}

const NET_CHUNK: usize = 512;

/// Routing density per g-cell: each net adds `NW·HPWL / A_m` to every cell
/// its bounding box intersects, `A_m` being the number of such cells.
pub fn compute_routing_density(
    netlist: &Netlist,
    placement: &PlacementState,
    device: &Device,
    config: &CongestionConfig,
) -> Result<GCellGrid> {
    let mut grid = GCellGrid::empty(device, config.cell_size)?;
    let nets: Vec<_> = netlist.net_ids().filter(|&n| !netlist.net(n).is_clock).collect();
    // Fixed-size chunks summed in order keep the result bitwise reproducible.
    let partials: Vec<Vec<f64>> = nets
        .par_chunks(NET_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; grid.density.len()];
            for &n in chunk {
                let net = netlist.net(n);
                let b = net_bbox(net, netlist, placement);
                let r = grid.range_of(&b);
                let share = config.pin_count_weight(net.pin_count()) * b.half_perimeter() / r.count() as f64;
                for row in r.r0..=r.r1 {
                    for v in &mut acc[row * grid.cols + r.c0..=row * grid.cols + r.c1] {
                        *v += share;
                    }
                }
            }
            acc
        })
        .collect();
    for part in partials {
        for (d, p) in grid.density.iter_mut().zip(part) {
            *d += p;
        }
    }
    Ok(grid)
}

/// Mean routing density over the g-cells a net's bounding box covers.
pub fn net_avg_routing_density(
    netlist: &Netlist,
    net: crate::netlist::NetId,
    placement: &PlacementState,
    grid: &GCellGrid,
) -> f64 {
    grid.mean_over(&net_bbox(netlist.net(net), netlist, placement))
}

/// Bucketed pin positions supporting closed-rectangle counts.
#[derive(Debug, Clone)]
pub struct PinIndex {
    cell_size: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(f64, f64)>>,
    /// `(rows + 1) × (cols + 1)` inclusive prefix sums of bucket sizes.
    prefix: Vec<usize>,
}

impl PinIndex {
    /// Indexes every pin of a non-clock net.
    pub fn build(netlist: &Netlist, placement: &PlacementState, grid: &GCellGrid) -> Self {
        let points = netlist
            .net_ids()
            .filter(|&n| !netlist.net(n).is_clock)
            .flat_map(|n| netlist.net(n).pins().collect::<Vec<_>>())
            .map(|p| placement.pin_position(netlist, p));
        Self::from_points(points, grid.cell_size, grid.cols, grid.rows)
    }

    pub fn from_points(points: impl IntoIterator<Item = (f64, f64)>, cell_size: f64, cols: usize, rows: usize) -> Self {
        let mut buckets = vec![Vec::new(); rows * cols];
        for (x, y) in points {
            let c = cell_index(x, cell_size, cols);
            let r = cell_index(y, cell_size, rows);
            buckets[r * cols + c].push((x, y));
        }
        let w = cols + 1;
        let mut prefix = vec![0usize; (rows + 1) * w];
        for r in 0..rows {
            for c in 0..cols {
                prefix[(r + 1) * w + c + 1] =
                    buckets[r * cols + c].len() + prefix[r * w + c + 1] + prefix[(r + 1) * w + c] - prefix[r * w + c];
            }
        }
        PinIndex {
            cell_size,
            cols,
            rows,
            buckets,
            prefix,
        }
    }

    fn block_sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> usize {
        // Half-open [r0, r1) × [c0, c1).
        if r0 >= r1 || c0 >= c1 {
            return 0;
        }
        let w = self.cols + 1;
        self.prefix[r1 * w + c1] + self.prefix[r0 * w + c0] - self.prefix[r0 * w + c1] - self.prefix[r1 * w + c0]
    }

    /// Number of indexed points inside the closed rectangle.
    pub fn count_in(&self, b: &BBox) -> usize {
        let c0 = cell_index(b.x_min, self.cell_size, self.cols);
        let c1 = cell_index(b.x_max, self.cell_size, self.cols);
        let r0 = cell_index(b.y_min, self.cell_size, self.rows);
        let r1 = cell_index(b.y_max, self.cell_size, self.rows);
        let mut count = self.block_sum(r0 + 1, r1, c0 + 1, c1);
        let inside = |&(x, y): &(f64, f64)| x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max;
        for r in r0..=r1 {
            let border_row = r == r0 || r == r1;
            for c in c0..=c1 {
                if border_row || c == c0 || c == c1 {
                    count += self.buckets[r * self.cols + c].iter().filter(|p| inside(p)).count();
                }
            }
        }
        count
    }
}

/// Used pins inside the closed rectangle spanned by two pins, per g-cell of
/// rectangle area (area clamped to at least one g-cell).
pub fn avg_pin_density(a: PinId, b: PinId, netlist: &Netlist, placement: &PlacementState, index: &PinIndex) -> f64 {
    let pa = placement.pin_position(netlist, a);
    let pb = placement.pin_position(netlist, b);
    pin_density_between(pa, pb, index)
}

pub fn pin_density_between(pa: (f64, f64), pb: (f64, f64), index: &PinIndex) -> f64 {
    let b = BBox::of_points([pa, pb]).expect("two points");
    let s = index.cell_size;
    let area = ((b.width() / s) * (b.height() / s)).max(1.0);
    index.count_in(&b) as f64 / area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{InstId, NetId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn device(w: usize, h: usize) -> Device {
        Device::with_grid(w, h, 1, 1, BTreeMap::new(), 24).unwrap()
    }

    /// `nets` random nets over `cells` LUTs.
    fn random_design(seed: u64, cells: usize, nets: usize, max_pins: usize) -> Netlist {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let insts: Vec<String> = (0..cells)
            .map(|i| format!(r#"{{"name":"i{i}","kind":"LUT"}}"#))
            .collect();
        let nets: Vec<String> = (0..nets)
            .map(|n| {
                let p = rng.random_range(2..=max_pins);
                let pins: Vec<String> = (0..p)
                    .map(|_| format!(r#"{{"inst":"i{}"}}"#, rng.random_range(0..cells)))
                    .collect();
                format!(
                    r#"{{"name":"n{n}","driver":{},"loads":[{}]}}"#,
                    pins[0],
                    pins[1..].join(",")
                )
            })
            .collect();
        Netlist::parse(&format!(
            r#"{{"instances":[{}],"nets":[{}]}}"#,
            insts.join(","),
            nets.join(",")
        ))
        .unwrap()
    }

    fn random_placement(seed: u64, n: usize, w: f64, h: f64) -> PlacementState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PlacementState::new(n);
        for i in 0..n {
            p.set(InstId(i), rng.random_range(0.0..w), rng.random_range(0.0..h));
        }
        p
    }

    #[test]
    fn single_cell_net_gets_its_hpwl() {
        let text = r#"{"instances":[{"name":"a","kind":"LUT"},{"name":"b","kind":"LUT"}],
            "nets":[{"name":"n","driver":{"inst":"a"},"loads":[{"inst":"b"}]}]}"#;
        let nl = Netlist::parse(text).unwrap();
        let mut p = PlacementState::new(2);
        p.set(InstId(0), 4.5, 4.5);
        p.set(InstId(1), 6.0, 7.5);
        let grid = compute_routing_density(&nl, &p, &device(16, 16), &CongestionConfig::default()).unwrap();
        let h = 1.5 + 3.0;
        assert_eq!(grid.at(1, 1), h);
        assert_eq!(grid.total(), h);
    }

    #[test]
    fn empty_netlist_all_zero() {
        let nl = random_design(1, 3, 0, 2);
        let p = PlacementState::new(3);
        let grid = compute_routing_density(&nl, &p, &device(16, 16), &CongestionConfig::default()).unwrap();
        assert!(grid.density.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn non_positive_cell_size_rejected() {
        let nl = random_design(1, 3, 1, 2);
        let p = PlacementState::new(3);
        let cfg = CongestionConfig {
            cell_size: 0.0,
            ..Default::default()
        };
        assert!(compute_routing_density(&nl, &p, &device(16, 16), &cfg).is_err());
    }

    #[test]
    fn matches_naive_double_loop() {
        let (w, h) = (40.0, 28.0);
        let nl = random_design(7, 60, 50, 6);
        let p = random_placement(8, 60, w, h);
        let cfg = CongestionConfig::default();
        let grid = compute_routing_density(&nl, &p, &device(40, 28), &cfg).unwrap();
        let s = cfg.cell_size;

        // Brute force: geometric box/cell intersection over every (net, cell) pair.
        let intersects = |b: &BBox, r: usize, c: usize| {
            let (cx0, cy0) = (c as f64 * s, r as f64 * s);
            b.x_min < cx0 + s && b.x_max >= cx0 && b.y_min < cy0 + s && b.y_max >= cy0
        };
        let mut naive = vec![0.0; grid.rows * grid.cols];
        for n in nl.net_ids() {
            let net = nl.net(n);
            let b = net_bbox(net, &nl, &p);
            let cells: Vec<(usize, usize)> = (0..grid.rows)
                .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
                .filter(|&(r, c)| intersects(&b, r, c))
                .collect();
            let share = cfg.pin_count_weight(net.pin_count()) * b.half_perimeter() / cells.len() as f64;
            for (r, c) in cells {
                naive[r * grid.cols + c] += share;
            }
        }
        for (a, b) in grid.density.iter().zip(&naive) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        // Total mass equals the weighted wirelength.
        let mass: f64 = nl
            .net_ids()
            .map(|n| cfg.pin_count_weight(nl.net(n).pin_count()) * net_bbox(nl.net(n), &nl, &p).half_perimeter())
            .sum();
        assert!((grid.total() - mass).abs() < 1e-9 * mass);
    }

    #[test]
    fn permuting_instance_ids_keeps_densities() {
        let nl = random_design(3, 30, 40, 5);
        let p = random_placement(4, 30, 32.0, 32.0);
        let cfg = CongestionConfig::default();
        let grid = compute_routing_density(&nl, &p, &device(32, 32), &cfg).unwrap();

        // Reverse instance order in the file and remap positions.
        let text = nl.to_json();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["instances"].as_array_mut().unwrap().reverse();
        let permuted = Netlist::parse(&v.to_string()).unwrap();
        let mut q = PlacementState::new(30);
        for i in 0..30 {
            let id = permuted.find_instance(&format!("i{i}")).unwrap();
            q.set(id, p.x[i], p.y[i]);
        }
        let grid2 = compute_routing_density(&permuted, &q, &device(32, 32), &cfg).unwrap();
        for (a, b) in grid.density.iter().zip(&grid2.density) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn figure_average() {
        // A net whose box covers a 3×2 block of g-cells.
        let mut grid = GCellGrid::empty(&device(16, 16), 4.0).unwrap();
        let vals = [46.0, 16.0, 36.0, 8.0, 66.0, 300.0];
        for (k, v) in vals.iter().enumerate() {
            let (r, c) = (k / 3, k % 3);
            grid.density[r * grid.cols + c] = *v;
        }
        let b = BBox {
            x_min: 1.0,
            x_max: 10.0,
            y_min: 0.5,
            y_max: 6.0,
        };
        let avg = grid.mean_over(&b);
        assert!((avg - 472.0 / 6.0).abs() < 1e-12);
        assert!((avg - 78.67).abs() < 5e-3);

        let inside = BBox {
            x_min: 5.0,
            x_max: 6.0,
            y_min: 5.0,
            y_max: 7.0,
        };
        assert_eq!(grid.mean_over(&inside), 66.0);
    }

    #[test]
    fn net_average_is_direct_mean() {
        let nl = random_design(11, 20, 10, 6);
        let p = random_placement(12, 20, 48.0, 48.0);
        let grid = compute_routing_density(&nl, &p, &device(48, 48), &CongestionConfig::default()).unwrap();
        for n in nl.net_ids() {
            let b = net_bbox(nl.net(n), &nl, &p);
            let r = grid.range_of(&b);
            let cells: Vec<f64> = (r.r0..=r.r1)
                .flat_map(|row| (r.c0..=r.c1).map(move |c| (row, c)))
                .map(|(row, c)| grid.at(row, c))
                .collect();
            let direct = cells.iter().sum::<f64>() / cells.len() as f64;
            let got = net_avg_routing_density(&nl, NetId(n.0), &p, &grid);
            assert!((got - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_pair_density() {
        let text = r#"{"instances":[{"name":"a","kind":"LUT"},{"name":"b","kind":"LUT"}],
            "nets":[{"name":"n","driver":{"inst":"a"},"loads":[{"inst":"b"}]}]}"#;
        let nl = Netlist::parse(text).unwrap();
        let mut p = PlacementState::new(2);
        p.set(InstId(0), 3.0, 3.0);
        p.set(InstId(1), 3.0, 3.0);
        let grid = compute_routing_density(&nl, &p, &device(16, 16), &CongestionConfig::default()).unwrap();
        let idx = PinIndex::build(&nl, &p, &grid);
        let net = nl.net(NetId(0));
        assert_eq!(avg_pin_density(net.driver, net.loads[0], &nl, &p, &idx), 2.0);

        // Endpoints 12 sites apart in both axes: 9 g-cells of area.
        p.set(InstId(1), 15.0, 15.0);
        let idx = PinIndex::build(&nl, &p, &grid);
        let d = avg_pin_density(net.driver, net.loads[0], &nl, &p, &idx);
        assert!((d - 2.0 / 9.0).abs() < 1e-12);
        assert_eq!(d, avg_pin_density(net.loads[0], net.driver, &nl, &p, &idx));
    }

    #[test]
    fn pin_count_matches_exhaustive_scan() {
        let nl = random_design(21, 200, 150, 6);
        let p = random_placement(22, 200, 60.0, 44.0);
        let grid = compute_routing_density(&nl, &p, &device(60, 44), &CongestionConfig::default()).unwrap();
        let idx = PinIndex::build(&nl, &p, &grid);
        let all: Vec<(f64, f64)> = (0..nl.pins().len()).map(|i| p.pin_position(&nl, PinId(i))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let a = PinId(rng.random_range(0..all.len()));
            let b = PinId(rng.random_range(0..all.len()));
            let bb = BBox::of_points([all[a.0], all[b.0]]).unwrap();
            let brute = all
                .iter()
                .filter(|&&(x, y)| x >= bb.x_min && x <= bb.x_max && y >= bb.y_min && y <= bb.y_max)
                .count();
            assert_eq!(idx.count_in(&bb), brute);
            let d_ab = avg_pin_density(a, b, &nl, &p, &idx);
            let d_ba = avg_pin_density(b, a, &nl, &p, &idx);
            assert_eq!(d_ab, d_ba);
        }
    }
}
