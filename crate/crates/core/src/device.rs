//! Device description: die extent, clock-region tiling and per-site
//! resource capacities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netlist::InstanceKind;

/// Half-open rectangle `[x0, x1) × [y0, y1)` in site units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn center_x(&self) -> f64 {
        0.5 * (self.x0 + self.x1) as f64
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub width: usize,
    pub height: usize,
    /// Clock regions tiling the die, row-major when built from a grid.
    pub clock_regions: Vec<Rect>,
    /// Resource capacity per site, keyed by the site type an instance kind
    /// occupies. Kinds absent from the map have zero capacity.
    pub capacity: BTreeMap<InstanceKind, f64>,
    /// Maximum distinct clock nets per clock region.
    pub clock_capacity: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RegionSpec {
    Grid { rows: usize, cols: usize },
    Explicit(Vec<Rect>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DeviceFile {
    width: usize,
    height: usize,
    clock_regions: RegionSpec,
    capacity: BTreeMap<InstanceKind, f64>,
    #[serde(default = "default_clock_capacity")]
    clock_capacity: usize,
}

fn default_clock_capacity() -> usize {
    24
}

impl Device {
    /// Regular `rows × cols` clock-region grid. Boundaries are placed at
    /// `floor(i·W/cols)` so uneven divisions still tile exactly.
    pub fn with_grid(
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
        capacity: BTreeMap<InstanceKind, f64>,
        clock_capacity: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation("clock region grid has zero rows or columns".into()));
        }
        if rows > height || cols > width {
            return Err(Error::Validation("more clock regions than sites".into()));
        }
        let mut regions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                regions.push(Rect {
                    x0: c * width / cols,
                    x1: (c + 1) * width / cols,
                    y0: r * height / rows,
                    y1: (r + 1) * height / rows,
                });
            }
        }
        Device::new(width, height, regions, capacity, clock_capacity)
    }

    pub fn new(
        width: usize,
        height: usize,
        clock_regions: Vec<Rect>,
        capacity: BTreeMap<InstanceKind, f64>,
        clock_capacity: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "device has zero dimension ({width}×{height})"
            )));
        }
        if let Some((k, c)) = capacity.iter().find(|(_, &c)| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::Validation(format!("capacity of {k} is {c}")));
        }
        check_tiling(width, height, &clock_regions)?;
        Ok(Device {
            width,
            height,
            clock_regions,
            capacity,
            clock_capacity,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: DeviceFile = serde_json::from_str(text)?;
        match file.clock_regions {
            RegionSpec::Grid { rows, cols } => {
                Device::with_grid(file.width, file.height, rows, cols, file.capacity, file.clock_capacity)
            }
            RegionSpec::Explicit(rects) => {
                Device::new(file.width, file.height, rects, file.capacity, file.clock_capacity)
            }
        }
    }

    pub fn to_json(&self) -> String {
        let file = DeviceFile {
            width: self.width,
            height: self.height,
            clock_regions: RegionSpec::Explicit(self.clock_regions.clone()),
            capacity: self.capacity.clone(),
            clock_capacity: self.clock_capacity,
        };
        serde_json::to_string_pretty(&file).expect("device serialization is infallible")
    }

    pub fn width_f(&self) -> f64 {
        self.width as f64
    }

    pub fn height_f(&self) -> f64 {
        self.height as f64
    }

    pub fn capacity_per_site(&self, kind: InstanceKind) -> f64 {
        self.capacity.get(&kind).copied().unwrap_or(0.0)
    }

    /// Whole-die capacity for one site type.
    pub fn total_capacity(&self, kind: InstanceKind) -> f64 {
        self.capacity_per_site(kind) * (self.width * self.height) as f64
    }

    /// Index of the clock region containing `(x, y)` after clamping to the die.
    pub fn region_of(&self, x: f64, y: f64) -> usize {
        let (x, y) = self.clamp(x, y);
        self.clock_regions
            .iter()
            .position(|r| r.contains(x, y))
            .expect("clock regions tile the die")
    }

    /// Clamps a point into `[0, W) × [0, H)`.
    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (clamp_open(x, self.width_f()), clamp_open(y, self.height_f()))
    }
}

/// Clamps into `[0, hi)`.
pub fn clamp_open(v: f64, hi: f64) -> f64 {
    let top = hi - hi.max(1.0) * 1e-9;
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, top)
    }
}

fn check_tiling(width: usize, height: usize, regions: &[Rect]) -> Result<()> {
    if regions.is_empty() {
        return Err(Error::Validation("device has no clock regions".into()));
    }
    for (i, r) in regions.iter().enumerate() {
        if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > width || r.y1 > height {
            return Err(Error::Validation(format!(
                "clock region {i} {r:?} is empty or outside the die"
            )));
        }
        for (j, s) in regions.iter().enumerate().skip(i + 1) {
            if r.overlaps(s) {
                return Err(Error::Validation(format!("clock regions {i} and {j} overlap")));
            }
        }
    }
    // Disjoint regions inside the die tile it iff their areas sum to the die area.
    let covered: usize = regions.iter().map(Rect::area).sum();
    if covered != width * height {
        return Err(Error::Validation(format!(
            "clock regions cover {covered} of {} sites",
            width * height
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps() -> BTreeMap<InstanceKind, f64> {
        BTreeMap::from([(InstanceKind::Lut, 8.0), (InstanceKind::Ff, 8.0)])
    }

    #[test]
    fn grid_regions() {
        let dev = Device::with_grid(100, 100, 2, 2, caps(), 24).unwrap();
        assert_eq!(dev.clock_regions.len(), 4);
        for r in &dev.clock_regions {
            assert_eq!((r.width(), r.height()), (50, 50));
        }
        assert_eq!(dev.region_of(75.0, 10.0), 1);
        assert_eq!(dev.region_of(10.0, 75.0), 2);
        assert_eq!(dev.region_of(1e9, 1e9), 3);
    }

    #[test]
    fn overlapping_regions_rejected() {
        let text = r#"{"width": 10, "height": 10,
            "clock_regions": [{"x0":0,"y0":0,"x1":6,"y1":10},{"x0":5,"y0":0,"x1":10,"y1":10}],
            "capacity": {"LUT": 1}}"#;
        let err = Device::parse(text).unwrap_err().to_string();
        assert!(err.contains("overlap"), "{err}");
    }

    #[test]
    fn gaps_rejected() {
        let text = r#"{"width": 10, "height": 10,
            "clock_regions": [{"x0":0,"y0":0,"x1":5,"y1":10}],
            "capacity": {"LUT": 1}}"#;
        assert!(Device::parse(text).is_err());
    }

    #[test]
    fn zero_dimension_rejected() {
        let text = r#"{"width": 0, "height": 10, "clock_regions": {"rows":1,"cols":1},
            "capacity": {}}"#;
        assert!(Device::parse(text).is_err());
    }

    #[test]
    fn uneven_grid_tiles() {
        let dev = Device::with_grid(64, 10, 3, 3, caps(), 24).unwrap();
        assert_eq!(dev.clock_regions.iter().map(Rect::area).sum::<usize>(), 640);
    }

    #[test]
    fn bundled_small_device() {
        let dev = Device::parse(include_str!("../fixtures/device_small.json")).unwrap();
        assert_eq!((dev.width, dev.height), (64, 64));
        assert_eq!(dev.clock_regions.len(), 8);
        assert_eq!(dev.capacity_per_site(InstanceKind::Lut), 8.0);
        assert_eq!(dev.capacity_per_site(InstanceKind::Ff), 8.0);
        assert_eq!(dev.clock_capacity, 24);
        let again = Device::parse(&dev.to_json()).unwrap();
        assert_eq!(dev, again);
    }

    #[test]
    fn clamp_stays_inside() {
        let dev = Device::with_grid(10, 10, 1, 1, caps(), 24).unwrap();
        let (x, y) = dev.clamp(10.0, -3.0);
        assert!(x < 10.0 && x > 9.99);
        assert_eq!(y, 0.0);
    }
}
