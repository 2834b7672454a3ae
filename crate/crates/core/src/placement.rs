use serde::{Deserialize, Serialize};

use crate::device::Device;
use crate::error::{Error, Result};
use crate::netlist::{InstId, Net, NetId, Netlist, PinId};

/// Continuous site coordinates, one `(x, y)` per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];
}

impl PlacementState {
    pub fn new(n: usize) -> Self {
        PlacementState {
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    /// Fixed instances at their locations, movable ones at the die center.
    pub fn initial(netlist: &Netlist, device: &Device) -> Self {
        let mut p = PlacementState::new(netlist.num_instances());
        let (cx, cy) = (0.5 * device.width_f(), 0.5 * device.height_f());
        for (i, inst) in netlist.instances().iter().enumerate() {
            let (x, y) = inst.fixed_pos.unwrap_or((cx, cy));
            p.x[i] = x;
            p.y[i] = y;
        }
        p
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn get(&self, id: InstId) -> (f64, f64) {
        (self.x[id.0], self.y[id.0])
    }

    pub fn set(&mut self, id: InstId, x: f64, y: f64) {
        self.x[id.0] = x;
        self.y[id.0] = y;
    }

    pub fn coords(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }

    pub fn coords_mut(&mut self, axis: Axis) -> &mut [f64] {
        match axis {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
        }
    }

    /// Instance position plus pin offset.
    pub fn pin_position(&self, netlist: &Netlist, pin: PinId) -> (f64, f64) {
        let p = netlist.pin(pin);
        (self.x[p.owner.0] + p.offset.0, self.y[p.owner.0] + p.offset.1)
    }

    pub fn clamp_to(&mut self, device: &Device) {
        for i in 0..self.len() {
            let (x, y) = device.clamp(self.x[i], self.y[i]);
            self.x[i] = x;
            self.y[i] = y;
        }
    }

    pub fn parse(text: &str, netlist: &Netlist) -> Result<Self> {
        let file: PlacementFile = serde_json::from_str(text)?;
        let mut p = PlacementState::new(netlist.num_instances());
        let mut seen = vec![false; netlist.num_instances()];
        for rec in file.placements {
            let id = netlist
                .find_instance(&rec.inst)
                .ok_or_else(|| Error::Parse(format!("placement of unknown instance `{}`", rec.inst)))?;
            if !(rec.x.is_finite() && rec.y.is_finite()) {
                return Err(Error::Parse(format!("non-finite position for `{}`", rec.inst)));
            }
            p.set(id, rec.x, rec.y);
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!(
                "instance `{}` is not placed",
                netlist.instance(InstId(i)).name
            )));
        }
        Ok(p)
    }

    pub fn to_json(&self, netlist: &Netlist) -> String {
        let placements = netlist
            .instances()
            .iter()
            .enumerate()
            .map(|(i, inst)| PlacementRecord {
                inst: inst.name.clone(),
                x: self.x[i],
                y: self.y[i],
            })
            .collect();
        serde_json::to_string_pretty(&PlacementFile { placements }).expect("placement serialization is infallible")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PlacementFile {
    placements: Vec<PlacementRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlacementRecord {
    inst: String,
    x: f64,
    y: f64,
}

/// Axis-aligned bounding box of a net's pins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn of_points(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter();
        let (x, y) = it.next()?;
        let mut b = BBox {
            x_min: x,
            x_max: x,
            y_min: y,
            y_max: y,
        };
        for (x, y) in it {
            b.x_min = b.x_min.min(x);
            b.x_max = b.x_max.max(x);
            b.y_min = b.y_min.min(y);
            b.y_max = b.y_max.max(y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn half_perimeter(&self) -> f64 {
        self.width() + self.height()
    }
}

pub fn net_bbox(net: &Net, netlist: &Netlist, placement: &PlacementState) -> BBox {
    BBox::of_points(net.pins().map(|p| placement.pin_position(netlist, p))).expect("a net always has its driver pin")
}

/// Half-perimeter wirelength of one net.
pub fn net_hpwl(netlist: &Netlist, net: NetId, placement: &PlacementState) -> f64 {
    net_bbox(netlist.net(net), netlist, placement).half_perimeter()
}

/// Sum of HPWL over non-clock nets.
pub fn total_hpwl(netlist: &Netlist, placement: &PlacementState) -> f64 {
    netlist
        .net_ids()
        .filter(|&n| !netlist.net(n).is_clock)
        .map(|n| net_hpwl(netlist, n, placement))
        .sum()
}
