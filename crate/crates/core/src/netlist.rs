//! Heterogeneous netlist model and its JSON interchange format.
//!
//! Ids are dense and assigned in file order, so iteration order over
//! instances, nets and pins is stable across runs.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Site/primitive type of an instance. The order matches the one-hot
/// layout of the delay model's vertex features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceKind {
    #[serde(rename = "LUT")]
    Lut,
    #[serde(rename = "FF")]
    Ff,
    #[serde(rename = "DSP")]
    Dsp,
    #[serde(rename = "RAMB")]
    Ramb,
    #[serde(rename = "MUX")]
    Mux,
    #[serde(rename = "IO")]
    Io,
    #[serde(rename = "ClockBuffer")]
    ClockBuffer,
    #[serde(rename = "CARRY8")]
    Carry8,
    #[serde(rename = "Shifter")]
    Shifter,
    #[serde(rename = "LUTRAM")]
    Lutram,
}

impl InstanceKind {
    pub const ALL: [InstanceKind; 10] = [
        InstanceKind::Lut,
        InstanceKind::Ff,
        InstanceKind::Dsp,
        InstanceKind::Ramb,
        InstanceKind::Mux,
        InstanceKind::Io,
        InstanceKind::ClockBuffer,
        InstanceKind::Carry8,
        InstanceKind::Shifter,
        InstanceKind::Lutram,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Position in [`InstanceKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            InstanceKind::Lut => "LUT",
            InstanceKind::Ff => "FF",
            InstanceKind::Dsp => "DSP",
            InstanceKind::Ramb => "RAMB",
            InstanceKind::Mux => "MUX",
            InstanceKind::Io => "IO",
            InstanceKind::ClockBuffer => "ClockBuffer",
            InstanceKind::Carry8 => "CARRY8",
            InstanceKind::Shifter => "Shifter",
            InstanceKind::Lutram => "LUTRAM",
        }
    }

    /// Whether instances of this kind start and end timing paths by default.
    pub fn default_sequential(self) -> bool {
        matches!(
            self,
            InstanceKind::Ff | InstanceKind::Ramb | InstanceKind::Dsp | InstanceKind::Io
        )
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InstanceKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown instance kind `{s}`")))
    }
}

macro_rules! dense_id {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }
    };
}

dense_id!(InstId);
dense_id!(NetId);
dense_id!(PinId);

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub kind: InstanceKind,
    pub fixed: bool,
    /// Timing start/end point.
    pub sequential: bool,
    /// Location of a fixed instance.
    pub fixed_pos: Option<(f64, f64)>,
    pub clock: Option<NetId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinDirection {
    Driver,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pin {
    pub owner: InstId,
    pub direction: PinDirection,
    pub net: NetId,
    pub offset: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub name: String,
    pub driver: PinId,
    /// Load order is significant: it defines the load's net index feature.
    pub loads: Vec<PinId>,
    /// Referenced as a clock by at least one instance. Clock nets take no
    /// part in wirelength, congestion or timing.
    pub is_clock: bool,
}

impl Net {
    pub fn pin_count(&self) -> usize {
        1 + self.loads.len()
    }

    pub fn fanout(&self) -> usize {
        self.loads.len()
    }

    pub fn pins(&self) -> impl Iterator<Item = PinId> + '_ {
        std::iter::once(self.driver).chain(self.loads.iter().copied())
    }

    /// Signal net with at least one load.
    pub fn is_timing(&self) -> bool {
        !self.is_clock && !self.loads.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    instances: Vec<Instance>,
    nets: Vec<Net>,
    pins: Vec<Pin>,
    inst_pins: Vec<Vec<PinId>>,
    by_name: HashMap<String, InstId>,
}

impl Netlist {
    /// Builds a netlist from already-resolved parts; used by the parser and
    /// by generators.
    pub fn from_parts(instances: Vec<Instance>, nets: Vec<Net>, pins: Vec<Pin>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if by_name.insert(inst.name.clone(), InstId(i)).is_some() {
                return Err(Error::Parse(format!("duplicate instance `{}`", inst.name)));
            }
        }
        let mut inst_pins = vec![Vec::new(); instances.len()];
        for (p, pin) in pins.iter().enumerate() {
            let owner = inst_pins
                .get_mut(pin.owner.0)
                .ok_or_else(|| Error::Parse(format!("pin {p} references missing instance")))?;
            owner.push(PinId(p));
            let net = nets
                .get(pin.net.0)
                .ok_or_else(|| Error::Parse(format!("pin {p} references missing net")))?;
            let consistent = match pin.direction {
                PinDirection::Driver => net.driver == PinId(p),
                PinDirection::Load => net.loads.contains(&PinId(p)),
            };
            if !consistent {
                return Err(Error::Parse(format!(
                    "pin {p} direction disagrees with net `{}`",
                    net.name
                )));
            }
        }
        Ok(Netlist {
            instances,
            nets,
            pins,
            inst_pins,
            by_name,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    pub fn pins(&self) -> &[Pin] {
        &self.pins
    }

    pub fn instance(&self, id: InstId) -> &Instance {
        &self.instances[id.0]
    }

    pub fn net(&self, id: NetId) -> &Net {
        &self.nets[id.0]
    }

    pub fn pin(&self, id: PinId) -> &Pin {
        &self.pins[id.0]
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn num_nets(&self) -> usize {
        self.nets.len()
    }

    pub fn instance_pins(&self, id: InstId) -> &[PinId] {
        &self.inst_pins[id.0]
    }

    pub fn find_instance(&self, name: &str) -> Option<InstId> {
        self.by_name.get(name).copied()
    }

    pub fn net_ids(&self) -> impl Iterator<Item = NetId> {
        (0..self.nets.len()).map(NetId)
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = InstId> {
        (0..self.instances.len()).map(InstId)
    }

    /// Nets that carry timing arcs (non-clock, at least one load).
    pub fn timing_nets(&self) -> impl Iterator<Item = NetId> + '_ {
        self.net_ids().filter(|&n| self.nets[n.0].is_timing())
    }

    pub fn movable(&self) -> impl Iterator<Item = InstId> + '_ {
        self.instance_ids().filter(|&i| !self.instances[i.0].fixed)
    }

    pub fn count_kind(&self, kind: InstanceKind) -> usize {
        self.instances.iter().filter(|i| i.kind == kind).count()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: NetlistFile = serde_json::from_str(text)?;
        file.resolve()
    }

    /// Canonical JSON: pretty-printed, file order, optional fields omitted
    /// when defaulted.
    pub fn to_json(&self) -> String {
        let file = NetlistFile::from_netlist(self);
        serde_json::to_string_pretty(&file).expect("netlist serialization is infallible")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetlistFile {
    instances: Vec<InstanceRecord>,
    nets: Vec<NetRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstanceRecord {
    name: String,
    kind: InstanceKind,
    #[serde(default)]
    fixed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clock: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sequential: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PinRecord {
    inst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum DriverField {
    One(PinRecord),
    Many(Vec<PinRecord>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetRecord {
    name: String,
    #[serde(default)]
    driver: Option<DriverField>,
    #[serde(default)]
    loads: Vec<PinRecord>,
}

impl NetlistFile {
    fn resolve(self) -> Result<Netlist> {
        let mut inst_index = HashMap::with_capacity(self.instances.len());
        for (i, rec) in self.instances.iter().enumerate() {
            if inst_index.insert(rec.name.as_str(), InstId(i)).is_some() {
                return Err(Error::Parse(format!("duplicate instance `{}`", rec.name)));
            }
        }
        let mut net_index = HashMap::with_capacity(self.nets.len());
        for (n, rec) in self.nets.iter().enumerate() {
            if net_index.insert(rec.name.as_str(), NetId(n)).is_some() {
                return Err(Error::Parse(format!("duplicate net `{}`", rec.name)));
            }
        }

        let mut instances = Vec::with_capacity(self.instances.len());
        let mut clock_nets = vec![false; self.nets.len()];
        for rec in &self.instances {
            let fixed_pos = match (rec.x, rec.y) {
                (Some(x), Some(y)) => Some((x, y)),
                (None, None) => None,
                _ => return Err(Error::Parse(format!("instance `{}` has only one coordinate", rec.name))),
            };
            let clock = match &rec.clock {
                Some(name) => {
                    let id = *net_index.get(name.as_str()).ok_or_else(|| {
                        Error::Parse(format!("instance `{}` references unknown clock net `{name}`", rec.name))
                    })?;
                    clock_nets[id.0] = true;
                    Some(id)
                }
                None => None,
            };
            instances.push(Instance {
                name: rec.name.clone(),
                kind: rec.kind,
                fixed: rec.fixed,
                sequential: rec.sequential.unwrap_or_else(|| rec.kind.default_sequential()),
                fixed_pos,
                clock,
            });
        }

        let mut pins = Vec::new();
        let mut nets = Vec::with_capacity(self.nets.len());
        let lookup = |rec: &PinRecord, net: &str| -> Result<(InstId, (f64, f64))> {
            let owner = *inst_index
                .get(rec.inst.as_str())
                .ok_or_else(|| Error::Parse(format!("net `{net}` references unknown instance `{}`", rec.inst)))?;
            let offset = rec.offset.map(|[dx, dy]| (dx, dy)).unwrap_or((0.0, 0.0));
            Ok((owner, offset))
        };
        for (n, rec) in self.nets.iter().enumerate() {
            let driver_rec = match &rec.driver {
                Some(DriverField::One(p)) => p,
                Some(DriverField::Many(list)) if list.len() == 1 => &list[0],
                Some(DriverField::Many(list)) if list.len() > 1 => {
                    return Err(Error::Parse(format!("net `{}` has multiple drivers", rec.name)))
                }
                _ => return Err(Error::Parse(format!("net `{}` has no driver", rec.name))),
            };
            let (owner, offset) = lookup(driver_rec, &rec.name)?;
            let driver = PinId(pins.len());
            pins.push(Pin {
                owner,
                direction: PinDirection::Driver,
                net: NetId(n),
                offset,
            });
            let mut loads = Vec::with_capacity(rec.loads.len());
            for load in &rec.loads {
                let (owner, offset) = lookup(load, &rec.name)?;
                loads.push(PinId(pins.len()));
                pins.push(Pin {
                    owner,
                    direction: PinDirection::Load,
                    net: NetId(n),
                    offset,
                });
            }
            nets.push(Net {
                name: rec.name.clone(),
                driver,
                loads,
                is_clock: clock_nets[n],
            });
        }
        Netlist::from_parts(instances, nets, pins)
    }

    fn from_netlist(netlist: &Netlist) -> Self {
        let pin_record = |id: PinId| {
            let pin = netlist.pin(id);
            PinRecord {
                inst: netlist.instance(pin.owner).name.clone(),
                offset: (pin.offset != (0.0, 0.0)).then_some([pin.offset.0, pin.offset.1]),
            }
        };
        let instances = netlist
            .instances
            .iter()
            .map(|inst| InstanceRecord {
                name: inst.name.clone(),
                kind: inst.kind,
                fixed: inst.fixed,
                x: inst.fixed_pos.map(|p| p.0),
                y: inst.fixed_pos.map(|p| p.1),
                clock: inst.clock.map(|c| netlist.net(c).name.clone()),
                sequential: (inst.sequential != inst.kind.default_sequential()).then_some(inst.sequential),
            })
            .collect();
        let nets = netlist
            .nets
            .iter()
            .map(|net| NetRecord {
                name: net.name.clone(),
                driver: Some(DriverField::One(pin_record(net.driver))),
                loads: net.loads.iter().map(|&p| pin_record(p)).collect(),
            })
            .collect();
        NetlistFile { instances, nets }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_CELL: &str = r#"{
        "instances": [
            {"name": "a", "kind": "FF"},
            {"name": "b", "kind": "LUT"}
        ],
        "nets": [
            {"name": "n0", "driver": {"inst": "a"}, "loads": [{"inst": "b"}]}
        ]
    }"#;

    #[test]
    fn minimal_design() {
        let nl = Netlist::parse(TWO_CELL).unwrap();
        assert_eq!(nl.num_instances(), 2);
        assert_eq!(nl.num_nets(), 1);
        let net = nl.net(NetId(0));
        assert_eq!(net.pin_count(), 2);
        assert_eq!(net.fanout(), 1);
        assert_eq!(nl.pin(net.driver).owner, InstId(0));
        assert!(nl.instance(InstId(0)).sequential);
        assert!(!nl.instance(InstId(1)).sequential);
    }

    #[test]
    fn multiple_drivers_rejected() {
        let text = r#"{
            "instances": [{"name": "a", "kind": "LUT"}, {"name": "b", "kind": "LUT"}],
            "nets": [{"name": "n", "driver": [{"inst": "a"}, {"inst": "b"}], "loads": []}]
        }"#;
        let err = Netlist::parse(text).unwrap_err().to_string();
        assert!(err.contains("multiple drivers"), "{err}");
    }

    #[test]
    fn missing_driver_rejected() {
        let text = r#"{
            "instances": [{"name": "a", "kind": "LUT"}],
            "nets": [{"name": "n", "loads": [{"inst": "a"}]}]
        }"#;
        assert!(Netlist::parse(text).unwrap_err().to_string().contains("no driver"));
    }

    #[test]
    fn dangling_reference_rejected() {
        let text = r#"{
            "instances": [{"name": "a", "kind": "LUT"}],
            "nets": [{"name": "n", "driver": {"inst": "a"}, "loads": [{"inst": "zz"}]}]
        }"#;
        assert!(Netlist::parse(text)
            .unwrap_err()
            .to_string()
            .contains("unknown instance"));
        assert!(Netlist::parse("{not json").is_err());
    }

    #[test]
    fn clock_nets_marked() {
        let text = r#"{
            "instances": [
                {"name": "buf", "kind": "ClockBuffer", "fixed": true, "x": 1, "y": 1},
                {"name": "ff", "kind": "FF", "clock": "clk"}
            ],
            "nets": [{"name": "clk", "driver": {"inst": "buf"}, "loads": [{"inst": "ff"}]}]
        }"#;
        let nl = Netlist::parse(text).unwrap();
        assert!(nl.net(NetId(0)).is_clock);
        assert_eq!(nl.timing_nets().count(), 0);
        assert_eq!(nl.instance(InstId(1)).clock, Some(NetId(0)));
    }

    #[test]
    fn canonical_round_trip() {
        let nl = Netlist::parse(TWO_CELL).unwrap();
        let canon = nl.to_json();
        let again = Netlist::parse(&canon).unwrap();
        assert_eq!(nl, again);
        assert_eq!(canon, again.to_json());
    }
}
