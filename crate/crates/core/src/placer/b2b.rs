use crate::netlist::{Net, Netlist, PinId};
use crate::placement::{Axis, PlacementState};

/// Default distance clamp for coincident pins (sites).
pub const B2B_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct B2bPair {
    pub a: PinId,
    pub b: PinId,
    pub weight: f64,
}

/// Bound2Bound pairs of one net along one axis. The two boundary pins are
/// connected to each other and every inner pin to both boundaries, with
/// weight `1 / ((p − 1)·max(|Δ|, ε))`, so the weighted quadratic equals the
/// net's extent along the axis at the construction placement.
pub fn b2b_axis(net: &Net, netlist: &Netlist, placement: &PlacementState, axis: Axis, eps: f64) -> Vec<B2bPair> {
    let pins: Vec<PinId> = net.pins().collect();
    let p = pins.len();
    if p < 2 {
        return Vec::new();
    }
    let pos: Vec<f64> = pins
        .iter()
        .map(|&pin| {
            let (x, y) = placement.pin_position(netlist, pin);
            match axis {
                Axis::X => x,
                Axis::Y => y,
            }
        })
        .collect();
    let mut lo = 0;
    let mut hi = 0;
    for i in 1..p {
        if pos[i] < pos[lo] {
            lo = i;
        }
        if pos[i] >= pos[hi] {
            hi = i;
        }
    }
    if lo == hi {
        hi = if lo == 0 { 1 } else { 0 };
    }
    let scale = 1.0 / (p - 1) as f64;
    let pair = |i: usize, j: usize| B2bPair {
        a: pins[i],
        b: pins[j],
        weight: scale / (pos[i] - pos[j]).abs().max(eps),
    };
    let mut out = Vec::with_capacity(2 * p - 3);
    out.push(pair(lo, hi));
    for k in 0..p {
        if k != lo && k != hi {
            out.push(pair(k, lo));
            out.push(pair(k, hi));
        }
    }
    out
}

/// Pairs for both axes, `[x, y]`.
pub fn b2b_coefficients(net: &Net, netlist: &Netlist, placement: &PlacementState, eps: f64) -> [Vec<B2bPair>; 2] {
    Axis::BOTH.map(|axis| b2b_axis(net, netlist, placement, axis, eps))
}

/// `Σ w·Δ²` of a pair list at the given placement.
pub fn b2b_quadratic(pairs: &[B2bPair], netlist: &Netlist, placement: &PlacementState, axis: Axis) -> f64 {
    pairs
        .iter()
        .map(|q| {
            let a = placement.pin_position(netlist, q.a);
            let b = placement.pin_position(netlist, q.b);
            let d = match axis {
                Axis::X => a.0 - b.0,
                Axis::Y => a.1 - b.1,
            };
            q.weight * d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{InstId, NetId};

    fn net(p: usize) -> Netlist {
        let insts: Vec<String> = (0..p).map(|i| format!(r#"{{"name":"i{i}","kind":"LUT"}}"#)).collect();
        let loads: Vec<String> = (1..p).map(|i| format!(r#"{{"inst":"i{i}"}}"#)).collect();
        Netlist::parse(&format!(
            r#"{{"instances":[{}],"nets":[{{"name":"n","driver":{{"inst":"i0"}},"loads":[{}]}}]}}"#,
            insts.join(","),
            loads.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn two_pins() {
        let nl = net(2);
        let mut p = PlacementState::new(2);
        p.set(InstId(1), 5.0, 0.0);
        let [x, y] = b2b_coefficients(nl.net(NetId(0)), &nl, &p, B2B_EPSILON);
        assert_eq!(x.len(), 1);
        assert!((b2b_quadratic(&x, &nl, &p, Axis::X) - 5.0).abs() < 1e-12);
        assert_eq!(b2b_quadratic(&y, &nl, &p, Axis::Y), 0.0);
        assert_eq!(y[0].weight, 1.0 / B2B_EPSILON);
    }

    #[test]
    fn coincident_pins() {
        let nl = net(4);
        let p = PlacementState::new(4);
        let [x, _] = b2b_coefficients(nl.net(NetId(0)), &nl, &p, B2B_EPSILON);
        assert_eq!(x.len(), 5);
        assert!(x.iter().all(|q| q.weight == 1.0 / (3.0 * B2B_EPSILON)));
        assert_eq!(b2b_quadratic(&x, &nl, &p, Axis::X), 0.0);
    }

    #[test]
    fn inner_pins_connect_to_both_bounds() {
        let nl = net(5);
        let mut p = PlacementState::new(5);
        for (i, x) in [3.0, 0.0, 7.0, 4.0, 1.0].iter().enumerate() {
            p.set(InstId(i), *x, 0.0);
        }
        let x = b2b_axis(nl.net(NetId(0)), &nl, &p, Axis::X, B2B_EPSILON);
        assert_eq!(x.len(), 2 * 5 - 3);
        assert!((b2b_quadratic(&x, &nl, &p, Axis::X) - 7.0).abs() < 1e-12);
    }
}
