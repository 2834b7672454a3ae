//! Quadratic system assembly, sparse storage and the PCG solver.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::b2b::b2b_coefficients;
use super::{PseudoKind, PseudoNet};
use crate::device::{clamp_open, Device};
use crate::error::{Error, Result};
use crate::netlist::{InstId, Netlist, PinId};
use crate::placement::{Axis, PlacementState};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicates are summed in input order after a stable sort, so the
    /// result is independent of thread scheduling upstream.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *val.last_mut().expect("entry exists") += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col, val }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.val[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .map(|k| self.val[k] * x[self.col[k]])
            .sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        if self.n >= 4096 {
            (0..self.n).into_par_iter().map(|i| self.row_dot(i, x)).collect()
        } else {
            (0..self.n).map(|i| self.row_dot(i, x)).collect()
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                worst = worst.max((self.val[k] - self.get(self.col[k], i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col[k])] += self.val[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Endpoint {
    /// Unknown `index` plus a constant pin offset.
    Movable {
        index: usize,
        offset: f64,
    },
    Fixed(f64),
}

impl Endpoint {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Endpoint::Movable { index, offset } => x[index] + offset,
            Endpoint::Fixed(v) => v,
        }
    }
}

/// One weighted squared difference `w·(a − b)²` along an axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTerm {
    pub a: Endpoint,
    pub b: Endpoint,
    pub weight: f64,
}

/// Per-axis systems `A x = b` minimizing `Σ w·(a − b)²` over the movable
/// instances.
#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    pub movable: Vec<InstId>,
    pub index_of: Vec<Option<usize>>,
    pub matrix: [CsrMatrix; 2],
    pub rhs: [Vec<f64>; 2],
    pub terms: [Vec<QuadTerm>; 2],
}

impl QuadraticSystem {
    /// Stamps the terms. Fails if an unknown has no term at all.
    pub fn from_terms(
        movable: Vec<InstId>,
        index_of: Vec<Option<usize>>,
        terms: [Vec<QuadTerm>; 2],
    ) -> std::result::Result<Self, InstId> {
        let n = movable.len();
        let mut matrix: [CsrMatrix; 2] = [CsrMatrix::identity(0), CsrMatrix::identity(0)];
        let mut rhs: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
        for axis in 0..2 {
            let mut trip = Vec::with_capacity(4 * terms[axis].len());
            let b = &mut rhs[axis];
            for t in &terms[axis] {
                let w = t.weight;
                match (t.a, t.b) {
                    (Endpoint::Movable { index: i, offset: oi }, Endpoint::Movable { index: j, offset: oj }) => {
                        if i == j {
                            continue;
                        }
                        let d = oi - oj;
                        trip.extend([(i, i, w), (j, j, w), (i, j, -w), (j, i, -w)]);
                        b[i] -= w * d;
                        b[j] += w * d;
                    }
                    (Endpoint::Movable { index: i, offset: o }, Endpoint::Fixed(f))
                    | (Endpoint::Fixed(f), Endpoint::Movable { index: i, offset: o }) => {
                        trip.push((i, i, w));
                        b[i] += w * (f - o);
                    }
                    (Endpoint::Fixed(_), Endpoint::Fixed(_)) => {}
                }
            }
            matrix[axis] = CsrMatrix::from_triplets(n, trip);
        }
        for axis in 0..2 {
            if let Some(i) = matrix[axis].diagonal().iter().position(|&d| !(d > 0.0)) {
                return Err(movable[i]);
            }
        }
        Ok(QuadraticSystem {
            movable,
            index_of,
            matrix,
            rhs,
            terms,
        })
    }

    pub fn len(&self) -> usize {
        self.movable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.movable.is_empty()
    }

    /// Movable coordinates along an axis.
    pub fn unknowns(&self, placement: &PlacementState, axis: Axis) -> Vec<f64> {
        let c = placement.coords(axis);
        self.movable.iter().map(|id| c[id.0]).collect()
    }

    /// `Σ w·(a − b)²` evaluated directly from the term list.
    pub fn objective(&self, axis: Axis, x: &[f64]) -> f64 {
        self.terms[axis as usize]
            .iter()
            .map(|t| {
                let d = t.a.value(x) - t.b.value(x);
                t.weight * d * d
            })
            .sum()
    }

    /// `2(Ax − b)`, the objective gradient.
    pub fn gradient(&self, axis: Axis, x: &[f64]) -> Vec<f64> {
        let a = axis as usize;
        self.matrix[a]
            .mul_vec(x)
            .iter()
            .zip(&self.rhs[a])
            .map(|(ax, b)| 2.0 * (ax - b))
            .collect()
    }
}

/// A timing arc term between a driver pin and a load pin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingTerm {
    pub driver: PinId,
    pub load: PinId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyParams {
    pub lambda: f64,
    pub b2b_epsilon: f64,
    /// Distance clamp of two-pin timing and pseudo-net terms.
    pub min_distance: f64,
}

fn endpoint(
    netlist: &Netlist,
    placement: &PlacementState,
    index_of: &[Option<usize>],
    pin: PinId,
    axis: Axis,
) -> Endpoint {
    let p = netlist.pin(pin);
    let off = match axis {
        Axis::X => p.offset.0,
        Axis::Y => p.offset.1,
    };
    match index_of[p.owner.0] {
        Some(index) => Endpoint::Movable { index, offset: off },
        None => Endpoint::Fixed(placement.coords(axis)[p.owner.0] + off),
    }
}

/// Stamps `(1 − λ)(WL + WD) + λ·WT`: Bound2Bound net terms and density
/// anchors scaled by `1 − λ`, timing arcs and clock-region pseudo-nets by
/// `λ`. With `λ = 0` the timing inputs are not read.
pub fn assemble_quadratic_system(
    netlist: &Netlist,
    placement: &PlacementState,
    pseudo: &[PseudoNet],
    timing: &[TimingTerm],
    params: &AssemblyParams,
) -> Result<QuadraticSystem> {
    let lambda = params.lambda;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Validation(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let mut index_of = vec![None; netlist.num_instances()];
    let mut movable = Vec::new();
    for id in netlist.movable() {
        index_of[id.0] = Some(movable.len());
        movable.push(id);
    }
    let wl = 1.0 - lambda;
    let nets: Vec<_> = netlist
        .net_ids()
        .filter(|&n| !netlist.net(n).is_clock && netlist.net(n).pin_count() >= 2)
        .collect();
    let chunks: Vec<[Vec<QuadTerm>; 2]> = nets
        .par_chunks(256)
        .map(|chunk| {
            let mut out: [Vec<QuadTerm>; 2] = [Vec::new(), Vec::new()];
            for &n in chunk {
                let pairs = b2b_coefficients(netlist.net(n), netlist, placement, params.b2b_epsilon);
                for (axis, list) in Axis::BOTH.iter().zip(pairs) {
                    for q in list {
                        out[*axis as usize].push(QuadTerm {
                            a: endpoint(netlist, placement, &index_of, q.a, *axis),
                            b: endpoint(netlist, placement, &index_of, q.b, *axis),
                            weight: wl * q.weight,
                        });
                    }
                }
            }
            out
        })
        .collect();
    let mut terms: [Vec<QuadTerm>; 2] = [Vec::new(), Vec::new()];
    for [x, y] in chunks {
        terms[0].extend(x);
        terms[1].extend(y);
    }

    let dmin = params.min_distance;
    for p in pseudo {
        let Some(index) = index_of[p.inst.0] else {
            continue;
        };
        let scale = match p.kind {
            PseudoKind::Anchor => wl,
            PseudoKind::ClockRegion => lambda,
        };
        if scale == 0.0 || p.weight <= 0.0 {
            continue;
        }
        let (cx, cy) = placement.get(p.inst);
        let targets = [(Axis::X, Some(p.x), cx), (Axis::Y, p.y, cy)];
        for (axis, target, cur) in targets {
            if let Some(t) = target {
                terms[axis as usize].push(QuadTerm {
                    a: Endpoint::Movable { index, offset: 0.0 },
                    b: Endpoint::Fixed(t),
                    weight: scale * p.weight / (cur - t).abs().max(dmin),
                });
            }
        }
    }

    if lambda > 0.0 {
        for t in timing {
            if t.weight <= 0.0 || netlist.pin(t.driver).owner == netlist.pin(t.load).owner {
                continue;
            }
            let a = placement.pin_position(netlist, t.driver);
            let b = placement.pin_position(netlist, t.load);
            for (axis, d) in [(Axis::X, a.0 - b.0), (Axis::Y, a.1 - b.1)] {
                terms[axis as usize].push(QuadTerm {
                    a: endpoint(netlist, placement, &index_of, t.driver, axis),
                    b: endpoint(netlist, placement, &index_of, t.load, axis),
                    weight: lambda * t.weight / d.abs().max(dmin),
                });
            }
        }
    }

    QuadraticSystem::from_terms(movable, index_of, terms).map_err(|id| {
        Error::Numerical(format!(
            "singular system: instance `{}` has no connection to a fixed pin or anchor",
            netlist.instance(id).name
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-6,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖`, absolute when `b = 0`.
    pub relative_residual: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient from `x0`. Returns the iterate
/// with the smallest residual seen.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], x0: Vec<f64>, cfg: &SolverConfig) -> (Vec<f64>, CgStats) {
    let n = a.n;
    let bnorm = norm(b);
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0;
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut best = (norm(&r) / scale, x.clone());
    if best.0 <= cfg.tolerance || n == 0 {
        return (
            x,
            CgStats {
                iterations: 0,
                relative_residual: best.0,
                converged: true,
            },
        );
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    while it < cfg.max_iterations {
        it += 1;
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r) / scale;
        if res < best.0 {
            best = (res, x.clone());
        }
        if res <= cfg.tolerance {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Report the true residual of the returned iterate.
    let ax = a.mul_vec(&best.1);
    let res = norm(&b.iter().zip(&ax).map(|(b, ax)| b - ax).collect::<Vec<_>>()) / scale;
    let converged = res <= cfg.tolerance;
    (
        best.1,
        CgStats {
            iterations: it,
            relative_residual: res,
            converged,
        },
    )
}

/// Solves both axes (concurrently) from the current placement and clamps
/// the movable instances to the die.
pub fn solve_quadratic(
    system: &QuadraticSystem,
    placement: &PlacementState,
    device: &Device,
    cfg: &SolverConfig,
) -> (PlacementState, [CgStats; 2]) {
    let solve = |axis: Axis| {
        let a = axis as usize;
        conjugate_gradient(&system.matrix[a], &system.rhs[a], system.unknowns(placement, axis), cfg)
    };
    let ((x, sx), (y, sy)) = rayon::join(|| solve(Axis::X), || solve(Axis::Y));
    for (axis, s) in [("x", &sx), ("y", &sy)] {
        if !s.converged {
            log::warn!(
                "{axis} solve stopped after {} iterations at relative residual {:.3e}",
                s.iterations,
                s.relative_residual
            );
        }
    }
    let mut out = placement.clone();
    for (k, id) in system.movable.iter().enumerate() {
        out.x[id.0] = clamp_open(x[k], device.width_f());
        out.y[id.0] = clamp_open(y[k], device.height_f());
    }
    (out, [sx, sy])
}
