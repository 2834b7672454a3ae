//! Levelized arrival/required propagation.
//!
//! Convention: arrival and required times are measured at a vertex's input
//! and the vertex's logic delay is charged when the signal leaves it.
//! Hence
//!
//! ```text
//! arr(i)      = max_{j→i} arr(j) + logic(j) + netD(j→i)
//! req(i)      = min_{i→j} req(j) − netD(i→j) − logic(i)
//! slack(i→j)  = req(j) − arr(i) − logic(i) − netD(i→j)
//! ```
//!
//! which makes every arc slack equal to the clock period minus the longest
//! full path through that arc.

use rayon::prelude::*;

use super::graph::{TimingGraph, VertexRole};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    /// Minimum endpoint slack.
    pub wns: f64,
    /// Sum of negative endpoint slacks.
    pub tns: f64,
    /// Longest launch-to-capture delay, `clock_period − wns`.
    pub cpd: f64,
}

/// Arcs from a launch point to a capture point in signal order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriticalPath {
    pub arcs: Vec<usize>,
}

impl CriticalPath {
    /// Total arc count.
    pub fn c_max(&self) -> usize {
        self.arcs.len()
    }

    /// Arcs from position `k` to the endpoint, the arc at `k` included.
    pub fn c_forward(&self, k: usize) -> usize {
        self.arcs.len() - k
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    /// Vertices along the path, launch first.
    pub fn vertices(&self, graph: &TimingGraph) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.arcs.len() + 1);
        if let Some(&first) = self.arcs.first() {
            out.push(graph.arcs[first].src);
        }
        out.extend(self.arcs.iter().map(|&a| graph.arcs[a].dst));
        out
    }
}

impl TimingGraph {
    /// Forward pass. Levels are processed in order; the vertices of one
    /// level only read arrivals of lower levels and are computed in
    /// parallel. Returns the critical path into the latest capture point.
    pub fn forward_propagate(&mut self) -> CriticalPath {
        for l in 0..self.levels.len() {
            let updates: Vec<(f64, Option<usize>)> = self.levels[l].par_iter().map(|&v| self.arrival_of(v)).collect();
            for (&v, (arr, best)) in self.levels[l].iter().zip(updates) {
                self.vertices[v].arrival = arr;
                self.best_fanin[v] = best;
            }
        }
        self.critical_path()
    }

    fn arrival_of(&self, v: usize) -> (f64, Option<usize>) {
        let mut best: Option<(f64, usize)> = None;
        for &a in &self.fanin[v] {
            let arc = &self.arcs[a];
            let src = &self.vertices[arc.src];
            let t = src.arrival + src.logic + arc.delay;
            if best.is_none_or(|(b, _)| t > b) {
                best = Some((t, a));
            }
        }
        match best {
            Some((t, a)) => (t, Some(a)),
            None => (0.0, None),
        }
    }

    /// Backward pass from the capture points, highest level first.
    pub fn backward_propagate(&mut self) {
        for l in (0..self.levels.len()).rev() {
            let updates: Vec<f64> = self.levels[l].par_iter().map(|&v| self.required_of(v)).collect();
            for (&v, req) in self.levels[l].iter().zip(updates) {
                self.vertices[v].required = req;
            }
        }
    }

    fn required_of(&self, v: usize) -> f64 {
        let vert = &self.vertices[v];
        if vert.role == VertexRole::Capture {
            return self.clock_period;
        }
        let mut req = f64::INFINITY;
        for &a in &self.fanout[v] {
            let arc = &self.arcs[a];
            req = req.min(self.vertices[arc.dst].required - arc.delay);
        }
        req - vert.logic
    }

    /// Per-arc slacks plus endpoint summary. Dangling arcs keep `+∞` slack
    /// and do not contribute to WNS/TNS.
    pub fn compute_slacks(&mut self) -> TimingSummary {
        let slacks: Vec<f64> = self
            .arcs
            .par_iter()
            .map(|arc| {
                let src = &self.vertices[arc.src];
                self.vertices[arc.dst].required - src.arrival - src.logic - arc.delay
            })
            .collect();
        for (arc, s) in self.arcs.iter_mut().zip(slacks) {
            arc.slack = s;
        }
        self.summary()
    }

    pub fn summary(&self) -> TimingSummary {
        let mut wns = f64::INFINITY;
        let mut tns = 0.0;
        let mut cpd = 0.0f64;
        for v in self.captures() {
            let vert = &self.vertices[v];
            let slack = self.clock_period - vert.arrival;
            wns = wns.min(slack);
            tns += slack.min(0.0);
            cpd = cpd.max(vert.arrival);
        }
        if wns == f64::INFINITY {
            wns = self.clock_period;
        }
        TimingSummary { wns, tns, cpd }
    }

    /// Forward, backward and slack computation in one call.
    pub fn analyze(&mut self) -> (TimingSummary, CriticalPath) {
        let path = self.forward_propagate();
        self.backward_propagate();
        (self.compute_slacks(), path)
    }

    /// Path into the capture point with the latest arrival (lowest vertex id
    /// on ties), traced through the arrival-realizing fan-in arcs.
    pub fn critical_path(&self) -> CriticalPath {
        self.worst_paths(1).into_iter().next().unwrap_or_default()
    }

    /// Critical paths into the `k` latest capture points.
    pub fn worst_paths(&self, k: usize) -> Vec<CriticalPath> {
        let mut ends: Vec<usize> = self.captures().filter(|&v| !self.fanin[v].is_empty()).collect();
        ends.sort_by(|&a, &b| {
            self.vertices[b]
                .arrival
                .total_cmp(&self.vertices[a].arrival)
                .then(a.cmp(&b))
        });
        ends.into_iter()
            .take(k)
            .map(|end| {
                let mut arcs = Vec::new();
                let mut v = end;
                while let Some(a) = self.best_fanin[v] {
                    arcs.push(a);
                    v = self.arcs[a].src;
                }
                arcs.reverse();
                CriticalPath { arcs }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::graph::{TimingGraph, VertexRole};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use VertexRole::*;

    #[test]
    fn single_arc_forward_backward() {
        let mut g = TimingGraph::from_edges(&[(Launch, 1.0), (Capture, 0.0)], &[(0, 1, 2.0)], 10.0).unwrap();
        let (s, path) = g.analyze();
        assert_eq!(g.vertices()[1].arrival, 3.0);
        assert_eq!(g.vertices()[0].required, 7.0);
        assert_eq!(g.arcs()[0].slack, 7.0);
        assert_eq!(s.wns, 7.0);
        assert_eq!(s.tns, 0.0);
        assert_eq!(s.cpd, 3.0);
        assert_eq!(path.arcs, vec![0]);
    }

    #[test]
    fn slack_substitution() {
        // req(dst) = 10, arr(src) = 3 via a 3-unit input arc, logic(src) = 0.
        let mut g = TimingGraph::from_edges(
            &[(Launch, 0.0), (Combinational, 0.0), (Capture, 0.0)],
            &[(0, 1, 3.0), (1, 2, 2.0)],
            10.0,
        )
        .unwrap();
        g.analyze();
        assert_eq!(g.vertices()[1].arrival, 3.0);
        assert_eq!(g.arcs()[1].slack, 5.0);
    }

    #[test]
    fn diamond_takes_longer_branch() {
        // 0 -> {1, 2} -> 3 with branch delays 5 and 7.
        let mut g = TimingGraph::from_edges(
            &[
                (Launch, 0.0),
                (Combinational, 0.0),
                (Combinational, 0.0),
                (Capture, 0.0),
            ],
            &[(0, 1, 2.0), (1, 3, 3.0), (0, 2, 3.0), (2, 3, 4.0)],
            6.0,
        )
        .unwrap();
        let (s, path) = g.analyze();
        assert_eq!(g.vertices()[3].arrival, 7.0);
        assert_eq!(path.arcs, vec![2, 3]);
        assert_eq!(s.wns, -1.0);
        assert_eq!(s.tns, -1.0);
        assert_eq!(s.cpd, 7.0);
        for &a in &path.arcs {
            assert_eq!(g.arcs()[a].slack, s.wns);
        }
        assert_eq!(g.arcs()[0].slack, 1.0);
    }

    #[test]
    fn min_over_fanouts() {
        // Source with two fanouts requiring 7 and 4 at their inputs.
        let mut g = TimingGraph::from_edges(
            &[(Launch, 0.0), (Capture, 0.0), (Capture, 0.0)],
            &[(0, 1, 3.0), (0, 2, 6.0)],
            10.0,
        )
        .unwrap();
        g.analyze();
        assert_eq!(g.vertices()[0].required, 4.0);
    }

    #[test]
    fn chain_levels() {
        let g = TimingGraph::from_edges(
            &[
                (Launch, 0.0),
                (Combinational, 1.0),
                (Combinational, 1.0),
                (Combinational, 1.0),
            ],
            &[(0, 1, 0.0), (1, 2, 0.0), (2, 3, 0.0)],
            10.0,
        )
        .unwrap();
        let levels: Vec<usize> = g.vertices().iter().map(|v| v.level).collect();
        assert_eq!(levels, vec![0, 1, 2, 3]);

        // Two independent chains share levels.
        let g = TimingGraph::from_edges(
            &[
                (Launch, 0.0),
                (Capture, 0.0),
                (Launch, 0.0),
                (Combinational, 0.0),
                (Capture, 0.0),
            ],
            &[(0, 1, 0.0), (2, 3, 0.0), (3, 4, 0.0)],
            10.0,
        )
        .unwrap();
        assert_eq!(g.levels(), &[vec![0, 2], vec![1, 3], vec![4]]);
    }

    #[test]
    fn cycle_rejected() {
        let err = TimingGraph::from_edges(
            &[(Combinational, 0.0), (Combinational, 0.0)],
            &[(0, 1, 0.0), (1, 0, 0.0)],
            1.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn dangling_vertex_excluded() {
        let mut g = TimingGraph::from_edges(
            &[(Launch, 0.0), (Combinational, 0.0), (Capture, 0.0)],
            &[(0, 1, 50.0), (0, 2, 1.0)],
            10.0,
        )
        .unwrap();
        let (s, _) = g.analyze();
        assert!(g.is_dangling(1));
        assert_eq!(g.arcs()[0].slack, f64::INFINITY);
        assert_eq!(s.wns, 9.0);
    }

    #[test]
    fn within_level_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (verts, arcs) = super::super::tests::random_dag(&mut rng, 150);
        let mut a = TimingGraph::from_edges(&verts, &arcs, 40.0).unwrap();
        let mut b = a.clone();
        for level in &mut b.levels {
            level.shuffle(&mut rng);
        }
        a.analyze();
        b.analyze();
        for (x, y) in a.vertices().iter().zip(b.vertices()) {
            assert_eq!(x.arrival.to_bits(), y.arrival.to_bits());
            assert_eq!(x.required.to_bits(), y.required.to_bits());
        }
        for (x, y) in a.arcs().iter().zip(b.arcs()) {
            assert_eq!(x.slack.to_bits(), y.slack.to_bits());
        }
    }

    #[test]
    fn uniform_shift_on_chain() {
        let n = 6;
        let verts: Vec<_> = (0..n)
            .map(|i| match i {
                0 => (Launch, 0.3),
                i if i == n - 1 => (Capture, 0.0),
                _ => (Combinational, 0.2),
            })
            .collect();
        let arcs: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 0.5 + i as f64 * 0.1)).collect();
        let mut g = TimingGraph::from_edges(&verts, &arcs, 5.0).unwrap();
        g.analyze();
        let before: Vec<f64> = g.arcs().iter().map(|a| a.slack).collect();
        let d = 0.25;
        for a in 0..arcs.len() {
            let delay = g.arcs()[a].delay;
            g.set_arc_delay(a, delay + d);
        }
        g.analyze();
        for (a, s0) in before.iter().enumerate() {
            let expect = s0 - (n - 1) as f64 * d;
            assert!((g.arcs()[a].slack - expect).abs() < 1e-12);
        }
    }
}
