//! Shared inputs for the benchmarks: a synthetic design after a few
//! wirelength-only iterations, so nets have realistic spans.

use tdgp_core::delay::NetFeatures;
use tdgp_core::placer::{assemble_quadratic_system, AssemblyParams, QuadraticSystem, B2B_EPSILON};
use tdgp_core::sta::update_arc_delays;
use tdgp_core::{
    global_place, DelayModelWeights, FeatureContext, LogicDelayTable, ModelConfig, NetDelayModel, PlacementState,
    PlacerConfig, SynthConfig, SynthDesign, TimingGraph,
};

pub struct Fixture {
    pub design: SynthDesign,
    pub placement: PlacementState,
}

impl Fixture {
    pub fn new(cells: usize) -> Self {
        let design = tdgp_core::synth_design(cells, 1, &SynthConfig::default()).expect("synthetic design");
        let cfg = PlacerConfig {
            lambda: 0.0,
            max_iterations: 3,
            ..Default::default()
        };
        let placement = global_place(&design.netlist, &design.device, &cfg, None)
            .expect("placement")
            .placement;
        Fixture { design, placement }
    }

    fn context(&self) -> FeatureContext<'_> {
        FeatureContext::new(
            &self.design.netlist,
            &self.placement,
            &self.design.device,
            &Default::default(),
        )
        .expect("feature context")
    }

    /// Wirelength-only system at the fixture placement.
    pub fn system(&self) -> QuadraticSystem {
        let params = AssemblyParams {
            lambda: 0.0,
            b2b_epsilon: B2B_EPSILON,
            min_distance: 1.0,
        };
        assemble_quadratic_system(&self.design.netlist, &self.placement, &[], &[], &params).expect("system")
    }

    /// Timing graph with oracle net delays already applied.
    pub fn timing_graph(&self) -> TimingGraph {
        let nl = &self.design.netlist;
        let mut g = TimingGraph::from_netlist(nl, &LogicDelayTable::default(), 5.0).expect("timing graph");
        let nets: Vec<_> = nl.timing_nets().collect();
        let (table, _) = self
            .design
            .oracle
            .net_delays(&self.context(), &nets, 256)
            .expect("delays");
        update_arc_delays(&mut g, |n, k| table.get(n, k));
        g
    }

    pub fn net_features(&self) -> Vec<NetFeatures> {
        let ctx = self.context();
        self.design
            .netlist
            .timing_nets()
            .map(|n| ctx.net_features(n).expect("features"))
            .collect()
    }

    /// Untrained default model normalized to `features`.
    pub fn model(&self, features: &[NetFeatures]) -> DelayModelWeights {
        let mut w = DelayModelWeights::init(&ModelConfig::default(), 1);
        w.fit_normalization(features.iter());
        w
    }
}
