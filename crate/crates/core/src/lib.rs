pub mod congestion;
pub mod dataset;
pub mod delay;
pub mod device;
pub mod error;
pub mod legalize;
pub mod netlist;
pub mod placement;
pub mod placer;
pub mod sta;
pub mod synth;
pub mod validate;

pub use dataset::{
    default_split, extract_samples, model_labels, read_delay_csv, read_jsonl, split_by_net, write_jsonl, DatasetSplit,
};
pub use delay::{
    DelayModelWeights, DelayTable, FeatureContext, LinearBaseline, Metrics, ModelConfig, NetDelayModel, NetSample,
    TrainConfig, TrainingSample,
};
pub use device::{Device, Rect};
pub use error::{Error, Result};
pub use netlist::{InstId, Instance, InstanceKind, Net, NetId, Netlist, Pin, PinId};
pub use placement::{net_hpwl, total_hpwl, PlacementState};
pub use placer::{global_place, IterationRecord, PlaceResult, PlacerConfig};
pub use sta::{run_sta, LogicDelayTable, TimingGraph, TimingReport, TimingSummary};
pub use synth::{evaluate_cpd, synth_design, SynthConfig, SynthDesign, SyntheticOracle};
