//! Net-delay prediction: feature extraction, the graph model, a linear
//! baseline and batched inference.

mod baseline;
mod features;
mod loss;
mod model;
mod train;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netlist::NetId;

pub use baseline::LinearBaseline;
pub use features::{
    build_net_graph, EdgeType, FeatureContext, NetEnvFeatures, NetFeatures, NetGraph, NetVertexFeatures,
    PinRoutingFeatures, EDGE_TYPES, ENV_DIM, PIN_DIM, VERTEX_DIM,
};
pub use loss::{huber_grad, huber_loss};
pub use model::{
    encode_net_topology, predict_net_delays, DelayModelWeights, GraphBatch, ModelConfig, Normalization, PairBatch,
    Standardizer, Tensor, TrainBatch, FORMAT_VERSION,
};
pub use train::{evaluate, train_model, EpochStats, Metrics, TrainConfig, TrainOutcome};

/// Predicted delay per (net, load index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DelayTable {
    delays: HashMap<NetId, Vec<f64>>,
}

impl DelayTable {
    pub fn insert(&mut self, net: NetId, delays: Vec<f64>) {
        self.delays.insert(net, delays);
    }

    pub fn try_get(&self, net: NetId, load: usize) -> Option<f64> {
        self.delays.get(&net).and_then(|d| d.get(load)).copied()
    }

    /// Panics when the pair was not predicted.
    pub fn get(&self, net: NetId, load: usize) -> f64 {
        self.try_get(net, load)
            .unwrap_or_else(|| panic!("no delay for net {} load {load}", net.0))
    }

    pub fn net(&self, net: NetId) -> Option<&[f64]> {
        self.delays.get(&net).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

/// Work counters of one inference call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceStats {
    /// Topology encodings performed; one per net.
    pub nets_encoded: usize,
    pub pairs: usize,
}

pub trait NetDelayModel: Sync {
    fn net_delays(
        &self,
        ctx: &FeatureContext<'_>,
        nets: &[NetId],
        batch_size: usize,
    ) -> Result<(DelayTable, InferenceStats)>;
}

/// One driver→load pair with its label, as stored in dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Identifies the net across its pairs; used for grouping and splits.
    pub net: String,
    pub graph: NetGraph,
    pub env: NetEnvFeatures,
    pub pin: PinRoutingFeatures,
    pub label: f64,
}

/// All pairs of one net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSample {
    pub key: String,
    pub features: NetFeatures,
    pub labels: Vec<f64>,
}

impl NetSample {
    pub fn pairs(&self) -> usize {
        self.labels.len()
    }

    pub fn to_training_samples(&self) -> Vec<TrainingSample> {
        self.features
            .pins
            .iter()
            .zip(&self.labels)
            .map(|(pin, &label)| TrainingSample {
                net: self.key.clone(),
                graph: self.features.graph.clone(),
                env: self.features.env,
                pin: *pin,
                label,
            })
            .collect()
    }
}

/// Regroups pair samples by net key, keeping first-appearance order and
/// load order within a net.
pub fn group_by_net(samples: Vec<TrainingSample>) -> Vec<NetSample> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<NetSample> = Vec::new();
    for s in samples {
        let slot = *index.entry(s.net.clone()).or_insert_with(|| {
            out.push(NetSample {
                key: s.net.clone(),
                features: NetFeatures {
                    graph: s.graph.clone(),
                    env: s.env,
                    pins: Vec::new(),
                },
                labels: Vec::new(),
            });
            out.len() - 1
        });
        out[slot].features.pins.push(s.pin);
        out[slot].labels.push(s.label);
    }
    for n in out.iter_mut() {
        let mut order: Vec<usize> = (0..n.labels.len()).collect();
        order.sort_by(|&a, &b| n.features.pins[a].net_index.total_cmp(&n.features.pins[b].net_index));
        n.features.pins = order.iter().map(|&i| n.features.pins[i]).collect();
        n.labels = order.iter().map(|&i| n.labels[i]).collect();
    }
    out
}

impl DelayModelWeights {
    /// Encodes each net once in batches of `batch_size` nets, then regresses
    /// all pairs in batches of `batch_size` pairs.
    pub fn predict_batched(&self, nets: &[&NetFeatures], batch_size: usize) -> (Vec<Vec<f64>>, InferenceStats) {
        let batch_size = batch_size.max(1);
        let encoded = AtomicUsize::new(0);
        let reduced: Vec<Option<ndarray::Array2<f64>>> = nets
            .par_chunks(batch_size)
            .map(|chunk| {
                let gb = GraphBatch::new(chunk.iter().map(|f| &f.graph), &self.norm);
                let r = self.encode_batch(&gb);
                if let Some(r) = &r {
                    encoded.fetch_add(r.nrows(), Ordering::Relaxed);
                }
                r
            })
            .collect();
        let nets_encoded = encoded.into_inner();

        let pairs: Vec<(usize, usize)> = nets
            .iter()
            .enumerate()
            .flat_map(|(n, f)| (0..f.pins.len()).map(move |k| (n, k)))
            .collect();
        let flat: Vec<f64> = pairs
            .par_chunks(batch_size)
            .flat_map_iter(|chunk| {
                // Gather the topology rows this chunk needs into a local matrix.
                let mut local: Vec<usize> = Vec::new();
                let mut rows = Vec::with_capacity(chunk.len());
                for &(n, k) in chunk {
                    if local.last() != Some(&n) {
                        local.push(n);
                    }
                    rows.push((local.len() - 1, &nets[n].env, &nets[n].pins[k]));
                }
                let r = self.config.use_topology.then(|| {
                    let mut m = ndarray::Array2::zeros((local.len(), self.config.reduced));
                    for (i, &n) in local.iter().enumerate() {
                        let src = reduced[n / batch_size].as_ref().expect("encoded");
                        m.row_mut(i).assign(&src.row(n % batch_size));
                    }
                    m
                });
                let pb = PairBatch::new(&rows, &self.norm);
                self.regress_batch(r.as_ref(), &pb)
            })
            .collect();

        let mut out: Vec<Vec<f64>> = nets.iter().map(|f| Vec::with_capacity(f.pins.len())).collect();
        for (&(n, _), d) in pairs.iter().zip(flat) {
            out[n].push(d);
        }
        (
            out,
            InferenceStats {
                nets_encoded,
                pairs: pairs.len(),
            },
        )
    }
}

fn collect_features(ctx: &FeatureContext<'_>, nets: &[NetId]) -> Result<Vec<NetFeatures>> {
    nets.par_iter().map(|&n| ctx.net_features(n)).collect()
}

impl NetDelayModel for DelayModelWeights {
    fn net_delays(
        &self,
        ctx: &FeatureContext<'_>,
        nets: &[NetId],
        batch_size: usize,
    ) -> Result<(DelayTable, InferenceStats)> {
        let features = collect_features(ctx, nets)?;
        let refs: Vec<&NetFeatures> = features.iter().collect();
        let (delays, stats) = self.predict_batched(&refs, batch_size);
        let mut table = DelayTable::default();
        for (&n, d) in nets.iter().zip(delays) {
            table.insert(n, d);
        }
        Ok((table, stats))
    }
}

impl NetDelayModel for LinearBaseline {
    fn net_delays(
        &self,
        ctx: &FeatureContext<'_>,
        nets: &[NetId],
        _batch_size: usize,
    ) -> Result<(DelayTable, InferenceStats)> {
        let mut table = DelayTable::default();
        let mut pairs = 0;
        for &n in nets {
            let env = ctx.env_features(n);
            let d: Vec<f64> = (0..ctx.netlist.net(n).fanout())
                .map(|k| self.predict(&env, &ctx.pin_features(n, k)))
                .collect();
            pairs += d.len();
            table.insert(n, d);
        }
        Ok((table, InferenceStats { nets_encoded: 0, pairs }))
    }
}
