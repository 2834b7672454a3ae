//! Graph-convolution topology encoder plus residual MLP regressor.
//!
//! Two evaluation paths share one set of weights:
//! * [`encode_net_topology`] / [`predict_net_delays`] walk a single net with
//!   plain loops;
//! * [`GraphBatch`] / [`PairBatch`] stack many nets and pin pairs into
//!   matrices, with a hand-written backward pass for training.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{
    NetEnvFeatures, NetFeatures, NetGraph, PinRoutingFeatures, EDGE_TYPES, ENV_DIM, PIN_DIM, VERTEX_DIM,
};
use super::loss::{huber_grad, huber_loss};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub conv_layers: usize,
    pub hidden: usize,
    pub reduced: usize,
    pub residual_dim: usize,
    pub residual_blocks: usize,
    pub delay_floor: f64,
    /// When false the regressor sees only the 12 environment and pin
    /// features.
    pub use_topology: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_layers: 2,
            hidden: 64,
            reduced: 16,
            residual_dim: 32,
            residual_blocks: 2,
            delay_floor: 0.01,
            use_topology: true,
        }
    }
}

impl ModelConfig {
    fn topology_dim(&self) -> usize {
        if self.use_topology {
            self.reduced
        } else {
            0
        }
    }

    pub fn concat_dim(&self) -> usize {
        self.topology_dim() + ENV_DIM + PIN_DIM
    }

    fn conv_in(&self, layer: usize) -> usize {
        if layer == 0 {
            VERTEX_DIM
        } else {
            self.hidden
        }
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    fn random(dims: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Tensor {
            dims: dims.to_vec(),
            data: (0..dims.iter().product::<usize>())
                .map(|_| normal.sample(rng))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn mat(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.dims[0], self.dims[1]), &self.data).expect("2-d tensor")
    }

    fn vec(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }
}

/// Feature-wise standardization `(v − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for i in 0..dim {
                sum[i] += r[i];
                sq[i] += r[i] * r[i];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = (0..dim)
            .map(|i| {
                let var = (sq[i] / nf - mean[i] * mean[i]).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.mean.len() {
            out[i] = (v[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        self.apply_into(v, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub vertex: Standardizer,
    pub env: Standardizer,
    pub pin: Standardizer,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            vertex: Standardizer::identity(VERTEX_DIM),
            env: Standardizer::identity(ENV_DIM),
            pin: Standardizer::identity(PIN_DIM),
        }
    }
}

impl Normalization {
    fn pair_row(&self, env: &NetEnvFeatures, pin: &PinRoutingFeatures, out: &mut [f64]) {
        self.env.apply_into(&env.to_array(), &mut out[..ENV_DIM]);
        self.pin.apply_into(&pin.to_array(), &mut out[ENV_DIM..]);
    }
}

/// All trainable tensors plus frozen normalization statistics. Matrices are
/// stored `[in, out]` and applied to row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModelWeights {
    pub config: ModelConfig,
    /// `conv[l][t]`: layer `l`, edge type `t`.
    pub conv: Vec<Vec<Tensor>>,
    pub reduce_w: Tensor,
    pub reduce_b: Tensor,
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub res_w: Vec<Tensor>,
    pub res_b: Vec<Tensor>,
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub norm: Normalization,
}

impl DelayModelWeights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        let (conv, reduce_w, reduce_b) = if c.use_topology {
            (
                (0..c.conv_layers)
                    .map(|l| {
                        (0..EDGE_TYPES)
                            .map(|_| Tensor::zeros(&[c.conv_in(l), c.hidden]))
                            .collect()
                    })
                    .collect(),
                Tensor::zeros(&[c.hidden, c.reduced]),
                Tensor::zeros(&[c.reduced]),
            )
        } else {
            (Vec::new(), Tensor::zeros(&[0, 0]), Tensor::zeros(&[0]))
        };
        DelayModelWeights {
            config: c.clone(),
            conv,
            reduce_w,
            reduce_b,
            input_w: Tensor::zeros(&[c.concat_dim(), c.residual_dim]),
            input_b: Tensor::zeros(&[c.residual_dim]),
            res_w: (0..c.residual_blocks)
                .map(|_| Tensor::zeros(&[c.residual_dim, c.residual_dim]))
                .collect(),
            res_b: (0..c.residual_blocks)
                .map(|_| Tensor::zeros(&[c.residual_dim]))
                .collect(),
            out_w: Tensor::zeros(&[c.residual_dim, 1]),
            out_b: Tensor::zeros(&[1]),
            norm: Normalization::default(),
        }
    }

    /// He-style Gaussian initialization, zero biases and a zero output row.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = |fan_in: usize| (2.0 / fan_in.max(1) as f64).sqrt();
        for layer in w.conv.iter_mut() {
            for t in layer.iter_mut() {
                // Four typed messages are summed per vertex.
                *t = Tensor::random(&t.dims.clone(), he(t.dims[0] * 2), &mut rng);
            }
        }
        if config.use_topology {
            w.reduce_w = Tensor::random(&[config.hidden, config.reduced], he(config.hidden), &mut rng);
        }
        w.input_w = Tensor::random(&w.input_w.dims.clone(), he(config.concat_dim()), &mut rng);
        for r in w.res_w.iter_mut() {
            *r = Tensor::random(&r.dims.clone(), 0.5 * he(config.residual_dim), &mut rng);
        }
        // Zero output row: the initial prediction is the output bias alone.
        w
    }

    /// Trainable tensors in a fixed order shared by gradients and the
    /// optimizer state.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.conv.iter().flatten().collect();
        v.extend([&self.reduce_w, &self.reduce_b, &self.input_w, &self.input_b]);
        for (w, b) in self.res_w.iter().zip(&self.res_b) {
            v.extend([w, b]);
        }
        v.extend([&self.out_w, &self.out_b]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.conv.iter_mut().flatten().collect();
        v.extend([
            &mut self.reduce_w,
            &mut self.reduce_b,
            &mut self.input_w,
            &mut self.input_b,
        ]);
        for (w, b) in self.res_w.iter_mut().zip(self.res_b.iter_mut()) {
            v.extend([w, b]);
        }
        v.extend([&mut self.out_w, &mut self.out_b]);
        v
    }

    fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for l in 0..self.conv.len() {
            for t in 0..EDGE_TYPES {
                v.push(format!("conv.{l}.{t}"));
            }
        }
        v.extend(["reduce.w", "reduce.b", "input.w", "input.b"].map(String::from));
        for b in 0..self.res_w.len() {
            v.push(format!("res.{b}.w"));
            v.push(format!("res.{b}.b"));
        }
        v.extend(["out.w", "out.b"].map(String::from));
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Freezes standardization statistics from training data.
    pub fn fit_normalization<'a>(&mut self, nets: impl Iterator<Item = &'a NetFeatures> + Clone) {
        let vertex_rows = nets.clone().flat_map(|f| f.graph.vertices.iter().map(|v| &v[..]));
        self.norm.vertex = Standardizer::fit(VERTEX_DIM, vertex_rows);
        let env: Vec<[f64; ENV_DIM]> = nets
            .clone()
            .flat_map(|f| std::iter::repeat_n(f.env.to_array(), f.pins.len()))
            .collect();
        self.norm.env = Standardizer::fit(ENV_DIM, env.iter().map(|r| &r[..]));
        let pins: Vec<[f64; PIN_DIM]> = nets.flat_map(|f| f.pins.iter().map(|p| p.to_array())).collect();
        self.norm.pin = Standardizer::fit(PIN_DIM, pins.iter().map(|r| &r[..]));
    }

    fn check(&self) -> Result<()> {
        let c = &self.config;
        let mismatch = |what: &str, t: &Tensor, want: &[usize]| -> Result<()> {
            if t.dims != want || t.data.len() != want.iter().product::<usize>() {
                return Err(Error::Dimension(format!("{what}: expected {want:?}, got {:?}", t.dims)));
            }
            Ok(())
        };
        if c.use_topology {
            if self.conv.len() != c.conv_layers {
                return Err(Error::Dimension(format!(
                    "expected {} convolution layers, got {}",
                    c.conv_layers,
                    self.conv.len()
                )));
            }
            for (l, layer) in self.conv.iter().enumerate() {
                if layer.len() != EDGE_TYPES {
                    return Err(Error::Dimension(format!("layer {l} has {} edge types", layer.len())));
                }
                for t in layer {
                    mismatch("conv", t, &[c.conv_in(l), c.hidden])?;
                }
            }
            mismatch("reduce.w", &self.reduce_w, &[c.hidden, c.reduced])?;
            mismatch("reduce.b", &self.reduce_b, &[c.reduced])?;
        }
        mismatch("input.w", &self.input_w, &[c.concat_dim(), c.residual_dim])?;
        mismatch("input.b", &self.input_b, &[c.residual_dim])?;
        if self.res_w.len() != c.residual_blocks || self.res_b.len() != c.residual_blocks {
            return Err(Error::Dimension("residual block count".into()));
        }
        for (w, b) in self.res_w.iter().zip(&self.res_b) {
            mismatch("res.w", w, &[c.residual_dim, c.residual_dim])?;
            mismatch("res.b", b, &[c.residual_dim])?;
        }
        mismatch("out.w", &self.out_w, &[c.residual_dim, 1])?;
        mismatch("out.b", &self.out_b, &[1])?;
        if self.norm.vertex.dim() != VERTEX_DIM || self.norm.env.dim() != ENV_DIM || self.norm.pin.dim() != PIN_DIM {
            return Err(Error::Dimension("normalization statistics".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = self
            .param_names()
            .into_iter()
            .zip(self.params())
            .map(|(n, t)| (n, (t.dims.clone(), t.data.clone())))
            .collect();
        for (name, s) in [
            ("vertex", &self.norm.vertex),
            ("env", &self.norm.env),
            ("pin", &self.norm.pin),
        ] {
            tensors.insert(format!("norm.{name}.mean"), (vec![s.dim()], s.mean.clone()));
            tensors.insert(format!("norm.{name}.std"), (vec![s.dim()], s.std.clone()));
        }
        let file = WeightsFile {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            tensors,
        };
        serde_json::to_string(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: WeightsFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported weights format version {}",
                file.format_version
            )));
        }
        let mut w = Self::zeros(&file.config);
        let mut take = |name: &str| -> Result<Tensor> {
            let (dims, data) = file
                .tensors
                .remove(name)
                .ok_or_else(|| Error::Parse(format!("missing tensor `{name}`")))?;
            Ok(Tensor { dims, data })
        };
        let names = w.param_names();
        for (name, slot) in names.iter().zip(w.params_mut()) {
            *slot = take(name)?;
        }
        for (name, s) in [
            ("vertex", &mut w.norm.vertex),
            ("env", &mut w.norm.env),
            ("pin", &mut w.norm.pin),
        ] {
            s.mean = take(&format!("norm.{name}.mean"))?.data;
            s.std = take(&format!("norm.{name}.std"))?.data;
        }
        w.check()?;
        if !w.is_finite() {
            return Err(Error::Numerical("weights contain non-finite values".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format_version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Runs the convolution layers on one net and mean-pools the vertex
/// embeddings. Returns an empty vector when topology is disabled.
pub fn encode_net_topology(graph: &NetGraph, weights: &DelayModelWeights) -> Result<Vec<f64>> {
    if !weights.config.use_topology {
        return Ok(Vec::new());
    }
    weights.check()?;
    let n = graph.num_vertices();
    if n == 0 {
        return Err(Error::Dimension("net graph has no vertices".into()));
    }
    let mut h: Vec<Vec<f64>> = graph.vertices.iter().map(|v| weights.norm.vertex.apply(v)).collect();
    let edges = graph.normalized_edges();
    for layer in &weights.conv {
        let (din, dout) = (layer[0].dims[0], layer[0].dims[1]);
        let mut next = vec![vec![0.0; dout]; n];
        for &(src, dst, t, c) in &edges {
            let w = &layer[t.index()].data;
            for i in 0..din {
                let a = c * h[src][i];
                let row = &w[i * dout..(i + 1) * dout];
                for (o, wv) in row.iter().enumerate() {
                    next[dst][o] += a * wv;
                }
            }
        }
        for row in next.iter_mut() {
            for x in row.iter_mut() {
                *x = relu(*x);
            }
        }
        h = next;
    }
    let dim = h[0].len();
    Ok((0..dim)
        .map(|o| h.iter().map(|r| r[o]).sum::<f64>() / n as f64)
        .collect())
}

/// Regresses one delay per load from a topology vector and the net's
/// environment and pin features. Outputs are clamped to the delay floor.
pub fn predict_net_delays(
    y: &[f64],
    env: &NetEnvFeatures,
    pins: &[PinRoutingFeatures],
    weights: &DelayModelWeights,
) -> Result<Vec<f64>> {
    weights.check()?;
    let c = &weights.config;
    let mut head = Vec::with_capacity(c.concat_dim());
    if c.use_topology {
        if y.len() != c.hidden {
            return Err(Error::Dimension(format!(
                "topology vector has {} entries, expected {}",
                y.len(),
                c.hidden
            )));
        }
        for o in 0..c.reduced {
            let mut acc = weights.reduce_b.data[o];
            for (i, yi) in y.iter().enumerate() {
                acc += yi * weights.reduce_w.data[i * c.reduced + o];
            }
            head.push(acc);
        }
    }
    let k0 = head.len();
    head.resize(c.concat_dim(), 0.0);
    let dense = |x: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
        let out = w.dims[1];
        (0..out)
            .map(|o| {
                b.data[o]
                    + x.iter()
                        .enumerate()
                        .map(|(i, xi)| xi * w.data[i * out + o])
                        .sum::<f64>()
            })
            .collect()
    };
    let mut out = Vec::with_capacity(pins.len());
    for pin in pins {
        weights.norm.pair_row(env, pin, &mut head[k0..]);
        let mut h: Vec<f64> = dense(&head, &weights.input_w, &weights.input_b)
            .into_iter()
            .map(relu)
            .collect();
        for (w, b) in weights.res_w.iter().zip(&weights.res_b) {
            let z = dense(&h, w, b);
            for (hi, zi) in h.iter_mut().zip(z) {
                *hi += relu(zi);
            }
        }
        let d = dense(&h, &weights.out_w, &weights.out_b)[0];
        out.push(d.max(c.delay_floor));
    }
    Ok(out)
}

impl DelayModelWeights {
    /// Sequential reference path for one net.
    pub fn predict_net(&self, f: &NetFeatures) -> Result<Vec<f64>> {
        let y = encode_net_topology(&f.graph, self)?;
        predict_net_delays(&y, &f.env, &f.pins, self)
    }
}

/// Vertices of several nets stacked into one matrix; edges keep their
/// aggregation coefficient and are grouped by type.
pub struct GraphBatch {
    x: Array2<f64>,
    edges: Vec<Vec<(usize, usize, f64)>>,
    ranges: Vec<(usize, usize)>,
}

impl GraphBatch {
    pub fn new<'a>(graphs: impl Iterator<Item = &'a NetGraph>, norm: &Normalization) -> Self {
        let graphs: Vec<&NetGraph> = graphs.collect();
        let total: usize = graphs.iter().map(|g| g.num_vertices()).sum();
        let mut x = Array2::zeros((total, VERTEX_DIM));
        let mut edges = vec![Vec::new(); EDGE_TYPES];
        let mut ranges = Vec::with_capacity(graphs.len());
        let mut base = 0;
        for g in graphs {
            for (i, v) in g.vertices.iter().enumerate() {
                let mut row = x.row_mut(base + i);
                norm.vertex.apply_into(v, row.as_slice_mut().expect("contiguous row"));
            }
            for (s, d, t, c) in g.normalized_edges() {
                edges[t.index()].push((base + s, base + d, c));
            }
            ranges.push((base, base + g.num_vertices()));
            base += g.num_vertices();
        }
        GraphBatch { x, edges, ranges }
    }

    pub fn num_nets(&self) -> usize {
        self.ranges.len()
    }
}

/// Pin pairs with their net's row in a [`GraphBatch`].
pub struct PairBatch {
    net_of: Vec<usize>,
    f: Array2<f64>,
}

impl PairBatch {
    pub fn new(pairs: &[(usize, &NetEnvFeatures, &PinRoutingFeatures)], norm: &Normalization) -> Self {
        let mut f = Array2::zeros((pairs.len(), ENV_DIM + PIN_DIM));
        for (p, (_, env, pin)) in pairs.iter().enumerate() {
            let mut row = f.row_mut(p);
            norm.pair_row(env, pin, row.as_slice_mut().expect("contiguous row"));
        }
        PairBatch {
            net_of: pairs.iter().map(|p| p.0).collect(),
            f,
        }
    }

    pub fn len(&self) -> usize {
        self.net_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net_of.is_empty()
    }
}

struct EncodeCache {
    /// Per layer, per edge type: aggregated layer input.
    aggregated: Vec<Vec<Array2<f64>>>,
    pre: Vec<Array2<f64>>,
    y: Array2<f64>,
    r: Array2<f64>,
}

struct HeadCache {
    c: Array2<f64>,
    z0: Array2<f64>,
    hs: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
    out: Array1<f64>,
}

fn aggregate(h: &Array2<f64>, edges: &[(usize, usize, f64)]) -> Array2<f64> {
    let mut m = Array2::zeros(h.raw_dim());
    for &(s, d, c) in edges {
        m.row_mut(d).scaled_add(c, &h.row(s));
    }
    m
}

fn relu_mask(dz: &mut Array2<f64>, z: &Array2<f64>) {
    dz.zip_mut_with(z, |g, &zv| {
        if zv <= 0.0 {
            *g = 0.0
        }
    });
}

impl DelayModelWeights {
    fn encode_forward(&self, gb: &GraphBatch) -> EncodeCache {
        let mut h = gb.x.clone();
        let mut aggregated = Vec::with_capacity(self.conv.len());
        let mut pre = Vec::with_capacity(self.conv.len());
        for layer in &self.conv {
            let aggs: Vec<Array2<f64>> = gb.edges.iter().map(|e| aggregate(&h, e)).collect();
            let mut z = Array2::zeros((h.nrows(), layer[0].dims[1]));
            for (a, w) in aggs.iter().zip(layer) {
                ndarray::linalg::general_mat_mul(1.0, a, &w.mat(), 1.0, &mut z);
            }
            h = z.mapv(relu);
            aggregated.push(aggs);
            pre.push(z);
        }
        let mut y = Array2::zeros((gb.num_nets(), self.config.hidden));
        for (n, &(a, b)) in gb.ranges.iter().enumerate() {
            y.row_mut(n)
                .assign(&h.slice(s![a..b, ..]).mean_axis(Axis(0)).expect("non-empty net"));
        }
        let r = y.dot(&self.reduce_w.mat()) + &self.reduce_b.vec();
        EncodeCache { aggregated, pre, y, r }
    }

    fn head_forward(&self, r: Option<&Array2<f64>>, pb: &PairBatch) -> HeadCache {
        let k = self.config.topology_dim();
        let mut c = Array2::zeros((pb.len(), self.config.concat_dim()));
        for p in 0..pb.len() {
            if let Some(r) = r {
                c.slice_mut(s![p, ..k]).assign(&r.row(pb.net_of[p]));
            }
            c.slice_mut(s![p, k..]).assign(&pb.f.row(p));
        }
        let z0 = c.dot(&self.input_w.mat()) + &self.input_b.vec();
        let mut h = z0.mapv(relu);
        let mut hs = Vec::with_capacity(self.res_w.len() + 1);
        let mut zs = Vec::with_capacity(self.res_w.len());
        for (w, b) in self.res_w.iter().zip(&self.res_b) {
            let z = h.dot(&w.mat()) + &b.vec();
            let next = z.mapv(relu) + &h;
            hs.push(h);
            zs.push(z);
            h = next;
        }
        let out = h.dot(&self.out_w.mat()).column(0).to_owned() + self.out_b.data[0];
        hs.push(h);
        HeadCache { c, z0, hs, zs, out }
    }

    /// Raw (unclamped) predictions for a batch of nets and pairs.
    pub fn forward_raw(&self, gb: &GraphBatch, pb: &PairBatch) -> Array1<f64> {
        let enc = self.config.use_topology.then(|| self.encode_forward(gb));
        self.head_forward(enc.as_ref().map(|e| &e.r), pb).out
    }

    /// Topology vectors after the reduction layer, one row per net.
    pub fn encode_batch(&self, gb: &GraphBatch) -> Option<Array2<f64>> {
        self.config.use_topology.then(|| self.encode_forward(gb).r)
    }

    /// Clamped predictions for pairs whose nets' reduced topology rows are
    /// given in `r`.
    pub fn regress_batch(&self, r: Option<&Array2<f64>>, pb: &PairBatch) -> Vec<f64> {
        let floor = self.config.delay_floor;
        self.head_forward(r, pb).out.iter().map(|d| d.max(floor)).collect()
    }

    /// Mean Huber loss over a training batch.
    pub fn loss(&self, batch: &TrainBatch, delta: f64) -> f64 {
        let out = self.forward_raw(&batch.graphs, &batch.pairs);
        out.iter()
            .zip(&batch.labels)
            .map(|(&p, &t)| huber_loss(p, t, delta))
            .sum::<f64>()
            / batch.labels.len().max(1) as f64
    }

    /// Mean Huber loss and its gradient, one vector per tensor in
    /// [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, batch: &TrainBatch, delta: f64) -> (f64, Vec<Vec<f64>>) {
        let n = batch.labels.len().max(1) as f64;
        let enc = self.config.use_topology.then(|| self.encode_forward(&batch.graphs));
        let head = self.head_forward(enc.as_ref().map(|e| &e.r), &batch.pairs);
        let loss = head
            .out
            .iter()
            .zip(&batch.labels)
            .map(|(&p, &t)| huber_loss(p, t, delta))
            .sum::<f64>()
            / n;
        let dout: Array1<f64> = head
            .out
            .iter()
            .zip(&batch.labels)
            .map(|(&p, &t)| huber_grad(p, t, delta) / n)
            .collect();

        // Head backward.
        let h_last = head.hs.last().expect("final hidden state");
        let g_out_w = h_last.t().dot(&dout);
        let g_out_b = dout.sum();
        let wo = self.out_w.vec();
        let mut dh = Array2::from_shape_fn(h_last.raw_dim(), |(p, j)| dout[p] * wo[j]);
        let blocks = self.res_w.len();
        let mut g_res_w = vec![Vec::new(); blocks];
        let mut g_res_b = vec![Vec::new(); blocks];
        for b in (0..blocks).rev() {
            let mut dz = dh.clone();
            relu_mask(&mut dz, &head.zs[b]);
            g_res_w[b] = head.hs[b].t().dot(&dz).into_raw_vec_and_offset().0;
            g_res_b[b] = dz.sum_axis(Axis(0)).to_vec();
            dh = dh + dz.dot(&self.res_w[b].mat().t());
        }
        let mut dz0 = dh;
        relu_mask(&mut dz0, &head.z0);
        let g_input_w = head.c.t().dot(&dz0).into_raw_vec_and_offset().0;
        let g_input_b = dz0.sum_axis(Axis(0)).to_vec();

        let mut g_conv: Vec<Vec<f64>> = Vec::new();
        let (mut g_reduce_w, mut g_reduce_b) = (Vec::new(), Vec::new());
        if let Some(enc) = &enc {
            let k = self.config.reduced;
            let dc = dz0.dot(&self.input_w.mat().t());
            let mut dr = Array2::zeros(enc.r.raw_dim());
            for (p, &net) in batch.pairs.net_of.iter().enumerate() {
                dr.row_mut(net).scaled_add(1.0, &dc.slice(s![p, ..k]));
            }
            g_reduce_w = enc.y.t().dot(&dr).into_raw_vec_and_offset().0;
            g_reduce_b = dr.sum_axis(Axis(0)).to_vec();
            let dy = dr.dot(&self.reduce_w.mat().t());
            let gb = &batch.graphs;
            let mut dh = Array2::zeros((gb.x.nrows(), self.config.hidden));
            for (net, &(a, b)) in gb.ranges.iter().enumerate() {
                let scale = 1.0 / (b - a) as f64;
                for v in a..b {
                    dh.row_mut(v).scaled_add(scale, &dy.row(net));
                }
            }
            let layers = self.conv.len();
            let mut per_layer = vec![Vec::new(); layers];
            for l in (0..layers).rev() {
                let mut dz = dh;
                relu_mask(&mut dz, &enc.pre[l]);
                let mut grads = Vec::with_capacity(EDGE_TYPES);
                let mut dprev = Array2::zeros((dz.nrows(), self.config.conv_in(l)));
                for t in 0..EDGE_TYPES {
                    grads.push(enc.aggregated[l][t].t().dot(&dz).into_raw_vec_and_offset().0);
                    if l > 0 {
                        let dm = dz.dot(&self.conv[l][t].mat().t());
                        for &(s, d, c) in &gb.edges[t] {
                            dprev.row_mut(s).scaled_add(c, &dm.row(d));
                        }
                    }
                }
                per_layer[l] = grads;
                dh = dprev;
            }
            g_conv = per_layer.into_iter().flatten().collect();
        }

        let mut grads = g_conv;
        grads.extend([g_reduce_w, g_reduce_b, g_input_w, g_input_b]);
        for (w, b) in g_res_w.into_iter().zip(g_res_b) {
            grads.extend([w, b]);
        }
        grads.extend([g_out_w.to_vec(), vec![g_out_b]]);
        (loss, grads)
    }
}

/// Nets, pin pairs and labels ready for a training step.
pub struct TrainBatch {
    pub graphs: GraphBatch,
    pub pairs: PairBatch,
    pub labels: Vec<f64>,
}

impl TrainBatch {
    /// `nets[i]` carries one label per load.
    pub fn new(nets: &[(&NetFeatures, &[f64])], norm: &Normalization) -> Self {
        let graphs = GraphBatch::new(nets.iter().map(|(f, _)| &f.graph), norm);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, (f, l)) in nets.iter().enumerate() {
            for (pin, &label) in f.pins.iter().zip(l.iter()) {
                rows.push((i, &f.env, pin));
                labels.push(label);
            }
        }
        TrainBatch {
            graphs,
            pairs: PairBatch::new(&rows, norm),
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::features::EdgeType;
    use rand::Rng;

    pub(crate) fn random_net(rng: &mut ChaCha8Rng, fanout: usize) -> NetFeatures {
        let mut vertices = Vec::new();
        for i in 0..=fanout {
            let mut v = [0.0f64; VERTEX_DIM];
            v[0] = rng.random_range(0.0..50.0);
            v[1] = rng.random_range(0.0..50.0);
            v[2 + rng.random_range(0..10)] = 1.0;
            v[12] = if i > 0 { 1.0 } else { 0.0 };
            vertices.push(v);
        }
        let pins = (0..fanout)
            .map(|k| PinRoutingFeatures {
                dx: (vertices[k + 1][0] - vertices[0][0]).abs(),
                dy: (vertices[k + 1][1] - vertices[0][1]).abs(),
                net_index: k as f64,
                io_crossing: rng.random_range(0..2) as f64,
                dsp_crossing: rng.random_range(0..2) as f64,
                bram_crossing: 0.0,
                avg_pin_density: rng.random_range(0.0..3.0),
            })
            .collect();
        NetFeatures {
            graph: NetGraph::star(vertices),
            env: NetEnvFeatures {
                hpwl: rng.random_range(0.0..60.0),
                width: 10.0,
                length: 20.0,
                fanout: fanout as f64,
                avg_routing_density: rng.random_range(0.0..4.0),
            },
            pins,
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden: 6,
            reduced: 3,
            residual_dim: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn isolated_vertex_identity_weights() {
        let cfg = ModelConfig {
            conv_layers: 1,
            hidden: VERTEX_DIM,
            ..ModelConfig::default()
        };
        let mut w = DelayModelWeights::zeros(&cfg);
        for t in w.conv[0].iter_mut() {
            for i in 0..VERTEX_DIM {
                t.data[i * VERTEX_DIM + i] = 1.0;
            }
        }
        let mut v = [0.0; VERTEX_DIM];
        v[0] = 3.0;
        v[1] = 4.5;
        v[2] = 1.0;
        let g = NetGraph {
            vertices: vec![v],
            edges: vec![(0, 0, EdgeType::DriverSelf)],
        };
        assert_eq!(encode_net_topology(&g, &w).unwrap(), v.to_vec());
    }

    #[test]
    fn zero_features_encode_to_zero() {
        let w = DelayModelWeights::init(&small_config(), 3);
        let g = NetGraph::star(vec![[0.0; VERTEX_DIM]; 4]);
        assert!(encode_net_topology(&g, &w).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_layer_matches_dense_normalized_adjacency() {
        let cfg = ModelConfig {
            conv_layers: 1,
            ..small_config()
        };
        let w = DelayModelWeights::init(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_net(&mut rng, 2);
        let g = &f.graph;
        let n = 3;
        // Dense per-type adjacency, A[d][s] = 1, scaled by D_in^-1/2 and D_out^-1/2.
        let mut indeg = [0.0f64; 3];
        let mut outdeg = [0.0f64; 3];
        for &(s, d, _) in &g.edges {
            outdeg[s] += 1.0;
            indeg[d] += 1.0;
        }
        let mut z = vec![vec![0.0; cfg.hidden]; n];
        for t in 0..EDGE_TYPES {
            let mut a = [[0.0; 3]; 3];
            for &(s, d, et) in &g.edges {
                if et.index() == t {
                    a[d][s] = 1.0 / (indeg[d].sqrt() * outdeg[s].sqrt());
                }
            }
            for i in 0..n {
                for j in 0..n {
                    for k in 0..VERTEX_DIM {
                        for o in 0..cfg.hidden {
                            z[i][o] += a[i][j] * g.vertices[j][k] * w.conv[0][t].data[k * cfg.hidden + o];
                        }
                    }
                }
            }
        }
        let want: Vec<f64> = (0..cfg.hidden)
            .map(|o| z.iter().map(|r| r[o].max(0.0)).sum::<f64>() / n as f64)
            .collect();
        let got = encode_net_topology(g, &w).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_hit_floor() {
        let w = DelayModelWeights::zeros(&ModelConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_net(&mut rng, 5);
        assert_eq!(w.predict_net(&f).unwrap(), vec![0.01; 5]);
    }

    #[test]
    fn identical_pins_identical_delays() {
        let w = DelayModelWeights::init(&ModelConfig::default(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = random_net(&mut rng, 2);
        f.pins[1] = f.pins[0];
        let d = w.predict_net(&f).unwrap();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn scalar_recomputation_of_head() {
        let cfg = ModelConfig {
            residual_blocks: 1,
            ..small_config()
        };
        let mut w = DelayModelWeights::init(&cfg, 4);
        for b in w.res_b.iter_mut().chain([&mut w.input_b, &mut w.reduce_b]) {
            for (i, x) in b.data.iter_mut().enumerate() {
                *x = 0.05 * i as f64 - 0.1;
            }
        }
        w.out_b.data[0] = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_net(&mut rng, 1);
        let y: Vec<f64> = (0..cfg.hidden).map(|i| 0.1 * i as f64).collect();
        let got = predict_net_delays(&y, &f.env, &f.pins, &w).unwrap()[0];

        let (r, h) = (cfg.reduced, cfg.residual_dim);
        let mut cat = Vec::new();
        for o in 0..r {
            let mut a = w.reduce_b.data[o];
            for i in 0..cfg.hidden {
                a += y[i] * w.reduce_w.data[i * r + o];
            }
            cat.push(a);
        }
        cat.extend(f.env.to_array());
        cat.extend(f.pins[0].to_array());
        let mut x = vec![0.0; h];
        for o in 0..h {
            let mut a = w.input_b.data[o];
            for (i, c) in cat.iter().enumerate() {
                a += c * w.input_w.data[i * h + o];
            }
            x[o] = a.max(0.0);
        }
        let mut x2 = x.clone();
        for o in 0..h {
            let mut a = w.res_b[0].data[o];
            for i in 0..h {
                a += x[i] * w.res_w[0].data[i * h + o];
            }
            x2[o] += a.max(0.0);
        }
        let mut d = w.out_b.data[0];
        for i in 0..h {
            d += x2[i] * w.out_w.data[i];
        }
        assert!((got - d.max(0.01)).abs() < 1e-12);
    }

    #[test]
    fn batched_forward_matches_sequential() {
        let w = DelayModelWeights::init(&small_config(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nets: Vec<NetFeatures> = (1..7).map(|k| random_net(&mut rng, k)).collect();
        let labels: Vec<Vec<f64>> = nets.iter().map(|f| vec![0.0; f.pins.len()]).collect();
        let pairs: Vec<(&NetFeatures, &[f64])> = nets.iter().zip(&labels).map(|(f, l)| (f, &l[..])).collect();
        let batch = TrainBatch::new(&pairs, &w.norm);
        let raw = w.forward_raw(&batch.graphs, &batch.pairs);
        let seq: Vec<f64> = nets.iter().flat_map(|f| w.predict_net(f).unwrap()).collect();
        for (a, b) in raw.iter().zip(&seq) {
            assert!((a.max(0.01) - b).abs() < 1e-12);
        }
    }

    fn fd_check(cfg: &ModelConfig, seed: u64) {
        let mut w = DelayModelWeights::init(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let nets: Vec<NetFeatures> = (0..4).map(|i| random_net(&mut rng, 1 + i)).collect();
        w.fit_normalization(nets.iter());
        for b in w.params_mut() {
            for x in b.data.iter_mut() {
                *x += 0.01;
            }
        }
        let labels: Vec<Vec<f64>> = nets
            .iter()
            .map(|f| (0..f.pins.len()).map(|k| 0.2 + 0.7 * k as f64).collect())
            .collect();
        let pairs: Vec<(&NetFeatures, &[f64])> = nets.iter().zip(&labels).map(|(f, l)| (f, &l[..])).collect();
        let batch = TrainBatch::new(&pairs, &w.norm);
        let (_, grads) = w.loss_and_gradient(&batch, 1.0);
        let h = 1e-6;
        let count = w.params().len();
        for p in 0..count {
            for i in 0..w.params()[p].len() {
                let orig = w.params()[p].data[i];
                w.params_mut()[p].data[i] = orig + h;
                let up = w.loss(&batch, 1.0);
                w.params_mut()[p].data[i] = orig - h;
                let down = w.loss(&batch, 1.0);
                w.params_mut()[p].data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grads[p][i];
                assert!(
                    (fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()).max(1e-3),
                    "param {p}[{i}]: fd {fd} analytic {g}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&small_config(), 1);
        fd_check(
            &ModelConfig {
                use_topology: false,
                ..small_config()
            },
            2,
        );
    }

    #[test]
    fn weights_round_trip() {
        let mut w = DelayModelWeights::init(&small_config(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nets: Vec<NetFeatures> = (0..3).map(|_| random_net(&mut rng, 3)).collect();
        w.fit_normalization(nets.iter());
        let back = DelayModelWeights::from_json(&w.to_json()).unwrap();
        assert_eq!(back, w);
        let mut bad: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        bad["tensors"]["out.w"][0] = serde_json::json!([3, 1]);
        assert!(DelayModelWeights::from_json(&bad.to_string()).is_err());
    }

    #[test]
    fn wrong_topology_length_rejected() {
        let w = DelayModelWeights::init(&small_config(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_net(&mut rng, 2);
        assert!(matches!(
            predict_net_delays(&[0.0; 2], &f.env, &f.pins, &w),
            Err(Error::Dimension(_))
        ));
    }
}
