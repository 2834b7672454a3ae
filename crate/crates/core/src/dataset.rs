//! Training data: labelled pin pairs extracted from a placed design, split
//! by net, stored as JSON lines.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::delay::{group_by_net, DelayTable, FeatureContext, NetDelayModel, NetSample, TrainingSample};
use crate::error::{Error, Result};
use crate::netlist::{NetId, Netlist};

/// Labels every timing net of the context with `model`.
pub fn model_labels(ctx: &FeatureContext<'_>, model: &dyn NetDelayModel) -> Result<DelayTable> {
    let nets: Vec<NetId> = ctx.netlist.timing_nets().collect();
    Ok(model.net_delays(ctx, &nets, 1024)?.0)
}

#[derive(Debug, Deserialize)]
struct DelayRow {
    net: String,
    load: String,
    delay: f64,
}

/// Reads `net,load,delay` rows. `load` names the load instance, or gives
/// its index within the net when no instance of that name is on the net.
pub fn read_delay_csv(reader: impl std::io::Read, netlist: &Netlist) -> Result<DelayTable> {
    let by_name: HashMap<&str, NetId> = netlist.net_ids().map(|n| (netlist.net(n).name.as_str(), n)).collect();
    let mut rows: HashMap<NetId, Vec<Option<f64>>> = HashMap::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (line, rec) in rdr.deserialize::<DelayRow>().enumerate() {
        let row = rec.map_err(|e| Error::Parse(format!("delay CSV row {}: {e}", line + 2)))?;
        let &n = by_name
            .get(row.net.as_str())
            .ok_or_else(|| Error::Validation(format!("delay CSV names unknown net `{}`", row.net)))?;
        let net = netlist.net(n);
        let k = net
            .loads
            .iter()
            .position(|&p| netlist.instance(netlist.pin(p).owner).name == row.load)
            .or_else(|| row.load.parse::<usize>().ok().filter(|&k| k < net.fanout()))
            .ok_or_else(|| Error::Validation(format!("net `{}` has no load `{}`", row.net, row.load)))?;
        if !(row.delay.is_finite() && row.delay > 0.0) {
            return Err(Error::Validation(format!(
                "delay of `{}` → `{}` must be positive, got {}",
                row.net, row.load, row.delay
            )));
        }
        rows.entry(n).or_insert_with(|| vec![None; net.fanout()])[k] = Some(row.delay);
    }
    let mut table = DelayTable::default();
    for (n, d) in rows {
        // Incomplete nets stay incomplete; extraction reports them.
        if d.iter().all(Option::is_some) {
            table.insert(n, d.into_iter().flatten().collect());
        } else {
            let k = d.iter().position(Option::is_none).expect("a gap");
            return Err(Error::Validation(format!(
                "delay CSV misses load {k} of net `{}`",
                netlist.net(n).name
            )));
        }
    }
    Ok(table)
}

/// One sample per timing pin pair, keyed `prefix` + net name. Every pair
/// must be labelled.
pub fn extract_samples(ctx: &FeatureContext<'_>, labels: &DelayTable, prefix: &str) -> Result<Vec<NetSample>> {
    use rayon::prelude::*;
    let nets: Vec<NetId> = ctx.netlist.timing_nets().collect();
    nets.par_iter()
        .map(|&n| {
            let net = ctx.netlist.net(n);
            let l = labels
                .net(n)
                .filter(|l| l.len() == net.fanout())
                .ok_or_else(|| Error::Validation(format!("no delay labels for net `{}`", net.name)))?;
            Ok(NetSample {
                key: format!("{prefix}{}", net.name),
                features: ctx.net_features(n)?,
                labels: l.to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<NetSample>,
    pub val: Vec<NetSample>,
    pub test: Vec<NetSample>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Shuffles nets under `seed` and cuts them `train : val : rest` with the
/// first two counts rounded to the nearest net.
pub fn split_by_net(mut nets: Vec<NetSample>, train: f64, val: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train >= 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(Error::Validation(format!("invalid split fractions {train} / {val}")));
    }
    nets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = nets.len();
    let a = ((train * n as f64).round() as usize).min(n);
    let b = ((val * n as f64).round() as usize).min(n - a);
    let test = nets.split_off(a + b);
    let val = nets.split_off(a);
    Ok(DatasetSplit { train: nets, val, test })
}

/// The 70/15/15 split.
pub fn default_split(nets: Vec<NetSample>, seed: u64) -> DatasetSplit {
    split_by_net(nets, 0.7, 0.15, seed).expect("valid fractions")
}

fn stream(e: std::io::Error) -> Error {
    Error::io("<dataset stream>", e)
}

pub fn write_jsonl(nets: &[NetSample], mut out: impl Write) -> Result<()> {
    for n in nets {
        for s in n.to_training_samples() {
            serde_json::to_writer(&mut out, &s)?;
            out.write_all(b"\n").map_err(stream)?;
        }
    }
    out.flush().map_err(stream)?;
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<NetSample>> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(stream)?;
        if line.trim().is_empty() {
            continue;
        }
        let s: TrainingSample =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("dataset line {}: {e}", i + 1)))?;
        samples.push(s);
    }
    Ok(group_by_net(samples))
}
