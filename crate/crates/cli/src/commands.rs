use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::info;
use serde::Deserialize;
use tdgp_core::delay::{evaluate, train_model};
use tdgp_core::placer::write_trace_csv;
use tdgp_core::validate::validate;
use tdgp_core::{
    default_split, extract_samples, global_place, model_labels, read_delay_csv, read_jsonl, run_sta, synth_design,
    write_jsonl, DelayModelWeights, Device, Error, FeatureContext, LinearBaseline, ModelConfig, NetDelayModel, Netlist,
    PlacementState, PlacerConfig, Result, SynthConfig, SyntheticOracle, TimingGraph, TimingReport, TrainConfig,
};

use crate::{DelayArgs, DesignArgs, ExtractArgs, Failure, PlaceArgs, StaArgs, SynthArgs, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub placer: PlacerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        match path {
            None => Ok(Config::default()),
            Some(p) => Ok(serde_json::from_str(&read(p)?)?),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn load_design(a: &DesignArgs) -> Result<(Netlist, Device)> {
    let netlist = Netlist::parse(&read(&a.netlist)?)?;
    let device = Device::parse(&read(&a.device)?)?;
    let problems = validate(&netlist, &device);
    if let Some(first) = problems.first() {
        for p in &problems {
            log::error!("{p}");
        }
        return Err(Error::Validation(format!("{first} ({} problem(s))", problems.len())));
    }
    Ok((netlist, device))
}

fn load_oracle(path: &Path) -> Result<SyntheticOracle> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn load_model(a: &DelayArgs) -> Result<Option<Box<dyn NetDelayModel>>> {
    if let Some(p) = &a.model {
        return Ok(Some(Box::new(DelayModelWeights::load(p)?)));
    }
    if let Some(p) = &a.oracle {
        return Ok(Some(Box::new(load_oracle(p)?)));
    }
    Ok(None)
}

pub fn place(a: &PlaceArgs, config: &Config) -> Result<(), Failure> {
    let (netlist, device) = load_design(&a.design)?;
    let mut cfg = config.placer.clone();
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.alpha {
        cfg.weighting.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.weighting.beta = v;
    }
    if let Some(v) = a.gamma {
        cfg.weighting.gamma = v;
    }
    if let Some(v) = a.percentile {
        cfg.weighting.percentile = v;
    }
    if let Some(v) = a.clock_period {
        cfg.clock_period = Some(v);
    }
    if let Some(v) = a.iters {
        cfg.max_iterations = v;
    }
    let model = load_model(&a.delay)?;
    if cfg.lambda > 0.0 && model.is_none() {
        return Err(Failure::Usage("--lambda above 0 needs --model or --oracle".into()));
    }
    let result = global_place(&netlist, &device, &cfg, model.as_deref())?;
    write(&a.out, &result.placement.to_json(&netlist))?;
    if let Some(t) = &a.trace {
        write_trace_csv(&result.trace, create(t)?)?;
    }
    if let Some(last) = result.trace.last() {
        info!(
            "{} iterations, HPWL {:.1}, CPD {:.3} ns",
            result.trace.len() - 1,
            last.hpwl,
            last.cpd
        );
        println!(
            "{}",
            serde_json::json!({
                "iterations": result.trace.len() - 1,
                "hpwl": last.hpwl,
                "cpd": finite(last.cpd),
                "wns": finite(last.wns),
                "tns": finite(last.tns),
                "clock_period": result.clock_period,
            })
        );
    }
    Ok(())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn sta(a: &StaArgs, config: &Config) -> Result<(), Failure> {
    let (netlist, device) = load_design(&a.design)?;
    let placement = PlacementState::parse(&read(&a.placement)?, &netlist)?;
    let model = load_model(&a.delay)?.ok_or_else(|| Failure::Usage("sta needs --model or --oracle".into()))?;
    let cfg = &config.placer;
    let ctx = FeatureContext::new(&netlist, &placement, &device, &cfg.congestion)?;
    let mut graph = TimingGraph::from_netlist(&netlist, &cfg.logic_delays, a.clock_period.unwrap_or(1.0))?;
    let mut report = run_sta(&mut graph, &ctx, model.as_ref(), cfg.batch_size)?;
    if a.clock_period.is_none() {
        // Without a constraint the critical path itself sets the period.
        graph.clock_period = report.summary.cpd;
        let (summary, path) = graph.analyze();
        report.summary = summary;
        report.critical_path = path;
    }
    let out = TimingReport::new(&graph, &netlist, report.summary, &report.critical_path);
    let text = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    match &a.out {
        Some(p) => write(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

pub fn extract(a: &ExtractArgs, config: &Config, seed: u64) -> Result<(), Failure> {
    let (netlist, device) = load_design(&a.design)?;
    let placement = PlacementState::parse(&read(&a.placement)?, &netlist)?;
    let ctx = FeatureContext::new(&netlist, &placement, &device, &config.placer.congestion)?;
    let labels = match (&a.oracle, &a.delays) {
        (Some(o), _) => model_labels(&ctx, &load_oracle(o)?)?,
        (None, Some(d)) => {
            let f = File::open(d).map_err(|e| Error::io(d, e))?;
            read_delay_csv(BufReader::new(f), &netlist)?
        }
        (None, None) => return Err(Failure::Usage("extract needs --oracle or --delays".into())),
    };
    let samples = extract_samples(&ctx, &labels, &a.prefix)?;
    let split = default_split(samples, seed);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_jsonl(part, create(&path)?)?;
    }
    let pairs = |v: &[tdgp_core::NetSample]| v.iter().map(|n| n.pairs()).sum::<usize>();
    println!(
        "{}",
        serde_json::json!({
            "nets": split.sizes(),
            "pairs": [pairs(&split.train), pairs(&split.val), pairs(&split.test)],
        })
    );
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<tdgp_core::NetSample>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(f))
}

pub fn train(a: &TrainArgs, config: &Config, seed: u64) -> Result<(), Failure> {
    let train = load_samples(&a.train)?;
    let val = load_samples(&a.val)?;
    let mut model_cfg = config.model.clone();
    if a.no_topology {
        model_cfg.use_topology = false;
    }
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed;
    if let Some(e) = a.epochs {
        train_cfg.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        train_cfg.learning_rate = lr;
    }
    let outcome = train_model(&train, &val, &model_cfg, &train_cfg)?;
    outcome.weights.save(&a.out)?;
    for e in &outcome.history {
        info!("epoch {:3} loss {:.6} val MAE {:.5}", e.epoch, e.train_loss, e.val_mae);
    }
    let mut summary = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "val_mae": outcome.best_val_mae,
        "parameters": outcome.weights.num_parameters(),
    });
    if let Some(t) = &a.test {
        let test = load_samples(t)?;
        let model = outcome.weights.evaluate(&test);
        let baseline = LinearBaseline::fit(&train, model_cfg.delay_floor)?;
        let bp: Vec<f64> = test.iter().flat_map(|n| baseline.predict_net(n)).collect();
        let truth: Vec<f64> = test.iter().flat_map(|n| n.labels.iter().copied()).collect();
        summary["test"] = serde_json::to_value(model).map_err(Error::from)?;
        summary["baseline"] = serde_json::to_value(evaluate(&bp, &truth)).map_err(Error::from)?;
        if let Some(p) = &a.predictions {
            let refs: Vec<_> = test.iter().map(|n| &n.features).collect();
            let (pred, _) = outcome.weights.predict_batched(&refs, 1024);
            let mut w = csv::Writer::from_writer(create(p)?);
            w.write_record(["net", "load", "pred", "truth"])
                .map_err(|e| Error::Parse(e.to_string()))?;
            for (n, row) in test.iter().zip(pred) {
                for (k, (y, t)) in row.iter().zip(&n.labels).enumerate() {
                    w.write_record([n.key.clone(), k.to_string(), y.to_string(), t.to_string()])
                        .map_err(|e| Error::Parse(e.to_string()))?;
                }
            }
            w.flush().map_err(|e| Error::io(p, e))?;
        }
    }
    println!("{summary}");
    Ok(())
}

pub fn synth(a: &SynthArgs, config: &Config, seed: u64) -> Result<(), Failure> {
    if a.cells == 0 {
        return Err(Failure::Usage("--cells must be positive".into()));
    }
    let mut design = synth_design(a.cells, seed, &config.synth)?;
    if let Some(c) = &a.coefficients {
        if c.len() != 5 || c.iter().any(|v| !v.is_finite()) {
            return Err(Failure::Usage(
                "--coefficients takes five numbers a0,a1,a2,a3,a4".into(),
            ));
        }
        design.oracle.coefficients.copy_from_slice(c);
    }
    if let Some(s) = a.sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Failure::Usage("--sigma must be non-negative".into()));
        }
        design.oracle.sigma = s;
    }
    write(&a.out_netlist, &design.netlist.to_json())?;
    write(&a.out_device, &design.device.to_json())?;
    let mut f = create(&a.out_oracle)?;
    serde_json::to_writer_pretty(&mut f, &design.oracle).map_err(Error::from)?;
    f.flush().map_err(|e| Error::io(&a.out_oracle, e))?;
    println!(
        "{}",
        serde_json::json!({
            "instances": design.netlist.num_instances(),
            "nets": design.netlist.num_nets(),
            "width": design.device.width,
            "height": design.device.height,
        })
    );
    Ok(())
}
