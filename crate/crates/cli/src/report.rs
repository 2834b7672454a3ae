use std::fs::File;
use std::path::Path;

use plotters::prelude::*;
use tdgp_core::{Error, IterationRecord, TimingReport};

use crate::{Failure, ReportArgs};

fn read_trace(path: &Path) -> Result<Vec<IterationRecord>, Error> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(f)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse(format!("trace row {}: {e}", i + 2))))
        .collect()
}

/// Line plot of one trace column against the iteration; rows where the
/// value is not finite are skipped.
fn plot(path: &Path, title: &str, points: &[(f64, f64)]) -> Result<(), Error> {
    let draw_err = |e: Box<dyn std::error::Error>| Error::Parse(format!("plot {}: {e}", path.display()));
    if points.is_empty() {
        return Ok(());
    }
    let (x1, mut lo, mut hi) = points
        .iter()
        .fold((0.0f64, f64::INFINITY, f64::NEG_INFINITY), |(x, l, h), p| {
            (x.max(p.0), l.min(p.1), h.max(p.1))
        });
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(Box::new(e)))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0.0..x1.max(1.0), (lo - pad)..(hi + pad))
        .map_err(|e| draw_err(Box::new(e)))?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(title)
        .draw()
        .map_err(|e| draw_err(Box::new(e)))?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(|e| draw_err(Box::new(e)))?;
    root.present().map_err(|e| draw_err(Box::new(e)))?;
    Ok(())
}

fn column(trace: &[IterationRecord], f: impl Fn(&IterationRecord) -> f64) -> Vec<(f64, f64)> {
    trace
        .iter()
        .map(|r| (r.iteration as f64, f(r)))
        .filter(|p| p.1.is_finite())
        .collect()
}

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    let trace = read_trace(&a.trace)?;
    let (first, last) = match (trace.first(), trace.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Validation(format!("{} holds no iterations", a.trace.display())).into()),
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let columns: [(&str, &str, fn(&IterationRecord) -> f64); 5] = [
        ("hpwl.svg", "HPWL", |r| r.hpwl),
        ("wns.svg", "WNS (ns)", |r| r.wns),
        ("tns.svg", "TNS (ns)", |r| r.tns),
        ("cpd.svg", "CPD (ns)", |r| r.cpd),
        ("overflow.svg", "overflowed bins", |r| r.overflowed_bins as f64),
    ];
    for (file, title, f) in columns {
        plot(&a.out_dir.join(file), title, &column(&trace, f))?;
    }

    let best_cpd = trace
        .iter()
        .map(|r| r.cpd)
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    let opt = |v: f64| v.is_finite().then_some(v);
    let mut summary = serde_json::json!({
        "iterations": last.iteration,
        "hpwl": last.hpwl,
        "wns": opt(last.wns),
        "tns": opt(last.tns),
        "cpd": opt(last.cpd),
        "best_cpd": opt(best_cpd),
        "initial_cpd": opt(first.cpd),
        "max_utilization": last.max_utilization,
    });
    let mut table = vec![
        ("iterations".to_string(), last.iteration.to_string()),
        ("HPWL".into(), format!("{:.1}", last.hpwl)),
        ("WNS (ns)".into(), format!("{:.4}", last.wns)),
        ("TNS (ns)".into(), format!("{:.4}", last.tns)),
        ("CPD (ns)".into(), format!("{:.4}", last.cpd)),
        ("initial CPD (ns)".into(), format!("{:.4}", first.cpd)),
        ("max utilization".into(), format!("{:.3}", last.max_utilization)),
    ];
    if let Some(t) = &a.timing {
        let text = std::fs::read_to_string(t).map_err(|e| Error::io(t, e))?;
        let timing: TimingReport = serde_json::from_str(&text).map_err(Error::from)?;
        let net_delay: f64 = timing.critical_path.iter().map(|s| s.net_delay).sum();
        summary["timing"] = serde_json::json!({
            "wns": timing.wns,
            "tns": timing.tns,
            "cpd": timing.cpd,
            "path_arcs": timing.critical_path.len(),
            "path_net_delay": net_delay,
        });
        table.push(("STA CPD (ns)".into(), format!("{:.4}", timing.cpd)));
        table.push(("critical path arcs".into(), timing.critical_path.len().to_string()));
        table.push(("path net delay (ns)".into(), format!("{net_delay:.4}")));
    }
    let path = a.out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let w = table.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in &table {
        println!("{k:<w$}  {v}");
    }
    Ok(())
}
