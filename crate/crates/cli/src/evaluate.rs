use std::path::{Path, PathBuf};

use relunet::beamform::{mvdr_enhance, BeamformConfig};
use relunet::metrics::{evaluate, Metric};
use relunet::model::{ChannelPolicy, ModelParams};
use relunet::scenesim::read_manifest;
use relunet::signal::read_wav;
use relunet::util::atomic_write;
use serde::Deserialize;

use crate::config::{CliError, CliResult, RunConfig};
use crate::enhance::enhance_waveform;
use crate::logging::{info, warning};

/// One row of a pairs file. Paths are relative to the file's directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub estimate: PathBuf,
    pub reference: PathBuf,
    #[serde(default)]
    pub condition: Option<String>,
}

fn read_pairs(path: &Path) -> CliResult<Vec<PairEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut pairs: Vec<PairEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in &mut pairs {
        p.estimate = base.join(&p.estimate);
        p.reference = base.join(&p.reference);
    }
    Ok(pairs)
}

/// First channel of the file and its rate.
fn mono(path: &Path) -> CliResult<(Vec<f64>, u32)> {
    let w = read_wav(path)?;
    Ok((w.channel(0).to_vec(), w.sample_rate()))
}

pub fn run_evaluate(pairs_file: &Path, metrics: &[Metric], out: &Path) -> CliResult<()> {
    let pairs = read_pairs(pairs_file)?;
    let mut signals = Vec::with_capacity(pairs.len());
    let mut rate = None;
    for p in &pairs {
        let (est, fs_e) = mono(&p.estimate)?;
        let (reference, fs_r) = mono(&p.reference)?;
        if fs_e != fs_r || rate.is_some_and(|r| r != fs_r) {
            return Err(CliError::Input(format!(
                "sample rates differ: {} ({fs_e} Hz) vs {} ({fs_r} Hz)",
                p.estimate.display(),
                p.reference.display()
            )));
        }
        rate = Some(fs_r);
        signals.push((est, reference));
    }
    let labels: Vec<String> = if pairs.iter().all(|p| p.condition.is_none()) {
        Vec::new()
    } else {
        pairs
            .iter()
            .map(|p| p.condition.clone().unwrap_or_else(|| "default".into()))
            .collect()
    };
    let views: Vec<(&[f64], &[f64])> = signals
        .iter()
        .map(|(e, r)| (e.as_slice(), r.as_slice()))
        .collect();
    let report = evaluate(&views, &labels, metrics, rate.unwrap_or(16000))?;
    atomic_write(out, report.to_csv().as_bytes())?;
    println!("condition,metric,mean,count");
    for a in report.aggregates() {
        info!(
            "event=aggregate condition={} metric={} mean={:.4} count={}",
            a.condition, a.metric, a.mean, a.count
        );
        println!("{},{},{},{}", a.condition, a.metric, a.mean, a.count);
    }
    Ok(())
}

pub struct CompareOptions {
    pub manifest: PathBuf,
    pub models: Vec<PathBuf>,
    pub out: PathBuf,
    pub metrics: Vec<Metric>,
    pub reference: Option<usize>,
    pub noise_prefix: f64,
    pub policy: ChannelPolicy,
}

/// One table row: a method's scores on one item.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub item: usize,
    pub values: Vec<f64>,
}

pub fn compare_csv(metrics: &[Metric], rows: &[CompareRow]) -> String {
    let names: Vec<&str> = metrics.iter().map(|m| m.name()).collect();
    let mut out = format!("method,item,{}\n", names.join(","));
    for r in rows {
        let values: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{},{},{}\n", r.method, r.item, values.join(",")));
    }
    out
}

/// File stems, or full paths when two stems collide.
fn model_labels(models: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = models
        .iter()
        .map(|p| {
            p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            )
        })
        .collect();
    stems
        .iter()
        .zip(models)
        .map(|(s, p)| {
            if stems.iter().filter(|t| *t == s).count() > 1 || s == "noisy" || s == "mvdr" {
                p.display().to_string()
            } else {
                s.clone()
            }
        })
        .collect()
}

/// Rows ordered noisy, each model in argument order, then MVDR; items in
/// manifest order within each method.
pub fn run_compare(config: &RunConfig, options: &CompareOptions) -> CliResult<()> {
    let entries = read_manifest(&options.manifest)?;
    let items = entries
        .iter()
        .map(|e| e.load())
        .collect::<relunet::Result<Vec<_>>>()?;
    let models = options
        .models
        .iter()
        .map(ModelParams::load)
        .collect::<relunet::Result<Vec<_>>>()?;
    let reference = options
        .reference
        .or_else(|| models.first().map(|m| m.config.reference_index))
        .unwrap_or(config.simulate.reference);
    for (m, path) in models.iter().zip(&options.models) {
        if m.config.reference_index != reference {
            warning!(
                "event=reference_mismatch model={} model_reference={} table_reference={reference}",
                path.display(),
                m.config.reference_index
            );
        }
    }

    let mut methods: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let noisy: Vec<Vec<f64>> = items
        .iter()
        .map(|i| {
            if reference >= i.noisy.num_channels() {
                return Err(CliError::Config(format!(
                    "reference {reference} out of range"
                )));
            }
            Ok(i.noisy.channel(reference).to_vec())
        })
        .collect::<CliResult<_>>()?;
    methods.push(("noisy".into(), noisy));
    for (label, params) in model_labels(&options.models).into_iter().zip(&models) {
        let outputs = items
            .iter()
            .map(|i| enhance_waveform(&i.noisy, params, options.policy))
            .collect::<relunet::Result<Vec<_>>>()?;
        methods.push((label, outputs));
    }
    let bf = BeamformConfig {
        stft: config.stft().clone(),
        reference,
        noise_prefix: options.noise_prefix,
        ..Default::default()
    };
    let mvdr = items
        .iter()
        .zip(&entries)
        .map(|(i, e)| {
            let fs = i.noisy.sample_rate() as f64;
            let delays: Vec<f64> = e.delays.iter().map(|&d| d as f64 / fs).collect();
            mvdr_enhance(&i.noisy, &bf, Some(&e.gains), Some(&delays)).map(|b| b.waveform)
        })
        .collect::<relunet::Result<Vec<_>>>()?;
    methods.push(("mvdr".into(), mvdr));

    let mut rows = Vec::new();
    for (method, outputs) in &methods {
        let pairs: Vec<(&[f64], &[f64])> = outputs
            .iter()
            .zip(&items)
            .map(|(o, i)| (o.as_slice(), i.clean.as_slice()))
            .collect();
        let fs = items.first().map_or(16000, |i| i.noisy.sample_rate());
        let report = evaluate(&pairs, &[], &options.metrics, fs)?;
        for (k, _) in items.iter().enumerate() {
            let values = options
                .metrics
                .iter()
                .map(|&m| {
                    report
                        .entries
                        .iter()
                        .find(|e| e.item_id == k && e.metric == m)
                        .map_or(f64::NAN, |e| e.value)
                })
                .collect();
            rows.push(CompareRow {
                method: method.clone(),
                item: k,
                values,
            });
        }
        for m in &options.metrics {
            if let Some(mean) = report.mean(None, *m) {
                info!(
                    "event=compare method={method} metric={m} mean={mean:.4} items={}",
                    items.len()
                );
            }
        }
    }
    atomic_write(
        &options.out,
        compare_csv(&options.metrics, &rows).as_bytes(),
    )?;
    println!("{}", options.out.display());
    Ok(())
}
