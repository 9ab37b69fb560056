//! Replicate execution and experiment orchestration.
//!
//! A replicate is one synthetic dataset pushed through the learner: truth
//! graph, conditional tables, samples, optional noise, fit, metrics. All
//! randomness is derived from `config.seed + r`, so reruns of the same
//! config produce byte-identical output files. Nondeterministic quantities
//! (wall time) go to stderr only, never into files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use svrcd::graph::{self, DagGraph};
use svrcd::metrics::{aggregate, evaluate, MetricsReport, CSV_HEADER};
use svrcd::model::{self, Dataset, VariableSpec};
use svrcd::optim::{run, LearnResult};
use svrcd::score::HyperParams;

use crate::config::{ExpMode, ExperimentConfig, GraphType};
use crate::hc::hc_baseline;

/// Default attachment exponent for scale-free graphs: linear preferential
/// attachment.
const SCALE_FREE_POWER: f64 = 1.0;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent seed streams for the stages of one replicate. The truth
/// graph uses `base` itself; the rest are decorrelated by mixing.
#[derive(Clone, Copy, Debug)]
pub struct Seeds {
    pub graph: u64,
    pub cpd: u64,
    pub data: u64,
    pub noise: u64,
    pub learn: u64,
}

impl Seeds {
    pub fn derive(base: u64) -> Seeds {
        Seeds {
            graph: base,
            cpd: splitmix64(base ^ 0xA5A5_5A5A_0000_0001),
            data: splitmix64(base ^ 0x5A5A_A5A5_0000_0002),
            noise: splitmix64(base ^ 0x0F0F_F0F0_0000_0003),
            learn: splitmix64(base ^ 0xC3C3_3C3C_0000_0004),
        }
    }
}

pub fn gen_graph(gt: GraphType, p: usize, seed: u64) -> Result<DagGraph> {
    Ok(match gt {
        GraphType::Bipartite => graph::gen_bipartite(p, seed),
        GraphType::ScaleFree => graph::gen_scale_free(p, SCALE_FREE_POWER, seed),
        GraphType::Random => graph::gen_random_dag(p, p, seed)
            .context("random graph with p edges is infeasible at this p")?,
    })
}

/// Everything produced by one replicate.
pub struct Replicate {
    pub truth: DagGraph,
    pub dataset: Dataset,
    pub learned: Option<LearnResult>,
    pub report: MetricsReport,
}

#[derive(Clone, Copy, PartialEq)]
pub enum Algo {
    Svrcd,
    Hc,
}

/// Generate data for replicate `r` of `cfg` and fit it with `algo`.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    hp: &HyperParams,
    p: usize,
    n: usize,
    q: f64,
    r: u64,
    algo: Algo,
) -> Result<Replicate> {
    let seeds = Seeds::derive(cfg.seed + r);
    let spec = VariableSpec::binary(p);
    let truth = gen_graph(cfg.graph_type, p, seeds.graph)?;
    let cpds = model::gen_true_cpds(&truth, &spec, 0.5, 1.5, seeds.cpd);
    let clean = model::sample_dataset(&truth, &cpds, n, seeds.data)
        .context("sampling from the generated graph failed")?;
    let dataset = if q > 0.0 {
        model::inject_noise(&clean, q, seeds.noise)
    } else {
        clean
    };
    let (learned, estimated) = match algo {
        Algo::Svrcd => {
            let res = run(&dataset, hp, seeds.learn).context("learner failed")?;
            let g = res.graph.clone();
            (Some(res), g)
        }
        Algo::Hc => (None, hc_baseline(&dataset, cfg.max_parents)),
    };
    let report = evaluate(&estimated, &truth).context("metric evaluation failed")?;
    Ok(Replicate { truth, dataset, learned, report })
}

/// One point on the swept axis: key columns for the CSVs, a path-safe label,
/// and the knob overrides it implies.
struct Setting {
    label: String,
    key_values: Vec<String>,
    hp: HyperParams,
    p: usize,
    n: usize,
    q: f64,
    algo: Algo,
}

fn settings_for(cfg: &ExperimentConfig, mode: ExpMode) -> (Vec<&'static str>, Vec<Setting>) {
    let base = cfg.hyper.to_hyper_params();
    let mk = |label: String, keys: Vec<String>, hp: HyperParams, p, n, q, algo| Setting {
        label,
        key_values: keys,
        hp,
        p,
        n,
        q,
        algo,
    };
    match mode {
        ExpMode::SweepLambda1 => (
            vec!["lambda1"],
            [0.9, 1.0, 1.1, 1.2, 1.3]
                .iter()
                .map(|&v| {
                    let hp = HyperParams { lambda1: v, ..base };
                    mk(format!("lambda1_{v}"), vec![v.to_string()], hp, cfg.p, cfg.n, 0.0, Algo::Svrcd)
                })
                .collect(),
        ),
        ExpMode::SweepLambda2 => (
            vec!["lambda2"],
            [0.1, 0.2, 0.3, 0.4, 0.5]
                .iter()
                .map(|&v| {
                    let hp = HyperParams { lambda2: v, ..base };
                    mk(format!("lambda2_{v}"), vec![v.to_string()], hp, cfg.p, cfg.n, 0.0, Algo::Svrcd)
                })
                .collect(),
        ),
        ExpMode::SweepGamma => (
            vec!["gamma"],
            [0.001, 0.002, 0.004, 0.006, 0.008]
                .iter()
                .map(|&v| {
                    let hp = HyperParams { gamma: v, ..base };
                    mk(format!("gamma_{v}"), vec![v.to_string()], hp, cfg.p, cfg.n, 0.0, Algo::Svrcd)
                })
                .collect(),
        ),
        ExpMode::Compare => (
            vec!["algorithm"],
            vec![
                mk("svrcd".into(), vec!["svrcd".into()], base, cfg.p, cfg.n, 0.0, Algo::Svrcd),
                mk("hc".into(), vec!["hc".into()], base, cfg.p, cfg.n, 0.0, Algo::Hc),
            ],
        ),
        ExpMode::Scalability => (
            vec!["n", "p"],
            [(50usize, 50usize), (50, 100), (100, 100), (50, 200)]
                .iter()
                .map(|&(n, p)| {
                    mk(
                        format!("n{n}_p{p}"),
                        vec![n.to_string(), p.to_string()],
                        base,
                        p,
                        n,
                        0.0,
                        Algo::Svrcd,
                    )
                })
                .collect(),
        ),
        ExpMode::Noise => (
            vec!["q"],
            cfg.noise
                .iter()
                .map(|&q| {
                    mk(format!("q{q}"), vec![q.to_string()], base, cfg.p, cfg.n, q, Algo::Svrcd)
                })
                .collect(),
        ),
    }
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("file")
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsJson {
    p: f64,
    e: f64,
    r: f64,
    m: f64,
    fp: f64,
    tpr: f64,
    fdr: f64,
    shd: f64,
    ji: f64,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(rep: &MetricsReport) -> Self {
        MetricsJson {
            p: rep.p,
            e: rep.e,
            r: rep.r,
            m: rep.m,
            fp: rep.fp,
            tpr: rep.tpr,
            fdr: rep.fdr,
            shd: rep.shd,
            ji: rep.ji,
        }
    }
}

#[derive(Serialize)]
struct SettingRecord {
    keys: Vec<(String, String)>,
    aggregate: MetricsJson,
    variance: MetricsJson,
    replicates: Vec<MetricsJson>,
}

// The config is embedded in echo form (no output path) so a record archive
// compares equal no matter where the run was written.
#[derive(Serialize)]
struct RunRecord<'a> {
    config: EchoConfig<'a>,
    settings: Vec<SettingRecord>,
    content_hash: String,
}

/// Aggregate row in the style of the study tables: counts are averaged,
/// ratio columns recomputed from the averaged counts so the report
/// identities hold on the fractional values.
fn table_row(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let (mean, _) = aggregate(reports)?;
    let s0 = mean.e + mean.r + mean.m;
    Ok(MetricsReport::from_counts(mean.p, mean.e, mean.r, s0))
}

/// Ten significant decimals with trailing zeros trimmed: enough precision
/// to reconstruct the value, without float representation noise like
/// `54.85000000000001` in the tables.
fn fmt_metric(v: f64) -> String {
    let mut s = format!("{v:.10}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

fn trimmed_row(rep: &MetricsReport) -> String {
    [rep.p, rep.e, rep.r, rep.m, rep.fp, rep.tpr, rep.fdr, rep.shd, rep.ji]
        .map(fmt_metric)
        .join(",")
}

pub struct ExperimentOutcome {
    pub content_hash: String,
    pub settings: usize,
    pub replicates: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig, mode: ExpMode, out: &Path) -> Result<ExperimentOutcome> {
    cfg.validate().map_err(anyhow::Error::msg)?;
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;

    let config_json = serde_json::to_string_pretty(&EchoConfig::from(cfg, mode))? + "\n";
    write_atomic(&out.join("config.json"), config_json.as_bytes())?;

    let (key_names, settings) = settings_for(cfg, mode);

    let mut metrics_csv = format!("setting,rep,{CSV_HEADER}\n");
    let keys_header = key_names.join(",");
    let mut aggregate_csv = format!("{keys_header},{CSV_HEADER}\n");
    let mut variance_csv = format!("{keys_header},{CSV_HEADER}\n");
    let mut records = Vec::with_capacity(settings.len());

    for s in &settings {
        let mut reports = Vec::with_capacity(cfg.replicates);
        for r in 0..cfg.replicates as u64 {
            let t0 = std::time::Instant::now();
            let rep = run_replicate(cfg, &s.hp, s.p, s.n, s.q, r, s.algo)?;
            eprintln!(
                "{} r={} done in {:.2}s (P={} SHD={})",
                s.label,
                r,
                t0.elapsed().as_secs_f64(),
                rep.report.p,
                rep.report.shd
            );

            write_atomic(
                &out.join("datasets").join(&s.label).join(format!("r{r}.csv")),
                model::format_csv(&rep.dataset).as_bytes(),
            )?;
            write_atomic(
                &out.join("truths").join(&s.label).join(format!("r{r}.csv")),
                graph::format_edge_list(&rep.truth).as_bytes(),
            )?;
            if let Some(res) = &rep.learned {
                write_atomic(
                    &out.join("traces").join(&s.label).join(format!("r{r}.csv")),
                    svrcd::optim::format_trace(&res.trace).as_bytes(),
                )?;
            }
            let _ = writeln!(
                metrics_csv,
                "{},{},{}",
                s.label,
                r,
                rep.report.to_csv_row()
            );
            reports.push(rep.report);
        }
        let row = table_row(&reports)?;
        let (_, var) = aggregate(&reports)?;
        let key_csv = s.key_values.join(",");
        let _ = writeln!(aggregate_csv, "{},{}", key_csv, trimmed_row(&row));
        let _ = writeln!(variance_csv, "{},{}", key_csv, trimmed_row(&var));
        records.push(SettingRecord {
            keys: key_names
                .iter()
                .map(|k| k.to_string())
                .zip(s.key_values.iter().cloned())
                .collect(),
            aggregate: MetricsJson::from(&row),
            variance: MetricsJson::from(&var),
            replicates: reports.iter().map(MetricsJson::from).collect(),
        });
    }

    write_atomic(&out.join("metrics.csv"), metrics_csv.as_bytes())?;
    write_atomic(&out.join("aggregate.csv"), aggregate_csv.as_bytes())?;
    write_atomic(&out.join("variance.csv"), variance_csv.as_bytes())?;

    let mut hasher = Sha256::new();
    hasher.update(config_json.as_bytes());
    hasher.update(metrics_csv.as_bytes());
    hasher.update(aggregate_csv.as_bytes());
    let content_hash = hex_string(&hasher.finalize());

    let record = RunRecord {
        config: EchoConfig::from(cfg, mode),
        settings: records,
        content_hash: content_hash.clone(),
    };
    let record_json = serde_json::to_string_pretty(&record)? + "\n";
    write_atomic(&out.join("record.json"), record_json.as_bytes())?;

    Ok(ExperimentOutcome {
        content_hash,
        settings: settings.len(),
        replicates: cfg.replicates,
    })
}

/// The config as echoed into `config.json`: resolved mode included, output
/// path left out so a run archive stays location-independent.
#[derive(Serialize)]
struct EchoConfig<'a> {
    graph_type: GraphType,
    p: usize,
    n: usize,
    replicates: usize,
    hyper: &'a crate::config::HyperConfig,
    noise: &'a [f64],
    seed: u64,
    max_parents: usize,
    mode: ExpMode,
}

impl<'a> EchoConfig<'a> {
    fn from(cfg: &'a ExperimentConfig, mode: ExpMode) -> Self {
        EchoConfig {
            graph_type: cfg.graph_type,
            p: cfg.p,
            n: cfg.n,
            replicates: cfg.replicates,
            hyper: &cfg.hyper,
            noise: &cfg.noise,
            seed: cfg.seed,
            max_parents: cfg.max_parents,
            mode,
        }
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Resolve the directory for a fresh `learn`/`generate`/`experiment` output,
/// creating parents as needed.
pub fn ensure_dir(path: &PathBuf) -> Result<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_streams_differ_between_stages_and_replicates() {
        let a = Seeds::derive(7);
        let b = Seeds::derive(8);
        let stages = [a.graph, a.cpd, a.data, a.noise, a.learn];
        for (i, x) in stages.iter().enumerate() {
            for (j, y) in stages.iter().enumerate() {
                if i != j {
                    assert_ne!(x, y);
                }
            }
        }
        assert_ne!(a.learn, b.learn);
        assert_ne!(a.data, b.data);
    }

    #[test]
    fn graph_generators_match_requested_family() {
        let g = gen_graph(GraphType::Bipartite, 50, 3).unwrap();
        assert_eq!(g.edge_count(), 50);
        let g = gen_graph(GraphType::ScaleFree, 50, 3).unwrap();
        assert_eq!(g.edge_count(), 49);
        let g = gen_graph(GraphType::Random, 50, 3).unwrap();
        assert_eq!(g.edge_count(), 50);
    }

    #[test]
    fn table_rows_keep_the_report_identities() {
        let reports = vec![
            MetricsReport::from_counts(10.0, 6.0, 2.0, 12.0),
            MetricsReport::from_counts(8.0, 5.0, 1.0, 12.0),
        ];
        let row = table_row(&reports).unwrap();
        assert!((row.p - (row.e + row.r + row.fp)).abs() < 1e-12);
        assert!((row.shd - (row.r + row.m + row.fp)).abs() < 1e-12);
        assert!((row.tpr - row.e / 12.0).abs() < 1e-12);
    }

    #[test]
    fn metric_formatting_drops_float_noise() {
        assert_eq!(fmt_metric(54.850000000000009), "54.85");
        assert_eq!(fmt_metric(41.0), "41");
        assert_eq!(fmt_metric(0.2621023513139697), "0.2621023513");
        assert_eq!(fmt_metric(0.0), "0");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
