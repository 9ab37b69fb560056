//! Acceptance gate for the library and harness: each test checks one release
//! criterion end to end and prints a single PASS/FAIL line with the measured
//! values. Criteria are asserted at face value; the desk-scale SHD band (c07)
//! and the large-p FDR bound (c08) sit outside the operating range reachable
//! on this data generator, so those two report their honest measurements and
//! fail rather than being widened.
//!
//! Tests share a lock so subprocess runs and timing assertions never overlap.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use svrcd::graph::{self, DagGraph};
use svrcd::metrics::MetricsReport;
use svrcd::model::{self, Dataset, ParamSet, VariableSpec};
use svrcd::optim;
use svrcd::score::{self, HyperParams, StepMode};

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    // A failed criterion poisons the lock; later criteria still run.
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn svrcd_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_svrcd"))
}

fn run_experiment(out: &Path, args: &[&str]) {
    let o = svrcd_bin()
        .arg("experiment")
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .output()
        .expect("harness binary should spawn");
    assert!(
        o.status.success(),
        "experiment {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&o.stderr)
    );
}

/// Per-replicate rows of an experiment's metrics.csv: (setting label,
/// [P, E, R, M, FP, TPR, FDR, SHD, JI]).
fn metric_rows(dir: &Path) -> Vec<(String, [f64; 9])> {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).expect("metrics.csv");
    text.lines()
        .skip(1)
        .map(|line| {
            let mut parts = line.split(',');
            let label = parts.next().unwrap().to_string();
            let _rep = parts.next().unwrap();
            let mut vals = [0.0; 9];
            for v in &mut vals {
                *v = parts.next().unwrap().parse().unwrap();
            }
            (label, vals)
        })
        .collect()
}

fn mean_where(rows: &[(String, [f64; 9])], label: &str, col: usize) -> f64 {
    let picked: Vec<f64> =
        rows.iter().filter(|(l, _)| l == label).map(|(_, v)| v[col]).collect();
    assert!(!picked.is_empty(), "no rows for setting {label}");
    picked.iter().sum::<f64>() / picked.len() as f64
}

const COL_E: usize = 1;
const COL_TPR: usize = 5;
const COL_FDR: usize = 6;
const COL_SHD: usize = 7;
const COL_JI: usize = 8;

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && xs[idx[e + 1]] == xs[idx[s]] {
            e += 1;
        }
        let avg = (s + e) as f64 / 2.0 + 1.0;
        for k in s..=e {
            out[idx[k]] = avg;
        }
        s = e + 1;
    }
    out
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    cov / (vx * vy).sqrt()
}

fn random_params(spec: &VariableSpec, rng: &mut ChaCha20Rng) -> ParamSet {
    let mut params = ParamSet::zeros(spec);
    for i in 0..spec.p() {
        for v in params.intercept_mut(i) {
            *v = rng.gen::<f64>() - 0.5;
        }
        for j in 0..spec.p() {
            if j != i {
                for v in params.block_mut(i, j).data_mut() {
                    *v = rng.gen::<f64>() - 0.5;
                }
            }
        }
    }
    params
}

fn random_instance(p: usize, n: usize, seed: u64) -> (VariableSpec, DagGraph, Dataset) {
    let spec = VariableSpec::binary(p);
    let s0 = p.min(p * (p - 1) / 2);
    let g = graph::gen_random_dag(p, s0, seed).unwrap();
    let cpds = model::gen_true_cpds(&g, &spec, 0.5, 1.5, seed ^ 0x9E37);
    let d = model::sample_dataset(&g, &cpds, n, seed ^ 0x79B9).unwrap();
    (spec, g, d)
}

#[test]
fn c01_count_identities_match_reference_row() {
    let _g = gate();
    let rep = MetricsReport::from_counts(36.8, 26.6, 6.4, 50.0);
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    let got = [
        round2(rep.m),
        round2(rep.fp),
        round2(rep.tpr),
        round2(rep.fdr),
        round2(rep.shd),
        round2(rep.ji),
    ];
    let want = [17.0, 3.8, 0.53, 0.28, 27.2, 0.44];
    let pass = got == want;
    println!(
        "c01 count identities: {} (M {} FP {} TPR {} FDR {} SHD {} JI {})",
        if pass { "PASS" } else { "FAIL" },
        got[0], got[1], got[2], got[3], got[4], got[5]
    );
    assert!(pass, "expected {want:?}, got {got:?}");
}

#[test]
fn c02_analytic_gradients_match_finite_differences() {
    let _g = gate();
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..50u64 {
        let p = 2 + (s as usize % 4);
        let n = 5 + (s as usize * 7) % 16;
        let (spec, _, d) = random_instance(p, n, s);
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + s);
        let params = random_params(&spec, &mut rng);

        // Mean negative log-likelihood over the sample; its coordinates
        // partition by child, so one sweep checks every analytic block.
        let fd = score::fd_gradient(
            |pp| -score::log_likelihood(pp, &d).unwrap() / n as f64,
            &params,
            1e-5,
        );
        for i in 0..p {
            let analytic = score::full_grad_ll(&params, &d, i);
            worst = worst.max(score::grad_rel_error(&analytic, &fd, 1e-8));
        }

        // One single-row gradient per instance against the same oracle.
        let h = s as usize % n;
        let i = s as usize % p;
        let row_ds = Dataset::from_values(d.spec().clone(), d.row(h).to_vec()).unwrap();
        let fd_row = score::fd_gradient(
            |pp| -score::child_log_likelihood(pp, &row_ds, i),
            &params,
            1e-5,
        );
        let analytic = score::sample_grad_ll(&params, &d, i, h);
        worst = worst.max(score::grad_rel_error(&analytic, &fd_row, 1e-8));
    }
    let wall = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-5 && wall < 10.0;
    println!(
        "c02 gradient check: {} (worst rel err {worst:.3e} <= 1e-5, wall {wall:.2}s < 10s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "worst rel err {worst:.3e}, wall {wall:.2}s");
}

#[test]
fn c03_variance_reduced_direction_is_unbiased() {
    let _g = gate();
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..20u64 {
        let p = 2 + (s as usize % 4);
        let n = 4 + (s as usize % 12);
        let (spec, _, d) = random_instance(p, n, 100 + s);
        let mut rng = ChaCha20Rng::seed_from_u64(2000 + s);
        let current = random_params(&spec, &mut rng);
        let snapshot = random_params(&spec, &mut rng);
        let i = s as usize % p;
        let mu = score::full_grad_ll(&snapshot, &d, i);

        let mut acc = score::ChildGrad::zeros(&spec, i);
        for h in 0..n {
            let mut dir = score::sample_grad_ll(&current, &d, i, h);
            dir.add_scaled(-1.0, &score::sample_grad_ll(&snapshot, &d, i, h));
            dir.add_scaled(1.0, &mu);
            acc.add_scaled(1.0, &dir);
        }
        acc.scale(1.0 / n as f64);

        let full = score::full_grad_ll(&current, &d, i);
        for (a, b) in acc.flatten().iter().zip(full.flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    let wall = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && wall < 1.0;
    println!(
        "c03 variance-reduced direction: {} (worst |mean - full| {worst:.3e} <= 1e-12, wall {wall:.3}s < 1s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "worst deviation {worst:.3e}, wall {wall:.3}s");
}

#[test]
fn c04_learned_graphs_are_acyclic_across_generators() {
    let _g = gate();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let types = ["bipartite", "scale-free", "random"];
    let mut acyclic = 0;
    for k in 0..100u64 {
        let gen_out = dir.path().join(format!("g{k}"));
        let fit_out = dir.path().join(format!("f{k}"));
        let o = svrcd_bin()
            .args([
                "generate",
                "--graph-type", types[k as usize % 3],
                "--p", "50",
                "--n", "50",
                "--seed", &k.to_string(),
                "--out", gen_out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = svrcd_bin()
            .args([
                "learn",
                gen_out.join("dataset.csv").to_str().unwrap(),
                "--seed", &k.to_string(),
                "--out", fit_out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let learned = graph::read_edge_list(&fit_out.join("edges.csv")).unwrap();
        if graph::is_dag(&learned) {
            acyclic += 1;
        }
    }
    let wall = t0.elapsed().as_secs_f64();
    let pass = acyclic == 100;
    println!(
        "c04 acyclic outputs: {} ({acyclic}/100 learn runs acyclic, wall {wall:.1}s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{acyclic}/100 acyclic");
}

#[test]
fn c05_reachability_matches_brute_force_closure() {
    let _g = gate();
    let t0 = Instant::now();
    let mut mismatches = 0usize;
    for t in 0..1000u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(t);
        let p = 2 + (t as usize % 5);
        let mut g = DagGraph::new(p);
        for a in 0..p {
            for b in 0..p {
                if a != b && rng.gen_bool(0.3) {
                    g.add_edge(a, b);
                }
            }
        }
        let mut reach = vec![false; p * p];
        for a in 0..p {
            for b in 0..p {
                if a != b && g.has_edge(a, b) {
                    reach[a * p + b] = true;
                }
            }
        }
        for k in 0..p {
            for i in 0..p {
                for j in 0..p {
                    if reach[i * p + k] && reach[k * p + j] {
                        reach[i * p + j] = true;
                    }
                }
            }
        }
        let pm = graph::path_matrix(&g);
        for i in 0..p {
            for j in 0..p {
                if pm.reaches(i, j) != reach[i * p + j] {
                    mismatches += 1;
                }
            }
        }
    }
    let wall = t0.elapsed().as_secs_f64();
    let pass = mismatches == 0 && wall < 5.0;
    println!(
        "c05 reachability oracle: {} ({mismatches} mismatches over 1000 digraphs, wall {wall:.2}s < 5s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{mismatches} mismatches, wall {wall:.2}s");
}

#[test]
fn c06_full_batch_steps_are_monotone() {
    let _g = gate();
    let mut worst_rise = 0.0f64;
    for seed in 0..10u64 {
        let spec = VariableSpec::binary(4);
        let g = graph::gen_random_dag(4, 4, seed).unwrap();
        let truth = model::gen_true_cpds(&g, &spec, 0.5, 1.5, seed + 1);
        let d = model::sample_dataset(&g, &truth, 15, seed + 2).unwrap();
        let user = HyperParams::default();
        let (l1, l2) =
            optim::epoch_penalties(&HyperParams { mode: StepMode::FullBatch, ..user }, d.n());
        let stepper = HyperParams {
            lambda1: l1,
            lambda2: l2,
            mode: StepMode::FullBatch,
            m: Some(1),
            ..user
        };
        let mut rng = ChaCha20Rng::seed_from_u64(3000 + seed);
        let mut params = random_params(&spec, &mut rng);
        params.project_identifiable();
        // Penalty weights scale with 1/n inside the stepper while the
        // reported score keeps the user weights; monotonicity is invariant
        // to that common positive rescaling.
        let pm = graph::path_matrix(&optim::extract_edges(&params, 1e-8));
        let mut prev = score::total_score(&params, &d, &pm, &user).unwrap().total;
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let cyc = pm.reaches(i, j);
                for _ in 0..4 {
                    optim::svrg_epoch(&mut params, &d, i, j, cyc, &stepper, &mut rng).unwrap();
                    let cur = score::total_score(&params, &d, &pm, &user).unwrap().total;
                    worst_rise = worst_rise.max(cur - prev);
                    prev = cur;
                }
            }
        }
    }
    let pass = worst_rise <= 1e-9;
    println!(
        "c06 full-batch monotonicity: {} (worst single-step rise {worst_rise:.3e} <= 1e-9)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "worst rise {worst_rise:.3e}");
}

#[test]
fn c07_desk_scale_recovery_band() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let t0 = Instant::now();
    run_experiment(
        &out,
        &["--mode", "compare", "--p", "50", "--n", "50", "--replicates", "20", "--seed", "0"],
    );
    let wall = t0.elapsed().as_secs_f64();
    let rows = metric_rows(&out);
    let shd = mean_where(&rows, "svrcd", COL_SHD);
    let ji = mean_where(&rows, "svrcd", COL_JI);
    let pass = (20.0..=45.0).contains(&shd) && ji >= 0.25 && wall < 300.0;
    println!(
        "c07 desk-scale recovery: {} (mean SHD {shd:.2} in [20, 45]: {}; mean JI {ji:.4} >= 0.25: {}; wall {wall:.1}s < 300s)",
        if pass { "PASS" } else { "FAIL" },
        (20.0..=45.0).contains(&shd),
        ji >= 0.25
    );
    assert!(pass, "mean SHD {shd:.2}, mean JI {ji:.4}, wall {wall:.1}s");
}

#[test]
fn c08_large_p_scalability_band() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let t0 = Instant::now();
    run_experiment(
        &out,
        &[
            "--mode", "noise", "--noise", "0", "--p", "200", "--n", "50",
            "--replicates", "20", "--seed", "0",
        ],
    );
    let wall = t0.elapsed().as_secs_f64();
    let rows = metric_rows(&out);
    let tpr = mean_where(&rows, "q0", COL_TPR);
    let fdr = mean_where(&rows, "q0", COL_FDR);
    let pass = wall < 1800.0 && tpr >= 0.2 && fdr <= 0.45;
    println!(
        "c08 large-p band: {} (wall {wall:.1}s < 1800s: {}; mean TPR {tpr:.4} >= 0.2: {}; mean FDR {fdr:.4} <= 0.45: {})",
        if pass { "PASS" } else { "FAIL" },
        wall < 1800.0,
        tpr >= 0.2,
        fdr <= 0.45
    );
    assert!(pass, "wall {wall:.1}s, mean TPR {tpr:.4}, mean FDR {fdr:.4}");
}

#[test]
fn c09_edge_recall_degrades_with_label_noise() {
    let _g = gate();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_experiment(&out, &["--mode", "noise", "--p", "200", "--n", "50", "--seed", "0"]);
    let rows = metric_rows(&out);
    let mut labels: Vec<String> = Vec::new();
    for (l, _) in &rows {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    let qs: Vec<f64> =
        labels.iter().map(|l| l.strip_prefix('q').unwrap().parse().unwrap()).collect();
    let means: Vec<f64> = labels.iter().map(|l| mean_where(&rows, l, COL_E)).collect();
    let rho = spearman(&means, &qs);
    let pass = rho <= -0.8;
    let shown: Vec<String> = means.iter().map(|e| format!("{e:.1}")).collect();
    println!(
        "c09 noise trend: {} (Spearman {rho:.3} <= -0.8; mean E by q: {})",
        if pass { "PASS" } else { "FAIL" },
        shown.join(" ")
    );
    assert!(pass, "Spearman {rho:.3}, mean E {shown:?}");
}

#[test]
fn c10_null_model_stays_empty() {
    let _g = gate();
    let spec = VariableSpec::binary(5);
    let empty = DagGraph::new(5);
    let hp = HyperParams::default();
    let mut ok = 0;
    let mut counts = Vec::new();
    for s in 0..20u64 {
        let cpds = model::gen_true_cpds(&empty, &spec, 0.5, 1.5, 7000 + s);
        let d = model::sample_dataset(&empty, &cpds, 2000, 8000 + s).unwrap();
        let res = optim::run(&d, &hp, 9000 + s).unwrap();
        counts.push(res.graph.edge_count());
        if res.graph.edge_count() <= 1 {
            ok += 1;
        }
    }
    let pass = ok >= 18;
    println!(
        "c10 null calibration: {} ({ok}/20 seeds with <= 1 edge; counts {counts:?})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{ok}/20 seeds within budget, counts {counts:?}");
}
