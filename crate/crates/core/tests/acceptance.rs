//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use tdnode::analysis::{
    bifurcation_scan, count_clusters, extract_ndde, hopf_oracle, simulate_ndde, steady_extrema, tau_grid, NddeModel,
    ScanConfig, CLUSTER_TOL, MIN_PROMINENCE,
};
use tdnode::dataset::{generate_dataset, DatasetConfig};
use tdnode::dde::{simulate_dde, HistorySpec, MackeyGlass, MgParams};
use tdnode::discretization::{build_dm, compose_discretized_rhs, mackey_glass_reduced, HistoryGrid, Scheme};
use tdnode::gradcheck::{run as gradcheck, GradcheckConfig};
use tdnode::node::NodeSystem;
use tdnode::ode::rk4_trajectory;
use tdnode::train::{build_pairs, evaluate_loss, train, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<bool>, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
    let started = Instant::now();
    let out = f();
    let took = started.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = out.pass && in_time;
    let time_note = match limit {
        Some(l) if !in_time => format!(" (runtime {:.1}s over {}s limit)", took.as_secs_f64(), l.as_secs()),
        _ => format!(" ({:.1}s)", took.as_secs_f64()),
    };
    println!(
        "criterion {id} [{}] {name}: {}{time_note}",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    results.push(pass);
}

fn within(x: (f64, f64), lo: f64, hi: f64) -> bool {
    x.0 >= lo - 1e-9 && x.1 <= hi + 1e-9
}

fn fmt_bracket(b: Option<(f64, f64)>) -> String {
    b.map_or("none".into(), |(a, c)| format!("[{a:.2}, {c:.2}]"))
}

fn criterion_1() -> Outcome {
    let p = MgParams::default();
    let tau_c = hopf_oracle(&p).unwrap().tau_c;
    let diag = bifurcation_scan(|t| MackeyGlass::new(p.with_tau(t)), &tau_grid(0.20, 0.30, 11), &ScanConfig::default()).unwrap();
    let onset = diag.onset();
    let oracle_ok = (tau_c - 0.2486).abs() <= 0.0005;
    let bracket_ok = onset.is_some_and(|b| within(b, 0.23, 0.26) && b.0 <= tau_c && tau_c <= b.1);
    Outcome {
        pass: oracle_ok && bracket_ok,
        detail: format!("tau_c={tau_c:.5} (0.2486 +/- 0.0005), scan onset {}", fmt_bracket(onset)),
    }
}

fn criterion_2() -> Outcome {
    let p = MgParams::default();
    let diag = bifurcation_scan(|t| MackeyGlass::new(p.with_tau(t)), &tau_grid(0.50, 0.95, 46), &ScanConfig::default()).unwrap();
    let first = diag.transition(1, 2);
    let second = diag.transition(2, 4);
    let ok1 = first.is_some_and(|b| within(b, 0.58, 0.64));
    let ok2 = second.is_some_and(|b| within(b, 0.81, 0.87));
    Outcome {
        pass: ok1 && ok2,
        detail: format!(
            "1->2 at {} (want within [0.58, 0.64]: {}), 2->4 at {} (want within [0.81, 0.87]: {})",
            fmt_bracket(first),
            if ok1 { "ok" } else { "no" },
            fmt_bracket(second),
            if ok2 { "ok" } else { "no" }
        ),
    }
}

/// Worst error of exact-nonlinearity predictions over `horizon` time units.
fn fidelity(m: usize, h: f64, horizon: f64) -> f64 {
    let p = MgParams::default();
    let r = (p.tau / h).round() as usize + 1;
    let sys = compose_discretized_rhs(mackey_glass_reduced(p, r), build_dm(Scheme::Central, 1, m, h).unwrap());
    let mg = MackeyGlass::new(p).unwrap();
    let steps = (horizon / h).round() as usize;
    let mut worst: f64 = 0.0;
    for c in [0.5, 1.0, 1.5] {
        let dense = simulate_dde(&mg, &HistorySpec::scalar(c, 1.5), 18.0, 0.0005).unwrap();
        for t0 in [11.5, 12.5, 13.5, 14.5, 15.5, 16.5] {
            let x0 = HistoryGrid::from_signal(1, m, h, t0, |t| dense.value_at(t));
            let states = rk4_trajectory(|x, out| sys.rhs_into(x, out).unwrap(), &x0.values, h / 10.0, steps * 10);
            for j in 1..=steps {
                let pred = states[j * 10 - 1][0];
                worst = worst.max((pred - dense.value_at(t0 + j as f64 * h)[0]).abs());
            }
        }
    }
    worst
}

fn criterion_3() -> Outcome {
    let e30 = fidelity(30, 0.05, 0.5);
    let e60 = fidelity(60, 0.025, 0.5);
    let ratio = e30 / e60;
    Outcome {
        pass: e30 < 0.02 && ratio >= 2.0,
        detail: format!("M=30 worst error {e30:.3e} (< 0.02), M=60 {e60:.3e}, ratio {ratio:.2} (>= 2)"),
    }
}

fn criterion_4() -> Outcome {
    let report = gradcheck(&GradcheckConfig::default()).unwrap();
    let worst = |pred: &dyn Fn(&str) -> bool| {
        report
            .blocks
            .iter()
            .filter(|b| pred(&b.name))
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    };
    let w = worst(&|n| n.starts_with("sim.") && !n.contains("tau"));
    let d = worst(&|n| n.contains("tau"));
    let has_delay = report.blocks.iter().any(|b| b.name.contains("tau"));
    Outcome {
        pass: w < 1e-5 && d < 1e-3 && has_delay,
        detail: format!("20 configurations: weights/biases max rel err {w:.2e} (< 1e-5), delay {d:.2e} (< 1e-3)"),
    }
}

struct SeedResult {
    seed: u64,
    tau2: f64,
    loss: f64,
    plateau: Option<usize>,
    system: NodeSystem,
}

fn criterion_5(best: &mut Option<NodeSystem>) -> Outcome {
    let ds = generate_dataset(&DatasetConfig {
        n_traj: 20,
        ..DatasetConfig::default()
    })
    .unwrap();
    let pairs = build_pairs(&ds, ds.m, 10).unwrap();
    let runs: Vec<SeedResult> = (0..10)
        .map(|seed| {
            let cfg = TrainConfig {
                iterations: 500,
                batch_size: 200,
                horizon: 10,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&ds, &cfg).unwrap();
            let (loss, _) = evaluate_loss(&out.system, &pairs, 10, cfg.substeps).unwrap();
            SeedResult {
                seed,
                tau2: out.system.delays()[1],
                loss,
                plateau: out.log.plateau(100, 0.01),
                system: out.system,
            }
        })
        .collect();
    let summary: Vec<String> = runs
        .iter()
        .map(|r| {
            let plateau = r.plateau.map_or("-".into(), |i| i.to_string());
            format!("seed {} tau_2={:.3} loss={:.4} plateau@{}", r.seed, r.tau2, r.loss, plateau)
        })
        .collect();
    let winner = runs
        .iter()
        .filter(|r| (0.9..=1.1).contains(&r.tau2))
        .min_by(|a, b| a.loss.total_cmp(&b.loss));
    let mut low: Vec<f64> = runs.iter().filter(|r| r.tau2 < 0.3).map(|r| r.loss).collect();
    low.sort_by(f64::total_cmp);
    let median = match low.len() {
        0 => None,
        n if n % 2 == 1 => Some(low[n / 2]),
        n => Some(0.5 * (low[n / 2 - 1] + low[n / 2])),
    };
    let (pass, verdict) = match (winner, median) {
        (Some(w), Some(med)) => {
            let ratio = med / w.loss;
            (ratio >= 5.0, format!("best seed {} loss {:.4}, median small-delay loss {med:.4}, ratio {ratio:.1} (>= 5)", w.seed, w.loss))
        }
        (Some(w), None) => (false, format!("best seed {} but no seed with tau_2 < 0.3 to compare against", w.seed)),
        (None, _) => (false, "no seed reached tau_2 in [0.9, 1.1]".into()),
    };
    if let Some(w) = winner {
        *best = Some(w.system.clone());
    }
    Outcome {
        pass,
        detail: format!("{verdict}; {}", summary.join("; ")),
    }
}

fn criterion_6(best: Option<&NodeSystem>) -> Outcome {
    let Some(sys) = best else {
        return Outcome {
            pass: false,
            detail: "no successful model from criterion 5".into(),
        };
    };
    let model: NddeModel = extract_ndde(sys).unwrap().with_delays(vec![0.0, 0.8]).unwrap();
    let traj = simulate_ndde(&model, &HistorySpec::scalar(0.2, 0.8), 100.0, 0.01).unwrap();
    let (maxima, _) = steady_extrema(&traj, 50.0, MIN_PROMINENCE);
    let clusters = count_clusters(&maxima, CLUSTER_TOL);
    let mut levels = maxima.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() <= CLUSTER_TOL);
    Outcome {
        pass: clusters == 2,
        detail: format!(
            "delays (0, 0.8) from x = 0.2: {clusters} maxima clusters at {:?} (want exactly 2)",
            levels.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    }
}

fn criterion_7() -> Outcome {
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    let pairs = build_pairs(&ds, ds.m, 10).unwrap().len();
    let (train, test) = (ds.train_len, ds.test_len());
    Outcome {
        pass: train == 141 && test == 60 && pairs == 10100 && ds.trajectories.len() == 100,
        detail: format!("train/test {train}/{test} per trajectory (141/60), {pairs} pairs (10100)"),
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> (Option<i32>, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_tdnode"))
        .current_dir(dir)
        .env_remove("TDNODE_CONFIG")
        .args(args)
        .output()
        .expect("run tdnode");
    (o.status.code(), o.stdout)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--n-traj", "3", "--out", "d.csv"],
        vec![
            "train", "--data", "d.csv", "--seed", "7", "--iterations", "20", "--batch-size", "9", "--checkpoint-every",
            "10", "--out", "m.txt", "--log", "log.csv",
        ],
        vec!["eval", "--data", "d.csv", "--model", "m.txt", "--out", "p.csv"],
        vec![
            "bifurcate", "--model", "m.txt", "--tau-steps", "5", "--compare", "--compare-out", "h.csv", "--t-transient",
            "50", "--t-measure", "50", "--out", "b.csv",
        ],
        vec!["bifurcate", "--ground-truth", "--tau-steps", "11", "--out", "g.csv"],
        vec!["surface", "--model", "m.txt", "--resolution", "11", "--out", "s.csv"],
        vec!["gradcheck", "--configs", "3"],
        vec!["hopf"],
    ];
    let run_all = || {
        let dir = tempfile::tempdir().unwrap();
        let outs: Vec<(Option<i32>, Vec<u8>)> = commands.iter().map(|c| run_cli(dir.path(), c)).collect();
        (outs, snapshot(dir.path()))
    };
    let (a_out, a_files) = run_all();
    let (b_out, b_files) = run_all();
    let all_ok = a_out.iter().all(|(code, _)| *code == Some(0));
    let differing: Vec<&str> = commands
        .iter()
        .zip(a_out.iter().zip(&b_out))
        .filter(|(_, (a, b))| a != b)
        .map(|(c, _)| c[0])
        .collect();
    let same_files = a_files == b_files;
    Outcome {
        pass: all_ok && differing.is_empty() && same_files,
        detail: format!(
            "{} commands run twice: {} output files {}, stdout differences in {:?}",
            commands.len(),
            a_files.len(),
            if same_files { "byte-identical" } else { "DIFFER" },
            differing
        ),
    }
}

fn main() {
    let mut results = Vec::new();
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    report(&mut results, 1, "equilibrium stability and Hopf onset", min(1), criterion_1);
    report(&mut results, 2, "period-doubling cascade", min(10), criterion_2);
    report(&mut results, 3, "discretization fidelity", min(1), criterion_3);
    report(&mut results, 4, "gradient correctness", min(1), criterion_4);
    let mut best = None;
    report(&mut results, 5, "desk-scale delay learning", min(15), || criterion_5(&mut best));
    report(&mut results, 6, "generalization to tau_2 = 0.8", min(1), || criterion_6(best.as_ref()));
    report(&mut results, 7, "data pipeline counts", min(1), criterion_7);
    report(&mut results, 8, "determinism", None, criterion_8);
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
