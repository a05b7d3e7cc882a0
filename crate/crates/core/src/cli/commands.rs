use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{
    BifurcateArgs, Command, DataArgs, EvalArgs, GenDataArgs, GradcheckArgs, MgArgs, SurfaceArgs, TrainArgs, EXIT_NUMERICAL,
    EXIT_OK,
};
use crate::analysis::{
    bifurcation_scan, compare_diagrams, extract_ndde, hopf_oracle, surface_error, tau_grid, BifurcationDiagram, ScanConfig,
};
use crate::checkpoint::{self, ModelCheckpoint};
use crate::csvfmt;
use crate::dataset::{generate_dataset, mesh_count, read_dataset, write_dataset, DatasetConfig, TrajectoryDataset};
use crate::dde::{mg_rhs, MackeyGlass, MgParams};
use crate::discretization::HistoryGrid;
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckConfig};
use crate::mlp::{DelayMap, MackeyGlassMap};
use crate::node::{loss, predict, NodeSystem};
use crate::train::{train_with, AdamConfig, TrainConfig};

pub(super) fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bifurcate(a) => bifurcate(a),
        Command::Surface(a) => surface(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Hopf(a) => hopf(a),
    }
}

fn params(mg: &MgArgs, tau: f64) -> Result<MgParams> {
    MgParams::new(mg.beta, mg.gamma, mg.delta, tau)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn with_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn gen_data(a: &GenDataArgs) -> Result<i32> {
    let m = mesh_count(a.tau_max, a.h).map_err(|_| {
        Error::InvalidParameter(format!("--tau-max {} is not a whole multiple of --h {}", a.tau_max, a.h))
    })?;
    if a.tau > a.tau_max {
        return Err(Error::InvalidParameter(format!("--tau {} exceeds --tau-max {}", a.tau, a.tau_max)));
    }
    if a.t_drop >= a.t_train_end {
        return Err(Error::InvalidParameter(format!(
            "--t-drop {} must precede --t-train-end {}",
            a.t_drop, a.t_train_end
        )));
    }
    if a.n_traj == 0 {
        return Err(Error::InvalidParameter("--n-traj must be at least 1".into()));
    }
    let cfg = DatasetConfig {
        params: params(&a.mg, a.tau)?,
        n_traj: a.n_traj,
        h: a.h,
        tau_max: a.tau_max,
        t_drop: a.t_drop,
        t_train_end: a.t_train_end,
        t_test_end: a.t_test_end,
        substeps: a.substeps,
    };
    let ds = generate_dataset(&cfg)?;
    with_file(&a.out, |w| write_dataset(&ds, w))?;
    println!(
        "trajectories={} samples={} train={} test={} M={}",
        ds.trajectories.len(),
        ds.samples_per_trajectory(),
        ds.train_len,
        ds.test_len(),
        m
    );
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn load_dataset(a: &DataArgs) -> Result<TrajectoryDataset> {
    let f = File::open(&a.data).map_err(|e| Error::InvalidParameter(format!("--data {}: {e}", a.data.display())))?;
    read_dataset(BufReader::new(f), a.t_train_end)
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn to_checkpoint(sys: &NodeSystem) -> ModelCheckpoint {
    ModelCheckpoint {
        n: sys.n(),
        m: sys.m(),
        h: sys.h(),
        tau_max: sys.tau_max(),
        delays: sys.delays().to_vec(),
        mlp: sys.net.clone(),
    }
}

fn load_model(path: &Path) -> Result<NodeSystem> {
    let ck = checkpoint::load_file(path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidParameter(format!("--model {}: {io}", path.display())),
        other => other,
    })?;
    NodeSystem::new(ck.mlp, ck.delays, ck.n, ck.m, ck.h)
}

fn checkpoint_path(dir: &Path, out: &Path, iter: usize) -> PathBuf {
    let stem = out.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.iter{iter:06}.txt"))
}

fn train(a: &TrainArgs) -> Result<i32> {
    let ds = load_dataset(&a.data)?;
    if let Some(n) = a.n.filter(|&n| n != ds.n) {
        return Err(Error::InvalidParameter(format!("--n {n} does not match dataset n={}", ds.n)));
    }
    if let Some(h) = a.h.filter(|&h| !same(h, ds.h)) {
        return Err(Error::InvalidParameter(format!("--h {h} does not match dataset h={}", ds.h)));
    }
    if let Some(m) = a.m.filter(|&m| m != ds.m) {
        return Err(Error::InvalidParameter(format!("--m {m} does not match dataset M={}", ds.m)));
    }
    if a.checkpoint_every == Some(0) {
        return Err(Error::InvalidParameter("--checkpoint-every must be positive".into()));
    }
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        },
        iterations: a.iterations,
        batch_size: a.batch_size,
        horizon: a.horizon,
        seed: a.seed,
        delays: a.delays,
        hidden: a.hidden.clone(),
        substeps: a.substeps,
        learn_first_delay: a.learn_first_delay,
        initial_delays: a.init_delays.clone(),
    };
    let ck_dir = a
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| a.out.parent().map(Path::to_path_buf).unwrap_or_default());
    let started = Instant::now();
    let out = train_with(&ds, &cfg, |iter, sys| {
        if let Some(k) = a.checkpoint_every {
            if iter % k == 0 {
                let path = checkpoint_path(&ck_dir, &a.out, iter);
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                checkpoint::save_file(&to_checkpoint(sys), &path)?;
            }
        }
        Ok(())
    })?;
    checkpoint::save_file(&to_checkpoint(&out.system), &a.out)?;
    with_file(&a.log, |w| out.log.write_csv(cfg.delays, w))?;
    eprintln!("training took {:.1}s", started.elapsed().as_secs_f64());

    let delays: Vec<String> = out.system.delays().iter().map(|&t| csvfmt::value(t)).collect();
    println!("iterations={} delays={}", out.log.len(), delays.join(","));
    if let Some(last) = out.log.records.last() {
        println!("final_batch_loss={} skipped={}", csvfmt::value(last.loss), last.skipped);
    }
    match out.log.plateau(100, 0.01) {
        Some(it) => println!("plateau: loss improved by less than 1% over 100 iterations at iteration {it}"),
        None => println!("plateau: none"),
    }
    println!("wrote {} and {}", a.out.display(), a.log.display());
    Ok(EXIT_OK)
}

struct EvalSummary {
    train_windows: usize,
    train_loss: f64,
    test_windows: usize,
    test_loss: f64,
}

/// Window end indices: histories end at these samples and the next
/// `horizon` samples are predicted.
fn window_ends(first: usize, last_target: usize, horizon: usize) -> Vec<usize> {
    (0..)
        .map(|k| first + k * horizon)
        .take_while(|e| e + horizon <= last_target)
        .collect()
}

fn eval_system<F: DelayMap>(sys: &NodeSystem<F>, ds: &TrajectoryDataset, a: &EvalArgs) -> Result<i32> {
    if sys.n() != ds.n {
        return Err(Error::DimensionMismatch {
            expected: ds.n,
            got: sys.n(),
        });
    }
    if sys.m() != ds.m || !same(sys.h(), ds.h) {
        return Err(Error::InvalidParameter(format!(
            "model mesh (M={}, h={}) differs from dataset (M={}, h={})",
            sys.m(),
            sys.h(),
            ds.m,
            ds.h
        )));
    }
    if a.traj >= ds.trajectories.len() {
        return Err(Error::InvalidParameter(format!(
            "--traj {} out of range ({} trajectories)",
            a.traj,
            ds.trajectories.len()
        )));
    }
    let n = ds.n;
    let header = if n == 1 {
        "t,x_true,x_pred".to_string()
    } else {
        let cols: Vec<String> = (1..=n).flat_map(|i| [format!("x_true_{i}"), format!("x_pred_{i}")]).collect();
        format!("t,{}", cols.join(","))
    };
    let len = ds.samples_per_trajectory();
    let horizon = a.horizon;
    let mut rows = Vec::new();
    let mut summary = EvalSummary {
        train_windows: 0,
        train_loss: 0.0,
        test_windows: 0,
        test_loss: 0.0,
    };
    if horizon > 0 {
        if ds.m + horizon >= ds.train_len || horizon > ds.test_len() {
            return Err(Error::InvalidParameter(format!(
                "--horizon {horizon} exceeds available samples (train={}, test={}, M={})",
                ds.train_len,
                ds.test_len(),
                ds.m
            )));
        }
        let train_ends = window_ends(ds.m, ds.train_len - 1, horizon);
        let test_ends = window_ends(ds.train_len - 1, len - 1, horizon);
        for (ti, traj) in ds.trajectories.iter().enumerate() {
            for (ends, is_test) in [(&train_ends, false), (&test_ends, true)] {
                for &e in ends {
                    let x0 = HistoryGrid::from_window(n, ds.h, &traj.values[(e - ds.m) * n..(e + 1) * n]);
                    let target = &traj.values[(e + 1) * n..(e + 1 + horizon) * n];
                    let pred = predict(sys, &x0, horizon, a.substeps)?;
                    let l = loss(&pred, target)?;
                    if is_test {
                        summary.test_windows += 1;
                        summary.test_loss += l;
                    } else {
                        summary.train_windows += 1;
                        summary.train_loss += l;
                    }
                    if ti == a.traj {
                        for j in 0..horizon {
                            rows.push((e + 1 + j, pred.sample(j).to_vec()));
                        }
                    }
                }
            }
        }
    }
    let traj = &ds.trajectories[a.traj];
    with_file(&a.out, |w| {
        writeln!(w, "{header}")?;
        for (k, pred) in &rows {
            write!(w, "{}", csvfmt::time(traj.times[*k]))?;
            for c in 0..n {
                write!(
                    w,
                    ",{},{}",
                    csvfmt::value(traj.values[k * n + c]),
                    csvfmt::value(pred[c])
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    println!(
        "train_windows={} train_loss={} test_windows={} test_loss={}",
        summary.train_windows,
        csvfmt::value(mean(summary.train_loss, summary.train_windows)),
        summary.test_windows,
        csvfmt::value(mean(summary.test_loss, summary.test_windows))
    );
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn eval(a: &EvalArgs) -> Result<i32> {
    let ds = load_dataset(&a.data)?;
    match &a.model {
        Some(path) => eval_system(&load_model(path)?, &ds, a),
        None => {
            let p = params(&a.mg, a.tau)?;
            let sys = NodeSystem::new(MackeyGlassMap(p), vec![0.0, a.tau], ds.n, ds.m, ds.h)?;
            eval_system(&sys, &ds, a)
        }
    }
}

fn report_diagram(label: &str, d: &BifurcationDiagram) {
    let bracket = |b: Option<(f64, f64)>| match b {
        Some((lo, hi)) => format!("[{},{}]", csvfmt::time(lo), csvfmt::time(hi)),
        None => "none".to_string(),
    };
    let diverged: Vec<String> = d.rows.iter().filter(|r| r.diverged).map(|r| csvfmt::time(r.tau)).collect();
    println!("{label}rows={} diverged={}", d.rows.len(), diverged.len());
    if !diverged.is_empty() {
        println!("{label}diverged_tau={}", diverged.join(","));
    }
    println!("{label}onset={}", bracket(d.onset()));
    println!("{label}period_1_to_2={}", bracket(d.transition(1, 2)));
    println!("{label}period_2_to_4={}", bracket(d.transition(2, 4)));
    println!(
        "{label}chaos_proxy={}",
        d.chaos_onset().map_or("none".to_string(), csvfmt::time)
    );
}

fn bifurcate(a: &BifurcateArgs) -> Result<i32> {
    if a.tau_steps == 0 {
        return Err(Error::InvalidParameter("--tau-steps must be at least 1".into()));
    }
    if a.tau_min < 0.0 || (a.tau_steps > 1 && a.tau_max_scan <= a.tau_min) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= --tau-min < --tau-max-scan (got {}, {})",
            a.tau_min, a.tau_max_scan
        )));
    }
    let taus = tau_grid(a.tau_min, a.tau_max_scan, a.tau_steps);
    let cfg = ScanConfig {
        history: a.history,
        t_transient: a.t_transient,
        t_measure: a.t_measure,
        dt: a.dt,
        min_prominence: a.min_prominence,
    };
    let p = params(&a.mg, 1.0)?;
    let truth = || bifurcation_scan(|t| MackeyGlass::new(p.with_tau(t)), &taus, &cfg);
    let started = Instant::now();
    let diagram = match &a.model {
        None => truth()?,
        Some(path) => {
            let model = extract_ndde(&load_model(path)?)?;
            let base = model.delays_vec();
            bifurcation_scan(
                |t| {
                    let mut d = base.clone();
                    *d.last_mut().expect("at least one delay") = t;
                    model.with_delays(d)
                },
                &taus,
                &cfg,
            )?
        }
    };
    with_file(&a.out, |w| diagram.write_csv(w))?;
    report_diagram("", &diagram);
    if a.compare {
        let reference = truth()?;
        report_diagram("ground_truth_", &reference);
        let dist = compare_diagrams(&diagram, &reference)?;
        let mut finite: Vec<f64> = dist.iter().map(|d| d.1).filter(|d| d.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        if let (Some(max), false) = (finite.last(), finite.is_empty()) {
            println!(
                "hausdorff_median={} hausdorff_max={} incomparable={}",
                csvfmt::value(finite[finite.len() / 2]),
                csvfmt::value(*max),
                dist.len() - finite.len()
            );
        }
        if let Some(path) = &a.compare_out {
            with_file(path, |w| {
                writeln!(w, "tau,hausdorff")?;
                for (t, d) in &dist {
                    writeln!(w, "{},{}", csvfmt::time(*t), csvfmt::value(*d))?;
                }
                Ok(())
            })?;
        }
    }
    eprintln!("scan took {:.1}s", started.elapsed().as_secs_f64());
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn surface(a: &SurfaceArgs) -> Result<i32> {
    let model = extract_ndde(&load_model(&a.model)?)?;
    let p = params(&a.mg, 1.0)?;
    let grid = surface_error(
        |x, v| mg_rhs(x, v, &p).unwrap_or(f64::NAN),
        &model,
        (a.x_min, a.x_max),
        (a.delayed_min, a.delayed_max),
        (a.resolution, a.resolution),
    )?;
    with_file(&a.out, |w| grid.write_csv(w))?;
    println!(
        "points={} mean_abs_error={} max_abs_error={}",
        grid.points.len(),
        csvfmt::value(grid.mean_abs_error()),
        csvfmt::value(grid.max_abs_error())
    );
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig {
        eps: a.eps,
        delay_eps: a.delay_eps,
        configs: a.configs,
        seed: a.seed,
        at_grid_crossing: a.at_grid_crossing,
        ..GradcheckConfig::default()
    };
    let report = gradcheck::run(&cfg)?;
    for note in &report.notes {
        eprintln!("{note}");
    }
    println!("block,max_rel_err,tol,status");
    for b in &report.blocks {
        println!(
            "{},{:.3e},{:.0e},{}",
            b.name,
            b.max_rel_err,
            b.tol,
            if b.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed = report.failures();
    if failed.is_empty() {
        println!("all {} blocks within tolerance", report.blocks.len());
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = failed.iter().map(|b| b.name.as_str()).collect();
        eprintln!("tolerance violated in: {}", names.join(", "));
        Ok(EXIT_NUMERICAL)
    }
}

fn hopf(a: &MgArgs) -> Result<i32> {
    let hp = hopf_oracle(&params(a, 1.0)?)?;
    println!("equilibrium={}", csvfmt::value(hp.equilibrium));
    println!("a={} b={}", csvfmt::value(hp.a), csvfmt::value(hp.b));
    println!("omega={}", csvfmt::value(hp.omega));
    println!("tau_c={}", csvfmt::value(hp.tau_c));
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_tile_the_splits() {
        assert_eq!(window_ends(30, 140, 10), (30..=130).step_by(10).collect::<Vec<_>>());
        assert_eq!(window_ends(140, 200, 10), (140..=190).step_by(10).collect::<Vec<_>>());
        assert!(window_ends(140, 145, 10).is_empty());
    }

    #[test]
    fn checkpoint_names() {
        let p = checkpoint_path(Path::new("ck"), Path::new("out/model.txt"), 50);
        assert_eq!(p, PathBuf::from("ck/model.iter000050.txt"));
    }
}
