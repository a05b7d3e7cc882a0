//! Post-training analysis: the learned delay equation, bifurcation scans,
//! nonlinearity surfaces and the linear stability of the Mackey-Glass
//! equilibrium.

use std::io::Write;

use rayon::prelude::*;

use crate::csvfmt;
use crate::dde::{simulate_dde, DelayedRhs, DenseTrajectory, HistorySpec, MgParams};
use crate::error::{Error, Result};
use crate::mlp::{DelayMap, MlpParameters};
use crate::node::NodeSystem;

/// Delay equation `x' = net([x(t - tau_1); ..; x(t - tau_d)])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NddeModel<F = MlpParameters> {
    pub net: F,
    delays: Vec<f64>,
}

impl<F: DelayMap> NddeModel<F> {
    pub fn new(net: F, delays: Vec<f64>) -> Result<Self> {
        let d = delays.len();
        if d == 0 || net.input_len() % d != 0 || net.input_len() / d != net.output_len() {
            return Err(Error::DimensionMismatch {
                expected: d * net.output_len(),
                got: net.input_len(),
            });
        }
        if let Some(&bad) = delays.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParameter(format!("delay {bad} must be >= 0")));
        }
        Ok(Self { net, delays })
    }

    pub fn with_delays(&self, delays: Vec<f64>) -> Result<Self>
    where
        F: Clone,
    {
        Self::new(self.net.clone(), delays)
    }

    pub fn delays_vec(&self) -> Vec<f64> {
        self.delays.clone()
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().cloned().fold(0.0, f64::max)
    }
}

impl<F: DelayMap> DelayedRhs for NddeModel<F> {
    fn dim(&self) -> usize {
        self.net.output_len()
    }

    fn delays(&self) -> &[f64] {
        &self.delays
    }

    fn eval(&self, _x: &[f64], delayed: &[f64], out: &mut [f64]) {
        let mut cache = [0.0; 64];
        if self.net.cache_len() <= cache.len() {
            self.net.eval_cached(delayed, &mut cache[..self.net.cache_len()], out);
        } else {
            out.copy_from_slice(&self.net.eval(delayed));
        }
    }
}

/// The first block row of the NODE read as a delay equation.
pub fn extract_ndde<F: DelayMap + Clone>(sys: &NodeSystem<F>) -> Result<NddeModel<F>> {
    NddeModel::new(sys.net.clone(), sys.delays().to_vec())
}

/// Step no larger than the smallest positive delay.
pub fn effective_dt(dt: f64, delays: &[f64]) -> f64 {
    delays.iter().filter(|&&t| t > 0.0).fold(dt, |a, &t| a.min(t))
}

pub fn simulate_ndde<F: DelayMap>(m: &NddeModel<F>, history: &HistorySpec, t_end: f64, dt: f64) -> Result<DenseTrajectory> {
    simulate_dde(m, history, t_end, dt)
}

/// Linearization of the Mackey-Glass equation at its positive equilibrium and
/// the delay at which that equilibrium loses stability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfPoint {
    pub equilibrium: f64,
    /// Coefficient of `x(t)`.
    pub a: f64,
    /// Coefficient of `x(t - tau)`.
    pub b: f64,
    pub omega: f64,
    pub tau_c: f64,
}

/// Purely imaginary root `i omega` of `lambda = a + b exp(-lambda tau)`.
pub fn hopf_oracle(p: &MgParams) -> Result<HopfPoint> {
    p.validate()?;
    let ratio = p.beta / p.gamma;
    if ratio <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "beta/gamma={ratio} leaves no positive equilibrium"
        )));
    }
    let equilibrium = (ratio - 1.0).powf(1.0 / p.delta);
    let a = -p.gamma;
    let b = p.feedback_slope(equilibrium);
    if b.abs() <= a.abs() {
        return Err(Error::NoHopf { a, b });
    }
    let omega = (b * b - a * a).sqrt();
    let mut phase = (-omega / b).atan2(-a / b);
    if phase < 0.0 {
        phase += std::f64::consts::TAU;
    }
    Ok(HopfPoint {
        equilibrium,
        a,
        b,
        omega,
        tau_c: phase / omega,
    })
}

/// Local extrema of a uniformly sampled signal, refined by a parabola through
/// the three samples around each one. An extremum is only accepted once the
/// signal has moved away from it by more than `min_prominence`, so wiggles
/// smaller than that are skipped; `0` keeps every turning point. Returns
/// `(maxima, minima)`.
pub fn local_extrema(y: &[f64], min_prominence: f64) -> (Vec<f64>, Vec<f64>) {
    let refine = |i: usize| {
        let (y0, y1, y2) = (y[i - 1], y[i], y[i + 1]);
        let curv = y0 - 2.0 * y1 + y2;
        if curv != 0.0 {
            let s = (y0 - y2) / (2.0 * curv);
            y1 - (y0 - y2) * s / 4.0
        } else {
            y1
        }
    };
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    if y.len() < 3 {
        return (maxima, minima);
    }
    let (mut hi, mut lo) = (0usize, 0usize);
    let mut seeking_max = true;
    for i in 1..y.len() {
        if y[i] > y[hi] {
            hi = i;
        }
        if y[i] < y[lo] {
            lo = i;
        }
        if seeking_max && y[i] < y[hi] - min_prominence {
            if hi > 0 {
                maxima.push(refine(hi));
            }
            seeking_max = false;
            lo = i;
        } else if !seeking_max && y[i] > y[lo] + min_prominence {
            if lo > 0 {
                minima.push(refine(lo));
            }
            seeking_max = true;
            hi = i;
        }
    }
    (maxima, minima)
}

/// Number of groups after sorting and splitting wherever consecutive values
/// differ by more than `tol`.
pub fn count_clusters(values: &[f64], tol: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    1 + v.windows(2).filter(|w| w[1] - w[0] > tol).count()
}

/// Maxima levels above which a row is labelled chaotic.
pub const CHAOS_CLUSTERS: usize = 8;
pub const CLUSTER_TOL: f64 = 0.01;
/// Peak-to-peak amplitude below which the tail counts as an equilibrium.
pub const EQUILIBRIUM_SPREAD: f64 = 1e-4;
/// Default extremum prominence, as a fraction of the tail's peak-to-peak amplitude.
pub const MIN_PROMINENCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub history: f64,
    pub t_transient: f64,
    pub t_measure: f64,
    pub dt: f64,
    /// Relative prominence passed to [`local_extrema`].
    pub min_prominence: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            history: 0.9,
            t_transient: 200.0,
            t_measure: 100.0,
            dt: 0.01,
            min_prominence: MIN_PROMINENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagramRow {
    pub tau: f64,
    /// Maxima followed by minima; a single value for an equilibrium.
    pub extrema: Vec<f64>,
    pub maxima: Vec<f64>,
    pub diverged: bool,
}

impl DiagramRow {
    pub fn clusters(&self) -> usize {
        count_clusters(&self.maxima, CLUSTER_TOL)
    }

    pub fn is_equilibrium(&self) -> bool {
        !self.diverged && self.extrema.len() == 1
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BifurcationDiagram {
    pub rows: Vec<DiagramRow>,
}

impl BifurcationDiagram {
    /// Bracket `(tau_lo, tau_hi)` of adjacent rows where the maxima cluster
    /// count first goes from `from` to `to`.
    pub fn transition(&self, from: usize, to: usize) -> Option<(f64, f64)> {
        self.rows
            .windows(2)
            .find(|w| !w[0].diverged && !w[1].diverged && w[0].clusters() == from && w[1].clusters() == to)
            .map(|w| (w[0].tau, w[1].tau))
    }

    /// Last equilibrium row followed by an oscillating one.
    pub fn onset(&self) -> Option<(f64, f64)> {
        self.rows
            .windows(2)
            .find(|w| w[0].is_equilibrium() && !w[1].diverged && !w[1].is_equilibrium())
            .map(|w| (w[0].tau, w[1].tau))
    }

    /// First delay with more than [`CHAOS_CLUSTERS`] maxima levels.
    pub fn chaos_onset(&self) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| !r.diverged && r.clusters() > CHAOS_CLUSTERS)
            .map(|r| r.tau)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau,extremum")?;
        for r in &self.rows {
            for e in &r.extrema {
                writeln!(w, "{},{}", csvfmt::time(r.tau), csvfmt::value(*e))?;
            }
        }
        Ok(())
    }
}

/// Evenly spaced grid with `steps` points on `[lo, hi]`.
pub fn tau_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

fn scan_one<R: DelayedRhs>(rhs: &R, tau: f64, cfg: &ScanConfig) -> Result<DiagramRow> {
    let tau_max = rhs.delays().iter().cloned().fold(0.0, f64::max);
    let history = HistorySpec::constant(&vec![cfg.history; rhs.dim()], tau_max);
    let dt = effective_dt(cfg.dt, rhs.delays());
    let traj = match simulate_dde(rhs, &history, cfg.t_transient + cfg.t_measure, dt) {
        Ok(t) => t,
        Err(e) if e.is_numerical() => {
            return Ok(DiagramRow {
                tau,
                extrema: vec![],
                maxima: vec![],
                diverged: true,
            })
        }
        Err(e) => return Err(e),
    };
    let (maxima, minima) = steady_extrema(&traj, cfg.t_transient, cfg.min_prominence);
    let mut extrema = maxima.clone();
    extrema.extend(minima);
    Ok(DiagramRow {
        tau,
        extrema,
        maxima,
        diverged: false,
    })
}

/// Maxima and minima of the first component for `t >= t_from`, skipping
/// extrema less prominent than `min_prominence` times the peak-to-peak
/// amplitude. A tail flatter than [`EQUILIBRIUM_SPREAD`] yields its final
/// value as its only maximum.
pub fn steady_extrema(traj: &DenseTrajectory, t_from: f64, min_prominence: f64) -> (Vec<f64>, Vec<f64>) {
    let x = traj.component(0);
    let first = ((t_from - traj.t0) / traj.dt - 1e-9).ceil().max(0.0) as usize;
    let tail = &x[first.min(x.len())..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    match tail.last() {
        None => (vec![], vec![]),
        Some(&level) if hi - lo < EQUILIBRIUM_SPREAD => (vec![level], vec![]),
        Some(_) => local_extrema(tail, min_prominence * (hi - lo)),
    }
}

/// Steady-state extrema of the first state component for each delay in
/// `taus`; `make(tau)` builds the system at that delay. Rows stay in `taus`
/// order; a diverging delay is flagged and the scan continues.
pub fn bifurcation_scan<R, B>(make: B, taus: &[f64], cfg: &ScanConfig) -> Result<BifurcationDiagram>
where
    R: DelayedRhs,
    B: Fn(f64) -> Result<R> + Sync,
{
    if taus.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("tau grid must be strictly increasing".into()));
    }
    let rows = taus
        .par_iter()
        .map(|&tau| scan_one(&make(tau)?, tau, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(BifurcationDiagram { rows })
}

/// Symmetric Hausdorff distance between two finite point sets on the line;
/// infinite when exactly one is empty.
pub fn hausdorff(a: &[f64], b: &[f64]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let directed = |p: &[f64], q: &[f64]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Per-delay Hausdorff distance between diagrams computed on the same grid.
pub fn compare_diagrams(a: &BifurcationDiagram, b: &BifurcationDiagram) -> Result<Vec<(f64, f64)>> {
    if a.rows.len() != b.rows.len() {
        return Err(Error::DimensionMismatch {
            expected: a.rows.len(),
            got: b.rows.len(),
        });
    }
    Ok(a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(r, s)| (r.tau, hausdorff(&r.extrema, &s.extrema)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: f64,
    pub x_delayed: f64,
    pub truth: f64,
    pub model: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub x_range: (f64, f64),
    pub delayed_range: (f64, f64),
    pub resolution: (usize, usize),
    pub points: Vec<SurfacePoint>,
}

impl SurfaceGrid {
    pub fn mean_abs_error(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().map(|p| p.error.abs()).sum::<f64>() / self.points.len() as f64
    }

    pub fn max_abs_error(&self) -> f64 {
        self.points.iter().map(|p| p.error.abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,x_delayed,truth,model,error")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                csvfmt::value(p.x),
                csvfmt::value(p.x_delayed),
                csvfmt::value(p.truth),
                csvfmt::value(p.model),
                csvfmt::value(p.error)
            )?;
        }
        Ok(())
    }
}

/// Compares a scalar model with delays `(0, tau)` against `truth(x, x_delayed)`
/// on a `resolution.0 x resolution.1` grid; a single point sits at the lower
/// bounds.
pub fn surface_error<F: DelayMap>(
    truth: impl Fn(f64, f64) -> f64,
    model: &NddeModel<F>,
    x_range: (f64, f64),
    delayed_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<SurfaceGrid> {
    if model.delays.len() != 2 || model.delays[0] != 0.0 || model.dim() != 1 {
        return Err(Error::InvalidParameter(
            "surface needs a scalar model with two delays and tau_1 = 0".into(),
        ));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::InvalidParameter("surface resolution must be positive".into()));
    }
    let xs = tau_grid(x_range.0, x_range.1, resolution.0);
    let vs = tau_grid(delayed_range.0, delayed_range.1, resolution.1);
    let mut points = Vec::with_capacity(xs.len() * vs.len());
    let mut out = [0.0];
    for &x in &xs {
        for &v in &vs {
            let t = truth(x, v);
            model.eval(&[x], &[x, v], &mut out);
            points.push(SurfacePoint {
                x,
                x_delayed: v,
                truth: t,
                model: out[0],
                error: out[0] - t,
            });
        }
    }
    Ok(SurfaceGrid {
        x_range,
        delayed_range,
        resolution,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dde::{mg_rhs, MackeyGlass};
    use crate::discretization::HistoryGrid;
    use crate::mlp::{init_glorot, MackeyGlassMap};
    use crate::node::node_rhs;

    fn exact_model(tau: f64) -> NddeModel<MackeyGlassMap> {
        NddeModel::new(MackeyGlassMap(MgParams::default()), vec![0.0, tau]).unwrap()
    }

    #[test]
    fn hopf_oracle_values() {
        let hp = hopf_oracle(&MgParams::default()).unwrap();
        assert!((hp.equilibrium - 1.0).abs() < 1e-15);
        assert_eq!(hp.a, -2.0);
        assert!((hp.b + 7.65).abs() < 1e-12);
        assert!((hp.omega - 7.38394).abs() < 1e-5);
        assert!((hp.tau_c - 0.2486).abs() < 1e-4, "{}", hp.tau_c);
        // the root satisfies the characteristic equation
        let (c, s) = ((hp.omega * hp.tau_c).cos(), (hp.omega * hp.tau_c).sin());
        assert!((hp.a + hp.b * c).abs() < 1e-12);
        assert!((hp.omega + hp.b * s).abs() < 1e-12);
    }

    #[test]
    fn hopf_oracle_rejects_weak_feedback() {
        let p = MgParams {
            delta: 2.0,
            ..MgParams::default()
        };
        assert!(matches!(hopf_oracle(&p), Err(Error::NoHopf { .. })));
    }

    #[test]
    fn extracted_exact_model_has_equilibrium_at_one() {
        let m = exact_model(1.0);
        let mut out = [f64::NAN];
        m.eval(&[1.0], &[1.0, 1.0], &mut out);
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn extracted_model_matches_first_node_block_on_grid_delays() {
        let net = init_glorot(3, &[2, 5, 5, 1]).unwrap();
        let sys = NodeSystem::new(net, vec![0.0, 0.35], 1, 10, 0.05).unwrap();
        let x = HistoryGrid::from_signal(1, 10, 0.05, 0.0, |t| vec![1.0 + 0.2 * (3.0 * t).sin()]);
        let m = extract_ndde(&sys).unwrap();
        let mut out = [0.0];
        m.eval(x.block(0), &[x.block(0)[0], x.block(7)[0]], &mut out);
        assert_eq!(out[0], node_rhs(&sys, &x).unwrap()[0]);
    }

    #[test]
    fn small_delay_exact_model_settles_at_one() {
        let m = exact_model(0.1);
        let traj = simulate_ndde(&m, &HistorySpec::scalar(0.9, 0.1), 50.0, 0.01).unwrap();
        assert!((traj.value_at(50.0)[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_network_freezes_the_history() {
        let net = MlpParameters::zeros(&[2, 5, 5, 1], false).unwrap();
        let m = NddeModel::new(net, vec![0.0, 0.5]).unwrap();
        let traj = simulate_ndde(&m, &HistorySpec::scalar(0.37, 0.5), 5.0, 0.05).unwrap();
        assert!(traj.component(0).iter().all(|&v| v == 0.37));
    }

    #[test]
    fn extrema_of_a_sine() {
        let y: Vec<f64> = (0..=5000)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 * 0.001).sin())
            .collect();
        let (maxima, minima) = local_extrema(&y, 0.0);
        assert_eq!(maxima.len(), 5);
        assert_eq!(minima.len(), 5);
        assert!(maxima.iter().all(|m| (m - 1.0).abs() < 1e-4));
        assert_eq!(count_clusters(&maxima, CLUSTER_TOL), 1);
    }

    #[test]
    fn quadratic_refinement_is_exact_for_parabolas() {
        let y: Vec<f64> = (0..3).map(|k| 2.0 - (k as f64 - 0.7).powi(2)).collect();
        let (maxima, _) = local_extrema(&y, 0.0);
        assert!((maxima[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn small_wiggles_are_skipped() {
        // a large oscillation with a shallow notch near each crest
        let y: Vec<f64> = (0..=4000)
            .map(|k| {
                let t = k as f64 * 0.001;
                (2.0 * std::f64::consts::PI * t).sin() + 0.02 * (40.0 * std::f64::consts::PI * t).sin()
            })
            .collect();
        let (all, _) = local_extrema(&y, 0.0);
        let (maxima, minima) = local_extrema(&y, 0.2);
        assert!(all.len() > 4);
        assert_eq!(maxima.len(), 4);
        assert_eq!(minima.len(), 4);
    }

    #[test]
    fn clusters_split_on_gaps() {
        assert_eq!(count_clusters(&[1.0, 1.005, 1.2, 1.203, 1.5], 0.01), 3);
        assert_eq!(count_clusters(&[], 0.01), 0);
    }

    #[test]
    fn ground_truth_equilibrium_below_onset() {
        let p = MgParams::default();
        let diag = bifurcation_scan(|t| MackeyGlass::new(p.with_tau(t)), &[0.0, 0.1], &ScanConfig::default()).unwrap();
        for r in &diag.rows {
            assert_eq!(r.extrema.len(), 1);
            assert!((r.extrema[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scan_rejects_unsorted_grid() {
        let p = MgParams::default();
        assert!(bifurcation_scan(|t| MackeyGlass::new(p.with_tau(t)), &[0.2, 0.1], &ScanConfig::default()).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&[1.0], &[1.0]), 0.0);
        assert!((hausdorff(&[1.0, 2.0], &[1.1]) - 0.9).abs() < 1e-12);
        assert!(hausdorff(&[], &[1.0]).is_infinite());
    }

    #[test]
    fn surface_against_itself_is_zero() {
        let p = MgParams::default();
        let grid = surface_error(|x, v| mg_rhs(x, v, &p).unwrap(), &exact_model(1.0), (0.2, 1.5), (0.2, 1.5), (7, 9)).unwrap();
        assert_eq!(grid.points.len(), 63);
        assert!(grid.max_abs_error() < 1e-12);
    }

    #[test]
    fn single_point_surface() {
        let net = init_glorot(1, &[2, 5, 5, 1]).unwrap();
        let m = NddeModel::new(net.clone(), vec![0.0, 1.0]).unwrap();
        let grid = surface_error(|x, v| x * v, &m, (0.3, 1.0), (0.4, 1.0), (1, 1)).unwrap();
        assert_eq!(grid.points.len(), 1);
        let pt = grid.points[0];
        assert_eq!((pt.x, pt.x_delayed), (0.3, 0.4));
        assert_eq!(pt.error, net.eval(&[0.3, 0.4])[0] - 0.12);
    }

    #[test]
    fn tau_grid_endpoints() {
        assert_eq!(tau_grid(0.0, 2.0, 201).len(), 201);
        assert_eq!(tau_grid(0.0, 2.0, 201)[200], 2.0);
        assert_eq!(tau_grid(0.3, 2.0, 1), vec![0.3]);
    }
}
