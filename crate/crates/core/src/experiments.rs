//! Monte Carlo estimates of the expansion probability, grid sweeps over
//! `(theta, rho)`, and the two scaling studies.
//!
//! Every replicate draws its seeds from the master seed through
//! [`derive_seed`], and results are gathered into fixed slots, so output is
//! identical for any size of the rayon pool the caller installs.

use std::io::{self, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run, EngineError, EventStream, InitialCondition, Params, StoppingRule};
use crate::engine::{run_mixing_only, DEFAULT_EVENT_CAP};
use crate::observables::Outcome;
use crate::seed::{derive_seed, TAG_DIAGNOSTIC, TAG_EVENTS, TAG_INIT};
use crate::theory::{dispersion_scale, TheoryError};
use crate::topology::{
    build_circulant, build_complete, build_ring, read_edge_list, Graph, TopologyError,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(
        "replicate panicked in cell {cell}, replicate {replicate}, seed {seed:#018x}: {message}"
    )]
    Panic {
        cell: String,
        replicate: u64,
        seed: u64,
        message: String,
    },
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid(msg.into())
}

/// Graph family selector, resolved against a vertex count.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Ring,
    Complete,
    Circulant(usize),
    File(PathBuf),
}

impl TopologySpec {
    /// Builds the graph. For [`TopologySpec::File`] the vertex count comes
    /// from the file and `n` is checked against it when nonzero.
    pub fn build(&self, n: usize) -> Result<Graph, ExperimentError> {
        Ok(match self {
            TopologySpec::Ring => build_ring(n)?,
            TopologySpec::Complete => build_complete(n)?,
            TopologySpec::Circulant(d) => build_circulant(n, *d)?,
            TopologySpec::File(path) => {
                let g = read_edge_list(path)?;
                if n != 0 && g.n_vertices() != n {
                    return Err(invalid(format!(
                        "edge file has {} vertices but N = {n}",
                        g.n_vertices()
                    )));
                }
                g
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            TopologySpec::Ring => "ring".into(),
            TopologySpec::Complete => "complete".into(),
            TopologySpec::Circulant(d) => format!("circulant({d})"),
            TopologySpec::File(p) => format!("file({})", p.display()),
        }
    }
}

/// Initial condition family. Bernoulli draws use the replicate's init seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    SingleOccupied(usize),
    Bernoulli(f64),
}

impl InitSpec {
    fn realize(self, init_seed: u64) -> InitialCondition {
        match self {
            InitSpec::SingleOccupied(v) => InitialCondition::SingleOccupied(v),
            InitSpec::Bernoulli(rho) => InitialCondition::ProductBernoulli {
                rho,
                seed: init_seed,
            },
        }
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // At k = 0 and k = n one endpoint is exactly 0 or 1; the formula only
    // reaches it up to rounding.
    let lo = if k == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// Pooled two-proportion z statistic for `p1 - p2`; 0 when the pooled
/// variance vanishes (both samples all-success or all-failure).
pub fn two_proportion_z(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    if n1 == 0 || n2 == 0 {
        return 0.0;
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (p1 - p2) / se
    }
}

/// Outcome tallies for one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Estimate {
    pub n_rep: u64,
    pub n_expand: u64,
    pub n_extinct: u64,
    pub n_undecided: u64,
    /// Events simulated to produce the estimate.
    pub events: u64,
}

impl Estimate {
    pub fn push(&mut self, outcome: Outcome) {
        self.n_rep += 1;
        match outcome {
            Outcome::Expansion => self.n_expand += 1,
            Outcome::Extinction => self.n_extinct += 1,
            Outcome::Undecided => self.n_undecided += 1,
        }
    }

    pub fn decided(&self) -> u64 {
        self.n_expand + self.n_extinct
    }

    /// Expansions over decided runs; `None` when every run is undecided.
    pub fn p_hat(&self) -> Option<f64> {
        let d = self.decided();
        (d > 0).then(|| self.n_expand as f64 / d as f64)
    }

    /// Expansions over all runs, undecided runs counted as non-expansions.
    pub fn p_hat_all(&self) -> f64 {
        if self.n_rep == 0 {
            0.0
        } else {
            self.n_expand as f64 / self.n_rep as f64
        }
    }

    pub fn is_valid(&self) -> bool {
        self.decided() > 0
    }

    /// 95% Wilson interval on decided runs.
    pub fn interval(&self) -> (f64, f64) {
        wilson_interval(self.n_expand, self.decided(), Z95)
    }

    pub fn half_width(&self) -> f64 {
        let (lo, hi) = self.interval();
        (hi - lo) / 2.0
    }

    /// Standard error of `p_hat` (0 when invalid).
    pub fn std_err(&self) -> f64 {
        match self.p_hat() {
            Some(p) => (p * (1.0 - p) / self.decided() as f64).sqrt(),
            None => 0.0,
        }
    }
}

/// Result of one replicate of the full process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    pub outcome: Outcome,
    pub t_absorb: Option<f64>,
    pub events: u64,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}

/// Runs `f` and converts a panic into [`ExperimentError::Panic`].
fn guarded<T>(
    cell: impl FnOnce() -> String,
    replicate: u64,
    seed: u64,
    f: impl FnOnce() -> Result<T, ExperimentError>,
) -> Result<T, ExperimentError> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => Err(ExperimentError::Panic {
            cell: cell(),
            replicate,
            seed,
            message: panic_message(payload.as_ref()),
        }),
    }
}

/// First error in index order, so failures are reported deterministically.
fn collect_ordered<T>(results: Vec<Result<T, ExperimentError>>) -> Result<Vec<T>, ExperimentError> {
    results.into_iter().collect()
}

fn replicate_full(
    graph: &Graph,
    params: Params,
    init: InitialCondition,
    event_seed: u64,
    event_cap: u64,
) -> Result<ReplicateOutcome, ExperimentError> {
    let mut stream = EventStream::full(graph, event_seed);
    let rec = run(
        &init,
        params,
        &mut stream,
        StoppingRule::Absorption { event_cap },
    )?;
    Ok(ReplicateOutcome {
        outcome: rec.outcome,
        t_absorb: rec.t_absorb,
        events: rec.event_count,
    })
}

/// Independent replicates of the full process. Replicate `k` uses
/// `derive_seed(seed, [k, TAG_EVENTS])` for its events and
/// `derive_seed(seed, [k, TAG_INIT])` for its initial draws.
pub fn run_replicates(
    graph: &Graph,
    params: Params,
    init: InitSpec,
    replicates: u64,
    seed: u64,
    event_cap: u64,
) -> Result<Vec<ReplicateOutcome>, ExperimentError> {
    if replicates == 0 {
        return Err(invalid("replicates must be at least 1"));
    }
    let results: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let event_seed = derive_seed(seed, &[k, TAG_EVENTS]);
            let init = init.realize(derive_seed(seed, &[k, TAG_INIT]));
            guarded(
                || format!("theta={} mu={} init={init:?}", params.theta(), params.mu()),
                k,
                event_seed,
                || replicate_full(graph, params, init.clone(), event_seed, event_cap),
            )
        })
        .collect();
    collect_ordered(results)
}

/// Estimates the expansion probability from `replicates` independent runs
/// to absorption.
pub fn estimate_expansion(
    graph: &Graph,
    params: Params,
    init: InitSpec,
    replicates: u64,
    seed: u64,
    event_cap: u64,
) -> Result<Estimate, ExperimentError> {
    let runs = run_replicates(graph, params, init, replicates, seed, event_cap)?;
    Ok(tally(&runs))
}

fn tally(runs: &[ReplicateOutcome]) -> Estimate {
    let mut est = Estimate::default();
    for r in runs {
        est.push(r.outcome);
        est.events += r.events;
    }
    est
}

/// How the `(theta, rho)` grid is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Replicate `k` uses one event stream and one set of initial uniforms
    /// for every cell, so estimates are exactly monotone in both axes.
    Coupled,
    /// Fresh seeds for every `(cell, replicate)`.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub mu: f64,
    pub theta_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub replicates: u64,
    pub master_seed: u64,
    pub event_cap: u64,
    pub mode: SweepMode,
}

impl SweepSpec {
    /// `n_theta x n_rho` grid at cell midpoints `(i + 1/2) / n`.
    pub fn midpoint_grid(
        mu: f64,
        n_theta: usize,
        n_rho: usize,
        replicates: u64,
        master_seed: u64,
    ) -> Self {
        let mid = |n: usize| (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        SweepSpec {
            mu,
            theta_grid: mid(n_theta),
            rho_grid: mid(n_rho),
            replicates,
            master_seed,
            event_cap: DEFAULT_EVENT_CAP,
            mode: SweepMode::Coupled,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        Params::new(0.5, self.mu)?;
        for (name, grid) in [("theta", &self.theta_grid), ("rho", &self.rho_grid)] {
            if grid.is_empty() {
                return Err(invalid(format!("{name} grid is empty")));
            }
            if let Some(v) = grid.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(invalid(format!("{name} grid value {v} is outside (0, 1)")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("{name} grid must be strictly increasing")));
            }
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        Ok(())
    }
}

/// Per-cell estimates, indexed `rho`-major: cell `(t, r)` is at
/// `r * n_theta + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub theta_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub cells: Vec<Estimate>,
    /// Full-process runs actually simulated.
    pub runs: u64,
}

impl SweepResult {
    pub fn cell(&self, t: usize, r: usize) -> &Estimate {
        &self.cells[r * self.theta_grid.len() + t]
    }

    pub fn events(&self) -> u64 {
        self.cells.iter().map(|c| c.events).sum()
    }

    pub fn undecided(&self) -> u64 {
        self.cells.iter().map(|c| c.n_undecided).sum()
    }

    /// For each `rho`, the `theta` at which `p_hat` crosses 1/2, linearly
    /// interpolated between neighbouring cells. `None` when the row never
    /// crosses inside the grid.
    pub fn half_level_set(&self) -> Vec<(f64, Option<f64>)> {
        let nt = self.theta_grid.len();
        self.rho_grid
            .iter()
            .enumerate()
            .map(|(r, &rho)| {
                let ps: Vec<Option<f64>> = (0..nt).map(|t| self.cell(t, r).p_hat()).collect();
                let crossing = (1..nt).find_map(|t| match (ps[t - 1], ps[t]) {
                    (Some(a), Some(b)) if a >= 0.5 && b < 0.5 => {
                        let (x0, x1) = (self.theta_grid[t - 1], self.theta_grid[t]);
                        Some(x0 + (a - 0.5) / (a - b) * (x1 - x0))
                    }
                    _ => None,
                });
                (rho, crossing)
            })
            .collect()
    }
}

/// Outcome of one coupled replicate for every cell; also the events spent.
struct CoupledReplicate {
    outcomes: Vec<Outcome>,
    events: u64,
    runs: u64,
}

/// One replicate of the coupled sweep. For fixed seeds, expansion is
/// nonincreasing in `theta` and nondecreasing in `rho`, so each row is a
/// step function found by bisection, and the step can only move right as
/// `rho` grows. A row containing an undecided probe is scanned in full.
fn coupled_replicate(
    graph: &Graph,
    spec: &SweepSpec,
    event_seed: u64,
    init_seed: u64,
) -> Result<CoupledReplicate, ExperimentError> {
    let nt = spec.theta_grid.len();
    let mut out = CoupledReplicate {
        outcomes: Vec::with_capacity(nt * spec.rho_grid.len()),
        events: 0,
        runs: 0,
    };
    let mut carry = 0usize;
    for &rho in &spec.rho_grid {
        let init = InitialCondition::ProductBernoulli {
            rho,
            seed: init_seed,
        };
        let mut probe = |t: usize| -> Result<Outcome, ExperimentError> {
            let params = Params::new(spec.theta_grid[t], spec.mu)?;
            let r = replicate_full(graph, params, init.clone(), event_seed, spec.event_cap)?;
            out.events += r.events;
            out.runs += 1;
            Ok(r.outcome)
        };
        let (mut lo, mut hi) = (carry, nt);
        let mut row: Option<Vec<Outcome>> = None;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match probe(mid)? {
                Outcome::Expansion => lo = mid + 1,
                Outcome::Extinction => hi = mid,
                Outcome::Undecided => {
                    row = Some((0..nt).map(&mut probe).collect::<Result<_, _>>()?);
                    break;
                }
            }
        }
        match row {
            Some(row) => {
                carry = 0;
                out.outcomes.extend(row);
            }
            None => {
                carry = lo;
                out.outcomes.extend((0..nt).map(|t| {
                    if t < lo {
                        Outcome::Expansion
                    } else {
                        Outcome::Extinction
                    }
                }));
            }
        }
    }
    Ok(out)
}

/// Estimates the expansion probability on every `(theta, rho)` cell with a
/// product Bernoulli start.
pub fn sweep(graph: &Graph, spec: &SweepSpec) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let (nt, nr) = (spec.theta_grid.len(), spec.rho_grid.len());
    let mut cells = vec![Estimate::default(); nt * nr];
    let mut runs = 0u64;
    match spec.mode {
        SweepMode::Coupled => {
            let reps: Vec<_> = (0..spec.replicates)
                .into_par_iter()
                .map(|k| {
                    let event_seed = derive_seed(spec.master_seed, &[k, TAG_EVENTS]);
                    let init_seed = derive_seed(spec.master_seed, &[k, TAG_INIT]);
                    guarded(
                        || "coupled row sweep".into(),
                        k,
                        event_seed,
                        || coupled_replicate(graph, spec, event_seed, init_seed),
                    )
                })
                .collect();
            for rep in collect_ordered(reps)? {
                for (cell, &o) in cells.iter_mut().zip(&rep.outcomes) {
                    cell.push(o);
                }
                // attribute the replicate's work to its first cell so totals add up
                cells[0].events += rep.events;
                runs += rep.runs;
            }
        }
        SweepMode::Independent => {
            let jobs: Vec<(usize, u64)> = (0..nt * nr)
                .flat_map(|c| (0..spec.replicates).map(move |k| (c, k)))
                .collect();
            let results: Vec<_> = jobs
                .par_iter()
                .map(|&(c, k)| {
                    let (t, r) = (c % nt, c / nt);
                    let event_seed = derive_seed(spec.master_seed, &[c as u64, k, TAG_EVENTS]);
                    let init_seed = derive_seed(spec.master_seed, &[c as u64, k, TAG_INIT]);
                    let (theta, rho) = (spec.theta_grid[t], spec.rho_grid[r]);
                    guarded(
                        || format!("theta={theta} rho={rho}"),
                        k,
                        event_seed,
                        || {
                            let params = Params::new(theta, spec.mu)?;
                            let init = InitialCondition::ProductBernoulli {
                                rho,
                                seed: init_seed,
                            };
                            replicate_full(graph, params, init, event_seed, spec.event_cap)
                        },
                    )
                })
                .collect();
            for (&(c, _), r) in jobs.iter().zip(collect_ordered(results)?) {
                cells[c].push(r.outcome);
                cells[c].events += r.events;
                runs += 1;
            }
        }
    }
    Ok(SweepResult {
        theta_grid: spec.theta_grid.clone(),
        rho_grid: spec.rho_grid.clone(),
        cells,
        runs,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const GRID_HEADER: &str =
    "theta,rho,n_rep,n_expand,n_extinct,n_undecided,p_hat,ci_lo,ci_hi,p_hat_all";

/// Writes the grid as CSV: one row per cell, `rho`-major. `p_hat` and the
/// interval are over decided runs and left empty when none decided;
/// `p_hat_all` counts undecided runs as non-expansions.
pub fn write_grid_csv<W: Write>(res: &SweepResult, mut w: W) -> io::Result<()> {
    writeln!(w, "{GRID_HEADER}")?;
    for (r, rho) in res.rho_grid.iter().enumerate() {
        for (t, theta) in res.theta_grid.iter().enumerate() {
            let c = res.cell(t, r);
            let (lo, hi) = if c.is_valid() {
                (Some(c.interval().0), Some(c.interval().1))
            } else {
                (None, None)
            };
            writeln!(
                w,
                "{theta},{rho},{},{},{},{},{},{},{},{}",
                c.n_rep,
                c.n_expand,
                c.n_extinct,
                c.n_undecided,
                fmt_opt(c.p_hat()),
                fmt_opt(lo),
                fmt_opt(hi),
                c.p_hat_all()
            )?;
        }
    }
    Ok(())
}

/// Gnuplot script drawing the `p_hat` heatmap of `csv_name` into
/// `heatmap.png`.
pub fn write_gnuplot<W: Write>(csv_name: &str, title: &str, mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "# gnuplot {csv_name}: heatmap of the estimated expansion probability"
    )?;
    writeln!(w, "set datafile separator ','")?;
    writeln!(w, "set terminal pngcairo size 800,700")?;
    writeln!(w, "set output 'heatmap.png'")?;
    writeln!(w, "set title '{title}'")?;
    writeln!(w, "set xlabel 'theta'")?;
    writeln!(w, "set ylabel 'rho'")?;
    writeln!(w, "set xrange [0:1]")?;
    writeln!(w, "set yrange [0:1]")?;
    writeln!(w, "set cbrange [0:1]")?;
    writeln!(w, "set palette defined (0 'black', 0.5 'red', 1 'yellow')")?;
    writeln!(w, "set view map")?;
    writeln!(
        w,
        "plot '{csv_name}' every ::1 using 1:2:7 with image notitle"
    )?;
    Ok(())
}

/// One line of a scaling table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub estimate: Estimate,
    /// Mean absorption time over extinct runs.
    pub mean_t_extinct: Option<f64>,
}

/// Mixing-only runs on `complete(N)` stopped at `T_N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingDiagnostic {
    pub n: usize,
    pub t_n: f64,
    pub replicates: u64,
    /// Runs with a collision by `T_N`.
    pub collided: u64,
    /// Runs that reached the lower configuration by `T_N`.
    pub dispersed: u64,
}

impl MixingDiagnostic {
    pub fn frac_collided(&self) -> f64 {
        self.collided as f64 / self.replicates as f64
    }

    pub fn frac_dispersed(&self) -> f64 {
        self.dispersed as f64 / self.replicates as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub theta: f64,
    pub mu: f64,
    pub rows: Vec<ScalingRow>,
    pub diagnostics: Vec<MixingDiagnostic>,
}

impl ScalingTable {
    fn p(&self, i: usize) -> f64 {
        self.rows[i].estimate.p_hat().unwrap_or(f64::NAN)
    }

    /// `p_hat` strictly decreases along the table.
    pub fn strictly_decreasing(&self) -> bool {
        (1..self.rows.len()).all(|i| self.p(i) < self.p(i - 1))
    }

    /// z statistic for `p_hat(row i) - p_hat(row j)`.
    pub fn z(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.rows[i].estimate, &self.rows[j].estimate);
        two_proportion_z(a.n_expand, a.decided(), b.n_expand, b.decided())
    }

    /// The drop from row `i` to row `j` is significant at the one-sided
    /// 95% level.
    pub fn significant_decrease(&self, i: usize, j: usize) -> bool {
        self.z(i, j) > Z95
    }

    /// Every pair of rows agrees within `k` pooled standard errors.
    pub fn pairwise_within(&self, k: f64) -> bool {
        let n = self.rows.len();
        (0..n).all(|i| (i + 1..n).all(|j| self.z(i, j).abs() <= k))
    }
}

fn scaling_rows(
    topology: &TopologySpec,
    theta: f64,
    mu: f64,
    n_list: &[usize],
    replicates: u64,
    seed: u64,
    event_cap: u64,
) -> Result<Vec<ScalingRow>, ExperimentError> {
    let params = Params::new(theta, mu)?;
    if n_list.is_empty() {
        return Err(invalid("N list is empty"));
    }
    n_list
        .iter()
        .map(|&n| {
            let graph = topology.build(n)?;
            let runs = run_replicates(
                &graph,
                params,
                InitSpec::SingleOccupied(0),
                replicates,
                derive_seed(seed, &[n as u64]),
                event_cap,
            )?;
            let ext: Vec<f64> = runs
                .iter()
                .filter(|r| r.outcome == Outcome::Extinction)
                .filter_map(|r| r.t_absorb)
                .collect();
            let mean_t_extinct =
                (!ext.is_empty()).then(|| ext.iter().sum::<f64>() / ext.len() as f64);
            Ok(ScalingRow {
                n,
                estimate: tally(&runs),
                mean_t_extinct,
            })
        })
        .collect()
}

/// Mixing-only process on `complete(n)` from one occupied vertex, run to
/// time `T_N`; counts runs that collided and runs that dispersed by then.
pub fn mixing_diagnostic(
    theta: f64,
    mu: f64,
    n: usize,
    replicates: u64,
    seed: u64,
) -> Result<MixingDiagnostic, ExperimentError> {
    let params = Params::new(theta, mu)?;
    let scale = dispersion_scale(theta, mu, n)?;
    let graph = build_complete(n)?;
    let results: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let event_seed = derive_seed(seed, &[n as u64, k, TAG_DIAGNOSTIC]);
            guarded(
                || format!("mixing-only complete({n})"),
                k,
                event_seed,
                || {
                    let mut stream = EventStream::mixing_only(&graph, event_seed);
                    let rec = run_mixing_only(
                        &InitialCondition::SingleOccupied(0),
                        params,
                        &mut stream,
                        StoppingRule::TimeCap(scale.t_n),
                    )?;
                    Ok((rec.tau_c.is_some(), rec.tau_d.is_some()))
                },
            )
        })
        .collect();
    let flags = collect_ordered(results)?;
    Ok(MixingDiagnostic {
        n,
        t_n: scale.t_n,
        replicates,
        collided: flags.iter().filter(|f| f.0).count() as u64,
        dispersed: flags.iter().filter(|f| f.1).count() as u64,
    })
}

/// Expansion from one occupied vertex on `complete(N)` for each `N`, plus
/// the mixing-only collision and dispersion diagnostic.
pub fn scaling_theorem1(
    theta: f64,
    mu: f64,
    n_list: &[usize],
    replicates: u64,
    seed: u64,
    event_cap: u64,
) -> Result<ScalingTable, ExperimentError> {
    let rows = scaling_rows(
        &TopologySpec::Complete,
        theta,
        mu,
        n_list,
        replicates,
        seed,
        event_cap,
    )?;
    let diagnostics = n_list
        .iter()
        .filter(|&&n| n >= 3)
        .map(|&n| mixing_diagnostic(theta, mu, n, replicates, seed))
        .collect::<Result<_, _>>()?;
    Ok(ScalingTable {
        theta,
        mu,
        rows,
        diagnostics,
    })
}

/// Expansion from one occupied vertex on `ring(N)` for each `N`.
pub fn scaling_theorem2(
    theta: f64,
    mu: f64,
    n_list: &[usize],
    replicates: u64,
    seed: u64,
    event_cap: u64,
) -> Result<ScalingTable, ExperimentError> {
    let rows = scaling_rows(
        &TopologySpec::Ring,
        theta,
        mu,
        n_list,
        replicates,
        seed,
        event_cap,
    )?;
    Ok(ScalingTable {
        theta,
        mu,
        rows,
        diagnostics: Vec::new(),
    })
}

pub const SCALING_HEADER: &str =
    "N,n_rep,n_expand,n_extinct,n_undecided,p_hat,ci_lo,ci_hi,p_hat_all,mean_t_extinct";
pub const DIAGNOSTIC_HEADER: &str =
    "N,T_N,n_rep,n_collided,n_dispersed,frac_collided,frac_dispersed";

pub fn write_scaling_csv<W: Write>(table: &ScalingTable, mut w: W) -> io::Result<()> {
    writeln!(w, "{SCALING_HEADER}")?;
    for row in &table.rows {
        let c = &row.estimate;
        let (lo, hi) = c.interval();
        let valid = c.is_valid();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            row.n,
            c.n_rep,
            c.n_expand,
            c.n_extinct,
            c.n_undecided,
            fmt_opt(c.p_hat()),
            fmt_opt(valid.then_some(lo)),
            fmt_opt(valid.then_some(hi)),
            c.p_hat_all(),
            fmt_opt(row.mean_t_extinct)
        )?;
    }
    Ok(())
}

pub fn write_diagnostic_csv<W: Write>(diags: &[MixingDiagnostic], mut w: W) -> io::Result<()> {
    writeln!(w, "{DIAGNOSTIC_HEADER}")?;
    for d in diags {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            d.n,
            d.t_n,
            d.replicates,
            d.collided,
            d.dispersed,
            d.frac_collided(),
            d.frac_dispersed()
        )?;
    }
    Ok(())
}

/// Worst deviations seen by [`coupling_check`] for one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSeedReport {
    pub replicate: u64,
    pub seed: u64,
    /// Events after which the lower-threshold replica failed to dominate.
    pub domination_violations: u64,
    /// Largest `|eta(x) - (1 - eta'(x))|` between a run and its mirror.
    pub max_mirror_error: f64,
    /// Largest `|mass_t - mass_0|` in the mixing-only process.
    pub max_mass_drift: f64,
}

/// Settings for [`coupling_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSpec {
    pub mu: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Occupation probability of the product Bernoulli start.
    pub rho: f64,
    pub replicates: u64,
    /// Events per seed.
    pub events: u64,
    pub master_seed: u64,
}

/// Checks the exact couplings after every one of `events` events, for each
/// of `replicates` seeds, starting from a product Bernoulli(`rho`) draw:
///
/// - thresholds `theta_lo < theta_hi` on one stream: the `theta_lo`
///   replica dominates;
/// - a run at `theta_lo` against its mirror: densities sum to one;
/// - the mixing-only process: total mass is conserved.
pub fn coupling_check(
    graph: &Graph,
    spec: &CouplingSpec,
) -> Result<Vec<CouplingSeedReport>, ExperimentError> {
    let CouplingSpec {
        mu,
        theta_lo,
        theta_hi,
        rho,
        replicates,
        events,
        master_seed,
    } = *spec;
    use crate::engine::{
        run_coupled_with, run_mirror_coupled_with, run_mixing_only_with, RunOptions,
    };

    let params = Params::new(theta_lo, mu)?;
    Params::new(theta_hi, mu)?;
    if theta_lo >= theta_hi {
        return Err(invalid("the lower threshold must be below the upper one"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(EngineError::Rho(rho).into());
    }
    let opts = RunOptions::new(StoppingRule::EventCap(events));
    let results: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(master_seed, &[k, TAG_EVENTS]);
            let init = InitialCondition::ProductBernoulli {
                rho,
                seed: derive_seed(master_seed, &[k, TAG_INIT]),
            };
            guarded(
                || format!("coupling rho={rho}"),
                k,
                seed,
                || {
                    let mut report = CouplingSeedReport {
                        replicate: k,
                        seed,
                        domination_violations: 0,
                        max_mirror_error: 0.0,
                        max_mass_drift: 0.0,
                    };
                    let mut stream = EventStream::full(graph, seed);
                    run_coupled_with(
                        &[init.clone(), init.clone()],
                        &[theta_lo, theta_hi],
                        params,
                        &mut stream,
                        &opts,
                        |_, _, ps| {
                            if !ps[0].config().dominates(ps[1].config()) {
                                report.domination_violations += 1;
                            }
                        },
                    )?;
                    let start = init.realize(graph.n_vertices())?;
                    let mut stream = EventStream::full(graph, seed);
                    run_mirror_coupled_with(&start, params, &mut stream, &opts, |_, _, ps| {
                        let a = ps[0].config().densities();
                        let b = ps[1].config().densities();
                        for (x, y) in a.iter().zip(b) {
                            report.max_mirror_error =
                                report.max_mirror_error.max((x + y - 1.0).abs());
                        }
                    })?;
                    let mass0 = start.mass();
                    let mut stream = EventStream::mixing_only(graph, seed);
                    run_mixing_only_with(&init, params, &mut stream, &opts, |_, _, p| {
                        report.max_mass_drift =
                            report.max_mass_drift.max((p.config().mass() - mass0).abs());
                    })?;
                    Ok(report)
                },
            )
        })
        .collect();
    collect_ordered(results)
}

pub const COUPLING_HEADER: &str =
    "replicate,seed,domination_violations,max_mirror_error,max_mass_drift";

pub fn write_coupling_csv<W: Write>(reports: &[CouplingSeedReport], mut w: W) -> io::Result<()> {
    writeln!(w, "{COUPLING_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.replicate, r.seed, r.domination_violations, r.max_mirror_error, r.max_mass_drift
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_coupled;
    use crate::engine::RunOptions;
    use crate::topology::Graph;

    #[test]
    fn wilson_bounds_solve_the_score_equation() {
        // the bounds are the roots of (p - k/n)^2 = z^2 p (1 - p) / n
        for &(k, n) in &[(50u64, 100u64), (3, 40), (97, 100), (1, 7)] {
            let (lo, hi) = wilson_interval(k, n, Z95);
            let ph = k as f64 / n as f64;
            for p in [lo, hi] {
                let resid = (p - ph).powi(2) - Z95 * Z95 * p * (1.0 - p) / n as f64;
                assert!(resid.abs() < 1e-12, "k={k} n={n} p={p}");
            }
            assert!(lo < ph && ph < hi);
        }
        let (lo, hi) = wilson_interval(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.25 && hi < 0.3);
        assert_eq!(wilson_interval(0, 0, Z95), (0.0, 1.0));
    }

    #[test]
    fn two_proportion_examples() {
        // pooled 0.5, se = sqrt(0.25 * 0.02)
        let z = two_proportion_z(60, 100, 40, 100);
        assert!((z - 0.2 / 0.005f64.sqrt()).abs() < 1e-12);
        assert!((two_proportion_z(10, 10, 0, 10) - 20f64.sqrt()).abs() < 1e-12);
        assert_eq!(two_proportion_z(0, 10, 0, 20), 0.0);
        assert_eq!(two_proportion_z(5, 5, 9, 9), 0.0);
    }

    #[test]
    fn edgeless_single_vertex_expands() {
        let g = Graph::empty(1).unwrap();
        let est = estimate_expansion(
            &g,
            Params::new(0.3, 0.2).unwrap(),
            InitSpec::SingleOccupied(0),
            50,
            1,
            1000,
        )
        .unwrap();
        assert_eq!(est.n_expand, 50);
        assert_eq!(est.p_hat(), Some(1.0));
        assert_eq!(est.events, 0);
    }

    #[test]
    fn all_undecided_is_invalid() {
        let g = build_ring(20).unwrap();
        let est = estimate_expansion(
            &g,
            Params::new(0.5, 0.2).unwrap(),
            InitSpec::Bernoulli(0.5),
            5,
            1,
            0,
        )
        .unwrap();
        assert_eq!(est.n_undecided, 5);
        assert!(!est.is_valid());
        assert_eq!(est.p_hat(), None);
        assert_eq!(est.p_hat_all(), 0.0);
    }

    #[test]
    fn bisection_matches_full_coupled_runs() {
        let g = build_ring(12).unwrap();
        let spec = SweepSpec::midpoint_grid(0.2, 9, 5, 12, 77);
        let res = sweep(&g, &spec).unwrap();
        for k in 0..spec.replicates {
            let event_seed = derive_seed(spec.master_seed, &[k, TAG_EVENTS]);
            let init_seed = derive_seed(spec.master_seed, &[k, TAG_INIT]);
            let bisected = coupled_replicate(&g, &spec, event_seed, init_seed).unwrap();
            for (r, &rho) in spec.rho_grid.iter().enumerate() {
                let inits = vec![
                    InitialCondition::ProductBernoulli {
                        rho,
                        seed: init_seed
                    };
                    spec.theta_grid.len()
                ];
                let mut stream = EventStream::full(&g, event_seed);
                let recs = run_coupled(
                    &inits,
                    &spec.theta_grid,
                    Params::new(0.5, spec.mu).unwrap(),
                    &mut stream,
                    &RunOptions::new(StoppingRule::default()),
                )
                .unwrap();
                for (t, rec) in recs.iter().enumerate() {
                    assert_eq!(
                        bisected.outcomes[r * spec.theta_grid.len() + t],
                        rec.outcome,
                        "k={k} r={r} t={t}"
                    );
                }
            }
        }
        // exact monotonicity of the coupled estimates
        for r in 0..spec.rho_grid.len() {
            for t in 1..spec.theta_grid.len() {
                assert!(res.cell(t, r).n_expand <= res.cell(t - 1, r).n_expand);
            }
        }
        for t in 0..spec.theta_grid.len() {
            for r in 1..spec.rho_grid.len() {
                assert!(res.cell(t, r).n_expand >= res.cell(t, r - 1).n_expand);
            }
        }
    }

    #[test]
    fn undecided_probe_falls_back_to_full_row() {
        let g = build_ring(30).unwrap();
        let mut spec = SweepSpec::midpoint_grid(0.2, 4, 2, 3, 5);
        spec.event_cap = 40;
        let res = sweep(&g, &spec).unwrap();
        assert!(res.undecided() > 0);
        for c in &res.cells {
            assert_eq!(c.n_rep, 3);
        }
    }

    #[test]
    fn independent_mode_fills_every_cell() {
        let g = build_complete(6).unwrap();
        let mut spec = SweepSpec::midpoint_grid(0.2, 3, 2, 4, 9);
        spec.mode = SweepMode::Independent;
        let res = sweep(&g, &spec).unwrap();
        assert_eq!(res.runs, 24);
        assert!(res.cells.iter().all(|c| c.n_rep == 4));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let g = build_ring(5).unwrap();
        let mut spec = SweepSpec::midpoint_grid(0.2, 3, 3, 1, 0);
        spec.theta_grid = vec![0.5, 0.3];
        assert!(sweep(&g, &spec).is_err());
        spec.theta_grid = vec![0.0, 0.3];
        assert!(sweep(&g, &spec).is_err());
        spec.theta_grid = vec![];
        assert!(sweep(&g, &spec).is_err());
        let mut spec = SweepSpec::midpoint_grid(0.7, 3, 3, 1, 0);
        assert!(sweep(&g, &spec).is_err());
        spec.mu = 0.2;
        spec.replicates = 0;
        assert!(sweep(&g, &spec).is_err());
    }

    #[test]
    fn level_set_interpolates() {
        let mk = |n_expand: u64| Estimate {
            n_rep: 10,
            n_expand,
            n_extinct: 10 - n_expand,
            n_undecided: 0,
            events: 0,
        };
        let res = SweepResult {
            theta_grid: vec![0.1, 0.3, 0.5],
            rho_grid: vec![0.5, 0.6],
            cells: vec![mk(10), mk(7), mk(2), mk(10), mk(10), mk(10)],
            runs: 0,
        };
        let ls = res.half_level_set();
        // 0.3 + (0.7 - 0.5) / (0.7 - 0.2) * 0.2
        assert!((ls[0].1.unwrap() - 0.38).abs() < 1e-12);
        assert_eq!(ls[1].1, None);
    }

    #[test]
    fn grid_csv_layout() {
        let g = build_complete(4).unwrap();
        let spec = SweepSpec::midpoint_grid(0.2, 2, 2, 3, 1);
        let res = sweep(&g, &spec).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], GRID_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.25,0.25,3,"));
        assert!(lines[2].starts_with("0.75,0.25,3,"));
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 10));
    }

    #[test]
    fn scaling_table_predicates() {
        let row = |n, k| ScalingRow {
            n,
            estimate: Estimate {
                n_rep: 100,
                n_expand: k,
                n_extinct: 100 - k,
                n_undecided: 0,
                events: 0,
            },
            mean_t_extinct: None,
        };
        let t = ScalingTable {
            theta: 0.1,
            mu: 0.2,
            rows: vec![row(10, 40), row(50, 20), row(200, 5)],
            diagnostics: vec![],
        };
        assert!(t.strictly_decreasing());
        assert!(t.significant_decrease(0, 2));
        assert!(!t.pairwise_within(3.0));
        let flat = ScalingTable {
            rows: vec![row(10, 40), row(50, 42), row(200, 39)],
            ..t
        };
        assert!(!flat.strictly_decreasing());
        assert!(flat.pairwise_within(3.0));
        assert!(!flat.significant_decrease(0, 2));
    }

    #[test]
    fn couplings_hold_on_short_runs() {
        let g = build_ring(10).unwrap();
        let spec = CouplingSpec {
            mu: 0.2,
            theta_lo: 0.3,
            theta_hi: 0.6,
            rho: 0.5,
            replicates: 4,
            events: 2000,
            master_seed: 11,
        };
        let reps = coupling_check(&g, &spec).unwrap();
        assert_eq!(reps.len(), 4);
        for r in &reps {
            assert_eq!(r.domination_violations, 0);
            assert!(r.max_mirror_error <= 1e-12);
            assert!(r.max_mass_drift <= 1e-9);
        }
        let swapped = CouplingSpec {
            theta_lo: 0.6,
            theta_hi: 0.3,
            ..spec
        };
        assert!(coupling_check(&g, &swapped).is_err());
    }

    #[test]
    fn results_do_not_depend_on_pool_size() {
        let g = build_ring(16).unwrap();
        let spec = SweepSpec::midpoint_grid(0.2, 5, 4, 10, 3);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| sweep(&g, &spec)).unwrap();
        let b = four.install(|| sweep(&g, &spec)).unwrap();
        assert_eq!(a, b);
    }
}
