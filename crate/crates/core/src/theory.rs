//! Closed-form scales and bounds, plus empirical checks of the block
//! construction's good event on the ring.
//!
//! Everything that can be tiny is carried in log space. Quantities such as
//! `3^-36` sit far below the spacing of doubles near one, so nothing here is
//! ever formed as `1 - (number close to one)`.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::engine::{drive, EngineError, StoppingRule};
use crate::engine::{
    Configuration, Event, EventKind, EventStream, InitialCondition, Params, Process, RunOptions,
};
use crate::seed::{derive_seed, TAG_EVENTS};
use crate::topology::{build_ring, Graph, TopologyError};

/// Exponent in the ring threshold `mu^2 (1 - mu)^1140`.
pub const RING_THRESHOLD_EXPONENT: f64 = 1140.0;
/// Block half-length used for the percolation comparison.
pub const BLOCK_T: f64 = 95.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("theta must be in (0, 1), got {0}")]
    Theta(f64),
    #[error("mu must be in (0, 0.5], got {0}")]
    Mu(f64),
    #[error("T must be positive and finite, got {0}")]
    BlockLength(f64),
    #[error("N must be at least 3 so that ln(ln N) > 0, got {0}")]
    SmallN(usize),
    #[error("window (start + 2T = {needed}) extends beyond the segment end {end}")]
    Window { needed: f64, end: f64 },
    #[error(
        "vertices {0} and {1} are not adjacent: the block needs a ring of at least 5 vertices"
    )]
    NotRing(usize, usize),
    #[error("ring width {0} is below 5")]
    RingWidth(usize),
    #[error("hypothesis fails: need a < (1-mu)^(4T) and a mu^2 (1-mu)^(8T) > theta (a={a}, theta={theta}, mu={mu}, T={t})")]
    Hypothesis { a: f64, theta: f64, mu: f64, t: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// A nonnegative quantity carried both as its natural log and linearly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogValue {
    pub log: f64,
    pub linear: f64,
    /// The linear value is below the smallest positive normal double
    /// (subnormal or flushed to zero).
    pub underflow: bool,
}

impl LogValue {
    pub fn from_log(log: f64) -> Self {
        let linear = log.exp();
        LogValue {
            log,
            linear,
            underflow: linear < f64::MIN_POSITIVE,
        }
    }

    pub fn flag(&self) -> &'static str {
        if self.underflow {
            "underflow"
        } else {
            "ok"
        }
    }
}

/// `ln(sum(exp(logs)))` without overflow or underflow.
pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut acc = KahanSum::default();
    for &l in logs {
        acc.add((l - max).exp());
    }
    max + acc.value().ln()
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn check_theta_mu(theta: f64, mu: f64) -> Result<(), TheoryError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(TheoryError::Theta(theta));
    }
    check_mu(mu)
}

fn check_mu(mu: f64) -> Result<(), TheoryError> {
    if !(mu > 0.0 && mu <= 0.5) {
        return Err(TheoryError::Mu(mu));
    }
    Ok(())
}

/// Dispersion time scale on the complete graph with `N` vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionScale {
    /// Smallest `n` with `(1 - mu)^n < theta`.
    pub n: u32,
    /// `n ln(ln N) / N`.
    pub t_n: f64,
    /// `K_N = 4^(N T_N)`, with its log.
    pub k_n: f64,
    pub log_k_n: f64,
}

pub fn dispersion_scale(
    theta: f64,
    mu: f64,
    n_vertices: usize,
) -> Result<DispersionScale, TheoryError> {
    check_theta_mu(theta, mu)?;
    if n_vertices < 3 {
        return Err(TheoryError::SmallN(n_vertices));
    }
    let keep = 1.0 - mu;
    let mut n: u32 = 1;
    while keep.powi(n as i32) >= theta {
        n += 1;
    }
    let big_n = n_vertices as f64;
    let lnln = big_n.ln().ln();
    let t_n = n as f64 * lnln / big_n;
    let log_k_n = n as f64 * lnln * std::f64::consts::LN_2 * 2.0;
    Ok(DispersionScale {
        n,
        t_n,
        k_n: log_k_n.exp(),
        log_k_n,
    })
}

/// `mu^2 (1 - mu)^1140`, the threshold below which expansion on the ring
/// has probability bounded away from zero uniformly in the ring size.
pub fn theorem2_threshold(mu: f64) -> Result<LogValue, TheoryError> {
    check_mu(mu)?;
    Ok(LogValue::from_log(
        2.0 * mu.ln() + RING_THRESHOLD_EXPONENT * (-mu).ln_1p(),
    ))
}

/// `ln P(X >= m)` for `X ~ Poisson(lambda)`.
///
/// Terms are summed outward from `max(m, mode)` relative to the anchor
/// term, stopping once a term falls below `1e-30` of the running sum.
pub fn poisson_log_tail_from(lambda: f64, m: u64) -> f64 {
    assert!(
        lambda > 0.0 && lambda.is_finite(),
        "lambda must be positive"
    );
    if m == 0 {
        return 0.0;
    }
    let log_pmf = |n: u64| n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0);
    let mode = lambda.floor() as u64;
    let anchor = m.max(mode);
    let mut acc = KahanSum::default();
    acc.add(1.0);
    let mut r = 1.0;
    let mut n = anchor;
    loop {
        n += 1;
        r *= lambda / n as f64;
        acc.add(r);
        if r < 1e-30 * acc.value() {
            break;
        }
    }
    let mut r = 1.0;
    let mut n = anchor;
    while n > m {
        r *= n as f64 / lambda;
        n -= 1;
        acc.add(r);
        if r < 1e-30 * acc.value() {
            break;
        }
    }
    log_pmf(anchor) + acc.value().ln()
}

/// `ln P(X > x)` for `X ~ Poisson(lambda)` and real `x >= 0`.
pub fn poisson_log_sf(lambda: f64, x: f64) -> f64 {
    poisson_log_tail_from(lambda, x.floor() as u64 + 1)
}

/// The three terms of the union bound on the complement of the good event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma6Report {
    pub t: f64,
    /// `4 e^-T`
    pub four_exp: LogValue,
    /// `2 P(Poisson(T) > 2T)`
    pub x_tail: LogValue,
    /// `2 P(Poisson(2T) > 4T)`
    pub y_tail: LogValue,
    pub total: LogValue,
    /// `ln 3^-36`
    pub log_target: f64,
}

impl Lemma6Report {
    /// `C(T) < 3^-36`, decided in log space.
    pub fn passes(&self) -> bool {
        self.total.log < self.log_target
    }

    pub fn components(&self) -> [(&'static str, LogValue); 4] {
        [
            ("four_exp_neg_t", self.four_exp),
            ("two_poisson_t_gt_2t", self.x_tail),
            ("two_poisson_2t_gt_4t", self.y_tail),
            ("total", self.total),
        ]
    }
}

/// `C(T) = 4 e^-T + 2 P(Poisson(T) > 2T) + 2 P(Poisson(2T) > 4T)`.
pub fn lemma6_complement(t: f64) -> Result<Lemma6Report, TheoryError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(TheoryError::BlockLength(t));
    }
    let ln2 = std::f64::consts::LN_2;
    let four_exp = LogValue::from_log(2.0 * ln2 - t);
    let x_tail = LogValue::from_log(ln2 + poisson_log_sf(t, 2.0 * t));
    let y_tail = LogValue::from_log(ln2 + poisson_log_sf(2.0 * t, 4.0 * t));
    let total = LogValue::from_log(log_sum_exp(&[four_exp.log, x_tail.log, y_tail.log]));
    Ok(Lemma6Report {
        t,
        four_exp,
        x_tail,
        y_tail,
        total,
        log_target: -36.0 * 3f64.ln(),
    })
}

/// Exact `P(not Omega)` using independence of the eight counts. The union
/// bound [`lemma6_complement`] dominates it.
pub fn good_event_failure_probability(t: f64) -> Result<f64, TheoryError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(TheoryError::BlockLength(t));
    }
    let p_zero = (-t).exp();
    let p_x = poisson_log_sf(t, 2.0 * t).exp();
    let p_y = poisson_log_sf(2.0 * t, 4.0 * t).exp();
    let log_success = 4.0 * (-p_zero).ln_1p() + 2.0 * (-p_x).ln_1p() + 2.0 * (-p_y).ln_1p();
    Ok(-log_success.exp_m1())
}

/// A window of events known to cover `[start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSegment {
    pub start: f64,
    pub end: f64,
    pub events: Vec<Event>,
}

/// Counts in the space-time block around `center`, with positions relative
/// to it: `x` for `j = -2, -1, 1, 2`, `y` and `z` for `j = -1, 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodEventStats {
    pub x: [u64; 4],
    pub y: [u64; 2],
    pub z: [u64; 2],
    pub omega: bool,
    pub t: f64,
}

impl GoodEventStats {
    fn decide(&mut self) {
        let [xm2, xm1, x1, x2] = self.x;
        let t = self.t;
        self.omega = xm1.min(x1).min(self.z[0]).min(self.z[1]) != 0
            && (xm2.max(x2) as f64) <= 2.0 * t
            && (self.y[0].max(self.y[1]) as f64) <= 4.0 * t;
    }
}

fn canonical(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Tallies the good-event counts over `(start, start + 2T)`:
///
/// - `X_j`: mixing events in `(0, T)` on the edge from `j` toward the
///   center's far side, i.e. `{-2,-1}, {-1,0}, {0,1}, {1,2}`;
/// - `Y_j`: mixing events in `(T, 2T)` on either edge at `j = -1, 1`;
/// - `Z_j`: local events at `j = -1, 1` in `(T, 2T)`.
pub fn good_event_stats(
    segment: &EventSegment,
    ring: &Graph,
    center: usize,
    t: f64,
) -> Result<GoodEventStats, TheoryError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(TheoryError::BlockLength(t));
    }
    let needed = segment.start + 2.0 * t;
    if needed > segment.end {
        return Err(TheoryError::Window {
            needed,
            end: segment.end,
        });
    }
    let n = ring.n_vertices();
    if n < 5 {
        return Err(TheoryError::RingWidth(n));
    }
    let at = |j: i64| (center as i64 + j).rem_euclid(n as i64) as usize;
    for j in -2..2 {
        if !ring.has_edge(at(j), at(j + 1)) {
            return Err(TheoryError::NotRing(at(j), at(j + 1)));
        }
    }
    let e = |j: i64| canonical(at(j), at(j + 1));
    // X edges for j = -2, -1, 1, 2
    let x_edges = [e(-2), e(-1), e(0), e(1)];
    // edges adjacent to -1 and to +1
    let y_edges = [[e(-2), e(-1)], [e(0), e(1)]];
    let z_sites = [at(-1), at(1)];

    let mut stats = GoodEventStats {
        x: [0; 4],
        y: [0; 2],
        z: [0; 2],
        omega: false,
        t,
    };
    for ev in &segment.events {
        let s = ev.time - segment.start;
        let first = s > 0.0 && s < t;
        let second = s > t && s < 2.0 * t;
        if !(first || second) {
            continue;
        }
        match ev.kind {
            EventKind::Mixing { x, y, .. } => {
                let edge = canonical(x, y);
                if first {
                    for (k, &xe) in x_edges.iter().enumerate() {
                        stats.x[k] += (edge == xe) as u64;
                    }
                } else {
                    for (k, pair) in y_edges.iter().enumerate() {
                        stats.y[k] += pair.contains(&edge) as u64;
                    }
                }
            }
            EventKind::Local { vertex, .. } => {
                if second {
                    for (k, &site) in z_sites.iter().enumerate() {
                        stats.z[k] += (vertex == site) as u64;
                    }
                }
            }
        }
    }
    stats.decide();
    Ok(stats)
}

/// Hypothesis of the one-step invasion property on the ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingCondition {
    pub a: f64,
    pub theta: f64,
    pub mu: f64,
    pub t: f64,
    /// `a < (1-mu)^(4T)` and `a mu^2 (1-mu)^(8T) > theta`, compared in log
    /// space so that large `T` does not underflow.
    pub holds: bool,
}

impl RingCondition {
    pub fn new(a: f64, theta: f64, mu: f64, t: f64) -> Self {
        let holds = a > 0.0 && theta > 0.0 && mu > 0.0 && mu < 1.0 && t > 0.0 && {
            let l1m = (-mu).ln_1p();
            a.ln() < 4.0 * t * l1m && a.ln() + 2.0 * mu.ln() + 8.0 * t * l1m > theta.ln()
        };
        RingCondition {
            a,
            theta,
            mu,
            t,
            holds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma7Config {
    pub mu: f64,
    pub theta: f64,
    pub a: f64,
    pub t: f64,
    /// Trials on which the good event occurs that must be collected.
    pub trials: u64,
    pub seed: u64,
    pub ring_width: usize,
    /// Upper bound on simulated blocks, conditioned or not.
    pub max_attempts: u64,
}

impl Lemma7Config {
    pub fn new(mu: f64, theta: f64, a: f64, t: f64, trials: u64, seed: u64) -> Self {
        Lemma7Config {
            mu,
            theta,
            a,
            t,
            trials,
            seed,
            ring_width: 9,
            max_attempts: trials.saturating_mul(100).max(1000),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma7Violation {
    pub attempt: u64,
    pub seed: u64,
    pub eta_minus: f64,
    pub eta_plus: f64,
    pub stats: GoodEventStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma7Report {
    pub attempts: u64,
    pub conditioned: u64,
    pub violations: u64,
    /// Up to ten violating trials, in attempt order.
    pub examples: Vec<Lemma7Violation>,
    /// Smallest `min(eta_2T(-1), eta_2T(1)) / a` over conditioned trials.
    pub min_ratio: f64,
}

struct BlockTrial {
    omega: bool,
    eta_minus: f64,
    eta_plus: f64,
    stats: GoodEventStats,
    seed: u64,
}

fn block_trial(ring: &Graph, params: Params, t: f64, seed: u64) -> Result<BlockTrial, TheoryError> {
    let n = ring.n_vertices();
    let center = n / 2;
    let mut stream = EventStream::full(ring, seed);
    let conf = InitialCondition::SingleOccupied(center).realize(n)?;
    let mut procs = [Process::new(conf, params)];
    let mut events = Vec::with_capacity((4.0 * t * n as f64) as usize + 16);
    drive(
        &mut procs,
        &mut stream,
        &RunOptions::new(StoppingRule::TimeCap(2.0 * t)),
        |_, ev, _| events.push(*ev),
    );
    let segment = EventSegment {
        start: 0.0,
        end: 2.0 * t,
        events,
    };
    let stats = good_event_stats(&segment, ring, center, t)?;
    let c: &Configuration = procs[0].config();
    Ok(BlockTrial {
        omega: stats.omega,
        eta_minus: c.get(center - 1),
        eta_plus: c.get(center + 1),
        stats,
        seed,
    })
}

/// Simulates blocks on a ring centered at a single occupied patch and, on
/// every block where the good event occurs, checks that both neighbors end
/// the block above `a`. Runs on the current rayon pool; results depend only
/// on `cfg`.
pub fn lemma7_empirical_check(cfg: &Lemma7Config) -> Result<Lemma7Report, TheoryError> {
    let cond = RingCondition::new(cfg.a, cfg.theta, cfg.mu, cfg.t);
    if !cond.holds {
        return Err(TheoryError::Hypothesis {
            a: cfg.a,
            theta: cfg.theta,
            mu: cfg.mu,
            t: cfg.t,
        });
    }
    if cfg.ring_width < 5 {
        return Err(TheoryError::RingWidth(cfg.ring_width));
    }
    let params = Params::new(cfg.theta, cfg.mu)?;
    let ring = build_ring(cfg.ring_width)?;
    let mut report = Lemma7Report {
        attempts: 0,
        conditioned: 0,
        violations: 0,
        examples: Vec::new(),
        min_ratio: f64::INFINITY,
    };
    let batch = (cfg.trials + cfg.trials / 8 + 16).min(cfg.max_attempts.max(1));
    while report.conditioned < cfg.trials && report.attempts < cfg.max_attempts {
        let lo = report.attempts;
        let hi = (lo + batch).min(cfg.max_attempts);
        let trials: Vec<Result<BlockTrial, TheoryError>> = (lo..hi)
            .into_par_iter()
            .map(|k| {
                block_trial(
                    &ring,
                    params,
                    cfg.t,
                    derive_seed(cfg.seed, &[k, TAG_EVENTS]),
                )
            })
            .collect();
        for (k, trial) in (lo..hi).zip(trials) {
            if report.conditioned >= cfg.trials {
                break;
            }
            let trial = trial?;
            report.attempts = k + 1;
            if !trial.omega {
                continue;
            }
            report.conditioned += 1;
            let low = trial.eta_minus.min(trial.eta_plus);
            report.min_ratio = report.min_ratio.min(low / cfg.a);
            if low <= cfg.a {
                report.violations += 1;
                if report.examples.len() < 10 {
                    report.examples.push(Lemma7Violation {
                        attempt: k,
                        seed: trial.seed,
                        eta_minus: trial.eta_minus,
                        eta_plus: trial.eta_plus,
                        stats: trial.stats,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EventKind;
    use crate::topology::build_ring;

    #[test]
    fn dispersion_scale_examples() {
        let s = dispersion_scale(0.5, 0.2, 100).unwrap();
        assert_eq!(s.n, 4);
        assert_eq!(dispersion_scale(0.5, 0.5, 100).unwrap().n, 2);
        let expected_t = 4.0 * 100f64.ln().ln() / 100.0;
        assert!((s.t_n - expected_t).abs() < 1e-15);
        assert!((s.t_n - 0.061_087_185_032_316).abs() < 1e-12);
        // K_N = 4^(N T_N)
        assert!((s.k_n - 4f64.powf(100.0 * s.t_n)).abs() / s.k_n < 1e-12);
        assert!((s.k_n - 4_762.280_907_483_319).abs() < 1e-6);
        // and it never exceeds (ln N)^(2n)
        assert!(s.k_n <= 100f64.ln().powi(8));
        assert_eq!(dispersion_scale(0.5, 0.2, 2), Err(TheoryError::SmallN(2)));
        assert!(dispersion_scale(1.5, 0.2, 10).is_err());
    }

    #[test]
    fn dispersion_scale_is_minimal() {
        for &theta in &[0.01, 0.1, 0.3, 0.5, 0.64, 0.8, 0.99] {
            for &mu in &[0.01, 0.1, 0.2, 0.25, 0.5] {
                let s = dispersion_scale(theta, mu, 1000).unwrap();
                let keep: f64 = 1.0 - mu;
                assert!(keep.powi(s.n as i32) < theta);
                assert!(keep.powi(s.n as i32 - 1) >= theta);
            }
        }
    }

    #[test]
    fn ring_threshold_in_log_space() {
        let half = theorem2_threshold(0.5).unwrap();
        assert!((half.log - (-791.574_080_199_457_5)).abs() < 1e-9);
        assert!(half.underflow);
        assert_eq!(half.linear, 0.0);

        let fifth = theorem2_threshold(0.2).unwrap();
        assert!((fifth.log - (-257.602_524_323_067_3)).abs() < 1e-9);
        assert!(!fifth.underflow);
        assert!(fifth.linear > 0.0);

        let mut prev: Option<f64> = None;
        for i in 1..=500 {
            let mu = i as f64 / 1000.0;
            let v = theorem2_threshold(mu).unwrap().log;
            assert!(v.is_finite());
            if let Some(p) = prev {
                assert!((v - p).abs() < 5.0, "jump at mu={mu}");
            }
            prev = Some(v);
        }
        assert!(theorem2_threshold(0.6).is_err());
    }

    #[test]
    fn lemma6_small_and_large_t() {
        let r = lemma6_complement(1.0).unwrap();
        assert!(r.total.linear > 3f64.powi(-36));
        assert!(r.four_exp.linear > 1.47);
        assert!(!r.passes());

        let r = lemma6_complement(95.0).unwrap();
        assert!(r.passes());
        assert!((r.four_exp.linear - 2.208_432_910_811_413e-41).abs() / 2.2e-41 < 1e-12);
        assert!(lemma6_complement(0.0).is_err());
    }

    #[test]
    fn lemma6_decreasing_in_t() {
        let grid = [1.0, 5.0, 20.0, 50.0, 95.0];
        let vals: Vec<Lemma6Report> = grid
            .iter()
            .map(|&t| lemma6_complement(t).unwrap())
            .collect();
        for w in vals.windows(2) {
            assert!(w[1].total.log < w[0].total.log);
            assert!(w[1].four_exp.log < w[0].four_exp.log);
            assert!(w[1].x_tail.log < w[0].x_tail.log);
            assert!(w[1].y_tail.log < w[0].y_tail.log);
        }
    }

    #[test]
    fn poisson_tail_small_cases() {
        // P(Poisson(1) >= 1) = 1 - e^-1
        let v = poisson_log_tail_from(1.0, 1).exp();
        assert!((v - (1.0 - (-1f64).exp())).abs() < 1e-15);
        // P(Poisson(2) > 4) = 1 - e^-2 (1 + 2 + 2 + 4/3 + 2/3)
        let cdf = (-2f64).exp() * (1.0 + 2.0 + 2.0 + 4.0 / 3.0 + 2.0 / 3.0);
        assert!((poisson_log_sf(2.0, 4.0).exp() - (1.0 - cdf)).abs() < 1e-15);
        assert_eq!(poisson_log_tail_from(3.0, 0), 0.0);
        // below the mode the sum runs in both directions
        let v = poisson_log_tail_from(50.0, 40).exp();
        assert!(v > 0.9 && v < 1.0);
    }

    #[test]
    fn exact_failure_probability_is_below_union_bound() {
        for &t in &[1.0, 5.0, 20.0] {
            let exact = good_event_failure_probability(t).unwrap();
            let bound = lemma6_complement(t).unwrap().total.linear;
            assert!(exact <= bound, "T={t}: {exact} > {bound}");
            assert!(exact > 0.0);
        }
        let five = good_event_failure_probability(5.0).unwrap();
        assert!((five - 0.056_14).abs() < 1e-4, "{five}");
    }

    #[test]
    fn empty_segment_has_no_good_event() {
        let ring = build_ring(9).unwrap();
        let seg = EventSegment {
            start: 0.0,
            end: 10.0,
            events: vec![],
        };
        let s = good_event_stats(&seg, &ring, 4, 5.0).unwrap();
        assert_eq!(s.x, [0; 4]);
        assert!(!s.omega);
        let short = EventSegment { end: 9.0, ..seg };
        assert!(matches!(
            good_event_stats(&short, &ring, 4, 5.0),
            Err(TheoryError::Window { .. })
        ));
    }

    #[test]
    fn counts_land_in_the_right_slots() {
        let ring = build_ring(9).unwrap();
        let c = 4;
        let mix = |time: f64, a: usize, b: usize| Event {
            time,
            kind: EventKind::Mixing {
                edge: ring.edge_index(a, b).unwrap(),
                x: a.min(b),
                y: a.max(b),
            },
        };
        let local = |time: f64, v: usize| Event {
            time,
            kind: EventKind::Local {
                vertex: v,
                bit: false,
            },
        };
        let events = vec![
            mix(0.5, c - 1, c),     // X_-1
            mix(1.0, c, c + 1),     // X_1
            mix(1.5, c - 2, c - 1), // X_-2
            mix(2.0, c + 1, c + 2), // X_2
            mix(2.5, c + 2, c + 3), // outside the block
            mix(6.0, c - 1, c),     // Y_-1
            mix(6.5, c - 2, c - 1), // Y_-1
            mix(7.0, c, c + 1),     // Y_1
            local(7.5, c - 1),      // Z_-1
            local(8.0, c + 1),      // Z_1
            local(3.0, c + 1),      // first half: not counted
            local(8.5, c),          // center: not counted
        ];
        let seg = EventSegment {
            start: 0.0,
            end: 10.0,
            events,
        };
        let s = good_event_stats(&seg, &ring, c, 5.0).unwrap();
        assert_eq!(s.x, [1, 1, 1, 1]);
        assert_eq!(s.y, [2, 1]);
        assert_eq!(s.z, [1, 1]);
        assert!(s.omega);
    }

    #[test]
    fn ring_condition_examples() {
        assert!(RingCondition::new(0.01, 4e-8, 0.2, 5.0).holds);
        // a at or above (1 - mu)^(4T) is refused
        assert!(!RingCondition::new(0.8f64.powi(20), 1e-12, 0.2, 5.0).holds);
        assert!(!RingCondition::new(0.01, 6e-8, 0.2, 5.0).holds);
        assert!(RingCondition::new(1e-37, 4e-113, 0.2, 95.0).holds);
        let cfg = Lemma7Config::new(0.2, 4e-8, 0.02, 5.0, 10, 1);
        assert!(matches!(
            lemma7_empirical_check(&cfg),
            Err(TheoryError::Hypothesis { .. })
        ));
    }

    #[test]
    fn lemma7_small_run() {
        let cfg = Lemma7Config::new(0.2, 4e-8, 0.01, 5.0, 500, 3);
        let r = lemma7_empirical_check(&cfg).unwrap();
        assert_eq!(r.conditioned, 500);
        assert_eq!(r.violations, 0);
        assert!(r.attempts >= 500);
        assert!(r.min_ratio > 1.0);
    }
}
