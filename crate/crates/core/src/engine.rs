//! Event streams and the two dynamics built on them.
//!
//! The process is driven by a superposition of unit-rate clocks: one per
//! edge (mixing events) and one per vertex (local events, each carrying a
//! fair bit). [`EventStream`] samples that superposition directly: one
//! exponential wait at the total rate, then a uniform clock index over the
//! edges followed by the vertices, in canonical order.
//!
//! Feeding the same stream to several [`Process`]es gives the standard
//! couplings: different thresholds, ordered initial conditions, and the
//! mirror coupling (complemented start, threshold and bits).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::observables::{ConfigClass, Outcome, TrajectoryRecord};
use crate::seed::rng_from_seed;
use crate::topology::Graph;

/// Event cap used by [`StoppingRule::default`].
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

/// Largest clamp any single mixing update may need before it is treated as
/// a numerical fault rather than rounding.
pub const CLAMP_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("theta must be in (0, 1), got {0}")]
    Theta(f64),
    #[error("mu must be in (0, 0.5], got {0}")]
    Mu(f64),
    #[error("rho must be in [0, 1], got {0}")]
    Rho(f64),
    #[error("density {value} at vertex {vertex} is outside [0, 1]")]
    Density { vertex: usize, value: f64 },
    #[error("configuration has {got} entries but the graph has {expected} vertices")]
    Dimension { expected: usize, got: usize },
    #[error("vertex {vertex} out of range for {n} vertices")]
    Vertex { vertex: usize, n: usize },
    #[error("{0} replicas given but {1} thresholds")]
    ReplicaMismatch(usize, usize),
    #[error("this dynamics needs a {expected:?} event stream, got {got:?}")]
    StreamMode {
        expected: StreamMode,
        got: StreamMode,
    },
}

/// Allee threshold and migration factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    theta: f64,
    mu: f64,
}

impl Params {
    pub fn new(theta: f64, mu: f64) -> Result<Self, EngineError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(EngineError::Theta(theta));
        }
        if !(mu > 0.0 && mu <= 0.5) {
            return Err(EngineError::Mu(mu));
        }
        Ok(Params { theta, mu })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Same `mu`, threshold `1 - theta`.
    pub fn mirrored(&self) -> Params {
        Params {
            theta: 1.0 - self.theta,
            mu: self.mu,
        }
    }
}

/// Population densities indexed by vertex, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    densities: Vec<f64>,
}

/// Effect of one local event on its vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalJump {
    Up,
    Down,
    Unchanged,
}

impl Configuration {
    pub fn new(densities: Vec<f64>) -> Result<Self, EngineError> {
        for (vertex, &value) in densities.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(EngineError::Density { vertex, value });
            }
        }
        Ok(Configuration { densities })
    }

    pub fn zeros(n: usize) -> Self {
        Configuration {
            densities: vec![0.0; n],
        }
    }

    pub fn single_occupied(n: usize, vertex: usize) -> Result<Self, EngineError> {
        if vertex >= n {
            return Err(EngineError::Vertex { vertex, n });
        }
        let mut c = Self::zeros(n);
        c.densities[vertex] = 1.0;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn get(&self, vertex: usize) -> f64 {
        self.densities[vertex]
    }

    /// `1 - density` at every vertex.
    pub fn complement(&self) -> Configuration {
        Configuration {
            densities: self.densities.iter().map(|d| 1.0 - d).collect(),
        }
    }

    pub fn mass(&self) -> f64 {
        self.densities.iter().sum()
    }

    /// Number of vertices with nonzero density.
    pub fn occupied(&self) -> usize {
        self.densities.iter().filter(|&&d| d > 0.0).count()
    }

    /// `true` when `self >= other` at every vertex.
    pub fn dominates(&self, other: &Configuration) -> bool {
        self.len() == other.len()
            && self
                .densities
                .iter()
                .zip(&other.densities)
                .all(|(a, b)| a >= b)
    }

    /// Mixing along edge `{x, y}`: each endpoint moves a fraction `mu` of
    /// the way toward the other. Evaluated as `(1 - mu) a + mu b`, which is
    /// monotone in both arguments under rounding, so couplings stay exact.
    /// Returns the largest clamp applied.
    pub fn apply_mixing(&mut self, x: usize, y: usize, mu: f64) -> f64 {
        let a = self.densities[x];
        let b = self.densities[y];
        let keep = 1.0 - mu;
        let nx = keep * a + mu * b;
        let ny = keep * b + mu * a;
        let cx = nx.clamp(0.0, 1.0);
        let cy = ny.clamp(0.0, 1.0);
        self.densities[x] = cx;
        self.densities[y] = cy;
        let clamp = (nx - cx).abs().max((ny - cy).abs());
        debug_assert!(clamp <= CLAMP_TOLERANCE, "clamp {clamp} exceeds rounding");
        clamp
    }

    /// Local event: above the threshold jump to 1, below jump to 0, exactly
    /// at the threshold take the bit.
    pub fn apply_local(&mut self, x: usize, theta: f64, bit: bool) -> LocalJump {
        let d = self.densities[x];
        let next = if d > theta {
            1.0
        } else if d < theta {
            0.0
        } else if bit {
            1.0
        } else {
            0.0
        };
        self.densities[x] = next;
        if next > d {
            LocalJump::Up
        } else if next < d {
            LocalJump::Down
        } else {
            LocalJump::Unchanged
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Clock `edge` of the graph fired on `{x, y}` (`x < y`).
    Mixing {
        edge: usize,
        x: usize,
        y: usize,
    },
    Local {
        vertex: usize,
        bit: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamMode {
    /// Edge and vertex clocks, total rate `|E| + |V|`.
    Full,
    /// Edge clocks only, total rate `|E|`.
    MixingOnly,
}

/// Seeded, deterministic source of events for one graph.
#[derive(Debug, Clone)]
pub struct EventStream<'g> {
    graph: &'g Graph,
    seed: u64,
    mode: StreamMode,
    rng: ChaCha8Rng,
    time: f64,
    emitted: u64,
}

impl<'g> EventStream<'g> {
    pub fn new(graph: &'g Graph, seed: u64, mode: StreamMode) -> Self {
        EventStream {
            graph,
            seed,
            mode,
            rng: rng_from_seed(seed),
            time: 0.0,
            emitted: 0,
        }
    }

    pub fn full(graph: &'g Graph, seed: u64) -> Self {
        Self::new(graph, seed, StreamMode::Full)
    }

    pub fn mixing_only(graph: &'g Graph, seed: u64) -> Self {
        Self::new(graph, seed, StreamMode::MixingOnly)
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    /// Time of the last emitted event.
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn total_rate(&self) -> usize {
        match self.mode {
            StreamMode::Full => self.graph.n_edges() + self.graph.n_vertices(),
            StreamMode::MixingOnly => self.graph.n_edges(),
        }
    }

    /// Next event, or `None` when the stream has no clocks at all.
    pub fn next_event(&mut self) -> Option<Event> {
        let clocks = self.total_rate();
        if clocks == 0 {
            return None;
        }
        let wait: f64 = self.rng.sample::<f64, _>(Exp1) / clocks as f64;
        self.time += wait;
        let index = self.rng.random_range(0..clocks);
        let n_edges = self.graph.n_edges();
        let kind = if index < n_edges {
            let (x, y) = self.graph.edge(index);
            EventKind::Mixing { edge: index, x, y }
        } else {
            EventKind::Local {
                vertex: index - n_edges,
                bit: self.rng.random(),
            }
        };
        self.emitted += 1;
        Some(Event {
            time: self.time,
            kind,
        })
    }
}

impl Iterator for EventStream<'_> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        self.next_event()
    }
}

/// How a replicate is started.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// One vertex at density 1, all others 0.
    SingleOccupied(usize),
    /// Each vertex independently at 1 with probability `rho`, else 0.
    /// Vertex `x` is occupied iff its uniform draw is below `rho`, so for a
    /// fixed seed the configuration is nondecreasing in `rho`.
    ProductBernoulli {
        rho: f64,
        seed: u64,
    },
    Explicit(Configuration),
}

impl InitialCondition {
    pub fn realize(&self, n: usize) -> Result<Configuration, EngineError> {
        match self {
            InitialCondition::SingleOccupied(v) => Configuration::single_occupied(n, *v),
            InitialCondition::ProductBernoulli { rho, seed } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(EngineError::Rho(*rho));
                }
                let mut rng = rng_from_seed(*seed);
                let densities = (0..n)
                    .map(|_| if rng.random::<f64>() < *rho { 1.0 } else { 0.0 })
                    .collect();
                Ok(Configuration { densities })
            }
            InitialCondition::Explicit(c) => {
                if c.len() != n {
                    return Err(EngineError::Dimension {
                        expected: n,
                        got: c.len(),
                    });
                }
                Ok(c.clone())
            }
        }
    }
}

/// When a run ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Until every process is absorbed (upper or lower configuration), or
    /// `event_cap` events, whichever comes first.
    Absorption { event_cap: u64 },
    /// Exactly this many events, absorbed or not.
    EventCap(u64),
    /// All events with time `<= t`.
    TimeCap(f64),
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule::Absorption {
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

/// Options beyond the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub stop: StoppingRule,
    /// Record `(time, occupied)` every this many events; 0 records only the
    /// start and the end.
    pub sample_every: u64,
}

impl RunOptions {
    pub fn new(stop: StoppingRule) -> Self {
        RunOptions {
            stop,
            sample_every: 0,
        }
    }
}

/// Counts kept in sync with the configuration so classification is O(1).
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    above: usize,
    below: usize,
    occupied: usize,
}

impl Tally {
    fn of(conf: &Configuration, theta: f64) -> Self {
        let mut t = Tally::default();
        for &d in conf.densities() {
            t.add(d, theta);
        }
        t
    }

    #[inline]
    fn add(&mut self, d: f64, theta: f64) {
        self.above += (d > theta) as usize;
        self.below += (d < theta) as usize;
        self.occupied += (d > 0.0) as usize;
    }

    #[inline]
    fn remove(&mut self, d: f64, theta: f64) {
        self.above -= (d > theta) as usize;
        self.below -= (d < theta) as usize;
        self.occupied -= (d > 0.0) as usize;
    }
}

/// What the most recent event did to a process.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LastStep {
    /// Densities of the touched vertices just before the event (second
    /// entry unused for local events).
    pub prior: [f64; 2],
    /// Mixing event between two occupied vertices.
    pub collision: bool,
}

/// One replica of the process: a configuration, its threshold, and the
/// bookkeeping that becomes a [`TrajectoryRecord`].
#[derive(Debug, Clone)]
pub struct Process {
    conf: Configuration,
    theta: f64,
    mu: f64,
    complement_bits: bool,
    tally: Tally,
    last: LastStep,
    outcome: Outcome,
    t_absorb: Option<f64>,
    tau_c: Option<f64>,
    tau_d: Option<f64>,
    flips_up: u64,
    flips_down: u64,
    underflows: u64,
    max_clamp: f64,
    events: u64,
    time: f64,
    samples: Vec<(f64, usize)>,
}

impl Process {
    pub fn new(conf: Configuration, params: Params) -> Self {
        Self::with_bits(conf, params, false)
    }

    /// `complement_bits` flips every local-event bit this replica sees.
    pub fn with_bits(conf: Configuration, params: Params, complement_bits: bool) -> Self {
        let tally = Tally::of(&conf, params.theta);
        let mut p = Process {
            samples: vec![(0.0, tally.occupied)],
            conf,
            theta: params.theta,
            mu: params.mu,
            complement_bits,
            tally,
            last: LastStep::default(),
            outcome: Outcome::Undecided,
            t_absorb: None,
            tau_c: None,
            tau_d: None,
            flips_up: 0,
            flips_down: 0,
            underflows: 0,
            max_clamp: 0.0,
            events: 0,
            time: 0.0,
        };
        p.note_class(0.0);
        p
    }

    pub fn config(&self) -> &Configuration {
        &self.conf
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn class(&self) -> ConfigClass {
        let n = self.conf.len();
        if self.tally.above == n {
            ConfigClass::Upper
        } else if self.tally.below == n {
            ConfigClass::Lower
        } else {
            ConfigClass::Neither
        }
    }

    pub fn occupied(&self) -> usize {
        self.tally.occupied
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn is_absorbed(&self) -> bool {
        self.outcome != Outcome::Undecided
    }

    pub fn last_step(&self) -> LastStep {
        self.last
    }

    fn note_class(&mut self, time: f64) {
        match self.class() {
            ConfigClass::Upper if self.outcome == Outcome::Undecided => {
                self.outcome = Outcome::Expansion;
                self.t_absorb = Some(time);
            }
            ConfigClass::Lower => {
                if self.tau_d.is_none() {
                    self.tau_d = Some(time);
                }
                if self.outcome == Outcome::Undecided {
                    self.outcome = Outcome::Extinction;
                    self.t_absorb = Some(time);
                }
            }
            _ => {}
        }
    }

    /// Applies one event and updates every counter.
    #[inline]
    pub fn apply(&mut self, event: &Event) {
        let theta = self.theta;
        self.events += 1;
        self.time = event.time;
        match event.kind {
            EventKind::Mixing { x, y, .. } => {
                let (a, b) = (self.conf.densities[x], self.conf.densities[y]);
                self.last = LastStep {
                    prior: [a, b],
                    collision: a > 0.0 && b > 0.0,
                };
                if self.last.collision && self.tau_c.is_none() {
                    self.tau_c = Some(event.time);
                }
                self.tally.remove(a, theta);
                self.tally.remove(b, theta);
                let clamp = self.conf.apply_mixing(x, y, self.mu);
                self.max_clamp = self.max_clamp.max(clamp);
                let (na, nb) = (self.conf.densities[x], self.conf.densities[y]);
                self.underflows += ((a > 0.0 || b > 0.0) && (na == 0.0 || nb == 0.0)) as u64;
                self.tally.add(na, theta);
                self.tally.add(nb, theta);
            }
            EventKind::Local { vertex, bit } => {
                let d = self.conf.densities[vertex];
                self.last = LastStep {
                    prior: [d, 0.0],
                    collision: false,
                };
                self.tally.remove(d, theta);
                match self
                    .conf
                    .apply_local(vertex, theta, bit ^ self.complement_bits)
                {
                    LocalJump::Up => self.flips_up += 1,
                    LocalJump::Down => self.flips_down += 1,
                    LocalJump::Unchanged => {}
                }
                self.tally.add(self.conf.densities[vertex], theta);
            }
        }
        if self.outcome == Outcome::Undecided || self.tau_d.is_none() {
            self.note_class(event.time);
        }
    }

    fn sample(&mut self) {
        self.samples.push((self.time, self.tally.occupied));
    }

    pub fn into_record(mut self) -> TrajectoryRecord {
        if self.samples.last().map(|s| s.0) != Some(self.time) {
            self.sample();
        }
        TrajectoryRecord {
            outcome: self.outcome,
            t_absorb: self.t_absorb,
            tau_c: self.tau_c,
            tau_d: self.tau_d,
            occupancy_series: self.samples,
            event_count: self.events,
            final_time: self.time,
            flips_up: self.flips_up,
            flips_down: self.flips_down,
            underflows: self.underflows,
            max_clamp: self.max_clamp,
            final_config: self.conf,
        }
    }
}

/// Feeds `stream` to every process until `opts.stop` fires. `observer`
/// sees each event right after all processes applied it, together with the
/// 1-based event index.
pub fn drive<F>(
    processes: &mut [Process],
    stream: &mut EventStream<'_>,
    opts: &RunOptions,
    mut observer: F,
) where
    F: FnMut(u64, &Event, &[Process]),
{
    let mut count: u64 = 0;
    loop {
        match opts.stop {
            StoppingRule::Absorption { event_cap } => {
                if count >= event_cap || processes.iter().all(Process::is_absorbed) {
                    break;
                }
            }
            StoppingRule::EventCap(cap) => {
                if count >= cap {
                    break;
                }
            }
            StoppingRule::TimeCap(_) => {}
        }
        let Some(event) = stream.next_event() else {
            break;
        };
        if let StoppingRule::TimeCap(t) = opts.stop {
            if event.time > t {
                for p in processes.iter_mut() {
                    p.time = t;
                }
                break;
            }
        }
        count += 1;
        for p in processes.iter_mut() {
            p.apply(&event);
        }
        if opts.sample_every > 0 && count.is_multiple_of(opts.sample_every) {
            for p in processes.iter_mut() {
                p.sample();
            }
        }
        observer(count, &event, processes);
    }
}

fn expect_mode(stream: &EventStream<'_>, expected: StreamMode) -> Result<(), EngineError> {
    if stream.mode() != expected {
        return Err(EngineError::StreamMode {
            expected,
            got: stream.mode(),
        });
    }
    Ok(())
}

/// Full process (mixing and local events) from `init`.
pub fn run(
    init: &InitialCondition,
    params: Params,
    stream: &mut EventStream<'_>,
    stop: StoppingRule,
) -> Result<TrajectoryRecord, EngineError> {
    run_with(init, params, stream, &RunOptions::new(stop), |_, _, _| {})
}

/// [`run`] with sampling options and a per-event observer.
pub fn run_with<F>(
    init: &InitialCondition,
    params: Params,
    stream: &mut EventStream<'_>,
    opts: &RunOptions,
    mut observer: F,
) -> Result<TrajectoryRecord, EngineError>
where
    F: FnMut(u64, &Event, &Process),
{
    expect_mode(stream, StreamMode::Full)?;
    run_single(init, params, stream, opts, &mut observer)
}

/// Mixing-only process: local events are never generated.
pub fn run_mixing_only(
    init: &InitialCondition,
    params: Params,
    stream: &mut EventStream<'_>,
    stop: StoppingRule,
) -> Result<TrajectoryRecord, EngineError> {
    run_mixing_only_with(init, params, stream, &RunOptions::new(stop), |_, _, _| {})
}

pub fn run_mixing_only_with<F>(
    init: &InitialCondition,
    params: Params,
    stream: &mut EventStream<'_>,
    opts: &RunOptions,
    mut observer: F,
) -> Result<TrajectoryRecord, EngineError>
where
    F: FnMut(u64, &Event, &Process),
{
    expect_mode(stream, StreamMode::MixingOnly)?;
    run_single(init, params, stream, opts, &mut observer)
}

fn run_single<F>(
    init: &InitialCondition,
    params: Params,
    stream: &mut EventStream<'_>,
    opts: &RunOptions,
    observer: &mut F,
) -> Result<TrajectoryRecord, EngineError>
where
    F: FnMut(u64, &Event, &Process),
{
    let conf = init.realize(stream.graph().n_vertices())?;
    let mut procs = [Process::new(conf, params)];
    drive(&mut procs, stream, opts, |i, ev, ps| {
        observer(i, ev, &ps[0])
    });
    let [p] = procs;
    Ok(p.into_record())
}

/// Builds one process per `(init, theta)` pair sharing `mu`.
pub fn coupled_processes(
    graph: &Graph,
    inits: &[InitialCondition],
    thetas: &[f64],
    mu: f64,
) -> Result<Vec<Process>, EngineError> {
    if inits.len() != thetas.len() {
        return Err(EngineError::ReplicaMismatch(inits.len(), thetas.len()));
    }
    inits
        .iter()
        .zip(thetas)
        .map(|(init, &theta)| {
            let params = Params::new(theta, mu)?;
            Ok(Process::new(init.realize(graph.n_vertices())?, params))
        })
        .collect()
}

/// Runs every replica on the identical event sequence (same times, clocks
/// and bits). All records share the same sampling instants.
pub fn run_coupled(
    inits: &[InitialCondition],
    thetas: &[f64],
    params_base: Params,
    stream: &mut EventStream<'_>,
    horizon: &RunOptions,
) -> Result<Vec<TrajectoryRecord>, EngineError> {
    run_coupled_with(inits, thetas, params_base, stream, horizon, |_, _, _| {})
}

pub fn run_coupled_with<F>(
    inits: &[InitialCondition],
    thetas: &[f64],
    params_base: Params,
    stream: &mut EventStream<'_>,
    horizon: &RunOptions,
    observer: F,
) -> Result<Vec<TrajectoryRecord>, EngineError>
where
    F: FnMut(u64, &Event, &[Process]),
{
    let mut procs = coupled_processes(stream.graph(), inits, thetas, params_base.mu())?;
    drive(&mut procs, stream, horizon, observer);
    Ok(procs.into_iter().map(Process::into_record).collect())
}

/// Runs `init` with threshold `theta` next to its mirror image: start
/// `1 - init`, threshold `1 - theta`, every bit complemented.
pub fn run_mirror_coupled(
    init: &Configuration,
    params: Params,
    stream: &mut EventStream<'_>,
    horizon: &RunOptions,
) -> Result<(TrajectoryRecord, TrajectoryRecord), EngineError> {
    run_mirror_coupled_with(init, params, stream, horizon, |_, _, _| {})
}

pub fn run_mirror_coupled_with<F>(
    init: &Configuration,
    params: Params,
    stream: &mut EventStream<'_>,
    horizon: &RunOptions,
    observer: F,
) -> Result<(TrajectoryRecord, TrajectoryRecord), EngineError>
where
    F: FnMut(u64, &Event, &[Process]),
{
    let n = stream.graph().n_vertices();
    if init.len() != n {
        return Err(EngineError::Dimension {
            expected: n,
            got: init.len(),
        });
    }
    let mut procs = vec![
        Process::new(init.clone(), params),
        Process::with_bits(init.complement(), params.mirrored(), true),
    ];
    drive(&mut procs, stream, horizon, observer);
    let mut it = procs.into_iter().map(Process::into_record);
    let a = it.next().expect("two replicas");
    let b = it.next().expect("two replicas");
    Ok((a, b))
}
