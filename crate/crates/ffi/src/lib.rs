//! C ABI over the `allee` simulator.
//!
//! Graphs are opaque handles created by the `allee_graph_*` constructors
//! and released with [`allee_graph_free`]. Every fallible call returns an
//! [`AlleeStatus`]; on failure [`allee_last_error`] describes the problem
//! for the calling thread. Panics never cross the boundary.
//!
//! Estimation calls run on the process-wide rayon pool and give the same
//! numbers whatever its size.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use allee::engine::{run, EventStream, InitialCondition, Params, StoppingRule};
use allee::experiments::{estimate_expansion, InitSpec};
use allee::observables::Outcome;
use allee::seed::{derive_seed, TAG_INIT};
use allee::theory::{dispersion_scale, lemma6_complement, theorem2_threshold, LogValue};
use allee::topology::{build_circulant, build_complete, build_ring, load_edge_list, Graph};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlleeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// The library panicked; this is a bug.
    Panic = 3,
}

/// Opaque graph handle.
pub struct AlleeGraph {
    graph: Graph,
}

/// Values of [`AlleeInit::kind`]: vertex `vertex` at density 1 and all
/// others at 0.
pub const ALLEE_INIT_SINGLE: i32 = 0;
/// Each vertex at density 1 with probability `rho`, else 0.
pub const ALLEE_INIT_BERNOULLI: i32 = 1;

/// How a run starts.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AlleeInit {
    /// `ALLEE_INIT_SINGLE` or `ALLEE_INIT_BERNOULLI`.
    pub kind: i32,
    pub vertex: usize,
    pub rho: f64,
}

/// Outcome codes used in [`AlleeRunResult::outcome`].
pub const ALLEE_OUTCOME_UNDECIDED: i32 = 0;
pub const ALLEE_OUTCOME_EXPANSION: i32 = 1;
pub const ALLEE_OUTCOME_EXTINCTION: i32 = -1;

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AlleeRunResult {
    /// One of the `ALLEE_OUTCOME_*` codes.
    pub outcome: i32,
    /// Absorption time, NaN when undecided.
    pub t_absorb: f64,
    pub events: u64,
    pub final_time: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AlleeEstimate {
    pub n_rep: u64,
    pub n_expand: u64,
    pub n_extinct: u64,
    pub n_undecided: u64,
    /// Expansions over decided runs, NaN when none decided.
    pub p_hat: f64,
    /// 95% Wilson interval on decided runs.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// A quantity as natural log and linear value. `underflow` is set when the
/// linear value is below the smallest positive normal double.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AlleeLogValue {
    pub log: f64,
    pub linear: f64,
    pub underflow: bool,
}

impl From<LogValue> for AlleeLogValue {
    fn from(v: LogValue) -> Self {
        AlleeLogValue {
            log: v.log,
            linear: v.linear,
            underflow: v.underflow,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AlleeLemma6 {
    pub four_exp: AlleeLogValue,
    pub x_tail: AlleeLogValue,
    pub y_tail: AlleeLogValue,
    pub total: AlleeLogValue,
    /// `total < 3^-36`, decided in log space.
    pub passes: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AlleeDispersionScale {
    pub n: u32,
    pub t_n: f64,
    pub k_n: f64,
    pub log_k_n: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records any error message and converts panics to
/// [`AlleeStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), (AlleeStatus, String)>) -> AlleeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AlleeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AlleeStatus::Panic
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> (AlleeStatus, String) {
    (AlleeStatus::InvalidArgument, e.to_string())
}

fn null(what: &str) -> (AlleeStatus, String) {
    (AlleeStatus::NullPointer, format!("{what} is null"))
}

/// Message describing the last failed call on this thread, or an empty
/// string. The pointer stays valid until the next library call on the
/// same thread.
#[no_mangle]
pub extern "C" fn allee_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn allee_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn make_graph(
    out: *mut *mut AlleeGraph,
    build: impl FnOnce() -> Result<Graph, String>,
) -> AlleeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let graph = build().map_err(invalid)?;
        // SAFETY: `out` is non-null and the caller promises it is writable.
        unsafe { *out = Box::into_raw(Box::new(AlleeGraph { graph })) };
        Ok(())
    })
}

/// Cycle on `n >= 3` vertices.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn allee_graph_ring(n: usize, out: *mut *mut AlleeGraph) -> AlleeStatus {
    make_graph(out, || build_ring(n).map_err(|e| e.to_string()))
}

/// Complete graph on `n >= 2` vertices.
///
/// # Safety
/// As for [`allee_graph_ring`].
#[no_mangle]
pub unsafe extern "C" fn allee_graph_complete(n: usize, out: *mut *mut AlleeGraph) -> AlleeStatus {
    make_graph(out, || build_complete(n).map_err(|e| e.to_string()))
}

/// Circulant graph: vertex `i` joined to `i +- 1, ..., i +- d/2` (mod `n`).
///
/// # Safety
/// As for [`allee_graph_ring`].
#[no_mangle]
pub unsafe extern "C" fn allee_graph_circulant(
    n: usize,
    d: usize,
    out: *mut *mut AlleeGraph,
) -> AlleeStatus {
    make_graph(out, || build_circulant(n, d).map_err(|e| e.to_string()))
}

/// Graph on `n` vertices from `n_edges` pairs stored flat in `pairs`
/// (`u0, v0, u1, v1, ...`).
///
/// # Safety
/// `pairs` must point to `2 * n_edges` readable values (it may be null
/// when `n_edges` is 0); `out` as for [`allee_graph_ring`].
#[no_mangle]
pub unsafe extern "C" fn allee_graph_from_edges(
    n: usize,
    pairs: *const usize,
    n_edges: usize,
    out: *mut *mut AlleeGraph,
) -> AlleeStatus {
    make_graph(out, || {
        let flat: &[usize] = if n_edges == 0 {
            &[]
        } else if pairs.is_null() {
            return Err("pairs is null".into());
        } else {
            // SAFETY: caller guarantees 2 * n_edges readable values.
            unsafe { std::slice::from_raw_parts(pairs, 2 * n_edges) }
        };
        let rows: Vec<(usize, usize)> = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        load_edge_list(&rows, n).map_err(|e| e.to_string())
    })
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `graph` must be null or a handle from an `allee_graph_*` constructor
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn allee_graph_free(graph: *mut AlleeGraph) {
    if !graph.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(graph) });
    }
}

/// Vertex count, 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn allee_graph_vertex_count(graph: *const AlleeGraph) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { graph.as_ref() }.map_or(0, |g| g.graph.n_vertices())
}

/// Edge count, 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn allee_graph_edge_count(graph: *const AlleeGraph) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { graph.as_ref() }.map_or(0, |g| g.graph.n_edges())
}

fn init_spec(init: AlleeInit) -> Result<InitSpec, (AlleeStatus, String)> {
    match init.kind {
        ALLEE_INIT_SINGLE => Ok(InitSpec::SingleOccupied(init.vertex)),
        ALLEE_INIT_BERNOULLI => Ok(InitSpec::Bernoulli(init.rho)),
        k => Err(invalid(format!("unknown init kind {k}"))),
    }
}

fn outcome_code(o: Outcome) -> i32 {
    match o {
        Outcome::Expansion => ALLEE_OUTCOME_EXPANSION,
        Outcome::Extinction => ALLEE_OUTCOME_EXTINCTION,
        Outcome::Undecided => ALLEE_OUTCOME_UNDECIDED,
    }
}

/// One run of the full process until absorption or `event_cap` events.
/// The Bernoulli start (if any) and the events are both drawn from `seed`.
///
/// # Safety
/// `graph` must be a live handle and `out` writable, or null.
#[no_mangle]
pub unsafe extern "C" fn allee_run(
    graph: *const AlleeGraph,
    theta: f64,
    mu: f64,
    init: AlleeInit,
    seed: u64,
    event_cap: u64,
    out: *mut AlleeRunResult,
) -> AlleeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let g = unsafe { graph.as_ref() }.ok_or_else(|| null("graph"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = Params::new(theta, mu).map_err(invalid)?;
        let init = match init_spec(init)? {
            InitSpec::SingleOccupied(v) => InitialCondition::SingleOccupied(v),
            InitSpec::Bernoulli(rho) => InitialCondition::ProductBernoulli {
                rho,
                seed: derive_seed(seed, &[TAG_INIT]),
            },
        };
        let mut stream = EventStream::full(&g.graph, seed);
        let rec = run(
            &init,
            params,
            &mut stream,
            StoppingRule::Absorption { event_cap },
        )
        .map_err(invalid)?;
        let result = AlleeRunResult {
            outcome: outcome_code(rec.outcome),
            t_absorb: rec.t_absorb.unwrap_or(f64::NAN),
            events: rec.event_count,
            final_time: rec.final_time,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = result };
        Ok(())
    })
}

/// Monte Carlo estimate of the expansion probability from `replicates`
/// independent runs with seeds derived from `seed`.
///
/// # Safety
/// `graph` must be a live handle and `out` writable, or null.
#[no_mangle]
pub unsafe extern "C" fn allee_estimate_expansion(
    graph: *const AlleeGraph,
    theta: f64,
    mu: f64,
    init: AlleeInit,
    replicates: u64,
    seed: u64,
    event_cap: u64,
    out: *mut AlleeEstimate,
) -> AlleeStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let g = unsafe { graph.as_ref() }.ok_or_else(|| null("graph"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = Params::new(theta, mu).map_err(invalid)?;
        let spec = init_spec(init)?;
        let est = estimate_expansion(&g.graph, params, spec, replicates, seed, event_cap)
            .map_err(invalid)?;
        let (ci_lo, ci_hi) = est.interval();
        let result = AlleeEstimate {
            n_rep: est.n_rep,
            n_expand: est.n_expand,
            n_extinct: est.n_extinct,
            n_undecided: est.n_undecided,
            p_hat: est.p_hat().unwrap_or(f64::NAN),
            ci_lo,
            ci_hi,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = result };
        Ok(())
    })
}

/// `C(T) = 4 e^-T + 2 P(Poisson(T) > 2T) + 2 P(Poisson(2T) > 4T)` with
/// its components, all in log space.
///
/// # Safety
/// `out` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn allee_lemma6_complement(t: f64, out: *mut AlleeLemma6) -> AlleeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = lemma6_complement(t).map_err(invalid)?;
        let result = AlleeLemma6 {
            four_exp: r.four_exp.into(),
            x_tail: r.x_tail.into(),
            y_tail: r.y_tail.into(),
            total: r.total.into(),
            passes: r.passes(),
        };
        // SAFETY: checked non-null above.
        unsafe { *out = result };
        Ok(())
    })
}

/// `mu^2 (1 - mu)^1140` in log and linear form.
///
/// # Safety
/// `out` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn allee_theorem2_threshold(mu: f64, out: *mut AlleeLogValue) -> AlleeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = theorem2_threshold(mu).map_err(invalid)?;
        // SAFETY: checked non-null above.
        unsafe { *out = v.into() };
        Ok(())
    })
}

/// Smallest `n` with `(1 - mu)^n < theta`, `T_N = n ln(ln N) / N` and
/// `K_N = 4^(N T_N)`.
///
/// # Safety
/// `out` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn allee_dispersion_scale(
    theta: f64,
    mu: f64,
    n_vertices: usize,
    out: *mut AlleeDispersionScale,
) -> AlleeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = dispersion_scale(theta, mu, n_vertices).map_err(invalid)?;
        let result = AlleeDispersionScale {
            n: s.n,
            t_n: s.t_n,
            k_n: s.k_n,
            log_k_n: s.log_k_n,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = result };
        Ok(())
    })
}
