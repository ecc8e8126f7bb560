//! Classification, absorption, collisions and the dynamic graph.
//!
//! Upper configurations (every density above the threshold) and lower
//! configurations (every density below it) are absorbing for both dynamics;
//! on a finite graph the full process ends in exactly one of them, and it
//! does so precisely when it reaches the all-one or all-zero state.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Write};

use crate::engine::{Configuration, Event, EventKind, Process};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfigClass {
    Upper,
    Lower,
    Neither,
}

impl fmt::Display for ConfigClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfigClass::Upper => "upper",
            ConfigClass::Lower => "lower",
            ConfigClass::Neither => "neither",
        })
    }
}

/// A density exactly at `theta` makes the configuration neither upper nor
/// lower.
pub fn classify(c: &Configuration, theta: f64) -> ConfigClass {
    let d = c.densities();
    if d.iter().all(|&v| v > theta) {
        ConfigClass::Upper
    } else if d.iter().all(|&v| v < theta) {
        ConfigClass::Lower
    } else {
        ConfigClass::Neither
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Expansion,
    Extinction,
    /// Stopped before reaching either absorbing set.
    Undecided,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Expansion => "expansion",
            Outcome::Extinction => "extinction",
            Outcome::Undecided => "undecided",
        })
    }
}

/// Outcome from a sequence of classes: the first upper or lower class wins.
pub fn absorption_outcome<I: IntoIterator<Item = ConfigClass>>(history: I) -> Outcome {
    for class in history {
        match class {
            ConfigClass::Upper => return Outcome::Expansion,
            ConfigClass::Lower => return Outcome::Extinction,
            ConfigClass::Neither => {}
        }
    }
    Outcome::Undecided
}

/// A collision is a mixing event between two occupied vertices.
pub fn detect_collision(c_before: &Configuration, x: usize, y: usize) -> bool {
    c_before.get(x) != 0.0 && c_before.get(y) != 0.0
}

/// Summary of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub outcome: Outcome,
    /// Time the upper or lower set was first reached.
    pub t_absorb: Option<f64>,
    /// First collision time.
    pub tau_c: Option<f64>,
    /// First time in the lower set.
    pub tau_d: Option<f64>,
    /// `(time, number of occupied vertices)` samples.
    pub occupancy_series: Vec<(f64, usize)>,
    pub event_count: u64,
    pub final_time: f64,
    /// Local events that raised / lowered a density.
    pub flips_up: u64,
    pub flips_down: u64,
    /// Mixing events after which a previously positive density read 0.
    pub underflows: u64,
    pub max_clamp: f64,
    pub final_config: Configuration,
}

/// Vertex of the dynamic graph: `(patch, generation)`.
pub type Node = (usize, u32);

/// Oriented growth structure on `patches x generations` coupled with the
/// mixing-only process started from one occupied patch.
///
/// `(x, i)` is a leaf when `(x, i + 1)` is absent. A mixing event on
/// `{x, x'}` grows every leaf `(x, i)` at either endpoint into
/// `(x, i + 1)` and `(x', i + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    root: Node,
    generations: Vec<BTreeSet<u32>>,
    edges: Vec<(Node, Node)>,
    /// Cleared the first time a growth step targets an existing vertex.
    tree: bool,
}

impl DynamicGraph {
    pub fn new(n_patches: usize, root_patch: usize) -> Self {
        let mut generations = vec![BTreeSet::new(); n_patches];
        generations[root_patch].insert(0);
        DynamicGraph {
            root: (root_patch, 0),
            generations,
            edges: Vec::new(),
            tree: true,
        }
    }

    pub fn root(&self) -> Node {
        self.root
    }

    pub fn contains(&self, node: Node) -> bool {
        self.generations[node.0].contains(&node.1)
    }

    pub fn vertex_count(&self) -> usize {
        self.generations.iter().map(BTreeSet::len).sum()
    }

    pub fn edges(&self) -> &[(Node, Node)] {
        &self.edges
    }

    pub fn vertices(&self) -> impl Iterator<Item = Node> + '_ {
        self.generations
            .iter()
            .enumerate()
            .flat_map(|(x, gens)| gens.iter().map(move |&g| (x, g)))
    }

    fn leaves_at(&self, patch: usize) -> impl Iterator<Item = u32> + '_ {
        let gens = &self.generations[patch];
        gens.iter()
            .copied()
            .filter(move |g| !gens.contains(&(g + 1)))
    }

    pub fn leaves(&self) -> Vec<Node> {
        (0..self.generations.len())
            .flat_map(|x| self.leaves_at(x).map(move |g| (x, g)))
            .collect()
    }

    /// Patches carrying at least one leaf.
    pub fn leaf_patches(&self) -> usize {
        self.generations.iter().filter(|g| !g.is_empty()).count()
    }

    /// Applies the growth rule for a mixing event on `{x, y}`. Leaves are
    /// read from the graph before the event; an event between two patches
    /// without leaves changes nothing.
    pub fn grow(&mut self, x: usize, y: usize) {
        let mut growth: Vec<(usize, u32, usize)> = self.leaves_at(x).map(|i| (x, i, y)).collect();
        growth.extend(self.leaves_at(y).map(|i| (y, i, x)));
        for (from, i, to) in growth {
            // Every insertion is the head of a new edge, so a failed insert
            // is a vertex with two parents.
            self.tree &= self.generations[from].insert(i + 1);
            self.tree &= self.generations[to].insert(i + 1);
            self.edges.push(((from, i), (from, i + 1)));
            self.edges.push(((from, i), (to, i + 1)));
        }
    }

    /// Rooted oriented binary tree: the root has no parent, every other
    /// vertex exactly one, and every vertex has 0 or 2 children. Tracked
    /// during growth, so this is O(1).
    pub fn is_binary_tree(&self) -> bool {
        self.tree
    }

    /// Recomputes [`is_binary_tree`](Self::is_binary_tree) from the edge
    /// list by counting in- and out-degrees.
    pub fn is_binary_tree_from_edges(&self) -> bool {
        let mut in_deg: HashMap<Node, usize> = HashMap::new();
        let mut out_deg: HashMap<Node, usize> = HashMap::new();
        for &(a, b) in &self.edges {
            *out_deg.entry(a).or_default() += 1;
            *in_deg.entry(b).or_default() += 1;
        }
        self.vertices().all(|v| {
            let i = in_deg.get(&v).copied().unwrap_or(0);
            let o = out_deg.get(&v).copied().unwrap_or(0);
            let parent_ok = if v == self.root { i == 0 } else { i == 1 };
            parent_ok && (o == 0 || o == 2)
        })
    }
}

/// Result of [`check_tree_and_bounds`]; `violations` is empty when every
/// checked property holds.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeReport {
    pub is_tree: bool,
    pub leaves: usize,
    pub leaf_patches: usize,
    pub occupied: usize,
    pub violations: Vec<String>,
}

impl TreeReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Slack allowed on the per-leaf density bound.
pub const LEAF_BOUND_SLACK: f64 = 1e-12;

/// Before the first collision: `h` is a binary tree, the number of
/// occupied patches equals the number of leaves, and every leaf `(x, i)`
/// has density at most `(1 - mu)^i`. After it, only the patch-level
/// identity (occupied patches are exactly the patches carrying a leaf) is
/// checked.
pub fn check_tree_and_bounds(
    h: &DynamicGraph,
    c: &Configuration,
    mu: f64,
    pre_collision: bool,
) -> TreeReport {
    let leaves = h.leaves();
    let occupied = c.occupied();
    let mut report = TreeReport {
        is_tree: h.is_binary_tree(),
        leaves: leaves.len(),
        leaf_patches: h.leaf_patches(),
        occupied,
        violations: Vec::new(),
    };
    for (x, gens) in h.generations.iter().enumerate() {
        if gens.is_empty() != (c.get(x) == 0.0) {
            report.violations.push(format!(
                "patch {x}: density {} but leaf present = {}",
                c.get(x),
                !gens.is_empty()
            ));
        }
    }
    if pre_collision {
        if !report.is_tree {
            report
                .violations
                .push("not a binary tree before the first collision".into());
        }
        if leaves.len() != occupied {
            report.violations.push(format!(
                "{} leaves but {occupied} occupied patches",
                leaves.len()
            ));
        }
        for &(x, i) in &leaves {
            let bound = (1.0 - mu).powi(i as i32);
            if c.get(x) > bound + LEAF_BOUND_SLACK {
                report.violations.push(format!(
                    "leaf ({x}, {i}): density {} above {bound}",
                    c.get(x)
                ));
            }
        }
    }
    report
}

/// CSV trajectory dump with columns
/// `event_index,time,kind,target,n_occupied,class`.
pub struct TrajectoryDump<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> TrajectoryDump<W> {
    pub fn new(mut out: W, initial: &Process) -> io::Result<Self> {
        writeln!(out, "event_index,time,kind,target,n_occupied,class")?;
        writeln!(out, "0,0,start,,{},{}", initial.occupied(), initial.class())?;
        Ok(TrajectoryDump { out, error: None })
    }

    /// Writes the row for one applied event. I/O errors are kept and
    /// reported by [`finish`](Self::finish).
    pub fn record(&mut self, index: u64, event: &Event, p: &Process) {
        if self.error.is_some() {
            return;
        }
        let (kind, target) = match event.kind {
            EventKind::Mixing { x, y, .. } => ("mixing", format!("{x}-{y}")),
            EventKind::Local { vertex, .. } => ("local", vertex.to_string()),
        };
        if let Err(e) = writeln!(
            self.out,
            "{index},{},{kind},{target},{},{}",
            event.time,
            p.occupied(),
            p.class()
        ) {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{
        run_mixing_only_with, EventStream, InitialCondition, Params, RunOptions, StoppingRule,
    };
    use crate::topology::build_complete;

    fn conf(v: &[f64]) -> Configuration {
        Configuration::new(v.to_vec()).unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&conf(&[0.0, 0.0]), 0.5), ConfigClass::Lower);
        assert_eq!(classify(&conf(&[1.0, 1.0]), 0.5), ConfigClass::Upper);
        assert_eq!(classify(&conf(&[0.8, 0.2]), 0.5), ConfigClass::Neither);
        assert_eq!(classify(&conf(&[0.5, 0.9]), 0.5), ConfigClass::Neither);
        assert_eq!(classify(&conf(&[0.5, 0.1]), 0.5), ConfigClass::Neither);
    }

    #[test]
    fn absorption_examples() {
        use ConfigClass::*;
        assert_eq!(
            absorption_outcome([Neither, Neither, Upper]),
            Outcome::Expansion
        );
        assert_eq!(absorption_outcome([Lower]), Outcome::Extinction);
        assert_eq!(absorption_outcome(vec![Neither; 100]), Outcome::Undecided);
        assert_eq!(
            absorption_outcome([Neither, Lower, Upper]),
            Outcome::Extinction
        );
    }

    #[test]
    fn collision_examples() {
        assert!(detect_collision(&conf(&[0.5, 0.5]), 0, 1));
        assert!(!detect_collision(&conf(&[0.5, 0.0]), 0, 1));
        assert!(!detect_collision(&conf(&[0.0, 0.0]), 0, 1));
    }

    #[test]
    fn first_mixing_from_single_patch_is_never_a_collision() {
        let g = build_complete(30).unwrap();
        let params = Params::new(0.5, 0.2).unwrap();
        for seed in 0..200 {
            let mut s = EventStream::mixing_only(&g, seed);
            let mut first = None;
            run_mixing_only_with(
                &InitialCondition::SingleOccupied(seed as usize % 30),
                params,
                &mut s,
                &RunOptions::new(StoppingRule::EventCap(200)),
                |_, _, p| {
                    if first.is_none() && p.occupied() > 1 {
                        first = Some(p.last_step().collision);
                    }
                },
            )
            .unwrap();
            assert_eq!(first, Some(false));
        }
    }

    #[test]
    fn growth_from_root() {
        let mut h = DynamicGraph::new(4, 0);
        h.grow(0, 2);
        let mut v: Vec<Node> = h.vertices().collect();
        v.sort();
        assert_eq!(v, vec![(0, 0), (0, 1), (2, 1)]);
        assert_eq!(h.edges().len(), 2);
        assert!(h.is_binary_tree());

        let before = h.clone();
        h.grow(1, 3);
        assert_eq!(h, before);
    }

    #[test]
    fn leaf_count_grows_by_one_before_collision() {
        // every 3-event trace on 4 patches, starting from patch 0, up to the
        // first collision
        let pairs: Vec<(usize, usize)> = (0..4)
            .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
            .collect();
        for &e1 in &pairs {
            for &e2 in &pairs {
                for &e3 in &pairs {
                    let mut h = DynamicGraph::new(4, 0);
                    let mut occupied = BTreeSet::from([0usize]);
                    for (x, y) in [e1, e2, e3] {
                        let (ox, oy) = (occupied.contains(&x), occupied.contains(&y));
                        if ox && oy {
                            break;
                        }
                        let before = h.leaves().len();
                        h.grow(x, y);
                        let after = h.leaves().len();
                        if ox || oy {
                            occupied.insert(x);
                            occupied.insert(y);
                            assert_eq!(after, before + 1);
                        } else {
                            assert_eq!(after, before);
                        }
                        assert!(h.is_binary_tree());
                        assert_eq!(after, occupied.len());
                    }
                }
            }
        }
    }

    #[test]
    fn same_generation_collision_breaks_the_tree() {
        let mut h = DynamicGraph::new(3, 0);
        h.grow(0, 1); // leaves (0,1), (1,1)
        h.grow(0, 1); // collision between two generation-1 leaves
        assert!(!h.is_binary_tree());
        let targets: Vec<Node> = h.edges()[2..].iter().map(|e| e.1).collect();
        // (0,2) and (1,2) each receive two oriented edges
        assert_eq!(targets.iter().filter(|&&t| t == (0, 2)).count(), 2);
        assert_eq!(targets.iter().filter(|&&t| t == (1, 2)).count(), 2);
    }

    #[test]
    fn single_vertex_report() {
        let h = DynamicGraph::new(3, 1);
        let r = check_tree_and_bounds(&h, &conf(&[0.0, 1.0, 0.0]), 0.2, true);
        assert!(r.ok(), "{:?}", r.violations);
        assert!(r.is_tree);
        assert_eq!(r.leaves, 1);
    }

    #[test]
    fn report_flags_bound_violation() {
        let mut h = DynamicGraph::new(2, 0);
        h.grow(0, 1);
        // densities that cannot come from the dynamics
        let r = check_tree_and_bounds(&h, &conf(&[0.9, 0.1]), 0.2, true);
        assert!(!r.ok());
        assert!(r.violations.iter().any(|v| v.contains("leaf (0, 1)")));
    }

    #[test]
    fn trajectory_dump_format() {
        let g = build_complete(3).unwrap();
        let params = Params::new(0.5, 0.2).unwrap();
        let init = InitialCondition::SingleOccupied(0);
        let p0 = crate::engine::Process::new(init.realize(3).unwrap(), params);
        let mut dump = TrajectoryDump::new(Vec::new(), &p0).unwrap();
        let mut s = EventStream::mixing_only(&g, 1);
        run_mixing_only_with(
            &init,
            params,
            &mut s,
            &RunOptions::new(StoppingRule::EventCap(3)),
            |i, ev, p| dump.record(i, ev, p),
        )
        .unwrap();
        let text = String::from_utf8(dump.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "event_index,time,kind,target,n_occupied,class");
        assert_eq!(lines[1], "0,0,start,,1,neither");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,") && lines[2].contains(",mixing,"));
    }
}
