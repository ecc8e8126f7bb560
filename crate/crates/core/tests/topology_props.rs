use std::collections::BTreeSet;

use allee::topology::{
    build_circulant, build_complete, build_ring, load_edge_list, parse_edge_list, TopologyError,
};
use allee::Graph;
use proptest::prelude::*;

fn edge_set(g: &Graph) -> BTreeSet<(usize, usize)> {
    g.edges()
        .iter()
        .map(|e| (e.0.min(e.1), e.0.max(e.1)))
        .collect()
}

/// Structural checks every graph must pass, written against the edge list
/// alone so they do not reuse the adjacency code under test.
fn assert_simple_and_consistent(g: &Graph) {
    let n = g.n_vertices();
    let set = edge_set(g);
    assert_eq!(set.len(), g.n_edges(), "duplicate edges");
    for &(u, v) in &set {
        assert_ne!(u, v, "self-loop at {u}");
        assert!(v < n);
        assert!(g.has_edge(u, v) && g.has_edge(v, u));
        assert!(g.neighbors(u).contains(&v) && g.neighbors(v).contains(&u));
    }
    let degree_sum: usize = (0..n).map(|v| g.degree(v)).sum();
    assert_eq!(degree_sum, 2 * g.n_edges());
    for v in 0..n {
        for &w in g.neighbors(v) {
            assert!(set.contains(&(v.min(w), v.max(w))));
        }
    }
}

proptest! {
    #[test]
    fn ring_is_two_regular(n in 3usize..200) {
        let g = build_ring(n).unwrap();
        assert_simple_and_consistent(&g);
        prop_assert_eq!(g.n_edges(), n);
        prop_assert_eq!(g.regular_degree(), Some(2));
        for x in 0..n {
            prop_assert!(g.has_edge(x, (x + 1) % n));
        }
    }

    #[test]
    fn complete_has_every_pair(n in 2usize..60) {
        let g = build_complete(n).unwrap();
        assert_simple_and_consistent(&g);
        prop_assert_eq!(g.n_edges(), n * (n - 1) / 2);
        prop_assert_eq!(g.regular_degree(), Some(n - 1));
    }

    #[test]
    fn circulant_degree_and_edge_count(n in 3usize..80, d_half in 1usize..40) {
        let d = 2 * d_half;
        prop_assume!(d < n);
        let g = build_circulant(n, d).unwrap();
        assert_simple_and_consistent(&g);
        prop_assert_eq!(g.regular_degree(), Some(d));
        prop_assert_eq!(g.n_edges(), n * d / 2);
        // Direct definition: x ~ y iff the cyclic distance is at most d/2.
        for x in 0..n {
            for y in 0..n {
                let diff = x.abs_diff(y);
                let dist = diff.min(n - diff);
                prop_assert_eq!(g.has_edge(x, y), x != y && dist <= d / 2);
            }
        }
    }

    #[test]
    fn circulant_two_is_the_ring(n in 3usize..150) {
        prop_assert_eq!(edge_set(&build_circulant(n, 2).unwrap()), edge_set(&build_ring(n).unwrap()));
    }

    #[test]
    fn circulant_full_degree_is_complete(n in 3usize..50) {
        // n - 1 must be even to be a valid circulant degree.
        prop_assume!((n - 1) % 2 == 0);
        prop_assert_eq!(
            edge_set(&build_circulant(n, n - 1).unwrap()),
            edge_set(&build_complete(n).unwrap())
        );
    }

    #[test]
    fn edge_list_accepts_exactly_valid_input(
        n in 1usize..20,
        rows in prop::collection::vec((0usize..24, 0usize..24), 0..40),
    ) {
        let result = load_edge_list(&rows, n);
        let first_bad = rows.iter().position(|&(u, v)| u == v || u >= n || v >= n);
        let mut seen = BTreeSet::new();
        let first_dup = rows.iter().position(|&(u, v)| !seen.insert((u.min(v), u.max(v))));
        match (first_bad, first_dup, result) {
            (None, None, Ok(g)) => {
                assert_simple_and_consistent(&g);
                prop_assert_eq!(g.n_vertices(), n);
                let expected: BTreeSet<_> = rows.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
                prop_assert_eq!(edge_set(&g), expected);
            }
            (None, None, Err(e)) => prop_assert!(false, "valid rows rejected: {e}"),
            (_, _, Ok(_)) => prop_assert!(false, "invalid rows accepted"),
            (_, _, Err(_)) => {}
        }
    }

    #[test]
    fn text_round_trip(n in 3usize..40, d_half in 1usize..10) {
        let d = 2 * d_half;
        prop_assume!(d < n);
        let g = build_circulant(n, d).unwrap();
        let mut text = format!("# circulant({n}, {d})\nN {n}\n");
        for &(u, v) in &edge_set(&g) {
            text.push_str(&format!("{u} {v}\n"));
        }
        let h = parse_edge_list(&text).unwrap();
        prop_assert_eq!(edge_set(&h), edge_set(&g));
    }
}

#[test]
fn rejected_rows_carry_their_index() {
    let err = load_edge_list(&[(0, 1), (1, 2), (2, 2)], 3).unwrap_err();
    assert!(
        matches!(err, TopologyError::SelfLoop { row: 2, .. }),
        "{err:?}"
    );
    let err = load_edge_list(&[(0, 1), (1, 0)], 3).unwrap_err();
    assert!(
        matches!(err, TopologyError::DuplicateEdge { row: 1, .. }),
        "{err:?}"
    );
    let err = load_edge_list(&[(0, 5)], 3).unwrap_err();
    assert!(
        matches!(err, TopologyError::VertexOutOfRange { row: 0, .. }),
        "{err:?}"
    );
}
