//! Directed per-session graphs and undirected session-plus-neighbors graphs.

use std::collections::{BTreeSet, HashMap};

use gradkit::Tensor;
use serde::Serialize;

use crate::corpus::ItemIdx;

/// Directed click-transition graph of one session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntraGraph {
    /// Distinct items in order of first occurrence.
    pub node_items: Vec<ItemIdx>,
    /// Node slot of every click position.
    pub alias: Vec<usize>,
    /// `edge_counts[i][j]`: number of `i -> j` transitions.
    pub edge_counts: Vec<Vec<u32>>,
    #[serde(skip)]
    pub a_out: Tensor,
    #[serde(skip)]
    pub a_in: Tensor,
    pub last_slot: usize,
}

impl IntraGraph {
    pub fn len(&self) -> usize {
        self.node_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_items.is_empty()
    }

    /// `A_out[i][j]` as an exact fraction `(numerator, denominator)`.
    pub fn out_fraction(&self, i: usize, j: usize) -> (u32, u32) {
        let deg: u32 = self.edge_counts[i].iter().sum();
        (self.edge_counts[i][j], deg.max(1))
    }

    /// `A_in[i][j]` as an exact fraction: incoming edges `j -> i` over the
    /// in-degree of `i`.
    pub fn in_fraction(&self, i: usize, j: usize) -> (u32, u32) {
        let deg: u32 = self.edge_counts.iter().map(|row| row[i]).sum();
        (self.edge_counts[j][i], deg.max(1))
    }
}

fn first_occurrence(items: impl IntoIterator<Item = ItemIdx>) -> (Vec<ItemIdx>, HashMap<ItemIdx, usize>) {
    let mut nodes = Vec::new();
    let mut slot = HashMap::new();
    for i in items {
        slot.entry(i).or_insert_with(|| {
            nodes.push(i);
            nodes.len() - 1
        });
    }
    (nodes, slot)
}

/// Builds the directed graph of `prefix`.
///
/// Each consecutive pair contributes one `i -> j` transition. Weights are
/// row-normalized by the degree counted with multiplicity:
/// `A_out[i][j] = count(i -> j) / outdeg(i)` and
/// `A_in[i][j] = count(j -> i) / indeg(i)`, zero for nodes without edges.
pub fn build_intra_graph(prefix: &[ItemIdx]) -> IntraGraph {
    assert!(!prefix.is_empty(), "build_intra_graph: empty prefix");
    let (node_items, slot) = first_occurrence(prefix.iter().copied());
    let n = node_items.len();
    let alias: Vec<usize> = prefix.iter().map(|i| slot[i]).collect();
    let mut edge_counts = vec![vec![0u32; n]; n];
    for w in alias.windows(2) {
        edge_counts[w[0]][w[1]] += 1;
    }
    let mut a_out = Tensor::zeros(&[n, n]);
    let mut a_in = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let outdeg: u32 = edge_counts[i].iter().sum();
        let indeg: u32 = edge_counts.iter().map(|row| row[i]).sum();
        for j in 0..n {
            if outdeg > 0 {
                a_out.set(i, j, edge_counts[i][j] as f64 / outdeg as f64);
            }
            if indeg > 0 {
                a_in.set(i, j, edge_counts[j][i] as f64 / indeg as f64);
            }
        }
    }
    IntraGraph {
        node_items,
        last_slot: *alias.last().expect("non-empty"),
        alias,
        edge_counts,
        a_out,
        a_in,
    }
}

/// Undirected graph over a session and its neighbor sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InterGraph {
    /// Prefix items first (first-occurrence order), then new neighbor items.
    pub node_items: Vec<ItemIdx>,
    /// Sorted neighbor slots per node, always including the node itself.
    pub adjacency: Vec<Vec<usize>>,
    /// Node slot of every click position of the prefix.
    pub session_slots: Vec<usize>,
    pub last_slot: usize,
}

impl InterGraph {
    pub fn len(&self) -> usize {
        self.node_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_items.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        let total: usize = self.adjacency.iter().map(Vec::len).sum();
        // self-loops are counted once, other edges twice
        (total - self.len()) / 2
    }

    /// Distinct prefix slots in first-occurrence order.
    pub fn session_nodes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        self.session_slots.iter().copied().filter(|&s| !std::mem::replace(&mut seen[s], true)).collect()
    }

    /// Relabels nodes so that old slot `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> InterGraph {
        assert_eq!(perm.len(), self.len(), "permutation length");
        let mut node_items = vec![0; self.len()];
        let mut adjacency = vec![Vec::new(); self.len()];
        for (old, &new) in perm.iter().enumerate() {
            node_items[new] = self.node_items[old];
            let mut adj: Vec<usize> = self.adjacency[old].iter().map(|&j| perm[j]).collect();
            adj.sort_unstable();
            adjacency[new] = adj;
        }
        InterGraph {
            node_items,
            adjacency,
            session_slots: self.session_slots.iter().map(|&s| perm[s]).collect(),
            last_slot: perm[self.last_slot],
        }
    }
}

/// Builds the undirected graph of `prefix` merged with `neighbors`.
///
/// Every consecutive pair in the prefix or in any neighbor session adds an
/// undirected edge; duplicates collapse and every node gets a self-loop.
pub fn build_inter_graph<S: AsRef<[ItemIdx]>>(prefix: &[ItemIdx], neighbors: &[S]) -> InterGraph {
    assert!(!prefix.is_empty(), "build_inter_graph: empty prefix");
    let all = prefix.iter().chain(neighbors.iter().flat_map(|s| s.as_ref().iter())).copied();
    let (node_items, slot) = first_occurrence(all);
    let n = node_items.len();
    let mut adj: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for seq in std::iter::once(prefix).chain(neighbors.iter().map(|s| s.as_ref())) {
        for w in seq.windows(2) {
            let (a, b) = (slot[&w[0]], slot[&w[1]]);
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let session_slots: Vec<usize> = prefix.iter().map(|i| slot[i]).collect();
    InterGraph {
        node_items,
        adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        last_slot: *session_slots.last().expect("non-empty"),
        session_slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
    }

    #[test]
    fn single_click() {
        let g = build_intra_graph(&[7]);
        assert_eq!(g.len(), 1);
        assert_eq!(rows(&g.a_out), vec![vec![0.0]]);
        assert_eq!(rows(&g.a_in), vec![vec![0.0]]);
    }

    #[test]
    fn figure_session_out_rows() {
        let g = build_intra_graph(&[1, 3, 2, 3, 4, 1]);
        assert_eq!(g.node_items, vec![1, 3, 2, 4]);
        assert_eq!(g.alias, vec![0, 1, 2, 1, 3, 0]);
        assert_eq!(g.last_slot, 0);
        assert_eq!(
            rows(&g.a_out),
            vec![
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.5],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0, 0.0]
            ]
        );
    }

    #[test]
    fn multiplicity_normalization() {
        let g = build_intra_graph(&[1, 2, 1, 2]);
        assert_eq!(g.edge_counts, vec![vec![0, 2], vec![1, 0]]);
        assert_eq!(g.a_out.get(0, 1), 1.0);
        assert_eq!(g.out_fraction(0, 1), (2, 2));
    }

    #[test]
    fn consecutive_repeat_is_a_self_edge() {
        let g = build_intra_graph(&[5, 5, 6]);
        assert_eq!(g.a_out.get(0, 0), 0.5);
        assert_eq!(g.a_in.get(0, 0), 1.0);
    }

    #[test]
    fn inter_without_neighbors() {
        let g = build_inter_graph::<Vec<ItemIdx>>(&[1, 2], &[]);
        assert_eq!(g.node_items, vec![1, 2]);
        assert_eq!(g.adjacency, vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn inter_with_one_neighbor() {
        let g = build_inter_graph(&[1, 2], &[vec![2, 3]]);
        assert_eq!(g.node_items, vec![1, 2, 3]);
        assert_eq!(g.adjacency, vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]]);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn repeated_pair_collapses() {
        let g = build_inter_graph(&[1], &[vec![2, 3, 2, 3, 2]]);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.adjacency[1], vec![1, 2]);
    }

    #[test]
    fn permutation_round_trip() {
        let g = build_inter_graph(&[1, 2, 1], &[vec![2, 3], vec![4, 1]]);
        let perm = vec![2, 0, 3, 1];
        let p = g.permute(&perm);
        let mut inv = vec![0; perm.len()];
        for (i, &j) in perm.iter().enumerate() {
            inv[j] = i;
        }
        assert_eq!(p.permute(&inv), g);
        assert_eq!(p.node_items[p.last_slot], 1);
        assert_eq!(g.session_nodes(), vec![0, 1]);
    }
}
