//! Build the directed session graph and the undirected neighbor graph.
//!
//! ```bash
//! cargo run -p sessgraph --example session_graphs
//! ```

use sessgraph::graphs::{build_inter_graph, build_intra_graph};

fn main() {
    // v1, v3, v2, v3, v4, v1
    let session = [1, 3, 2, 3, 4, 1];
    let g = build_intra_graph(&session);
    println!("nodes {:?}, click -> node {:?}, last node {}", g.node_items, g.alias, g.last_slot);
    println!("\n      A_out               A_in");
    for i in 0..g.len() {
        let row = |t: &gradkit::Tensor| t.row_slice(i).iter().map(|x| format!("{x:4.1}")).collect::<Vec<_>>().join(" ");
        println!("v{}  [{}]   [{}]", g.node_items[i], row(&g.a_out), row(&g.a_in));
    }

    let neighbors = vec![vec![3, 5, 6], vec![4, 1, 7]];
    let ig = build_inter_graph(&session, &neighbors);
    println!("\ninter graph over {:?} ({} edges)", ig.node_items, ig.num_edges());
    for (i, adj) in ig.adjacency.iter().enumerate() {
        let names: Vec<String> = adj.iter().map(|&j| format!("v{}", ig.node_items[j])).collect();
        println!("  v{} -- {}", ig.node_items[i], names.join(" "));
    }
}
