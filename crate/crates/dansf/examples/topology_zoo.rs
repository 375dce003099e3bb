//! Generate the three topology families, prune each to a tree rooted at an
//! updating node, and print the resulting branch structure and gather
//! schedule.
//!
//! ```bash
//! cargo run --example topology_zoo
//! ```

use dansf::network::{gather_schedule, generate_topology, prune_to_tree, TopologyKind};

fn main() -> dansf::Result<()> {
    let k = 8;
    for kind in [
        TopologyKind::FullyConnected,
        TopologyKind::Line,
        TopologyKind::ErdosRenyi { p: 0.4 },
    ] {
        let graph = generate_topology(kind, k, 7)?;
        println!(
            "== {} ({} nodes, {} edges)",
            kind.label(),
            graph.num_nodes(),
            graph.num_edges()
        );

        let q = 3;
        let tree = prune_to_tree(&graph, q)?;
        println!("   tree rooted at {q}: {:?}", tree.edges().collect::<Vec<_>>());
        for n in tree.root_neighbors() {
            println!("   branch via {n}: {:?}", tree.branch_members(n));
        }
        let schedule = gather_schedule(&tree);
        println!("   gather order: {:?}", schedule.steps());

        // the edge-list text format round-trips through the parser
        let text = graph.to_edge_list();
        let parsed = dansf::network::NetworkGraph::parse_edge_list(&text)?;
        assert_eq!(parsed, graph);
        println!();
    }
    Ok(())
}
