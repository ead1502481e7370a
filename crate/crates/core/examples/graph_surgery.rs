//! Graph restructuring: splitting a labeled graph into disjoint session
//! subgraphs, severing links to a class subset and injecting link noise.

use std::collections::BTreeSet;

use gfscil::graph::{inject_link_noise, restrict_to_sessions, sever_to_class_subset, LabelVector, SparseGraph};
use gfscil::rng;

fn main() -> gfscil::Result<()> {
    // Two triangles of classes 0 and 1, a path of class 2, and bridges.
    let edges = [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (6, 7), (7, 8), (2, 3), (5, 6)];
    let g = SparseGraph::from_edges(&edges, 9)?;
    let labels = LabelVector::from_dense(&[0, 0, 0, 1, 1, 1, 2, 2, 2]);
    println!("graph: {} nodes, {} undirected edges", g.node_count(), g.undirected_edge_count());

    let sessions = [BTreeSet::from([0, 1]), BTreeSet::from([2])];
    let split = restrict_to_sessions(&g, &labels, &sessions)?;
    for (t, s) in split.sessions.iter().enumerate() {
        println!(
            "session {t}: nodes {:?}, edges {:?}",
            s.local_to_global,
            s.graph.undirected_edges()
        );
    }

    let severed = sever_to_class_subset(&g, &labels, &BTreeSet::from([0]));
    println!("kept inside class 0: {:?}", severed.undirected_edges());

    let mut noise_rng = rng::stream(7, "example-noise");
    let noised = inject_link_noise(&g, 0.3, &mut noise_rng);
    println!(
        "after 30% link noise: {} edges (was {})",
        noised.undirected_edge_count(),
        g.undirected_edge_count()
    );
    Ok(())
}
