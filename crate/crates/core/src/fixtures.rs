//! Bundled causal graphs for the synthetic and voting experiments, and a
//! small voting-schema CSV for exercising the loader offline.

use crate::graph::{CausalGraph, GraphError};

pub const SYNTHETIC_WELL: &str = include_str!("../fixtures/graphs/synthetic_well.graph");
pub const SYNTHETIC_MIS: &str = include_str!("../fixtures/graphs/synthetic_mis.graph");
pub const VOTING_WELL: &str = include_str!("../fixtures/graphs/voting_well.graph");
pub const VOTING_MIS: &str = include_str!("../fixtures/graphs/voting_mis.graph");

/// 200 synthetic rows in the voting-data schema, spread over the ten default cities.
pub const VOTING_FIXTURE: &str = include_str!("../fixtures/voting_fixture.csv");

/// Names accepted by [`bundled_graph`].
pub const GRAPH_NAMES: [&str; 4] = ["synthetic_well", "synthetic_mis", "voting_well", "voting_mis"];

/// Source text of a bundled graph by name.
pub fn bundled_graph_text(name: &str) -> Option<&'static str> {
    match name {
        "synthetic_well" => Some(SYNTHETIC_WELL),
        "synthetic_mis" => Some(SYNTHETIC_MIS),
        "voting_well" => Some(VOTING_WELL),
        "voting_mis" => Some(VOTING_MIS),
        _ => None,
    }
}

/// Parses a bundled graph by name; `None` for unknown names.
pub fn bundled_graph(name: &str) -> Option<Result<CausalGraph, GraphError>> {
    bundled_graph_text(name).map(CausalGraph::parse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;

    #[test]
    fn all_bundled_graphs_parse() {
        for name in GRAPH_NAMES {
            let g = bundled_graph(name).unwrap().unwrap();
            assert!(g.action().is_some() && g.outcome().is_some(), "{name}");
        }
    }

    #[test]
    fn misspecified_synthetic_graph_moves_the_first_covariate() {
        let g = bundled_graph("synthetic_mis").unwrap().unwrap();
        assert_eq!(g.parents("X1").unwrap(), vec!["X0"]);
        assert_eq!(g.parents("X2").unwrap(), vec!["X1"]);
        assert_eq!(g.parents("Y").unwrap(), vec!["X2"]);
        let w = bundled_graph("synthetic_well").unwrap().unwrap();
        assert_eq!(w.parents("Y").unwrap().len(), 3);
    }

    #[test]
    fn voting_graphs_intervene_on_the_outcome() {
        for name in ["voting_well", "voting_mis"] {
            let g = bundled_graph(name).unwrap().unwrap();
            let y = g.outcome().unwrap();
            assert!(g.is_intervened(y));
            assert_eq!(g.kind(g.index_of("yob").unwrap()), NodeKind::Categorical(5));
        }
    }
}
