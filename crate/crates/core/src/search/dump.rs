//! JSON form of a search tree, for `--dump-tree` and debugging.

use serde::{Deserialize, Serialize};

use super::{ReasoningTree, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub entity: String,
    pub path: String,
    #[serde(rename = "N")]
    pub visits: u64,
    #[serde(rename = "Q")]
    pub value: f64,
    pub eos: bool,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub root: usize,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
    pub nodes: Vec<NodeDump>,
}

impl From<&ReasoningTree> for TreeDump {
    fn from(tree: &ReasoningTree) -> Self {
        TreeDump {
            root: tree.root().0,
            iterations: tree.iterations,
            stop: tree.stop,
            nodes: tree
                .nodes()
                .map(|(id, n)| NodeDump {
                    id: id.0,
                    entity: n.entity.to_string(),
                    path: n.path.to_string(),
                    visits: n.visits,
                    value: n.value,
                    eos: n.eos_leaf,
                    children: n.children.iter().map(|c| c.0).collect(),
                })
                .collect(),
        }
    }
}

impl ReasoningTree {
    pub fn dump(&self) -> TreeDump {
        TreeDump::from(self)
    }
}
