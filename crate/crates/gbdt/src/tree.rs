use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `bin ≤ threshold_bin` (raw value `≤ threshold`) go left.
    Split { feature: usize, threshold_bin: u8, threshold: f64, gain: f64, left: usize, right: usize },
    Leaf { value: f64, count: usize },
}

/// Binary tree stored as a node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64, count: usize) -> Self {
        RegressionTree { nodes: vec![Node::Leaf { value, count }] }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn leaf_counts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { count, .. } => Some(*count),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Leaf value for a raw feature row.
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Leaf value for a row given as `bin(feature)`.
    pub fn predict_binned(&self, bin: impl Fn(usize) -> u8) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold_bin, left, right, .. } => {
                    i = if bin(*feature) <= *threshold_bin { *left } else { *right };
                }
            }
        }
    }

    pub fn dump(&self, out: &mut String, names: Option<&[String]>) {
        fn go(t: &RegressionTree, i: usize, depth: usize, out: &mut String, names: Option<&[String]>) {
            let pad = "  ".repeat(depth + 1);
            match &t.nodes[i] {
                Node::Leaf { value, count } => out.push_str(&format!("{pad}leaf {value:.6e} (n={count})\n")),
                Node::Split { feature, threshold_bin, threshold, gain, left, right } => {
                    let name = names.and_then(|n| n.get(*feature)).cloned().unwrap_or_else(|| format!("f{feature}"));
                    out.push_str(&format!("{pad}{name} <= {threshold:.6e} [bin {threshold_bin}] gain {gain:.4e}\n"));
                    go(t, *left, depth + 1, out, names);
                    go(t, *right, depth + 1, out, names);
                }
            }
        }
        go(self, 0, 0, out, names);
    }
}
