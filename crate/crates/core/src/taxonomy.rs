//! Rooted class taxonomy with rank-weighted edges and the taxon distance.
//!
//! Every node carries a rank level (leaves are level 0). The edge joining a
//! level-`l` node to its parent weighs `w(l)`; by default `w(l) = 0.5 * 2^l`,
//! so two leaves under one parent are exactly 1.0 apart and divergence higher
//! in the tree costs more.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Node description as read from a taxonomy file.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: u64,
    pub name: String,
    pub level: u32,
    pub parent_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonNode {
    pub id: u64,
    pub name: String,
    pub level: u32,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonTree {
    nodes: Vec<TaxonNode>,
    by_id: BTreeMap<u64, usize>,
    leaves_by_name: BTreeMap<String, usize>,
    children: Vec<u32>,
    weights: Vec<f64>,
    root: usize,
}

/// Default edge weight above a level-`level` node.
pub fn default_weight(level: u32) -> f64 {
    0.5 * libm::pow(2.0, f64::from(level))
}

impl TaxonTree {
    /// Validates the node list and builds the tree.
    ///
    /// `weight_overrides[l]`, when present, replaces the default weight of
    /// level `l`.
    pub fn new(specs: Vec<NodeSpec>, weight_overrides: &[f64]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Taxonomy("no nodes".into()));
        }
        let mut by_id = BTreeMap::new();
        for (i, s) in specs.iter().enumerate() {
            if by_id.insert(s.id, i).is_some() {
                return Err(Error::Taxonomy(format!("duplicate node id {}", s.id)));
            }
        }
        let mut nodes = Vec::with_capacity(specs.len());
        let mut roots = Vec::new();
        for (i, s) in specs.into_iter().enumerate() {
            let parent = match s.parent_id {
                None => {
                    roots.push(i);
                    None
                }
                Some(pid) => Some(*by_id.get(&pid).ok_or_else(|| {
                    Error::Taxonomy(format!("node {} has unknown parent id {pid}", s.id))
                })?),
            };
            nodes.push(TaxonNode {
                id: s.id,
                name: s.name,
                level: s.level,
                parent,
            });
        }

        // Cycle check before anything walks parent links.
        let mut state = vec![0u8; nodes.len()]; // 0 new, 1 on path, 2 done
        for start in 0..nodes.len() {
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(u) = cur {
                match state[u] {
                    2 => break,
                    1 => {
                        return Err(Error::Taxonomy(format!(
                            "cycle through node {}",
                            nodes[u].id
                        )))
                    }
                    _ => {}
                }
                state[u] = 1;
                path.push(u);
                cur = nodes[u].parent;
            }
            for u in path {
                state[u] = 2;
            }
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Taxonomy("no root".into())),
            _ => return Err(Error::Taxonomy(format!("{} roots", roots.len()))),
        };

        let mut children = vec![0u32; nodes.len()];
        for n in &nodes {
            if let Some(p) = n.parent {
                children[p] += 1;
                if nodes[p].level <= n.level {
                    return Err(Error::Taxonomy(format!(
                        "node {} (level {}) has parent {} at level {}",
                        n.id, n.level, nodes[p].id, nodes[p].level
                    )));
                }
            }
        }

        let max_level = nodes.iter().map(|n| n.level).max().unwrap_or(0);
        let levels = (max_level as usize).max(weight_overrides.len()).max(1);
        let weights: Vec<f64> = (0..levels)
            .map(|l| {
                weight_overrides
                    .get(l)
                    .copied()
                    .unwrap_or_else(|| default_weight(l as u32))
            })
            .collect();
        if weights[0] != 0.5 {
            return Err(Error::Taxonomy(format!(
                "leaf edge weight must be 0.5, got {}",
                weights[0]
            )));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if !(pair[0] > 0.0 && pair[1] >= pair[0]) {
                return Err(Error::Taxonomy(format!(
                    "non-monotone weights at level {l}: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }

        let mut leaves_by_name = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if children[i] == 0 && leaves_by_name.insert(n.name.clone(), i).is_some() {
                return Err(Error::Taxonomy(format!("duplicate leaf name {:?}", n.name)));
            }
        }

        Ok(Self {
            nodes,
            by_id,
            leaves_by_name,
            children,
            weights,
            root,
        })
    }

    pub fn nodes(&self) -> &[TaxonNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node] == 0
    }

    /// Per-level edge weights, index = level.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, level: u32) -> f64 {
        self.weights
            .get(level as usize)
            .copied()
            .unwrap_or_else(|| default_weight(level))
    }

    pub fn node_index(&self, id: u64) -> Result<usize> {
        self.by_id
            .get(&id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(format!("{id}")))
    }

    pub fn leaf_by_name(&self, name: &str) -> Option<usize> {
        self.leaves_by_name.get(name).copied()
    }

    /// Maps class names onto leaf nodes.
    pub fn class_leaves(&self, class_names: &[String]) -> Result<Vec<usize>> {
        class_names
            .iter()
            .map(|n| {
                self.leaf_by_name(n)
                    .ok_or_else(|| Error::UnmappedClass(n.clone()))
            })
            .collect()
    }

    /// Number of edges on the longest root-to-node path.
    pub fn depth(&self) -> usize {
        (0..self.nodes.len())
            .map(|mut u| {
                let mut d = 0;
                while let Some(p) = self.nodes[u].parent {
                    d += 1;
                    u = p;
                }
                d
            })
            .max()
            .unwrap_or(0)
    }

    /// Lowest common ancestor of two nodes (indices).
    pub fn lca(&self, a: usize, b: usize) -> usize {
        self.walk(a, b).0
    }

    /// Weighted path length between two nodes (indices).
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.walk(a, b).1
    }

    /// Weighted path length between two nodes given by id.
    pub fn distance_by_id(&self, a: u64, b: u64) -> Result<f64> {
        Ok(self.distance(self.node_index(a)?, self.node_index(b)?))
    }

    // Climbs from both ends, always moving the lower-level node, until the
    // two meet. Returns the meeting node and the accumulated weight.
    fn walk(&self, mut a: usize, mut b: usize) -> (usize, f64) {
        let mut total = 0.0;
        while a != b {
            let (la, lb) = (self.nodes[a].level, self.nodes[b].level);
            if la <= lb {
                total += self.weight(la);
                a = self.nodes[a].parent.expect("non-root has a parent");
            }
            if lb <= la {
                total += self.weight(lb);
                b = self.nodes[b].parent.expect("non-root has a parent");
            }
        }
        (a, total)
    }
}

/// Taxon distance between two nodes identified by id.
pub fn taxon_distance(tree: &TaxonTree, a: u64, b: u64) -> Result<f64> {
    tree.distance_by_id(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn spec(id: u64, name: &str, level: u32, parent: Option<u64>) -> NodeSpec {
        NodeSpec {
            id,
            name: name.to_string(),
            level,
            parent_id: parent,
        }
    }

    fn gulls() -> TaxonTree {
        TaxonTree::new(
            vec![
                spec(0, "Aves", 3, None),
                spec(1, "Laridae", 2, Some(0)),
                spec(2, "Larus", 1, Some(1)),
                spec(3, "Larus argentatus", 0, Some(2)),
                spec(4, "Larus fuscus", 0, Some(2)),
                spec(5, "Sterna", 1, Some(1)),
                spec(6, "Sterna hirundo", 0, Some(5)),
                spec(7, "Corvidae", 2, Some(0)),
                spec(8, "Corvus", 1, Some(7)),
                spec(9, "Corvus corax", 0, Some(8)),
            ],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn congeners_are_one_apart() {
        let t = gulls();
        assert_eq!(taxon_distance(&t, 3, 4).unwrap(), 1.0);
        assert_eq!(taxon_distance(&t, 3, 3).unwrap(), 0.0);
        // same family, different genus: 2 * (0.5 + 1.0)
        assert_eq!(taxon_distance(&t, 3, 6).unwrap(), 3.0);
        // different family: 2 * (0.5 + 1 + 2)
        assert_eq!(taxon_distance(&t, 3, 9).unwrap(), 7.0);
        // leaf to its own genus
        assert_eq!(taxon_distance(&t, 3, 2).unwrap(), 0.5);
        assert_eq!(t.lca(t.node_index(4).unwrap(), t.node_index(6).unwrap()), 1);
    }

    #[test]
    fn minimal_tree() {
        let t = TaxonTree::new(
            vec![spec(0, "r", 1, None), spec(1, "a", 0, Some(0)), spec(2, "b", 0, Some(0))],
            &[],
        )
        .unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.distance(1, 2), 1.0);
        assert!(t.is_leaf(1) && !t.is_leaf(0));
    }

    #[test]
    fn default_weights_double() {
        let t = TaxonTree::new(
            vec![
                spec(0, "r", 4, None),
                spec(1, "x", 3, Some(0)),
                spec(2, "y", 2, Some(1)),
                spec(3, "z", 1, Some(2)),
                spec(4, "leaf", 0, Some(3)),
            ],
            &[],
        )
        .unwrap();
        assert_eq!(&t.weights()[..4], &[0.5, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let err = TaxonTree::new(vec![spec(0, "r", 1, None), spec(1, "a", 0, Some(1))], &[]);
        assert!(matches!(err, Err(Error::Taxonomy(m)) if m.contains("cycle")));
    }

    #[test]
    fn structural_errors() {
        assert!(TaxonTree::new(vec![spec(0, "r", 1, None), spec(1, "a", 0, None)], &[]).is_err());
        assert!(TaxonTree::new(vec![spec(0, "r", 1, None), spec(1, "a", 0, Some(9))], &[]).is_err());
        let two = vec![spec(0, "r", 1, None), spec(1, "a", 0, Some(0))];
        assert!(TaxonTree::new(two.clone(), &[0.5, 0.4]).is_err());
        assert!(TaxonTree::new(two.clone(), &[0.7]).is_err());
        assert!(TaxonTree::new(two, &[0.5, 3.0]).is_ok());
    }

    #[test]
    fn overrides_apply_per_level() {
        let t = TaxonTree::new(
            vec![spec(0, "r", 2, None), spec(1, "g", 1, Some(0)), spec(2, "a", 0, Some(1)), spec(3, "b", 0, Some(0))],
            &[0.5, 3.0],
        )
        .unwrap();
        // a -> g (0.5) -> r (3.0); b -> r (0.5)
        assert_eq!(t.distance(2, 3), 4.0);
    }

    #[test]
    fn unknown_classes_are_reported() {
        let t = gulls();
        let names = vec!["Larus fuscus".to_string(), "Pica pica".to_string()];
        assert!(matches!(t.class_leaves(&names), Err(Error::UnmappedClass(n)) if n == "Pica pica"));
        assert!(t.distance_by_id(3, 99).is_err());
    }
}
