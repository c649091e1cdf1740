//! Directed network, global path set and link–path incidence.

use std::collections::HashMap;

use petgraph::algo::all_simple_paths;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// Default bound on the number of links in an enumerated path.
pub const DEFAULT_MAX_HOPS: usize = 6;

/// Graph plus the global path set `P`. Paths are stored as link index
/// sequences; `incidence[l * n_paths + p]` is 1 iff link `l` lies on path `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    nodes: Vec<NodeId>,
    links: Vec<(NodeId, NodeId)>,
    paths: Vec<Vec<usize>>,
    incidence: Vec<u8>,
    path_len: Vec<usize>,
}

impl NetworkModel {
    /// Builds a model from an explicit path list, validating every invariant.
    pub fn new(
        nodes: Vec<NodeId>,
        links: Vec<(NodeId, NodeId)>,
        paths: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let mut seen = HashMap::new();
        for (l, &(a, b)) in links.iter().enumerate() {
            if !nodes.contains(&a) || !nodes.contains(&b) {
                return Err(Error::Network(format!(
                    "link {a}->{b} uses an unknown node"
                )));
            }
            if a == b {
                return Err(Error::Network(format!("self-loop at node {a}")));
            }
            if seen.insert((a, b), l).is_some() {
                return Err(Error::Network(format!("duplicate link {a}->{b}")));
            }
        }
        for (p, path) in paths.iter().enumerate() {
            if path.is_empty() {
                return Err(Error::Network(format!("path {p} is empty")));
            }
            if let Some(&l) = path.iter().find(|&&l| l >= links.len()) {
                return Err(Error::Network(format!(
                    "path {p} references missing link {l}"
                )));
            }
            for w in path.windows(2) {
                if links[w[0]].1 != links[w[1]].0 {
                    return Err(Error::Network(format!(
                        "path {p}: links {} and {} are not adjacent",
                        w[0], w[1]
                    )));
                }
            }
        }
        let n_paths = paths.len();
        let mut incidence = vec![0u8; links.len() * n_paths];
        for (p, path) in paths.iter().enumerate() {
            for &l in path {
                incidence[l * n_paths + p] = 1;
            }
        }
        let path_len = (0..n_paths)
            .map(|p| {
                (0..links.len())
                    .map(|l| incidence[l * n_paths + p] as usize)
                    .sum()
            })
            .collect();
        Ok(Self {
            nodes,
            links,
            paths,
            incidence,
            path_len,
        })
    }

    /// Enumerates every simple directed path with at most `max_hops` links for
    /// each `(source, sink)` pair, in a canonical order (pair order, then path
    /// length, then link sequence).
    pub fn enumerate(
        nodes: Vec<NodeId>,
        links: Vec<(NodeId, NodeId)>,
        pairs: &[(NodeId, NodeId)],
        max_hops: usize,
    ) -> Result<Self> {
        if max_hops == 0 {
            return Err(Error::Network("max_hops must be at least 1".into()));
        }
        let mut graph = DiGraph::<NodeId, usize>::new();
        let index: HashMap<NodeId, NodeIndex> =
            nodes.iter().map(|&n| (n, graph.add_node(n))).collect();
        let mut link_of = HashMap::new();
        for (l, &(a, b)) in links.iter().enumerate() {
            let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) else {
                return Err(Error::Network(format!(
                    "link {a}->{b} uses an unknown node"
                )));
            };
            graph.add_edge(ia, ib, l);
            link_of.insert((a, b), l);
        }

        let mut paths: Vec<Vec<usize>> = Vec::new();
        for &(src, dst) in pairs {
            let (Some(&is), Some(&id)) = (index.get(&src), index.get(&dst)) else {
                return Err(Error::Network(format!(
                    "pair {src}->{dst} uses an unknown node"
                )));
            };
            if src == dst {
                return Err(Error::Network(format!(
                    "pair {src}->{dst} has identical endpoints"
                )));
            }
            let mut found: Vec<Vec<usize>> = all_simple_paths::<
                Vec<NodeIndex>,
                _,
                std::hash::RandomState,
            >(&graph, is, id, 0, Some(max_hops - 1))
            .map(|node_seq| {
                node_seq
                    .windows(2)
                    .map(|w| link_of[&(graph[w[0]], graph[w[1]])])
                    .collect()
            })
            .collect();
            found.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
            for path in found {
                if !paths.contains(&path) {
                    paths.push(path);
                }
            }
        }
        Self::new(nodes, links, paths)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn links(&self) -> &[(NodeId, NodeId)] {
        &self.links
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn path(&self, p: usize) -> &[usize] {
        &self.paths[p]
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    /// Number of links on path `p`.
    pub fn path_len(&self, p: usize) -> usize {
        self.path_len[p]
    }

    pub fn incidence(&self, link: usize, path: usize) -> u8 {
        self.incidence[link * self.paths.len() + path]
    }

    pub fn link_index(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.links.iter().position(|&l| l == (from, to))
    }

    pub fn path_source(&self, p: usize) -> NodeId {
        self.links[self.paths[p][0]].0
    }

    pub fn path_sink(&self, p: usize) -> NodeId {
        self.links[*self.paths[p].last().expect("paths are nonempty")].1
    }

    /// Indices of all paths from `source` to `sink`.
    pub fn paths_between(&self, source: NodeId, sink: NodeId) -> Vec<usize> {
        (0..self.paths.len())
            .filter(|&p| self.path_source(p) == source && self.path_sink(p) == sink)
            .collect()
    }

    /// Converts a node sequence into the link indices it traverses.
    pub fn links_along(&self, node_seq: &[NodeId]) -> Result<Vec<usize>> {
        node_seq
            .windows(2)
            .map(|w| {
                self.link_index(w[0], w[1])
                    .ok_or_else(|| Error::Network(format!("no link {}->{}", w[0], w[1])))
            })
            .collect()
    }
}
