//! Weighted, undirected user graph built from @-mentions, biased random
//! walks over it and node2vec embeddings.

mod walk;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Corpus;
use crate::text::{self, EmbeddingMatrix, SgnsConfig, TextError};

pub use walk::{generate_walks, sample_next, transition_probs, WalkConfig};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid walk configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] TextError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserGraph {
    nodes: Vec<String>,
    adjacency: Vec<BTreeMap<usize, u64>>,
    /// Lowercased handles (internal user ids or external names) whose unique
    /// connection count exceeded the threshold.
    celebrities: BTreeSet<String>,
    celebrity_threshold: usize,
}

impl UserGraph {
    /// Graph over `user_ids` where `mentions[i]` lists the raw handles user `i`
    /// mentioned, repeats included. Handles match user ids case-insensitively;
    /// anything else is an external handle. Self-mentions are ignored.
    ///
    /// A handle is a celebrity when it connects to more than `threshold`
    /// distinct parties in the raw mention graph (for a user: everyone it
    /// mentions or is mentioned by, internal or external; for an external
    /// handle: the users mentioning it). External celebrities are dropped
    /// before co-mention expansion, internal ones lose all edges but stay as
    /// nodes.
    pub fn from_mentions<S: AsRef<str>>(user_ids: &[String], mentions: &[Vec<S>], threshold: usize) -> Self {
        assert_eq!(user_ids.len(), mentions.len(), "one mention list per user");
        let n = user_ids.len();
        let mut lookup: HashMap<String, usize> = HashMap::with_capacity(n);
        for (i, id) in user_ids.iter().enumerate() {
            lookup.entry(id.to_lowercase()).or_insert(i);
        }

        let mut direct: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        let mut external: BTreeMap<String, BTreeMap<usize, u64>> = BTreeMap::new();
        let mut partners: Vec<BTreeSet<String>> = vec![BTreeSet::new(); n];
        for (u, list) in mentions.iter().enumerate() {
            for raw in list {
                let handle = raw.as_ref().to_lowercase();
                match lookup.get(&handle) {
                    Some(&v) if v == u => {}
                    Some(&v) => {
                        *direct.entry((u.min(v), u.max(v))).or_default() += 1;
                        partners[u].insert(handle);
                        partners[v].insert(user_ids[u].to_lowercase());
                    }
                    None => {
                        *external.entry(handle.clone()).or_default().entry(u).or_default() += 1;
                        partners[u].insert(handle);
                    }
                }
            }
        }

        let mut celebrities = BTreeSet::new();
        let mut adjacency: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
        let mut add = |a: usize, b: usize, w: u64| {
            *adjacency[a].entry(b).or_default() += w;
            *adjacency[b].entry(a).or_default() += w;
        };
        for (&(a, b), &w) in &direct {
            add(a, b, w);
        }
        for (handle, counts) in &external {
            if counts.len() > threshold {
                celebrities.insert(handle.clone());
                continue;
            }
            let members: Vec<(usize, u64)> = counts.iter().map(|(u, c)| (*u, *c)).collect();
            for (i, &(a, ca)) in members.iter().enumerate() {
                for &(b, cb) in &members[i + 1..] {
                    add(a, b, ca + cb);
                }
            }
        }
        for (u, p) in partners.iter().enumerate() {
            if p.len() > threshold {
                celebrities.insert(user_ids[u].to_lowercase());
                for v in std::mem::take(&mut adjacency[u]).into_keys() {
                    adjacency[v].remove(&u);
                }
            }
        }

        let graph = Self {
            nodes: user_ids.to_vec(),
            adjacency,
            celebrities,
            celebrity_threshold: threshold,
        };
        graph.check_invariants();
        graph
    }

    fn check_invariants(&self) {
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for (&v, &w) in nbrs {
                assert!(v != u && w >= 1, "self-loop or zero weight at {u}");
                assert_eq!(self.adjacency[v].get(&u), Some(&w), "asymmetric edge {u}-{v}");
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.nodes
    }

    pub fn neighbors(&self, u: usize) -> &BTreeMap<usize, u64> {
        &self.adjacency[u]
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<u64> {
        self.adjacency[u].get(&v).copied()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn is_isolated(&self, u: usize) -> bool {
        self.adjacency[u].is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Each edge once, `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, n)| n.range(u + 1..).map(move |(&v, &w)| (u, v, w)))
    }

    pub fn celebrities(&self) -> &BTreeSet<String> {
        &self.celebrities
    }

    pub fn celebrity_threshold(&self) -> usize {
        self.celebrity_threshold
    }

    /// Writes `u<TAB>v<TAB>weight` lines and a nodes file with one
    /// `user_id<TAB>status` line per node (`connected`, `isolated` or
    /// `celebrity`).
    /// A `header` is written first as a `#` comment in both files.
    pub fn write_edge_list(&self, edges: &Path, nodes: &Path, header: Option<&str>) -> Result<(), GraphError> {
        let write = |path: &Path, body: &[u8]| {
            std::fs::File::create(path)
                .and_then(|mut f| f.write_all(body))
                .map_err(|source| GraphError::Io {
                    path: path.to_path_buf(),
                    source,
                })
        };
        let comment = header.map(|h| format!("# {h}\n")).unwrap_or_default();
        let mut out = comment.clone();
        for (u, v, w) in self.edges() {
            out += &format!("{}\t{}\t{}\n", self.nodes[u], self.nodes[v], w);
        }
        write(edges, out.as_bytes())?;
        let mut out = comment;
        for (u, id) in self.nodes.iter().enumerate() {
            let status = if self.celebrities.contains(&id.to_lowercase()) {
                "celebrity"
            } else if self.is_isolated(u) {
                "isolated"
            } else {
                "connected"
            };
            out += &format!("{id}\t{status}\n");
        }
        write(nodes, out.as_bytes())
    }
}

/// Graph over every user of the corpus, in corpus order.
pub fn build_mention_graph(corpus: &Corpus, threshold: usize) -> UserGraph {
    let ids: Vec<String> = corpus.users().iter().map(|u| u.user_id.clone()).collect();
    let mentions: Vec<&Vec<String>> = corpus.documents().iter().map(|d| &d.mention_targets).collect();
    let mentions: Vec<Vec<&str>> = mentions
        .iter()
        .map(|m| m.iter().map(String::as_str).collect())
        .collect();
    UserGraph::from_mentions(&ids, &mentions, threshold)
}

#[derive(Debug, Clone)]
pub struct NodeEmbeddings {
    pub node_ids: Vec<String>,
    pub vectors: EmbeddingMatrix,
    pub isolated: BTreeSet<usize>,
}

impl NodeEmbeddings {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, node: usize) -> &[f64] {
        self.vectors.row(node)
    }
}

/// Skip-gram pairs from every walk: each position against all others within
/// `window` steps. Revisits of the center node itself are not pairs.
pub fn walk_pairs(walks: &[Vec<u32>], window: usize) -> Vec<text::Pair> {
    let mut pairs = Vec::new();
    for walk in walks {
        for (i, &c) in walk.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(walk.len() - 1);
            pairs.extend((lo..=hi).filter(|&j| walk[j] != c).map(|j| (c, walk[j])));
        }
    }
    pairs
}

pub fn train_node2vec(graph: &UserGraph, walks: &[Vec<u32>], config: &SgnsConfig) -> Result<NodeEmbeddings, GraphError> {
    let pairs = walk_pairs(walks, config.window);
    let n = graph.len();
    let model = text::train_sgns_shared(&pairs, n, config)?;
    // Input plus output row: on an undirected graph each endpoint of an edge
    // is both center and context, and the sum makes that symmetric.
    let mut vectors = model.input;
    for u in 0..n {
        for (x, y) in vectors.row_mut(u).iter_mut().zip(model.output.row(u)) {
            *x += y;
        }
    }
    let isolated: BTreeSet<usize> = (0..n).filter(|&u| graph.is_isolated(u)).collect();
    for &u in &isolated {
        vectors.row_mut(u).fill(0.0);
    }
    Ok(NodeEmbeddings {
        node_ids: graph.node_ids().to_vec(),
        vectors,
        isolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::cosine;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("User_{i}")).collect()
    }

    #[test]
    fn direct_and_co_mention_edges() {
        // User_1 mentions User_2 and an external account that User_3 also mentions.
        let m = vec![vec!["user_2", "External"], vec![], vec!["external"]];
        let g = UserGraph::from_mentions(&ids(3), &m, 5);
        let e: Vec<_> = g.edges().collect();
        assert_eq!(e, [(0, 1, 1), (0, 2, 2)]);
        assert!(g.celebrities().is_empty());
    }

    #[test]
    fn user_without_mentions_is_isolated() {
        let m: Vec<Vec<&str>> = vec![vec!["User_2"], vec![], vec![]];
        let g = UserGraph::from_mentions(&ids(3), &m, 5);
        assert!(g.is_isolated(2));
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn weights_accumulate_over_mentions_and_handles() {
        let m = vec![
            vec!["User_2", "User_2", "x", "x", "y"],
            vec!["user_1", "x", "y", "y", "y"],
        ];
        let g = UserGraph::from_mentions(&ids(2), &m, 5);
        // direct 3, via x 2+1, via y 1+3
        assert_eq!(g.weight(0, 1), Some(10));
    }

    #[test]
    fn self_mentions_are_ignored() {
        let m = vec![vec!["user_1", "USER_1"]];
        let g = UserGraph::from_mentions(&ids(1), &m, 5);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn external_celebrity_creates_no_clique() {
        let m: Vec<Vec<&str>> = (0..4).map(|_| vec!["star"]).collect();
        let g = UserGraph::from_mentions(&ids(4), &m, 3);
        assert_eq!(g.num_edges(), 0);
        assert!(g.celebrities().contains("star"));
        let g = UserGraph::from_mentions(&ids(4), &m, 4);
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn internal_celebrity_is_de_edged_but_kept() {
        let mut m: Vec<Vec<&str>> = (0..4).map(|_| vec!["User_5"]).collect();
        m.push(vec![]);
        m[0].push("User_2");
        let g = UserGraph::from_mentions(&ids(5), &m, 3);
        assert_eq!(g.len(), 5);
        assert!(g.is_isolated(4));
        assert!(g.celebrities().contains("user_5"));
        assert_eq!(g.edges().collect::<Vec<_>>(), [(0, 1, 1)]);
    }

    #[test]
    fn edge_list_files() {
        let m = vec![vec!["User_2"], vec![], vec![]];
        let g = UserGraph::from_mentions(&ids(3), &m, 5);
        let dir = tempfile::tempdir().unwrap();
        let (e, n) = (dir.path().join("g.tsv"), dir.path().join("nodes.tsv"));
        g.write_edge_list(&e, &n, None).unwrap();
        assert_eq!(std::fs::read_to_string(e).unwrap(), "User_1\tUser_2\t1\n");
        assert_eq!(
            std::fs::read_to_string(n).unwrap(),
            "User_1\tconnected\nUser_2\tconnected\nUser_3\tisolated\n"
        );
    }

    /// Brute-force reference: recount everything from scratch per user pair.
    fn oracle(m: &[Vec<String>], n: usize, c: usize) -> BTreeMap<(usize, usize), u64> {
        let name = |i: usize| format!("user_{}", i + 1);
        let count = |u: usize, h: &str| m[u].iter().filter(|x| x.to_lowercase() == h).count() as u64;
        let all_handles: BTreeSet<String> = m.iter().flatten().map(|h| h.to_lowercase()).collect();
        let internal = |h: &str| (0..n).any(|i| name(i) == h);
        let deg = |u: usize| {
            let mut s: BTreeSet<String> = BTreeSet::new();
            for h in &all_handles {
                if *h != name(u) && count(u, h) > 0 {
                    s.insert(h.clone());
                }
            }
            for v in 0..n {
                if v != u && count(v, &name(u)) > 0 {
                    s.insert(name(v));
                }
            }
            s.len()
        };
        let mut out = BTreeMap::new();
        for a in 0..n {
            for b in a + 1..n {
                if deg(a) > c || deg(b) > c {
                    continue;
                }
                let mut w = count(a, &name(b)) + count(b, &name(a));
                for h in all_handles.iter().filter(|h| !internal(h)) {
                    let users = (0..n).filter(|&u| count(u, h) > 0).count();
                    if users <= c && count(a, h) > 0 && count(b, h) > 0 {
                        w += count(a, h) + count(b, h);
                    }
                }
                if w > 0 {
                    out.insert((a, b), w);
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(
            m in prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["User_1", "user_2", "USER_3", "user_4", "x", "y", "Z"]), 0..6),
                4,
            ),
            c in 1usize..6,
        ) {
            let m: Vec<Vec<String>> = m.into_iter().map(|l| l.into_iter().map(String::from).collect()).collect();
            let g = UserGraph::from_mentions(&ids(4), &m, c);
            let got: BTreeMap<(usize, usize), u64> = g.edges().map(|(u, v, w)| ((u, v), w)).collect();
            prop_assert_eq!(got, oracle(&m, 4, c));
            for (u, v, _) in g.edges() {
                prop_assert!(!g.celebrities().contains(&g.node_ids()[u].to_lowercase()));
                prop_assert!(!g.celebrities().contains(&g.node_ids()[v].to_lowercase()));
            }
        }
    }

    fn small_sgns(dim: usize) -> SgnsConfig {
        SgnsConfig {
            dim,
            window: 5,
            epochs: 3,
            seed: 3,
            ..SgnsConfig::default()
        }
    }

    fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> UserGraph {
        let names = ids(n);
        let mut m: Vec<Vec<String>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            m[a].push(names[b].clone());
        }
        UserGraph::from_mentions(&names, &m, usize::MAX)
    }

    #[test]
    fn barbell_cliques_separate() {
        let mut edges = Vec::new();
        for base in [0, 10] {
            for a in 0..10 {
                for b in a + 1..10 {
                    edges.push((base + a, base + b));
                }
            }
        }
        edges.push((9, 10));
        let g = graph_from_edges(20, &edges);
        let wc = WalkConfig {
            walk_length: 40,
            walks_per_node: 10,
            ..WalkConfig::default()
        };
        let walks = generate_walks(&g, &wc).unwrap();
        let emb = train_node2vec(&g, &walks, &small_sgns(32)).unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for a in 0..20 {
            for b in a + 1..20 {
                let s = cosine(emb.vector(a), emb.vector(b));
                if (a < 10) == (b < 10) { intra.push(s) } else { inter.push(s) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) > mean(&inter), "{} vs {}", mean(&intra), mean(&inter));
    }

    #[test]
    fn single_edge_endpoints_are_most_similar() {
        let g = graph_from_edges(5, &[(1, 3)]);
        let walks = generate_walks(&g, &WalkConfig::default()).unwrap();
        let emb = train_node2vec(&g, &walks, &small_sgns(16)).unwrap();
        let best = (0..5)
            .flat_map(|a| (a + 1..5).map(move |b| (a, b)))
            .max_by(|x, y| {
                cosine(emb.vector(x.0), emb.vector(x.1)).total_cmp(&cosine(emb.vector(y.0), emb.vector(y.1)))
            })
            .unwrap();
        assert_eq!(best, (1, 3), "{}", cosine(emb.vector(1), emb.vector(3)));
        assert_eq!(emb.isolated, BTreeSet::from([0, 2, 4]));
    }

    #[test]
    fn walk_pairs_respect_window() {
        let pairs = walk_pairs(&[vec![0, 1, 2, 1]], 1);
        assert_eq!(pairs, [(0, 1), (1, 0), (1, 2), (2, 1), (2, 1), (1, 2)]);
        assert_eq!(walk_pairs(&[vec![0, 1, 0, 1]], 5).len(), 8);
    }

    #[test]
    fn all_isolated_gives_zero_table() {
        let g = graph_from_edges(4, &[]);
        let walks = generate_walks(&g, &WalkConfig::default()).unwrap();
        assert!(walks.is_empty());
        let emb = train_node2vec(&g, &walks, &small_sgns(8)).unwrap();
        assert!(emb.vectors.as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(emb.isolated.len(), 4);
    }
}
