//! Masked two-tree aggregation of per-party predictor components.
//!
//! Every party adds a private random mask to its component. The masked
//! values are summed leaf-to-root along one tree, the masks alone along a
//! second tree with no directed edge in common, and the predictor is the
//! difference of the two root totals. Every inter-party payload is recorded
//! so that message volume can be accounted for and the exchange audited.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::linalg::in_row_space;
use crate::{Error, Result};

/// Bytes in one transmitted scalar.
pub const SCALAR_BYTES: u64 = 8;

/// A rooted tree over parties `0..q`; every non-root sends to its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    q: usize,
    root: usize,
    parent: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TreeTag {
    T1,
    T2,
}

impl core::fmt::Display for TreeTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            TreeTag::T1 => "T1",
            TreeTag::T2 => "T2",
        })
    }
}

impl TreeTopology {
    /// Builds a tree from a parent table, checking it is a single rooted tree.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        let q = parent.len();
        if q == 0 {
            return Err(Error::NoParties);
        }
        let roots: Vec<usize> = (0..q).filter(|&u| parent[u].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidConfig(format!("tree has {} roots", roots.len())));
        }
        for (u, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= q || p == u {
                    return Err(Error::InvalidConfig(format!("bad parent {p} for node {u}")));
                }
            }
        }
        // every node must reach the root within q steps
        for start in 0..q {
            let mut u = start;
            let mut steps = 0;
            while let Some(p) = parent[u] {
                u = p;
                steps += 1;
                if steps > q {
                    return Err(Error::InvalidConfig("parent table has a cycle".into()));
                }
            }
        }
        Ok(TreeTopology {
            q,
            root: roots[0],
            parent,
        })
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn root(&self) -> usize {
        self.root
    }

    #[inline]
    pub fn parent(&self, u: usize) -> Option<usize> {
        self.parent[u]
    }

    /// Directed `(child, parent)` edges, ordered by child.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.q)
            .filter_map(|u| self.parent[u].map(|p| (u, p)))
            .collect()
    }

    pub fn children(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.q).filter(move |&c| self.parent[c] == Some(u))
    }

    /// Nodes ordered so that every child precedes its parent; siblings in
    /// increasing id order.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.q);
        let mut stack = vec![(self.root, false)];
        while let Some((u, expanded)) = stack.pop() {
            if expanded {
                out.push(u);
            } else {
                stack.push((u, true));
                let kids: Vec<usize> = self.children(u).collect();
                for &c in kids.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Longest leaf-to-root path in edges.
    pub fn height(&self) -> usize {
        (0..self.q)
            .map(|mut u| {
                let mut h = 0;
                while let Some(p) = self.parent[u] {
                    u = p;
                    h += 1;
                }
                h
            })
            .max()
            .unwrap_or(0)
    }

    /// Nodes in the subtree rooted at `u`, including `u`.
    pub fn subtree(&self, u: usize) -> Vec<usize> {
        (0..self.q)
            .filter(|&v| {
                let mut x = v;
                loop {
                    if x == u {
                        return true;
                    }
                    match self.parent[x] {
                        Some(p) => x = p,
                        None => return false,
                    }
                }
            })
            .collect()
    }
}

/// Uniformly random rooted labeled tree on `q` nodes (random Pruefer code
/// plus a uniformly chosen root), deterministic in `seed`.
pub fn build_tree(q: usize, seed: u64) -> Result<TreeTopology> {
    if q < 1 {
        return Err(Error::NoParties);
    }
    let mut rng = crate::rng::stream(seed, crate::rng::STREAM_TREE, &[q as u64, 1]);
    let root = rng.gen_range(0..q);
    if q == 1 {
        return TreeTopology::from_parents(vec![None]);
    }
    let code: Vec<usize> = (0..q.saturating_sub(2)).map(|_| rng.gen_range(0..q)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); q];
    let mut degree = vec![1usize; q];
    for &c in &code {
        degree[c] += 1;
    }
    let mut leaves: BTreeSet<usize> = (0..q).filter(|&u| degree[u] == 1).collect();
    for &c in &code {
        let leaf = *leaves.iter().next().expect("a Pruefer decode always has a leaf");
        leaves.remove(&leaf);
        adj[leaf].push(c);
        adj[c].push(leaf);
        degree[c] -= 1;
        if degree[c] == 1 {
            leaves.insert(c);
        }
    }
    let last: Vec<usize> = leaves.into_iter().collect();
    adj[last[0]].push(last[1]);
    adj[last[1]].push(last[0]);
    orient(&adj, root)
}

fn orient(adj: &[Vec<usize>], root: usize) -> Result<TreeTopology> {
    let mut parent = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[root] = true;
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                stack.push(v);
            }
        }
    }
    TreeTopology::from_parents(parent)
}

/// Second tree for mask aggregation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistinctTree {
    pub tree: TreeTopology,
    /// Set when `q <= 2`: the input tree is returned unchanged.
    pub degenerate: bool,
}

/// A random tree sharing no directed `(child, parent)` edge with `t1`.
///
/// Nodes are attached in a random order, each to a random already-attached
/// node other than its parent in `t1`. The first two nodes are chosen so that
/// this is always possible, which needs `q >= 3`.
pub fn distinct_tree(t1: &TreeTopology, seed: u64) -> DistinctTree {
    let q = t1.q();
    if q <= 2 {
        return DistinctTree {
            tree: t1.clone(),
            degenerate: true,
        };
    }
    let mut rng = crate::rng::stream(seed, crate::rng::STREAM_TREE, &[q as u64, 2]);
    let mut order: Vec<usize> = (0..q).collect();
    order.shuffle(&mut rng);
    // a root that is the centre of a t1 star would leave no valid second node
    let child_count = |u: usize| (0..q).filter(|&c| t1.parent(c) == Some(u)).count();
    if child_count(order[0]) == q - 1 {
        order.swap(0, 1);
    }
    let root = order[0];
    let second = (1..q)
        .find(|&k| t1.parent(order[k]) != Some(root))
        .expect("root has fewer than q-1 children in t1");
    order.swap(1, second);

    let mut parent = vec![None; q];
    parent[order[1]] = Some(root);
    for k in 2..q {
        let u = order[k];
        let banned = t1.parent(u);
        let candidates: Vec<usize> = order[..k]
            .iter()
            .copied()
            .filter(|&c| Some(c) != banned)
            .collect();
        parent[u] = Some(candidates[rng.gen_range(0..candidates.len())]);
    }
    DistinctTree {
        tree: TreeTopology::from_parents(parent).expect("construction yields a tree"),
        degenerate: false,
    }
}

/// Number of directed edges two trees share.
pub fn shared_directed_edges(a: &TreeTopology, b: &TreeTopology) -> usize {
    let ea: BTreeSet<(usize, usize)> = a.edges().into_iter().collect();
    b.edges().into_iter().filter(|e| ea.contains(e)).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub tree: TreeTag,
    pub payload: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationTranscript {
    pub t1: TreeTopology,
    pub t2: TreeTopology,
    pub messages: Vec<Message>,
    pub masks: Vec<f64>,
    pub phi1: f64,
    pub phi2: f64,
    pub result: f64,
}

/// One line of a transcript export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranscriptRow {
    pub round: u64,
    pub src: usize,
    pub dst: usize,
    pub tree: TreeTag,
    pub bytes: u64,
}

impl AggregationTranscript {
    pub fn rows(&self, round: u64) -> impl Iterator<Item = TranscriptRow> + '_ {
        self.messages.iter().map(move |m| TranscriptRow {
            round,
            src: m.src,
            dst: m.dst,
            tree: m.tree,
            bytes: SCALAR_BYTES,
        })
    }

    pub fn bytes(&self) -> u64 {
        self.messages.len() as u64 * SCALAR_BYTES
    }
}

/// Messages one aggregated scalar costs: one per edge of each tree.
#[inline]
pub fn messages_per_scalar(q: usize) -> u64 {
    2 * (q as u64).saturating_sub(1)
}

fn check_trees(q: usize, t1: &TreeTopology, t2: &TreeTopology) -> Result<()> {
    if t1.q() != t2.q() {
        return Err(Error::TopologyMismatch(t1.q(), t2.q()));
    }
    if t1.q() != q {
        return Err(Error::DimensionMismatch {
            expected: t1.q(),
            got: q,
        });
    }
    Ok(())
}

/// Sums `values` leaf-to-root along `tree`, appending one message per edge.
fn tree_sum(tree: &TreeTopology, values: &[f64], tag: TreeTag, messages: &mut Vec<Message>) -> f64 {
    let mut partial = values.to_vec();
    for u in tree.postorder() {
        if let Some(p) = tree.parent(u) {
            messages.push(Message {
                src: u,
                dst: p,
                tree: tag,
                payload: partial[u],
            });
            partial[p] += partial[u];
        }
    }
    partial[tree.root()]
}

/// Aggregates one predictor from its per-party components with masks drawn
/// uniformly from `[0, 1)`.
pub fn masked_aggregate<R: Rng + ?Sized>(
    components: &[f64],
    t1: &TreeTopology,
    t2: &TreeTopology,
    rng: &mut R,
) -> Result<(f64, AggregationTranscript)> {
    let masks: Vec<f64> = (0..components.len()).map(|_| rng.gen::<f64>()).collect();
    masked_aggregate_with_masks(components, &masks, t1, t2)
}

/// [`masked_aggregate`] with caller-supplied masks (zero masks expose the
/// raw partial sums and are meant for audits).
pub fn masked_aggregate_with_masks(
    components: &[f64],
    masks: &[f64],
    t1: &TreeTopology,
    t2: &TreeTopology,
) -> Result<(f64, AggregationTranscript)> {
    check_trees(components.len(), t1, t2)?;
    if masks.len() != components.len() {
        return Err(Error::DimensionMismatch {
            expected: components.len(),
            got: masks.len(),
        });
    }
    if !crate::linalg::all_finite(components) {
        return Err(Error::NonFinite("predictor component"));
    }
    let masked: Vec<f64> = components.iter().zip(masks).map(|(c, d)| c + d).collect();
    let mut messages = Vec::with_capacity(2 * components.len());
    let phi1 = tree_sum(t1, &masked, TreeTag::T1, &mut messages);
    let phi2 = tree_sum(t2, masks, TreeTag::T2, &mut messages);
    let result = phi1 - phi2;
    if !result.is_finite() {
        return Err(Error::NonFinite("aggregated predictor"));
    }
    Ok((
        result,
        AggregationTranscript {
            t1: t1.clone(),
            t2: t2.clone(),
            messages,
            masks: masks.to_vec(),
            phi1,
            phi2,
            result,
        },
    ))
}

/// Outcome of aggregating a batch of predictors in one traversal per tree.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAggregate {
    pub theta: Vec<f64>,
    /// Logical scalar messages (`2 (q - 1)` per predictor).
    pub messages: u64,
    pub bytes: u64,
}

/// Masking policy for batch aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    Uniform,
    /// All masks zero. Only for leakage audits.
    Disabled,
}

/// Aggregates `b` predictors at once. `components[l]` holds party `l`'s
/// `b` components. Masks are drawn sample-major (all parties for sample 0,
/// then sample 1, ...), so the result equals calling [`masked_aggregate`]
/// once per sample with the same generator.
pub fn aggregate_batch<R: Rng + ?Sized>(
    components: &[Vec<f64>],
    t1: &TreeTopology,
    t2: &TreeTopology,
    mode: MaskMode,
    rng: &mut R,
) -> Result<BatchAggregate> {
    let q = components.len();
    check_trees(q, t1, t2)?;
    let b = components.first().map_or(0, |c| c.len());
    if components.iter().any(|c| c.len() != b) {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: components.iter().map(|c| c.len()).find(|&l| l != b).unwrap_or(b),
        });
    }
    // masks[l][k]
    let mut masks = vec![vec![0.0; b]; q];
    if mode == MaskMode::Uniform {
        for k in 0..b {
            for m in masks.iter_mut() {
                m[k] = rng.gen::<f64>();
            }
        }
    }
    let mut masked: Vec<Vec<f64>> = components
        .iter()
        .zip(&masks)
        .map(|(c, m)| c.iter().zip(m).map(|(x, d)| x + d).collect())
        .collect();
    for u in t1.postorder() {
        if let Some(p) = t1.parent(u) {
            let (src, dst) = two_mut(&mut masked, u, p);
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += *s;
            }
        }
    }
    for u in t2.postorder() {
        if let Some(p) = t2.parent(u) {
            let (src, dst) = two_mut(&mut masks, u, p);
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += *s;
            }
        }
    }
    let phi1 = &masked[t1.root()];
    let phi2 = &masks[t2.root()];
    let theta: Vec<f64> = phi1.iter().zip(phi2).map(|(a, b)| a - b).collect();
    if !crate::linalg::all_finite(&theta) {
        return Err(Error::NonFinite("aggregated predictor"));
    }
    let messages = messages_per_scalar(q) * b as u64;
    Ok(BatchAggregate {
        theta,
        messages,
        bytes: messages * SCALAR_BYTES,
    })
}

fn two_mut<T>(v: &mut [T], src: usize, dst: usize) -> (&T, &mut T) {
    debug_assert_ne!(src, dst);
    if src < dst {
        let (a, b) = v.split_at_mut(dst);
        (&a[src], &mut b[0])
    } else {
        let (a, b) = v.split_at_mut(src);
        (&b[0], &mut a[dst])
    }
}

/// Result of auditing one aggregation transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub masks_nonzero: bool,
    /// T1 messages whose payload equals a raw component or a sum of raw
    /// components: `(message index, subset of parties)`.
    pub exposures: Vec<(usize, Vec<usize>)>,
    /// `solvable[tree][l]`: an observer of that tree's payloads alone can
    /// solve for party `l`'s component.
    pub t1_solvable: Vec<bool>,
    pub t2_solvable: Vec<bool>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.exposures.is_empty()
            && !self.t1_solvable.iter().any(|&s| s)
            && !self.t2_solvable.iter().any(|&s| s)
    }
}

/// What a coalition of every party but `target` can infer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollusionReport {
    pub target: usize,
    /// The target's component is determined by the coalition's equations.
    pub sum_recoverable: bool,
    /// The target's weights and features can be separated from the
    /// component. A single inner product `w . x` of width `d >= 2` is
    /// invariant under any orthogonal map applied to both factors, so only
    /// width-1 blocks (scale ambiguity, removed by normalization) leak.
    pub factor_recoverable: bool,
}

const AUDIT_TOL: f64 = 1e-9;
/// Largest party count for which every subset sum is checked.
const EXHAUSTIVE_SUBSETS_MAX_Q: usize = 16;

fn check_complete(t: &AggregationTranscript) -> Result<()> {
    let q = t.t1.q();
    if t.masks.len() != q {
        return Err(Error::IncompleteTranscript(format!(
            "{} masks for {q} parties",
            t.masks.len()
        )));
    }
    for (tree, tag) in [(&t.t1, TreeTag::T1), (&t.t2, TreeTag::T2)] {
        let sent: Vec<(usize, usize)> = t
            .messages
            .iter()
            .filter(|m| m.tree == tag)
            .map(|m| (m.src, m.dst))
            .collect();
        let mut expected = tree.edges();
        let mut got = sent.clone();
        expected.sort_unstable();
        got.sort_unstable();
        if expected != got {
            return Err(Error::IncompleteTranscript(format!(
                "{tag} carries {} messages, tree has {} edges",
                sent.len(),
                expected.len()
            )));
        }
    }
    Ok(())
}

/// Unknowns are ordered `[theta_0..theta_q, delta_0..delta_q]`.
fn tree_equations(tree: &TreeTopology, tag: TreeTag) -> Vec<Vec<f64>> {
    let q = tree.q();
    let mut rows: Vec<Vec<f64>> = (0..q)
        .filter(|&u| tree.parent(u).is_some())
        .map(|u| subtree_row(q, &tree.subtree(u), tag))
        .collect();
    rows.push(subtree_row(q, &tree.subtree(tree.root()), tag));
    rows
}

fn subtree_row(q: usize, nodes: &[usize], tag: TreeTag) -> Vec<f64> {
    let mut row = vec![0.0; 2 * q];
    for &v in nodes {
        row[q + v] = 1.0;
        if tag == TreeTag::T1 {
            row[v] = 1.0;
        }
    }
    row
}

fn unit(q: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; 2 * q];
    e[k] = 1.0;
    e
}

/// Checks that no T1 payload reveals raw components or their partial sums,
/// and that neither tree alone determines any party's component.
pub fn leakage_audit(transcript: &AggregationTranscript, true_components: &[f64]) -> Result<AuditReport> {
    check_complete(transcript)?;
    let q = transcript.t1.q();
    if true_components.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: true_components.len(),
        });
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut exposures = Vec::new();
    for (idx, m) in transcript.messages.iter().enumerate() {
        if m.tree != TreeTag::T1 {
            continue;
        }
        if q <= EXHAUSTIVE_SUBSETS_MAX_Q {
            for mask in 1u32..(1u32 << q) {
                let s: f64 = (0..q)
                    .filter(|&l| mask & (1 << l) != 0)
                    .map(|l| true_components[l])
                    .sum();
                if close(m.payload, s) {
                    exposures.push((idx, (0..q).filter(|&l| mask & (1 << l) != 0).collect()));
                    break;
                }
            }
        } else {
            let nodes = transcript.t1.subtree(m.src);
            let s: f64 = nodes.iter().map(|&l| true_components[l]).sum();
            if close(m.payload, s) {
                exposures.push((idx, nodes));
            }
        }
    }
    let solvable = |rows: &[Vec<f64>]| -> Vec<bool> {
        (0..q).map(|l| in_row_space(rows, &unit(q, l), AUDIT_TOL)).collect()
    };
    Ok(AuditReport {
        masks_nonzero: transcript.masks.iter().all(|&d| d != 0.0),
        exposures,
        t1_solvable: solvable(&tree_equations(&transcript.t1, TreeTag::T1)),
        t2_solvable: solvable(&tree_equations(&transcript.t2, TreeTag::T2)),
    })
}

/// Coalition of every party except `target`, seeing both trees' payloads and
/// its members' own components and masks.
pub fn collusion_audit(
    transcript: &AggregationTranscript,
    target: usize,
    target_block_width: usize,
) -> Result<CollusionReport> {
    check_complete(transcript)?;
    let q = transcript.t1.q();
    if target >= q {
        return Err(Error::IndexOutOfRange { index: target, n: q });
    }
    let mut rows = tree_equations(&transcript.t1, TreeTag::T1);
    rows.extend(tree_equations(&transcript.t2, TreeTag::T2));
    for l in (0..q).filter(|&l| l != target) {
        rows.push(unit(q, l));
        rows.push(unit(q, q + l));
    }
    Ok(CollusionReport {
        target,
        sum_recoverable: in_row_space(&rows, &unit(q, target), AUDIT_TOL),
        factor_recoverable: target_block_width < 2,
    })
}
