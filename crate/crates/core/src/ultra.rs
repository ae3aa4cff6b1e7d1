//! Ultrametric trees and the single-linkage projection onto ultrametrics.
//!
//! A finite ultrametric is the same thing as a rooted tree whose leaves are
//! the points and whose nodes carry heights that never decrease towards the
//! root: the distance between two points is the height of their lowest common
//! ancestor. [`project_to_ultrametric`] maps any semimetric to the largest
//! ultrametric lying below it (the subdominant ultrametric) by hierarchical
//! single-linkage merging, which is equivalent to taking the largest edge on
//! the minimum-spanning-tree path between two points.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::SemimetricMatrix;

/// Pair tolerance for ultrametric checks and comparisons.
pub const ULTRA_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub height: f64,
    /// Sorted ascending.
    pub children: Vec<usize>,
    /// Point index for leaves.
    pub leaf: Option<usize>,
}

/// Rooted tree with node heights whose leaves are the points `0..n`.
///
/// Node ids are positions in [`UltraTree::nodes`]. Edge weights are never
/// stored; the weight of the edge above `v` is `height(parent(v)) - height(v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UltraTree {
    nodes: Vec<Node>,
    leaf_of: Vec<usize>,
    root: usize,
    postorder: Vec<usize>,
    depth: Vec<usize>,
}

impl UltraTree {
    /// Builds a tree from nodes whose `parent`/`leaf`/`height` fields are set;
    /// `children` lists are rebuilt from the parent links.
    ///
    /// Heights are not required to be monotone here (optimizer steps may
    /// produce inversions); use [`UltraTree::check_monotone`] where needed.
    pub fn from_nodes(mut nodes: Vec<Node>) -> Result<Self> {
        let len = nodes.len();
        if len == 0 {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        for node in &mut nodes {
            node.children.clear();
        }
        let mut root = None;
        for v in 0..len {
            if !nodes[v].height.is_finite() {
                return Err(Error::InvalidTree(format!(
                    "node {v} has a non-finite height"
                )));
            }
            match nodes[v].parent {
                None if root.is_some() => {
                    return Err(Error::InvalidTree("more than one root".into()));
                }
                None => root = Some(v),
                Some(p) if p >= len || p == v => {
                    return Err(Error::InvalidTree(format!(
                        "node {v} has invalid parent {p}"
                    )));
                }
                Some(p) => nodes[p].children.push(v),
            }
        }
        let root = root.ok_or_else(|| Error::InvalidTree("no root".into()))?;

        let n_leaves = nodes.iter().filter(|v| v.leaf.is_some()).count();
        let mut leaf_of = vec![usize::MAX; n_leaves];
        for (v, node) in nodes.iter().enumerate() {
            match (node.leaf, node.children.len()) {
                (Some(p), 0) => {
                    if p >= n_leaves || leaf_of[p] != usize::MAX {
                        return Err(Error::InvalidTree(format!(
                            "leaf labels must be a permutation of 0..{n_leaves}"
                        )));
                    }
                    leaf_of[p] = v;
                }
                (Some(_), _) => {
                    return Err(Error::InvalidTree(format!("leaf node {v} has children")));
                }
                (None, 0) | (None, 1) => {
                    return Err(Error::InvalidTree(format!(
                        "internal node {v} needs at least two children"
                    )));
                }
                (None, _) => {}
            }
        }

        // Nodes on a parent cycle are unreachable from the root.
        let mut postorder = Vec::with_capacity(len);
        let mut depth = vec![0usize; len];
        let mut stack = vec![(root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                postorder.push(v);
                continue;
            }
            stack.push((v, true));
            for &c in nodes[v].children.iter().rev() {
                depth[c] = depth[v] + 1;
                stack.push((c, false));
            }
        }
        if postorder.len() != len {
            return Err(Error::InvalidTree("nodes unreachable from the root".into()));
        }
        Ok(UltraTree {
            nodes,
            leaf_of,
            root,
            postorder,
            depth,
        })
    }

    pub fn n_points(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &Node {
        &self.nodes[v]
    }

    #[inline]
    pub fn height(&self, v: usize) -> f64 {
        self.nodes[v].height
    }

    pub fn heights(&self) -> Vec<f64> {
        self.nodes.iter().map(|v| v.height).collect()
    }

    pub fn leaf_node(&self, point: usize) -> usize {
        self.leaf_of[point]
    }

    /// Children before parents.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Copy of this topology with new node heights.
    pub fn with_heights(&self, heights: &[f64]) -> Result<Self> {
        if heights.len() != self.nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nodes.len(),
                found: heights.len(),
            });
        }
        let mut t = self.clone();
        for (node, &h) in t.nodes.iter_mut().zip(heights) {
            node.height = h;
        }
        Ok(t)
    }

    pub fn check_monotone(&self) -> Result<()> {
        for (v, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.parent {
                if self.nodes[p].height < node.height {
                    return Err(Error::NonMonotone { node: v });
                }
            }
        }
        Ok(())
    }

    fn check_point(&self, i: usize) -> Result<()> {
        if i < self.n_points() {
            Ok(())
        } else {
            Err(Error::InvalidIndex {
                index: i,
                len: self.n_points(),
            })
        }
    }

    pub fn lca(&self, i: usize, j: usize) -> Result<usize> {
        self.check_point(i)?;
        self.check_point(j)?;
        let (mut a, mut b) = (self.leaf_of[i], self.leaf_of[j]);
        while self.depth[a] > self.depth[b] {
            a = self.nodes[a].parent.expect("non-root has parent");
        }
        while self.depth[b] > self.depth[a] {
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("non-root has parent");
            b = self.nodes[b].parent.expect("non-root has parent");
        }
        Ok(a)
    }

    /// `h(LCA(i, j)) - h(i)/2 - h(j)/2`, i.e. half the path length between
    /// the two leaves.
    pub fn tree_distance(&self, i: usize, j: usize) -> Result<f64> {
        let v = self.lca(i, j)?;
        let hi = self.height(self.leaf_of[i]);
        let hj = self.height(self.leaf_of[j]);
        Ok(self.height(v) - 0.5 * hi - 0.5 * hj)
    }

    /// Calls `f(node, i, j)` once for every unordered pair of distinct points,
    /// with `node` their LCA. Cost is `O(n_nodes + n²)`.
    pub fn for_each_lca_pair(&self, mut f: impl FnMut(usize, usize, usize)) {
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for &v in &self.postorder {
            let node = &self.nodes[v];
            if let Some(p) = node.leaf {
                below[v].push(p);
                continue;
            }
            let mut acc = std::mem::take(&mut below[node.children[0]]);
            for &c in &node.children[1..] {
                let next = std::mem::take(&mut below[c]);
                for &i in &acc {
                    for &j in &next {
                        f(v, i, j);
                    }
                }
                acc.extend(next);
            }
            below[v] = acc;
        }
    }

    /// Points under node `v`, in ascending order.
    pub fn points_under(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            match self.nodes[u].leaf {
                Some(p) => out.push(p),
                None => stack.extend(&self.nodes[u].children),
            }
        }
        out.sort_unstable();
        out
    }

    /// Leaf-to-leaf distance matrix via [`UltraTree::tree_distance`].
    pub fn to_matrix(&self) -> Result<UltrametricMatrix> {
        self.check_monotone()?;
        if self
            .leaf_of
            .iter()
            .any(|&leaf| self.nodes[leaf].height != 0.0)
        {
            return Err(Error::InvalidTree("leaf heights must be zero".into()));
        }
        Ok(UltrametricMatrix::from_array_unchecked(
            self.distance_array(),
        ))
    }

    /// Distance array without the monotonicity/leaf-height checks; used on
    /// intermediate optimizer trees.
    pub(crate) fn distance_array(&self) -> Array2<f64> {
        let n = self.n_points();
        let mut d = Array2::zeros((n, n));
        let leaf_h: Vec<f64> = self.leaf_of.iter().map(|&v| self.height(v)).collect();
        self.for_each_lca_pair(|v, i, j| {
            let x = self.height(v) - 0.5 * leaf_h[i] - 0.5 * leaf_h[j];
            d[[i, j]] = x;
            d[[j, i]] = x;
        });
        d
    }

    pub fn lca_classes(&self) -> LcaClasses {
        let n = self.n_points();
        let mut class_of = vec![0u32; n * n];
        let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.nodes.len()];
        for (p, &leaf) in self.leaf_of.iter().enumerate() {
            class_of[p * n + p] = leaf as u32;
            members[leaf].push((p, p));
        }
        self.for_each_lca_pair(|v, i, j| {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            class_of[a * n + b] = v as u32;
            class_of[b * n + a] = v as u32;
            members[v].push((a, b));
        });
        for m in &mut members {
            m.sort_unstable();
        }
        LcaClasses {
            n,
            class_of,
            members,
        }
    }

    /// Newick string with branch lengths `h(parent) - h(child)`; leaves are
    /// labelled `x<point>`.
    pub fn to_newick(&self) -> String {
        fn go(t: &UltraTree, v: usize, out: &mut String) {
            let node = &t.nodes[v];
            match node.leaf {
                Some(p) => out.push_str(&format!("x{p}")),
                None => {
                    out.push('(');
                    for (k, &c) in node.children.iter().enumerate() {
                        if k > 0 {
                            out.push(',');
                        }
                        go(t, c, out);
                    }
                    out.push(')');
                }
            }
            if let Some(p) = node.parent {
                out.push_str(&format!(":{}", t.nodes[p].height - node.height));
            }
        }
        let mut out = String::new();
        go(self, self.root, &mut out);
        out.push(';');
        out
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            n: self.n_points(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, v)| TreeFileNode {
                    id,
                    parent: v.parent,
                    height: v.height,
                    leaf: v.leaf,
                })
                .collect(),
        }
    }

    pub fn from_file(file: &TreeFile) -> Result<Self> {
        let len = file.nodes.len();
        let mut slots: Vec<Option<Node>> = vec![None; len];
        for entry in &file.nodes {
            if entry.id >= len || slots[entry.id].is_some() {
                return Err(Error::InvalidTree(format!(
                    "node ids must be a permutation of 0..{len}"
                )));
            }
            slots[entry.id] = Some(Node {
                parent: entry.parent,
                height: entry.height,
                children: Vec::new(),
                leaf: entry.leaf,
            });
        }
        let tree = UltraTree::from_nodes(slots.into_iter().map(|s| s.expect("filled")).collect())?;
        if tree.n_points() != file.n {
            return Err(Error::DimensionMismatch {
                expected: file.n,
                found: tree.n_points(),
            });
        }
        Ok(tree)
    }
}

/// JSON form: `{"n": .., "nodes": [{"id", "parent", "height", "leaf"}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub n: usize,
    pub nodes: Vec<TreeFileNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFileNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub height: f64,
    pub leaf: Option<usize>,
}

/// Semimetric matrix that also satisfies the strong triangle inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct UltrametricMatrix {
    inner: SemimetricMatrix,
}

impl UltrametricMatrix {
    /// Validates the strong triangle inequality over all triples (`O(n³)`).
    pub fn new(d: SemimetricMatrix) -> Result<Self> {
        if let Some((i, j, k)) = strong_triangle_violation(d.as_array(), ULTRA_TOL) {
            return Err(Error::NotUltrametric { i, j, k });
        }
        Ok(UltrametricMatrix { inner: d })
    }

    pub(crate) fn from_array_unchecked(d: Array2<f64>) -> Self {
        UltrametricMatrix {
            inner: SemimetricMatrix::from_array_unchecked(d),
        }
    }

    pub fn n(&self) -> usize {
        self.inner.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn as_semimetric(&self) -> &SemimetricMatrix {
        &self.inner
    }

    pub fn as_array(&self) -> &Array2<f64> {
        self.inner.as_array()
    }

    pub fn into_semimetric(self) -> SemimetricMatrix {
        self.inner
    }
}

/// First triple with `d[i][j] > max(d[i][k], d[k][j]) + tol`, if any.
pub fn strong_triangle_violation(d: &Array2<f64>, tol: f64) -> Option<(usize, usize, usize)> {
    let n = d.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let dij = d[[i, j]];
            for k in 0..n {
                if dij > d[[i, k]].max(d[[k, j]]) + tol {
                    return Some((i, j, k));
                }
            }
        }
    }
    None
}

/// Pairs grouped by the tree node that is their LCA.
///
/// Off-diagonal pairs `(i, j)`, `i < j`, belong to internal nodes; the
/// diagonal `(i, i)` belongs to the leaf of `i`. There is one class per tree
/// node, so at most `2n - 1` classes.
#[derive(Clone, Debug)]
pub struct LcaClasses {
    n: usize,
    class_of: Vec<u32>,
    members: Vec<Vec<(usize, usize)>>,
}

impl LcaClasses {
    #[inline]
    pub fn class_of(&self, i: usize, j: usize) -> usize {
        self.class_of[i * self.n + j] as usize
    }

    pub fn members(&self, node: usize) -> &[(usize, usize)] {
        &self.members[node]
    }

    pub fn n_classes(&self) -> usize {
        self.members.len()
    }

    pub fn n_points(&self) -> usize {
        self.n
    }
}

/// Single-linkage projection: returns the binary merge tree and its
/// (subdominant) ultrametric matrix.
///
/// Among equal linkage distances the merge with the lexicographically
/// smallest pair of cluster representatives (smallest member) goes first, so
/// the output is deterministic. Leaves are nodes `0..n`, merges get ids
/// `n..2n-1` in merge order and the root is node `2n - 2`.
pub fn project_to_ultrametric(d: &SemimetricMatrix) -> Result<(UltraTree, UltrametricMatrix)> {
    let n = d.n();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    const NONE: usize = usize::MAX;
    let mut link = d.as_array().clone();
    let mut active = vec![true; n];
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut u = Array2::zeros((n, n));
    let mut nodes: Vec<Node> = (0..n)
        .map(|p| Node {
            parent: None,
            height: 0.0,
            children: Vec::new(),
            leaf: Some(p),
        })
        .collect();

    // nn[a]: smallest linkage from cluster a to an active cluster b > a, with
    // the smallest such b.
    let row_min = |link: &Array2<f64>, active: &[bool], a: usize| {
        let mut best = (f64::INFINITY, NONE);
        for b in (a + 1)..n {
            if active[b] && link[[a, b]] < best.0 {
                best = (link[[a, b]], b);
            }
        }
        best
    };
    let mut nn: Vec<(f64, usize)> = (0..n).map(|a| row_min(&link, &active, a)).collect();

    for _ in 0..(n - 1) {
        let mut a = NONE;
        for c in 0..n {
            if active[c] && nn[c].1 != NONE && (a == NONE || nn[c].0 < nn[a].0) {
                a = c;
            }
        }
        let (h, b) = nn[a];

        let id = nodes.len();
        nodes.push(Node {
            parent: None,
            height: h,
            children: Vec::new(),
            leaf: None,
        });
        nodes[node_of[a]].parent = Some(id);
        nodes[node_of[b]].parent = Some(id);
        node_of[a] = id;

        let moved = std::mem::take(&mut members[b]);
        for &i in &members[a] {
            for &j in &moved {
                u[[i, j]] = h;
                u[[j, i]] = h;
            }
        }
        members[a].extend(moved);
        active[b] = false;

        for c in 0..n {
            if active[c] && c != a {
                let v = link[[a, c]].min(link[[b, c]]);
                link[[a, c]] = v;
                link[[c, a]] = v;
            }
        }
        for c in 0..n {
            if !active[c] || c == a {
                continue;
            }
            if c < a {
                let v = link[[c, a]];
                if nn[c].1 == b {
                    nn[c] = (v, a);
                } else if v < nn[c].0 || (v == nn[c].0 && a < nn[c].1) {
                    nn[c] = (v, a);
                }
            } else if c < b && nn[c].1 == b {
                nn[c] = row_min(&link, &active, c);
            }
        }
        nn[a] = row_min(&link, &active, a);
        nn[b] = (f64::INFINITY, NONE);
    }

    let tree = UltraTree::from_nodes(nodes)?;
    Ok((tree, UltrametricMatrix::from_array_unchecked(u)))
}

/// ℓ∞-closest ultrametric: the subdominant ultrametric lifted by half the
/// largest gap.
#[derive(Clone, Debug)]
pub struct LinftyShift {
    pub shift: f64,
    pub shifted: UltrametricMatrix,
}

pub fn linfty_shift(d: &SemimetricMatrix, u: &UltrametricMatrix) -> Result<LinftyShift> {
    let n = d.n();
    if u.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: u.n(),
        });
    }
    let mut gap: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                gap = gap.max((d.get(i, j) - u.get(i, j)).abs());
            }
        }
    }
    let shift = 0.5 * gap;
    let mut s = u.as_array().clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s[[i, j]] += shift;
            }
        }
    }
    Ok(LinftyShift {
        shift,
        shifted: UltrametricMatrix::from_array_unchecked(s),
    })
}

/// Top-down tree construction from an ultrametric matrix: a node's children
/// are the groups of its points that are closer than the node's diameter.
/// May produce multiway nodes.
pub fn diametrical_tree(u: &UltrametricMatrix) -> Result<UltraTree> {
    let u = UltrametricMatrix::new(u.as_semimetric().clone())?;
    let n = u.n();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let mut nodes: Vec<Node> = (0..n)
        .map(|p| Node {
            parent: None,
            height: 0.0,
            children: Vec::new(),
            leaf: Some(p),
        })
        .collect();

    // (subset, parent slot)
    let mut work: Vec<(Vec<usize>, Option<usize>)> = vec![((0..n).collect(), None)];
    while let Some((subset, parent)) = work.pop() {
        if subset.len() == 1 {
            nodes[subset[0]].parent = parent;
            continue;
        }
        let mut diam: f64 = 0.0;
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                diam = diam.max(u.get(i, j));
            }
        }
        let id = nodes.len();
        nodes.push(Node {
            parent,
            height: diam,
            children: Vec::new(),
            leaf: None,
        });
        for group in components_below(&u, &subset, diam - ULTRA_TOL) {
            work.push((group, Some(id)));
        }
    }
    UltraTree::from_nodes(nodes)
}

/// Connected components of `subset` under the relation `d(i, j) < cutoff`.
fn components_below(u: &UltrametricMatrix, subset: &[usize], cutoff: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut assigned = vec![false; subset.len()];
    for start in 0..subset.len() {
        if assigned[start] {
            continue;
        }
        assigned[start] = true;
        let mut group = vec![subset[start]];
        let mut frontier = vec![start];
        while let Some(a) = frontier.pop() {
            for b in 0..subset.len() {
                if !assigned[b] && u.get(subset[a], subset[b]) < cutoff {
                    assigned[b] = true;
                    group.push(subset[b]);
                    frontier.push(b);
                }
            }
        }
        group.sort_unstable();
        groups.push(group);
    }
    groups
}
