//! Randomly shifted quadtrees over Euclidean point clouds, with the quadtree
//! transport distance and Flowtree.
//!
//! Input is rescaled so the smallest distance between distinct points is 1;
//! the spread `Δ` is then the diameter. The root cell has side `2Δ` and its
//! corner is shifted by a uniform vector in `[0, Δ)^dim`, so every point lies
//! strictly inside. Cells split into up to `2^dim` children (only nonempty
//! ones are stored) until each holds a single point. Coincident input points
//! are merged into one support point first.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::metric::{Distribution, PointCloud};
use crate::synth::seeded_rng;
use crate::tree_ot::{greedy_matching, Topology};

/// Hard stop for pathological inputs; normal inputs need about
/// `log2(dim · Δ) + 2` levels.
const MAX_LEVEL: u32 = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Depth below the root (root = 0).
    pub level: u32,
    /// Lower corner in normalised coordinates.
    pub corner: Vec<f64>,
    /// Side length in normalised units, `2Δ · 2^-level`.
    pub side: f64,
    /// Support point held by a leaf cell.
    pub point: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Quadtree {
    dim: usize,
    n_input: usize,
    /// Original-units length of one normalised unit.
    unit: f64,
    spread: f64,
    shift: Vec<f64>,
    cells: Vec<Cell>,
    postorder: Vec<usize>,
    /// Input point -> support point.
    support_of: Vec<usize>,
    /// Support point -> first input point with those coordinates.
    representative: Vec<usize>,
}

impl Topology for Quadtree {
    fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    fn children(&self, v: usize) -> &[usize] {
        &self.cells[v].children
    }

    fn leaf_point(&self, v: usize) -> Option<usize> {
        self.cells[v].point
    }

    fn n_nodes(&self) -> usize {
        self.cells.len()
    }
}

pub fn build_quadtree(points: &PointCloud, seed: u64) -> Result<Quadtree> {
    let dim = points.dim();
    let n_input = points.n();

    let mut support_of = Vec::with_capacity(n_input);
    let mut representative = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for i in 0..n_input {
        // +0.0 folds -0.0 into 0.0
        let key: Vec<u64> = points
            .point(i)
            .iter()
            .map(|&x| (x + 0.0).to_bits())
            .collect();
        let s = *seen.entry(key).or_insert_with(|| {
            representative.push(i);
            representative.len() - 1
        });
        support_of.push(s);
    }
    let m = representative.len();
    if m < 2 {
        return Err(Error::CoincidentPoints);
    }

    let (mut min_d, mut max_d) = (f64::INFINITY, 0.0f64);
    for a in 0..m {
        for b in (a + 1)..m {
            let d = points.distance(representative[a], representative[b]);
            min_d = min_d.min(d);
            max_d = max_d.max(d);
        }
    }
    if !(min_d > 0.0) {
        return Err(Error::CoincidentPoints);
    }
    let unit = min_d;
    let spread = max_d / unit;

    let coords: Vec<Vec<f64>> = representative
        .iter()
        .map(|&i| points.point(i).iter().map(|x| x / unit).collect())
        .collect();
    let lo: Vec<f64> = (0..dim)
        .map(|k| coords.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut rng = seeded_rng(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * spread).collect();
    let root_corner: Vec<f64> = lo.iter().zip(&shift).map(|(l, s)| l - s).collect();

    let mut cells = vec![Cell {
        parent: None,
        children: Vec::new(),
        level: 0,
        corner: root_corner,
        side: 2.0 * spread,
        point: None,
    }];
    let mut work: Vec<(usize, Vec<usize>)> = vec![(0, (0..m).collect())];
    while let Some((id, members)) = work.pop() {
        if members.len() == 1 {
            cells[id].point = Some(members[0]);
            continue;
        }
        if cells[id].level >= MAX_LEVEL {
            return Err(Error::InvalidTree(
                "quadtree recursion exceeded the depth limit".into(),
            ));
        }
        let half = 0.5 * cells[id].side;
        let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
        for &p in &members {
            let code: Vec<bool> = (0..dim)
                .map(|k| coords[p][k] >= cells[id].corner[k] + half)
                .collect();
            groups.entry(code).or_default().push(p);
        }
        for (code, group) in groups {
            let corner: Vec<f64> = cells[id]
                .corner
                .iter()
                .zip(&code)
                .map(|(c, &up)| if up { c + half } else { *c })
                .collect();
            let child = cells.len();
            cells.push(Cell {
                parent: Some(id),
                children: Vec::new(),
                level: cells[id].level + 1,
                corner,
                side: half,
                point: None,
            });
            cells[id].children.push(child);
            work.push((child, group));
        }
    }

    let mut postorder = Vec::with_capacity(cells.len());
    let mut stack = vec![(0usize, false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            postorder.push(v);
        } else {
            stack.push((v, true));
            stack.extend(cells[v].children.iter().rev().map(|&c| (c, false)));
        }
    }

    Ok(Quadtree {
        dim,
        n_input,
        unit,
        spread,
        shift,
        cells,
        postorder,
        support_of,
        representative,
    })
}

impl Quadtree {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Spread `Δ` of the (deduplicated) input.
    pub fn spread(&self) -> f64 {
        self.spread
    }

    /// Scale factor from normalised to original units (the minimum distance).
    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_support(&self) -> usize {
        self.representative.len()
    }

    pub fn depth(&self) -> u32 {
        self.cells.iter().map(|c| c.level).max().unwrap_or(0)
    }

    /// Leaf cell holding input point `i`.
    pub fn leaf_of_input(&self, i: usize) -> usize {
        let s = self.support_of[i];
        self.cells
            .iter()
            .position(|c| c.point == Some(s))
            .expect("every support point has a leaf")
    }

    fn aggregate(&self, p: &Distribution) -> Result<Vec<f64>> {
        p.expect_len(self.n_input)?;
        let mut out = vec![0.0; self.n_support()];
        for (i, &s) in self.support_of.iter().enumerate() {
            out[s] += p[i];
        }
        Ok(out)
    }

    /// `Δ Σ_e 2^{-l_e} |μ(T_e) - ρ(T_e)|`, scaled back to original units.
    pub fn wasserstein(&self, mu: &Distribution, rho: &Distribution) -> Result<f64> {
        let a = self.aggregate(mu)?;
        let b = self.aggregate(rho)?;
        let mut diff = vec![0.0; self.cells.len()];
        let mut total = 0.0;
        for &v in &self.postorder {
            let cell = &self.cells[v];
            if let Some(p) = cell.point {
                diff[v] += a[p] - b[p];
            }
            if let Some(parent) = cell.parent {
                total += self.spread * (-(cell.level as f64)).exp2() * diff[v].abs();
                diff[parent] += diff[v];
            }
        }
        Ok(self.unit * total)
    }

    /// Cost of the quadtree's greedy coupling under Euclidean distances.
    pub fn flowtree(
        &self,
        points: &PointCloud,
        mu: &Distribution,
        rho: &Distribution,
    ) -> Result<f64> {
        if points.n() != self.n_input {
            return Err(Error::DimensionMismatch {
                expected: self.n_input,
                found: points.n(),
            });
        }
        let a = self.aggregate(mu)?;
        let b = self.aggregate(rho)?;
        Ok(greedy_matching(self, &a, &b)
            .iter()
            .filter(|m| m.mu_point != m.rho_point)
            .map(|m| {
                m.mass
                    * points.distance(
                        self.representative[m.mu_point],
                        self.representative[m.rho_point],
                    )
            })
            .sum())
    }
}

pub fn quadtree_wasserstein(qt: &Quadtree, mu: &Distribution, rho: &Distribution) -> Result<f64> {
    qt.wasserstein(mu, rho)
}

pub fn flowtree_distance(
    qt: &Quadtree,
    points: &PointCloud,
    mu: &Distribution,
    rho: &Distribution,
) -> Result<f64> {
    qt.flowtree(points, mu, rho)
}
