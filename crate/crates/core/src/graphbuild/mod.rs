//! Multi-resolution patch graphs.
//!
//! Nodes are patches; same-magnification patches whose lattice cells are within
//! Chebyshev distance 1 are joined, each patch at magnification `m` is joined to its
//! (up to four) children at `2m`, and every node carries a self-loop. Edges are
//! undirected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Rng, Tensor};
use crate::slideio::{FeatureSet, Magnification};

/// Identity of a node: `(magnification, row, col)`, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub mag: Magnification,
    pub row: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpaceMode {
    /// One shared feature space for every magnification.
    Naive,
    /// `[low | high]` slots; the slot of the other magnification is zero.
    ConcatZero,
    /// `[low | high]` slots; the other slot holds the other magnification's slide mean.
    ConcatAvg,
}

impl FeatureSpaceMode {
    pub fn is_concat(self) -> bool {
        !matches!(self, FeatureSpaceMode::Naive)
    }
}

impl fmt::Display for FeatureSpaceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSpaceMode::Naive => "naive",
            FeatureSpaceMode::ConcatZero => "concat_zero",
            FeatureSpaceMode::ConcatAvg => "concat_avg",
        })
    }
}

impl FromStr for FeatureSpaceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(FeatureSpaceMode::Naive),
            "concat_zero" => Ok(FeatureSpaceMode::ConcatZero),
            "concat_avg" => Ok(FeatureSpaceMode::ConcatAvg),
            other => Err(Error::parse("feature space mode", format!("unknown '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResGraph {
    pub nodes: Vec<NodeKey>,
    /// `N × F`: `F = d` for naive, `2d` for the concat modes.
    pub features: Tensor,
    /// Undirected pairs `(i, j)` with `i <= j`, including one `(i, i)` per node.
    pub edges: Vec<(usize, usize)>,
    pub mode: FeatureSpaceMode,
    /// Magnifications present, ascending.
    pub mags: Vec<Magnification>,
    /// Extractor feature width `d`.
    pub slot_dim: usize,
}

impl MultiResGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mag_of(&self, node: usize) -> Magnification {
        self.nodes[node].mag
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<MultiResGraph> {
        let n = self.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::invalid("permutation", "not a permutation of the nodes"));
            }
            inverse[old] = new;
        }
        if perm.len() != n {
            return Err(Error::invalid("permutation", "wrong length"));
        }
        let f = self.features.cols();
        let mut data = Vec::with_capacity(n * f);
        for &old in perm {
            data.extend_from_slice(self.features.row_slice(old));
        }
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (inverse[a], inverse[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        // keep the relabeled edge list in a different order too
        edges.reverse();
        Ok(MultiResGraph {
            nodes: perm.iter().map(|&o| self.nodes[o]).collect(),
            features: Tensor::matrix(n, f, data)?,
            edges,
            mode: self.mode,
            mags: self.mags.clone(),
            slot_dim: self.slot_dim,
        })
    }
}

/// Same-magnification edges over `cells`: one per pair at Chebyshev distance 1, plus a
/// self-loop per cell. Indices refer to positions in `cells`.
pub fn build_intra_edges(cells: &[(u32, u32)]) -> Vec<(usize, usize)> {
    let index: BTreeMap<(u32, u32), usize> =
        cells.iter().enumerate().map(|(i, &rc)| (rc, i)).collect();
    let mut edges = Vec::new();
    for (i, &(r, c)) in cells.iter().enumerate() {
        edges.push((i, i));
        // forward half of the 8-neighbourhood, so each pair appears once
        let forward = [(0i64, 1i64), (1, -1), (1, 0), (1, 1)];
        for (dr, dc) in forward {
            let (nr, nc) = (i64::from(r) + dr, i64::from(c) + dc);
            if nr < 0 || nc < 0 {
                continue;
            }
            if let Some(&j) = index.get(&(nr as u32, nc as u32)) {
                edges.push((i.min(j), i.max(j)));
            }
        }
    }
    edges
}

/// Parent→child edges from a lattice at `low_mag` to one at `high_mag = 2·low_mag`.
/// Returned pairs are `(low index, high index)`.
pub fn build_cross_edges(
    low: &[(u32, u32)],
    low_mag: Magnification,
    high: &[(u32, u32)],
    high_mag: Magnification,
) -> Result<Vec<(usize, usize)>> {
    if !low_mag.is_half_of(high_mag) {
        return Err(Error::invalid(
            "cross-magnification edges",
            format!("ratio {high_mag}/{low_mag} is not 2"),
        ));
    }
    let index: BTreeMap<(u32, u32), usize> =
        high.iter().enumerate().map(|(i, &rc)| (rc, i)).collect();
    let mut edges = Vec::new();
    for (i, &(r, c)) in low.iter().enumerate() {
        for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            if let Some(&j) = index.get(&(2 * r + dr, 2 * c + dc)) {
                edges.push((i, j));
            }
        }
    }
    Ok(edges)
}

fn sorted_sets(sets: &[FeatureSet]) -> Result<Vec<&FeatureSet>> {
    let mut sorted: Vec<&FeatureSet> = sets.iter().collect();
    sorted.sort_by_key(|s| s.magnification);
    match sorted.as_slice() {
        [] => return Err(Error::EmptySlide("no feature sets".into())),
        [_] => {}
        [lo, hi] => {
            if !lo.magnification.is_half_of(hi.magnification) {
                return Err(Error::invalid(
                    "magnifications",
                    format!("{}x and {}x are not a doubling pair", lo.magnification, hi.magnification),
                ));
            }
            if lo.dim != hi.dim {
                return Err(Error::shape(
                    "assemble_graph",
                    format!("feature dims {} and {} differ", lo.dim, hi.dim),
                ));
            }
        }
        _ => {
            return Err(Error::invalid(
                "magnifications",
                "at most two magnifications per graph",
            ))
        }
    }
    Ok(sorted)
}

fn slide_mean(fs: &FeatureSet) -> Vec<f64> {
    let mut mean = vec![0.0; fs.dim];
    for v in fs.rows.values() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = fs.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Builds the graph of one slide. Nodes are ordered by magnification, then `(row, col)`.
pub fn assemble_graph(sets: &[FeatureSet], mode: FeatureSpaceMode) -> Result<MultiResGraph> {
    let sorted = sorted_sets(sets)?;
    if mode.is_concat() && sorted.len() != 2 {
        return Err(Error::invalid(
            "feature space",
            format!("{mode} needs two magnifications, got {}", sorted.len()),
        ));
    }
    let d = sorted[0].dim;
    let width = if mode.is_concat() { 2 * d } else { d };
    let total: usize = sorted.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(Error::EmptySlide("no patches".into()));
    }

    let means: Vec<Vec<f64>> = sorted.iter().map(|s| slide_mean(s)).collect();
    let mut nodes = Vec::with_capacity(total);
    let mut data = Vec::with_capacity(total * width);
    for (slot, fs) in sorted.iter().enumerate() {
        for (&(row, col), v) in &fs.rows {
            nodes.push(NodeKey {
                mag: fs.magnification,
                row,
                col,
            });
            match mode {
                FeatureSpaceMode::Naive => data.extend_from_slice(v),
                FeatureSpaceMode::ConcatZero | FeatureSpaceMode::ConcatAvg => {
                    let other = match mode {
                        FeatureSpaceMode::ConcatZero => vec![0.0; d],
                        _ => means[1 - slot].clone(),
                    };
                    if slot == 0 {
                        data.extend_from_slice(v);
                        data.extend_from_slice(&other);
                    } else {
                        data.extend_from_slice(&other);
                        data.extend_from_slice(v);
                    }
                }
            }
        }
    }

    let mut edges = Vec::new();
    let mut offset = 0;
    let mut offsets = Vec::new();
    for fs in &sorted {
        offsets.push(offset);
        edges.extend(
            build_intra_edges(&fs.cells())
                .into_iter()
                .map(|(a, b)| (a + offset, b + offset)),
        );
        offset += fs.len();
    }
    if let [lo, hi] = sorted.as_slice() {
        let cross = build_cross_edges(&lo.cells(), lo.magnification, &hi.cells(), hi.magnification)?;
        edges.extend(cross.into_iter().map(|(a, b)| (a + offsets[0], b + offsets[1])));
    }

    Ok(MultiResGraph {
        nodes,
        features: Tensor::matrix(total, width, data)?,
        edges,
        mode,
        mags: sorted.iter().map(|s| s.magnification).collect(),
        slot_dim: d,
    })
}

/// Caps the number of patches at `max_patches`.
///
/// Two magnifications: low-magnification patches are visited in uniformly random order,
/// each bringing all of its existing children, until the next family would exceed the
/// cap. If even the first family is too large, its parent is kept with as many children
/// as fit. One magnification: `max_patches` patches are sampled without replacement.
pub fn subsample_patches(
    sets: &[FeatureSet],
    max_patches: usize,
    rng: &mut Rng,
) -> Result<Vec<FeatureSet>> {
    if max_patches == 0 {
        return Err(Error::invalid("max_patches", "must be at least 1"));
    }
    let total: usize = sets.iter().map(|s| s.len()).sum();
    if total <= max_patches {
        return Ok(sets.to_vec());
    }
    let sorted = sorted_sets(sets)?;
    match sorted.as_slice() {
        [only] => {
            let mut cells = only.cells();
            rng.shuffle(&mut cells);
            let keep: BTreeSet<(u32, u32)> = cells.into_iter().take(max_patches).collect();
            Ok(vec![only.retain_cells(&keep)])
        }
        [lo, hi] => {
            let mut parents = lo.cells();
            rng.shuffle(&mut parents);
            let mut keep_lo = BTreeSet::new();
            let mut keep_hi = BTreeSet::new();
            let mut count = 0usize;
            for (r, c) in parents {
                let children: Vec<(u32, u32)> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dr, dc)| (2 * r + dr, 2 * c + dc))
                    .filter(|k| hi.rows.contains_key(k))
                    .collect();
                let family = 1 + children.len();
                if count + family > max_patches {
                    if count == 0 {
                        keep_lo.insert((r, c));
                        keep_hi.extend(children.into_iter().take(max_patches - 1));
                    }
                    break;
                }
                keep_lo.insert((r, c));
                keep_hi.extend(children);
                count += family;
            }
            Ok(vec![lo.retain_cells(&keep_lo), hi.retain_cells(&keep_hi)])
        }
        _ => unreachable!("sorted_sets admits one or two magnifications"),
    }
}

/// Debug dump: `src_mag,src_row,src_col,dst_mag,dst_row,dst_col`.
pub fn write_edges_csv(graph: &MultiResGraph, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "src_mag,src_row,src_col,dst_mag,dst_row,dst_col")?;
    for &(a, b) in &graph.edges {
        let (s, t) = (graph.nodes[a], graph.nodes[b]);
        writeln!(out, "{},{},{},{},{},{}", s.mag, s.row, s.col, t.mag, t.row, t.col)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mag(v: f64) -> Magnification {
        Magnification::new(v).unwrap()
    }

    fn full(rows: u32, cols: u32) -> Vec<(u32, u32)> {
        (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect()
    }

    fn brute_force_pairs(cells: &[(u32, u32)]) -> usize {
        let mut n = 0;
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                let dr = (i64::from(cells[i].0) - i64::from(cells[j].0)).abs();
                let dc = (i64::from(cells[i].1) - i64::from(cells[j].1)).abs();
                if dr.max(dc) == 1 {
                    n += 1;
                }
            }
        }
        n
    }

    fn neighbor_edges(edges: &[(usize, usize)]) -> usize {
        edges.iter().filter(|(a, b)| a != b).count()
    }

    fn set_with(m: f64, dim: usize, cells: &[(u32, u32)], value: impl Fn(u32, u32) -> Vec<f64>) -> FeatureSet {
        let mut fs = FeatureSet::new(mag(m), dim);
        for &(r, c) in cells {
            fs.insert(r, c, value(r, c)).unwrap();
        }
        fs
    }

    #[test]
    fn single_node_has_only_a_self_loop() {
        assert_eq!(build_intra_edges(&[(3, 3)]), vec![(0, 0)]);
    }

    #[test]
    fn three_by_three_has_twenty_neighbor_edges() {
        let cells = full(3, 3);
        let edges = build_intra_edges(&cells);
        assert_eq!(brute_force_pairs(&cells), 20);
        assert_eq!(neighbor_edges(&edges), 20);
        assert_eq!(edges.len() - 20, 9);
    }

    #[test]
    fn strip_has_three_edges() {
        let cells = full(1, 4);
        assert_eq!(brute_force_pairs(&cells), 3);
        assert_eq!(neighbor_edges(&build_intra_edges(&cells)), 3);
    }

    #[test]
    fn closed_form_matches_brute_force_up_to_six() {
        for r in 1..=6u32 {
            for c in 1..=6u32 {
                let cells = full(r, c);
                let closed = (r * (c - 1) + (r - 1) * c + 2 * (r - 1) * (c - 1)) as usize;
                assert_eq!(brute_force_pairs(&cells), closed);
                assert_eq!(neighbor_edges(&build_intra_edges(&cells)), closed);
            }
        }
    }

    #[test]
    fn cross_edges_full_pair() {
        let edges = build_cross_edges(&full(2, 2), mag(5.0), &full(4, 4), mag(10.0)).unwrap();
        assert_eq!(edges.len(), 16);
        for i in 0..4 {
            assert_eq!(edges.iter().filter(|(a, _)| *a == i).count(), 4);
        }
    }

    #[test]
    fn cross_edges_skip_missing_children() {
        let edges = build_cross_edges(&[(0, 0)], mag(5.0), &[(0, 0), (1, 1)], mag(10.0)).unwrap();
        assert_eq!(edges.len(), 2);
        let edges = build_cross_edges(&[(0, 0), (5, 5)], mag(5.0), &[(0, 0)], mag(10.0)).unwrap();
        assert!(edges.iter().all(|(a, _)| *a == 0));
        assert!(build_cross_edges(&[(0, 0)], mag(5.0), &[(0, 0)], mag(20.0)).is_err());
    }

    #[test]
    fn concat_zero_and_naive_layouts() {
        let lo = set_with(5.0, 2, &[(0, 0)], |_, _| vec![1.0, 2.0]);
        let hi = set_with(10.0, 2, &full(2, 2), |r, c| vec![f64::from(r), f64::from(c)]);
        let g = assemble_graph(&[hi.clone(), lo.clone()], FeatureSpaceMode::ConcatZero).unwrap();
        assert_eq!(g.features.cols(), 4);
        assert_eq!(g.features.row_slice(0), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(g.features.row_slice(4), &[0.0, 0.0, 1.0, 1.0]);
        let naive = assemble_graph(&[lo, hi], FeatureSpaceMode::Naive).unwrap();
        assert_eq!(naive.features.cols(), 2);
        assert_eq!(naive.features.row_slice(0), &[1.0, 2.0]);
        // 1 + 4 self loops, 6 high neighbor pairs, 4 cross
        assert_eq!(naive.edges.len(), 5 + 6 + 4);
    }

    #[test]
    fn concat_avg_uses_other_magnification_mean() {
        let lo = set_with(5.0, 2, &[(0, 0)], |_, _| vec![7.0, -1.0]);
        let hi = set_with(10.0, 2, &[(0, 0), (0, 1)], |_, c| {
            if c == 0 { vec![1.0, 2.0] } else { vec![3.0, 6.0] }
        });
        let g = assemble_graph(&[lo, hi], FeatureSpaceMode::ConcatAvg).unwrap();
        assert_eq!(g.features.row_slice(0), &[7.0, -1.0, 2.0, 4.0]);
        assert_eq!(g.features.row_slice(1), &[7.0, -1.0, 1.0, 2.0]);
    }

    #[test]
    fn concat_needs_two_magnifications() {
        let lo = set_with(10.0, 2, &[(0, 0)], |_, _| vec![0.0, 0.0]);
        assert!(assemble_graph(&[lo.clone()], FeatureSpaceMode::ConcatAvg).is_err());
        assert!(assemble_graph(&[lo], FeatureSpaceMode::Naive).is_ok());
    }

    #[test]
    fn subsample_identity_below_cap() {
        let lo = set_with(10.0, 1, &full(10, 10), |_, _| vec![0.0]);
        let mut rng = Rng::substream(1, "t");
        let out = subsample_patches(&[lo.clone()], 6000, &mut rng).unwrap();
        assert_eq!(out, vec![lo]);
    }

    #[test]
    fn subsample_keeps_whole_families() {
        let lo = set_with(5.0, 1, &full(2, 2), |_, _| vec![0.0]);
        let hi = set_with(10.0, 1, &full(4, 4), |_, _| vec![0.0]);
        let mut rng = Rng::substream(3, "t");
        let out = subsample_patches(&[lo.clone(), hi.clone()], 10, &mut rng).unwrap();
        assert_eq!(out[0].len(), 2);
        assert_eq!(out[1].len(), 8);
        for &(r, c) in out[1].rows.keys() {
            assert!(out[0].rows.contains_key(&(r / 2, c / 2)));
        }
        let mut again = Rng::substream(3, "t");
        assert_eq!(subsample_patches(&[lo, hi], 10, &mut again).unwrap(), out);
    }

    #[test]
    fn subsample_single_magnification_samples_nodes() {
        let only = set_with(10.0, 1, &full(5, 5), |_, _| vec![0.0]);
        let mut rng = Rng::substream(9, "t");
        let out = subsample_patches(&[only], 7, &mut rng).unwrap();
        assert_eq!(out[0].len(), 7);
    }

    #[test]
    fn permutation_preserves_structure() {
        let lo = set_with(5.0, 1, &full(2, 2), |r, c| vec![f64::from(r * 2 + c)]);
        let hi = set_with(10.0, 1, &full(4, 4), |r, c| vec![f64::from(r * 4 + c)]);
        let g = assemble_graph(&[lo, hi], FeatureSpaceMode::Naive).unwrap();
        let perm: Vec<usize> = (0..g.len()).rev().collect();
        let p = g.permuted(&perm).unwrap();
        let canon = |g: &MultiResGraph| {
            let mut e: Vec<(NodeKey, NodeKey)> = g
                .edges
                .iter()
                .map(|&(a, b)| {
                    let (x, y) = (g.nodes[a], g.nodes[b]);
                    (x.min(y), x.max(y))
                })
                .collect();
            e.sort();
            e
        };
        assert_eq!(canon(&g), canon(&p));
    }

    #[test]
    fn every_cross_edge_doubles_magnification() {
        let lo = set_with(10.0, 1, &full(3, 2), |_, _| vec![0.0]);
        let hi = set_with(20.0, 1, &full(6, 4), |_, _| vec![0.0]);
        let g = assemble_graph(&[lo, hi], FeatureSpaceMode::Naive).unwrap();
        for &(a, b) in &g.edges {
            let (ma, mb) = (g.mag_of(a), g.mag_of(b));
            assert!(ma == mb || ma.is_half_of(mb) || mb.is_half_of(ma));
        }
    }
}
