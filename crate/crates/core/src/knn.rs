//! Exact (flat) and inverted-file nearest-neighbour indexes.
//!
//! Similarity is the raw inner product; the distance used throughout is its
//! negation, `d(x, y) = -<x, y>`, so a lower distance means more similar.
//! The IVF coarse quantiser clusters norm-augmented vectors so that L2 probing
//! follows inner-product order.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::math::{dot, Matrix};
use crate::seed;

/// Lloyd iterations used to train the coarse quantiser.
pub const KMEANS_ITERATIONS: usize = 25;
pub const DEFAULT_NLIST: usize = 256;
pub const DEFAULT_NPROBE: usize = 16;

const MAGIC: &[u8; 4] = b"CKNN";
const VERSION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Flat,
    Ivf { nlist: usize, nprobe: usize },
}

impl Default for IndexKind {
    fn default() -> Self {
        IndexKind::Ivf {
            nlist: DEFAULT_NLIST,
            nprobe: DEFAULT_NPROBE,
        }
    }
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    -dot(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row of the stored vector.
    pub row: usize,
    pub distance: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.row.cmp(&other.row))
    }
}

// Max-heap entry so the worst retained candidate sits on top.
struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<HeapEntry>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(HeapEntry(n));
        } else if let Some(top) = self.heap.peek() {
            if n.key_cmp(&top.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(HeapEntry(n));
            }
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|e| e.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct InvertedLists {
    centroids: Matrix,
    lists: Vec<Vec<u32>>,
    nprobe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    vectors: Matrix,
    ivf: Option<InvertedLists>,
}

fn sq_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Appends `sqrt(M^2 - |v|^2)` (M = largest row norm) to every row, so that L2
/// nearest neighbours of `[q, 0]` are the inner-product neighbours of `q`.
fn augment(vectors: &Matrix) -> Matrix {
    let sq: Vec<f64> = vectors.iter_rows().map(|v| dot(v, v)).collect();
    let max = sq.iter().copied().fold(0.0, f64::max);
    let cols = vectors.cols() + 1;
    let mut out = Matrix::zeros(vectors.rows(), cols);
    for (i, v) in vectors.iter_rows().enumerate() {
        let row = out.row_mut(i);
        row[..cols - 1].copy_from_slice(v);
        row[cols - 1] = libm::sqrt((max - sq[i]).max(0.0));
    }
    out
}

fn nearest_centroid(centroids: &Matrix, v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_l2(row, v);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd's k-means with L2 assignment. Initial centroids are distinct rows
/// drawn with the seeded RNG; a cluster that empties keeps its last centroid.
pub fn kmeans(vectors: &Matrix, k: usize, iterations: usize, seed: u64) -> Result<(Matrix, Vec<usize>)> {
    let n = vectors.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("nlist {k} must be in 1..={n}")));
    }
    let dim = vectors.cols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut centroids = vectors.select_rows(&order[..k]);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let c = nearest_centroid(&centroids, vectors.row(i));
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(vectors.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    for (i, a) in assign.iter_mut().enumerate() {
        *a = nearest_centroid(&centroids, vectors.row(i));
    }
    Ok((centroids, assign))
}

impl KnnIndex {
    /// Builds an index over `vectors` (rows, already in PCA space).
    pub fn build(vectors: Matrix, kind: IndexKind, seed: u64) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::Empty("index needs at least one vector"));
        }
        let ivf = match kind {
            IndexKind::Flat => None,
            IndexKind::Ivf { nlist, nprobe } => {
                if nprobe == 0 {
                    return Err(Error::invalid("nprobe must be positive"));
                }
                let (centroids, assign) = kmeans(&augment(&vectors), nlist, KMEANS_ITERATIONS, seed)?;
                let mut lists = vec![Vec::new(); nlist];
                for (i, &c) in assign.iter().enumerate() {
                    lists[c].push(i as u32);
                }
                Some(InvertedLists {
                    centroids,
                    lists,
                    nprobe: nprobe.min(nlist),
                })
            }
        };
        Ok(Self { vectors, ivf })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn kind(&self) -> IndexKind {
        match &self.ivf {
            None => IndexKind::Flat,
            Some(ivf) => IndexKind::Ivf {
                nlist: ivf.lists.len(),
                nprobe: ivf.nprobe,
            },
        }
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        self.vectors.row(row)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// Sizes of the inverted lists (empty for a flat index).
    pub fn list_sizes(&self) -> Vec<usize> {
        self.ivf
            .as_ref()
            .map(|ivf| ivf.lists.iter().map(Vec::len).collect())
            .unwrap_or_default()
    }

    pub fn set_nprobe(&mut self, nprobe: usize) {
        if let Some(ivf) = &mut self.ivf {
            ivf.nprobe = nprobe.clamp(1, ivf.lists.len());
        }
    }

    /// The `k` stored vectors closest to `query`, ascending by distance
    /// (ties by row).
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.search_excluding(query, k, None)
    }

    /// Like [`KnnIndex::search`] but never returns row `exclude`, so a stored
    /// point can be queried against the rest of the index.
    pub fn search_excluding(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: query.len(),
            });
        }
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k == 0 || k > available {
            return Err(Error::TooManyNeighbors { k, size: available });
        }
        let mut top = TopK::new(k);
        let mut consider = |row: usize| {
            if Some(row) != exclude {
                top.push(Neighbor {
                    row,
                    distance: distance(query, self.vectors.row(row)),
                });
            }
        };
        match &self.ivf {
            None => (0..self.len()).for_each(&mut consider),
            Some(ivf) => {
                // Lists are probed by L2 from the augmented query `[q, 0]`;
                // probing continues past nprobe only until k candidates have
                // been seen.
                let dim = self.dim();
                let mut order: Vec<(f64, usize)> = ivf
                    .centroids
                    .iter_rows()
                    .enumerate()
                    .map(|(c, row)| (dot(row, row) - 2.0 * dot(query, &row[..dim]), c))
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut seen = 0usize;
                for (probed, &(_, c)) in order.iter().enumerate() {
                    if probed >= ivf.nprobe && seen >= k + usize::from(exclude.is_some()) {
                        break;
                    }
                    for &row in &ivf.lists[c] {
                        consider(row as usize);
                    }
                    seen += ivf.lists[c].len();
                }
            }
        }
        Ok(top.into_sorted())
    }

    /// Serialises the index: header (kind, dims, nlist, nprobe), centroid
    /// block, inverted-list offsets and ids, then the vector payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        let (kind, nlist, nprobe) = match &self.ivf {
            None => (0u8, 0, 0),
            Some(ivf) => (1u8, ivf.lists.len(), ivf.nprobe),
        };
        w.u8(kind);
        w.u32(self.dim() as u32);
        w.u64(self.len() as u64);
        w.u32(nlist as u32);
        w.u32(nprobe as u32);
        if let Some(ivf) = &self.ivf {
            w.f64s(ivf.centroids.as_slice());
            let mut offset = 0u64;
            w.u64(offset);
            for l in &ivf.lists {
                offset += l.len() as u64;
                w.u64(offset);
            }
            for l in &ivf.lists {
                for &id in l {
                    w.u32(id);
                }
            }
        }
        w.f64s(self.vectors.as_slice());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, VERSION, "index")?;
        let kind = r.u8()?;
        let dim = r.u32()? as usize;
        let n = r.usize()?;
        let nlist = r.u32()? as usize;
        let nprobe = r.u32()? as usize;
        let ivf = match kind {
            0 => None,
            1 => {
                let centroids = Matrix::from_vec(nlist, dim + 1, r.f64s(nlist * (dim + 1))?)?;
                let mut offsets = Vec::with_capacity(nlist + 1);
                for _ in 0..=nlist {
                    offsets.push(r.usize()?);
                }
                if offsets[0] != 0 || offsets[nlist] != n || offsets.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::corrupt("index", "bad list offsets"));
                }
                let mut lists = Vec::with_capacity(nlist);
                for w in offsets.windows(2) {
                    let mut l = Vec::with_capacity(w[1] - w[0]);
                    for _ in w[0]..w[1] {
                        let id = r.u32()?;
                        if id as usize >= n {
                            return Err(Error::corrupt("index", "list id out of range"));
                        }
                        l.push(id);
                    }
                    lists.push(l);
                }
                Some(InvertedLists {
                    centroids,
                    lists,
                    nprobe,
                })
            }
            k => return Err(Error::corrupt("index", format!("unknown kind {k}"))),
        };
        let vectors = Matrix::from_vec(n, dim, r.f64s(n * dim)?)?;
        r.finish()?;
        Ok(Self { vectors, ivf })
    }
}

/// The k nearest neighbours of one query joined with their stored labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub entries: Vec<NeighborEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    /// Row in the measure-train reference set.
    pub row: usize,
    pub distance: f64,
    pub true_class: usize,
    /// The neighbour's own linear probability at its true class.
    pub true_class_prob: f64,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.distance).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seed::rng(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn brute(m: &Matrix, q: &[f64], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = m
            .iter_rows()
            .enumerate()
            .map(|(row, v)| Neighbor { row, distance: -dot(q, v) })
            .collect();
        all.sort_by(|a, b| a.key_cmp(b));
        all.truncate(k);
        all
    }

    #[test]
    fn flat_matches_brute_force() {
        let m = random(5, 3, 1);
        let idx = KnnIndex::build(m.clone(), IndexKind::Flat, 0).unwrap();
        let q = [0.3, -0.2, 0.9];
        assert_eq!(idx.search(&q, 5).unwrap(), brute(&m, &q, 5));
    }

    #[test]
    fn self_match_has_negative_squared_norm() {
        let m = Matrix::from_rows(&[[3.0, 0.0], [0.0, 0.1]]).unwrap();
        let idx = KnnIndex::build(m, IndexKind::Flat, 0).unwrap();
        let n = idx.search(&[3.0, 0.0], 1).unwrap();
        assert_eq!(n[0].row, 0);
        assert_eq!(n[0].distance, -9.0);
    }

    #[test]
    fn two_points_prefers_larger_inner_product() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [2.0, 2.0]]).unwrap();
        let idx = KnnIndex::build(m, IndexKind::Flat, 0).unwrap();
        assert_eq!(idx.search(&[1.0, 0.1], 1).unwrap()[0].row, 1);
    }

    #[test]
    fn exclusion_skips_self() {
        let m = random(10, 4, 2);
        let idx = KnnIndex::build(m.clone(), IndexKind::Flat, 0).unwrap();
        let got = idx.search_excluding(m.row(3), 9, Some(3)).unwrap();
        assert_eq!(got.len(), 9);
        assert!(got.iter().all(|n| n.row != 3));
        assert!(idx.search_excluding(m.row(3), 10, Some(3)).is_err());
    }

    #[test]
    fn ivf_exhaustive_probe_is_exact() {
        let m = random(40, 4, 3);
        let idx = KnnIndex::build(m.clone(), IndexKind::Ivf { nlist: 40, nprobe: 40 }, 5).unwrap();
        assert_eq!(idx.list_sizes().iter().sum::<usize>(), 40);
        let q = [0.5, 0.1, -0.3, 0.2];
        assert_eq!(idx.search(&q, 7).unwrap(), brute(&m, &q, 7));
    }

    #[test]
    fn ivf_every_vector_in_one_list() {
        let m = random(200, 3, 4);
        let idx = KnnIndex::build(m, IndexKind::Ivf { nlist: 16, nprobe: 2 }, 1).unwrap();
        let ivf = idx.ivf.as_ref().unwrap();
        let mut seen = vec![0; 200];
        for l in &ivf.lists {
            for &id in l {
                seen[id as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn errors() {
        assert!(KnnIndex::build(Matrix::zeros(0, 2), IndexKind::Flat, 0).is_err());
        let m = random(4, 2, 1);
        assert!(KnnIndex::build(m.clone(), IndexKind::Ivf { nlist: 5, nprobe: 1 }, 0).is_err());
        let idx = KnnIndex::build(m, IndexKind::Flat, 0).unwrap();
        assert!(matches!(idx.search(&[0.0, 0.0], 5), Err(Error::TooManyNeighbors { .. })));
        assert!(idx.search(&[0.0], 1).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let m = random(50, 3, 9);
        for kind in [IndexKind::Flat, IndexKind::Ivf { nlist: 8, nprobe: 3 }] {
            let idx = KnnIndex::build(m.clone(), kind, 2).unwrap();
            let bytes = idx.to_bytes();
            let back = KnnIndex::from_bytes(&bytes).unwrap();
            assert_eq!(back, idx);
            assert_eq!(back.to_bytes(), bytes);
            assert!(KnnIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
