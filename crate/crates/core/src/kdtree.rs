//! Exact k-nearest-neighbor search over a static point set.
//!
//! The tree is built once by recursively splitting on the dimension with the
//! widest spread at the median point, down to leaves of at most
//! [`DEFAULT_LEAF_SIZE`] points. Queries return the `k` smallest points under
//! the total order (squared distance, coordinates lexicographically, tag), so
//! the result is identical to a sorted linear scan and does not depend on the
//! order points were supplied in.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    /// Position of the point in the slice the tree was built from.
    pub index: usize,
    pub dist2: T,
}

#[derive(Debug, Clone)]
pub struct KdTree<T> {
    dim: usize,
    points: Vec<T>,
    tags: Vec<u32>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
    root: usize,
}

impl<T: Scalar> KdTree<T> {
    /// Builds a tree over `points`, stored row-major with `dim` columns.
    /// `tags` (one per point) only take part in tie-breaking.
    pub fn build(points: Vec<T>, dim: usize, tags: Vec<u32>) -> Result<Self> {
        Self::with_leaf_size(points, dim, tags, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(
        points: Vec<T>,
        dim: usize,
        tags: Vec<u32>,
        leaf_size: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: points.len() % dim,
            });
        }
        let n = points.len() / dim;
        if tags.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: tags.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kd-tree points"));
        }
        let mut tree = KdTree {
            dim,
            points,
            tags,
            order: (0..n).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.build_node(0, n, leaf_size.max(1));
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, index: usize) -> &[T] {
        &self.points[index * self.dim..(index + 1) * self.dim]
    }

    pub fn tag(&self, index: usize) -> u32 {
        self.tags[index]
    }

    fn coord(&self, index: usize, dim: usize) -> T {
        self.points[index * self.dim + dim]
    }

    fn build_node(&mut self, start: usize, end: usize, leaf_size: usize) -> usize {
        let len = end - start;
        let split_dim = if len > leaf_size {
            self.widest_dimension(start, end)
        } else {
            None
        };
        let Some(dim) = split_dim else {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        };

        let mid = len / 2;
        let mut slice = std::mem::take(&mut self.order);
        slice[start..end].select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, dim)
                .partial_cmp(&self.coord(b, dim))
                .unwrap_or(Ordering::Equal)
        });
        let value = self.coord(slice[start + mid], dim);
        self.order = slice;

        let left = self.build_node(start, start + mid, leaf_size);
        let right = self.build_node(start + mid, end, leaf_size);
        self.nodes.push(Node::Split {
            dim,
            value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// Dimension with the largest extent, or `None` if all points coincide.
    fn widest_dimension(&self, start: usize, end: usize) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end].iter().fold(
                (T::infinity(), T::neg_infinity()),
                |(lo, hi), &i| {
                    let c = self.coord(i, d);
                    (lo.min(c), hi.max(c))
                },
            );
            let spread = hi - lo;
            if spread > T::zero() && best.is_none_or(|(_, s)| spread > s) {
                best = Some((d, spread));
            }
        }
        best.map(|(d, _)| d)
    }

    fn dist2(&self, index: usize, query: &[T]) -> T {
        self.point(index)
            .iter()
            .zip(query)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum()
    }

    /// Total order used to rank candidates.
    pub fn compare(&self, a: &Neighbor<T>, b: &Neighbor<T>) -> Ordering {
        a.dist2
            .partial_cmp(&b.dist2)
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                for (x, y) in self.point(a.index).iter().zip(self.point(b.index)) {
                    match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
                        Ordering::Equal => continue,
                        other => return other,
                    }
                }
                Ordering::Equal
            })
            .then_with(|| self.tags[a.index].cmp(&self.tags[b.index]))
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn nearest(&self, query: &[T], k: usize) -> Result<Vec<Neighbor<T>>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query"));
        }
        let k = k.min(self.len());
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(self.root, query, k, &mut best);
        }
        Ok(best)
    }

    fn search(&self, node: usize, query: &[T], k: usize, best: &mut Vec<Neighbor<T>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let cand = Neighbor {
                        index,
                        dist2: self.dist2(index, query),
                    };
                    if best.len() == k && self.compare(&cand, &best[k - 1]) != Ordering::Less {
                        continue;
                    }
                    let pos = best
                        .binary_search_by(|probe| self.compare(probe, &cand))
                        .unwrap_or_else(|p| p);
                    best.insert(pos, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, k, best);
                // `<=` keeps equal-distance points in play for tie-breaking.
                if best.len() < k || diff * diff <= best[k - 1].dist2 {
                    self.search(far, query, k, best);
                }
            }
        }
    }
}
