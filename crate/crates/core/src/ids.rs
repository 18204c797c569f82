//! Shared vocabulary types for the coloring engines.
//!
//! Vertices are dense integer ids in `[0, n)`. Colors live in `[1, delta+1]`
//! and `0` is never a valid color, so `Option<Color>` is the uncolored state.
//! Levels are assigned once at initialization and never change afterwards.

use std::fmt;

/// Index of a vertex, in `[0, n)` for the owning engine.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VertexId(pub u32);

impl VertexId {
    /// The id as a `usize`, for indexing per-vertex tables.
    #[inline(always)]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A color in `[1, delta+1]`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Color(pub u32);

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A vertex level in `[1, max_level(delta)]`. Fixed for the lifetime of a
/// vertex; the probability of level `k` halves with each step up, and the
/// top level absorbs the remaining mass.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Level(pub u8);

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Recoloring timestamp. Sequential engines hand out distinct increasing
/// values; batch and message-passing engines stamp the batch/epoch ordinal,
/// so ties are possible there.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Timestamp(pub u64);

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Undirected edge key, stored with the smaller endpoint first so that
/// `(u, v)` and `(v, u)` collide.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct EdgeKey(pub VertexId, pub VertexId);

impl EdgeKey {
    pub fn new(a: VertexId, b: VertexId) -> Self {
        if a.0 <= b.0 {
            EdgeKey(a, b)
        } else {
            EdgeKey(b, a)
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

/// Kind of a single edge update.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum UpdateKind {
    Insert,
    Delete,
}

impl fmt::Display for UpdateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateKind::Insert => write!(f, "insert"),
            UpdateKind::Delete => write!(f, "delete"),
        }
    }
}

/// One edge update against the current graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct UpdateEvent {
    pub kind: UpdateKind,
    pub u: VertexId,
    pub v: VertexId,
}

impl UpdateEvent {
    pub fn insert(u: VertexId, v: VertexId) -> Self {
        UpdateEvent { kind: UpdateKind::Insert, u, v }
    }

    pub fn delete(u: VertexId, v: VertexId) -> Self {
        UpdateEvent { kind: UpdateKind::Delete, u, v }
    }

    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(self.u, self.v)
    }
}

/// `ceil(log2(x))` for `x >= 1`.
pub fn ceil_log2(x: u32) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else if x.is_power_of_two() {
        x.ilog2()
    } else {
        x.ilog2() + 1
    }
}

/// Highest level a vertex can take for a given `delta`: `ceil(log2 delta) + 1`.
pub fn max_level(delta: u32) -> u8 {
    (ceil_log2(delta) + 1) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_small_values() {
        let expect = [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (1024, 10), (1025, 11)];
        for (x, want) in expect {
            assert_eq!(ceil_log2(x), want, "ceil_log2({x})");
        }
    }

    #[test]
    fn level_range_tracks_delta() {
        assert_eq!(max_level(1), 1);
        assert_eq!(max_level(2), 2);
        assert_eq!(max_level(64), 7);
        assert_eq!(max_level(1 << 20), 21);
    }

    #[test]
    fn edge_key_normalizes_order() {
        let a = VertexId(7);
        let b = VertexId(3);
        assert_eq!(EdgeKey::new(a, b), EdgeKey::new(b, a));
        assert_eq!(EdgeKey::new(a, b).0, b);
    }
}
