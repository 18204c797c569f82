//! Uniform sampling from the complement of a color set.
//!
//! Each vertex tracks the set of colors used by its lower-or-equal-level
//! neighbors and must repeatedly draw a uniform color *outside* that set.
//! Two regimes keep every operation cheap in expectation:
//!
//! * While the tracked set covers at most about three quarters of the
//!   universe, rejection sampling from the whole universe succeeds with
//!   constant probability per attempt.
//! * Beyond that density an explicit complement list is consulted. The
//!   complement of a prefix window `[1, window_len]` is maintained
//!   incrementally; the window grows by at most four cells per insertion and
//!   is already the full universe by the time the dense regime is reached,
//!   so the list then *is* the exact complement.
//!
//! Universes smaller than 100 colors skip all of this and use a flat
//! presence bitmap with an index-then-scan sampler. That path's draws depend
//! only on the set contents (never on insertion order), which the engines'
//! order-independence tests rely on.

use indexmap::IndexMap;
use rand::Rng;
use thiserror::Error;

use crate::ids::Color;

/// Universes at least this large use the windowed complement representation.
pub const WINDOWED_UNIVERSE_MIN: u32 = 100;

/// Errors from color-set operations.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum SamplerError {
    /// The color is not in `[1, universe]`.
    #[error("color {color} outside universe [1, {universe}]")]
    OutOfRange { color: Color, universe: u32 },
    /// Every color of the universe is in the set; nothing left to sample.
    #[error("set covers the whole universe; complement is empty")]
    FullSet,
    /// A batch names a color twice, or names a color that makes the
    /// operation redundant against the current set.
    #[error("batch operation is redundant for color {color}")]
    DuplicateInBatch { color: Color },
}

/// A successful draw and how many attempts it took.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Sample {
    pub color: Color,
    /// Rejection attempts consumed, counting the final successful one.
    /// Scan-based draws always report 1.
    pub attempts: u64,
}

/// Length of the maintained complement window for a set of `members` colors
/// over `[1, universe]`: nothing until half the universe is covered, then
/// growing four cells per insertion until it spans the whole universe.
pub fn window_len(universe: u32, members: u32) -> u32 {
    let half = (universe + 1) / 2;
    if members <= half {
        0
    } else {
        (4 * (members - half)).min(universe)
    }
}

/// Threshold test: rejection sampling is used while it holds.
fn rejection_ok(universe: u32, members: u32) -> bool {
    4 * (members as u64) <= 3 * (universe as u64) + 20
}

/// Uniform-by-index list with O(1) membership, insert, and delete.
#[derive(Clone, Debug, Default)]
struct MemberList {
    items: Vec<Color>,
    index: IndexMap<Color, usize>,
}

impl MemberList {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn contains(&self, c: Color) -> bool {
        self.index.contains_key(&c)
    }

    fn insert(&mut self, c: Color) {
        debug_assert!(!self.contains(c));
        self.index.insert(c, self.items.len());
        self.items.push(c);
    }

    fn remove(&mut self, c: Color) -> bool {
        match self.index.swap_remove(&c) {
            None => false,
            Some(pos) => {
                self.items.swap_remove(pos);
                if pos < self.items.len() {
                    let moved = self.items[pos];
                    *self.index.get_mut(&moved).expect("moved item is indexed") = pos;
                }
                true
            }
        }
    }

    fn get(&self, pos: usize) -> Color {
        self.items[pos]
    }
}

#[derive(Clone, Debug)]
enum Repr {
    /// Flat bitmap for universes below [`WINDOWED_UNIVERSE_MIN`].
    Small { present: Vec<bool> },
    /// Hashed membership plus incremental prefix-window complement.
    Windowed {
        members: IndexMap<Color, ()>,
        /// `[1, window] \ members`, kept exact at all times.
        complement: MemberList,
        /// Current `window_len(universe, len)`.
        window: u32,
    },
}

/// A set of colors over `[1, universe]` supporting uniform sampling from its
/// complement. Tracks its own dictionary-operation count for work audits.
#[derive(Clone, Debug)]
pub struct ColorSet {
    universe: u32,
    len: u32,
    repr: Repr,
    dict_ops: u64,
}

impl ColorSet {
    /// Empty set over `[1, universe]`. `universe` must be at least 1.
    pub fn new(universe: u32) -> Self {
        assert!(universe >= 1, "universe must be non-empty");
        let repr = if universe < WINDOWED_UNIVERSE_MIN {
            Repr::Small { present: vec![false; universe as usize] }
        } else {
            Repr::Windowed {
                members: IndexMap::new(),
                complement: MemberList::default(),
                window: 0,
            }
        };
        ColorSet { universe, len: 0, repr, dict_ops: 0 }
    }

    pub fn universe(&self) -> u32 {
        self.universe
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Cumulative dictionary operations performed by this set.
    pub fn dict_ops(&self) -> u64 {
        self.dict_ops
    }

    fn check_range(&self, c: Color) -> Result<(), SamplerError> {
        if c.0 < 1 || c.0 > self.universe {
            Err(SamplerError::OutOfRange { color: c, universe: self.universe })
        } else {
            Ok(())
        }
    }

    /// Membership test. Charged as one dictionary operation.
    pub fn contains(&mut self, c: Color) -> bool {
        self.dict_ops += 1;
        self.contains_quiet(c)
    }

    /// Membership test that does not count toward the work counters; for
    /// read-only audits and verification.
    pub fn contains_untracked(&self, c: Color) -> bool {
        self.contains_quiet(c)
    }

    fn contains_quiet(&self, c: Color) -> bool {
        match &self.repr {
            Repr::Small { present } => {
                c.0 >= 1 && c.0 <= self.universe && present[(c.0 - 1) as usize]
            }
            Repr::Windowed { members, .. } => members.contains_key(&c),
        }
    }

    /// Insert `c`. Returns `Ok(true)` if the set changed, `Ok(false)` if the
    /// color was already present.
    pub fn insert(&mut self, c: Color) -> Result<bool, SamplerError> {
        self.check_range(c)?;
        match &mut self.repr {
            Repr::Small { present } => {
                let slot = &mut present[(c.0 - 1) as usize];
                self.dict_ops += 2; // probe + write
                if *slot {
                    return Ok(false);
                }
                *slot = true;
                self.len += 1;
                Ok(true)
            }
            Repr::Windowed { members, complement, window } => {
                self.dict_ops += 1;
                if members.contains_key(&c) {
                    return Ok(false);
                }
                self.dict_ops += 1;
                members.insert(c, ());
                self.len += 1;
                // The inserted color may currently sit in the complement.
                if c.0 <= *window {
                    self.dict_ops += 1;
                    complement.remove(c);
                }
                // Grow the window; each fresh cell gets one recheck.
                let new_window = window_len(self.universe, self.len);
                for x in (*window + 1)..=new_window {
                    self.dict_ops += 1;
                    let col = Color(x);
                    if !members.contains_key(&col) {
                        complement.insert(col);
                    }
                }
                *window = new_window;
                Ok(true)
            }
        }
    }

    /// Remove `c`. Returns `Ok(true)` if the set changed, `Ok(false)` if the
    /// color was absent.
    pub fn delete(&mut self, c: Color) -> Result<bool, SamplerError> {
        self.check_range(c)?;
        match &mut self.repr {
            Repr::Small { present } => {
                let slot = &mut present[(c.0 - 1) as usize];
                self.dict_ops += 2;
                if !*slot {
                    return Ok(false);
                }
                *slot = false;
                self.len -= 1;
                Ok(true)
            }
            Repr::Windowed { members, complement, window } => {
                self.dict_ops += 1;
                if members.swap_remove(&c).is_none() {
                    return Ok(false);
                }
                self.len -= 1;
                // Shrink the window first, evicting cells that fall off.
                let new_window = window_len(self.universe, self.len);
                for x in (new_window + 1)..=*window {
                    self.dict_ops += 1;
                    complement.remove(Color(x));
                }
                *window = new_window;
                // The removed color becomes free; track it if still in view.
                if c.0 <= new_window {
                    self.dict_ops += 1;
                    complement.insert(c);
                }
                Ok(true)
            }
        }
    }

    /// Insert several colors atomically: if any is out of range, repeated in
    /// the batch, or already present, nothing is inserted.
    pub fn insert_batch(&mut self, colors: &[Color]) -> Result<(), SamplerError> {
        for (i, &c) in colors.iter().enumerate() {
            self.check_range(c)?;
            self.dict_ops += 1;
            if self.contains_quiet(c) || colors[..i].contains(&c) {
                return Err(SamplerError::DuplicateInBatch { color: c });
            }
        }
        for &c in colors {
            let changed = self.insert(c).expect("validated above");
            debug_assert!(changed);
        }
        Ok(())
    }

    /// Remove several colors atomically: if any is out of range, repeated in
    /// the batch, or absent from the set, nothing is removed.
    pub fn delete_batch(&mut self, colors: &[Color]) -> Result<(), SamplerError> {
        for (i, &c) in colors.iter().enumerate() {
            self.check_range(c)?;
            self.dict_ops += 1;
            if !self.contains_quiet(c) || colors[..i].contains(&c) {
                return Err(SamplerError::DuplicateInBatch { color: c });
            }
        }
        for &c in colors {
            let changed = self.delete(c).expect("validated above");
            debug_assert!(changed);
        }
        Ok(())
    }

    /// Draw a uniform color from the complement of the set.
    pub fn sample_empty<R: Rng>(&mut self, rng: &mut R) -> Result<Sample, SamplerError> {
        if self.len == self.universe {
            return Err(SamplerError::FullSet);
        }
        match &self.repr {
            Repr::Small { present } => {
                // Pick the k-th absent color by direct scan; the draw depends
                // only on set contents, never on operation history.
                let free = self.universe - self.len;
                let mut k = rng.gen_range(0..free);
                for (i, &used) in present.iter().enumerate() {
                    self.dict_ops += 1;
                    if !used {
                        if k == 0 {
                            return Ok(Sample { color: Color(i as u32 + 1), attempts: 1 });
                        }
                        k -= 1;
                    }
                }
                unreachable!("free count is positive, a free slot must exist");
            }
            Repr::Windowed { members, complement, window } => {
                if rejection_ok(self.universe, self.len) {
                    let mut attempts = 0u64;
                    loop {
                        attempts += 1;
                        let c = Color(rng.gen_range(1..=self.universe));
                        self.dict_ops += 1;
                        if !members.contains_key(&c) {
                            return Ok(Sample { color: c, attempts });
                        }
                    }
                } else {
                    // Past the rejection threshold the window provably spans
                    // the whole universe, so the list is the exact complement.
                    debug_assert_eq!(*window, self.universe);
                    debug_assert_eq!(complement.len() as u32, self.universe - self.len);
                    let pos = rng.gen_range(0..complement.len());
                    self.dict_ops += 1;
                    Ok(Sample { color: complement.get(pos), attempts: 1 })
                }
            }
        }
    }

    /// Sorted contents of the maintained complement window (empty for the
    /// flat representation, which has no window).
    pub fn window_complement_sorted(&self) -> Vec<Color> {
        match &self.repr {
            Repr::Small { .. } => Vec::new(),
            Repr::Windowed { complement, .. } => {
                let mut v = complement.items.clone();
                v.sort_unstable();
                v
            }
        }
    }

    /// Sorted members, for diagnostics and tests.
    pub fn members_sorted(&self) -> Vec<Color> {
        let mut v: Vec<Color> = match &self.repr {
            Repr::Small { present } => present
                .iter()
                .enumerate()
                .filter(|(_, &p)| p)
                .map(|(i, _)| Color(i as u32 + 1))
                .collect(),
            Repr::Windowed { members, .. } => members.keys().copied().collect(),
        };
        v.sort_unstable();
        v
    }

    /// Exhaustive internal-consistency check, for tests: recomputes the
    /// expected window and complement from scratch and compares.
    pub fn verify(&self) -> Result<(), String> {
        match &self.repr {
            Repr::Small { present } => {
                let n = present.iter().filter(|&&p| p).count() as u32;
                if n != self.len {
                    return Err(format!("len {} but bitmap holds {n}", self.len));
                }
                Ok(())
            }
            Repr::Windowed { members, complement, window } => {
                if members.len() as u32 != self.len {
                    return Err(format!("len {} but map holds {}", self.len, members.len()));
                }
                let want_window = window_len(self.universe, self.len);
                if *window != want_window {
                    return Err(format!("window {window} but expected {want_window}"));
                }
                let mut expect: Vec<Color> = (1..=*window)
                    .map(Color)
                    .filter(|c| !members.contains_key(c))
                    .collect();
                expect.sort_unstable();
                let got = self.window_complement_sorted();
                if got != expect {
                    return Err(format!(
                        "complement mismatch: maintained {} cells, expected {}",
                        got.len(),
                        expect.len()
                    ));
                }
                for (i, &c) in complement.items.iter().enumerate() {
                    if complement.index.get(&c) != Some(&i) {
                        return Err(format!("index map out of sync at position {i}"));
                    }
                }
                if complement.index.len() != complement.items.len() {
                    return Err("index map size differs from item list".into());
                }
                Ok(())
            }
        }
    }
}
