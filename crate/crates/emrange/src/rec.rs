//! Core record types: points, tie-broken keys, and the block record enum
//! shared by every structure in the crate.

use serde::{Deserialize, Serialize};

/// Opaque handle to one block in a store. `0` is never allocated.
pub type BlockId = u64;

/// Tie-broken coordinate key: a coordinate paired with the point id.
pub type Key = (i64, u64);

/// Smallest possible key.
pub const MIN_KEY: Key = (i64::MIN, 0);
/// Largest possible key.
pub const MAX_KEY: Key = (i64::MAX, u64::MAX);

/// A planar point with a unique identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
    pub id: u64,
}

impl Point {
    pub fn new(x: i64, y: i64, id: u64) -> Self {
        Point { x, y, id }
    }

    /// Tie-broken x order key.
    pub fn xkey(&self) -> Key {
        (self.x, self.id)
    }

    /// Tie-broken y order key.
    pub fn ykey(&self) -> Key {
        (self.y, self.id)
    }

    /// Swap coordinates: used to answer `[a,+inf) x [c,d]` windows with a
    /// native `[a,b] x [c,+inf)` structure.
    pub fn swap_xy(&self) -> Point {
        Point { x: self.y, y: self.x, id: self.id }
    }

    /// Swap coordinates and negate the new y: used for `(-inf,b] x [c,d]`.
    pub fn swap_neg(&self) -> Point {
        Point { x: self.y, y: -self.x, id: self.id }
    }
}

/// Slab descriptor for a corner structure: one block of points x-contiguous
/// in the whole set, stored sorted by descending (y,id).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabEntry {
    pub x_lo: Key,
    pub x_hi: Key,
    /// Largest (y,id) among all points in the slab.
    pub y_top: Key,
    /// Largest (y,id) among primary points, if any.
    pub y_top_pri: Option<Key>,
    pub n: u16,
    pub n_pri: u16,
    pub block: BlockId,
}

/// Child pointer of a tree node; `sep` is the inclusive upper x-key boundary
/// of the child's interval (the last child's `sep` is `MAX_KEY`). The summary
/// fields mirror the child's own metadata so that queries and flush decisions
/// at the parent never have to read the child.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChildEntry {
    pub sep: Key,
    pub node: BlockId,
    /// Smallest (y,id) in the child's top point set; `MAX_KEY` when empty.
    pub s_min: Key,
    pub s_len: u32,
    pub weight: u64,
    /// True when the child subtree holds nothing outside its top point set.
    pub exhausted: bool,
}

impl ChildEntry {
    pub fn new(sep: Key, node: BlockId) -> Self {
        ChildEntry { sep, node, s_min: MAX_KEY, s_len: 0, weight: 0, exhausted: true }
    }
}

/// Generic key-to-block mapping record used by blocked-list indexes and by
/// the grouped tree's per-node y index (where `block` carries a group id).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyEntry {
    pub key: Key,
    pub block: u64,
}

/// Descriptor of a corner structure, held inside the owning node's metadata.
/// Slab entries live next to it (embedded) or in a separate catalog block.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CornerDesc {
    /// Catalog block when the slab entries are not embedded in the owner.
    pub catalog: Option<BlockId>,
    /// Optional block holding the top primary points sorted by descending y.
    pub prefix: Option<BlockId>,
    pub n: u32,
    pub n_pri: u32,
}

/// Descriptor of a blocked list (a small B+-tree over one key order).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ListDesc {
    pub root: BlockId,
    pub height: u8,
    pub n: u64,
}

/// Mixed-list element: a materialized point or a reference standing for all
/// points of one group intersecting a child interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ListElem {
    Pt(Point),
    Ref(RefEntry),
}

impl ListElem {
    /// Position key of the element within its y-ordered list.
    pub fn key(&self) -> Key {
        match self {
            ListElem::Pt(p) => p.ykey(),
            ListElem::Ref(r) => r.y_lo,
        }
    }
}

/// Group reference: group id plus min/max y-keys of the referenced
/// intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefEntry {
    pub group: u64,
    pub y_lo: Key,
    pub y_hi: Key,
}

/// Directory entry for one group: groups partition a node's points into
/// y-contiguous runs; a group owns keys from `y_lo` up to the next entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupEntry {
    pub id: u64,
    pub y_lo: Key,
    pub meta: BlockId,
}

/// One y-ascending run of at most B points inside a group's holding
/// structure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunEntry {
    pub y_lo: Key,
    pub y_hi: Key,
    pub n: u16,
    pub block: BlockId,
}

/// Segment-tree node over a contiguous range of runs, carrying a corner
/// structure over their union for x-window probes.
#[derive(Clone, Debug, PartialEq)]
pub struct SegEntry {
    pub lo: u16,
    pub hi: u16,
    pub corner: CornerDesc,
    pub slabs: Vec<SlabEntry>,
}

/// Current form of one (child-interval, group) intersection in a mixed list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormEntry {
    pub i: u8,
    pub j: u8,
    pub materialized: bool,
}

/// Metadata head record of a priority-tree node. Leaves (level 0) keep their
/// points in `s_blocks` sorted by x-key; internal nodes keep their top point
/// set there sorted by descending y-key. Slab records for the child-summary
/// corner and the child entries live in the same metadata chain.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EpstInfo {
    pub level: u32,
    /// Net number of live points in this subtree (pending deletes subtracted).
    pub weight: u64,
    /// True when the subtree holds nothing outside the top point set.
    pub exhausted: bool,
    pub s_len: u32,
    pub s_blocks: Vec<BlockId>,
    /// Buffered inserts not yet pushed to a child.
    pub i_len: u32,
    pub i_blocks: Vec<BlockId>,
    /// Buffered deletes that apply strictly below the top point set.
    pub d_len: u32,
    pub d_blocks: Vec<BlockId>,
    /// Total / primary point counts of the child-summary corner.
    pub fr_n: u32,
    pub fr_n_pri: u32,
    pub cont: Vec<BlockId>,
}

/// Metadata head record of a planar base-tree node.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PlanarInfo {
    pub depth: u32,
    pub left3s: Option<BlockId>,
    pub right3s: Option<BlockId>,
    pub h: Option<BlockId>,
    pub ylist: Option<ListDesc>,
    pub leaf: Option<ListDesc>,
    pub cont: Vec<BlockId>,
}

/// Metadata head record of a small-fanout reduction-tree node.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SmallInfo {
    pub left3s: Option<BlockId>,
    pub right3s: Option<BlockId>,
    /// Per-child y-ordered lists of the points stored in that child subtree.
    pub mids: Vec<ListDesc>,
    pub leaf: Option<ListDesc>,
    pub cont: Vec<BlockId>,
}

/// Metadata head record of a grouped range-tree node.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroupedInfo {
    /// y-key -> group id index over all points of the node.
    pub e: Option<ListDesc>,
    /// Group directory ordered by group lower boundary.
    pub gdir: Option<ListDesc>,
    /// Mixed lists for every child interval (i,j), i <= j, row-major.
    pub lij: Vec<ListDesc>,
    pub next_group: u64,
    pub leaf: Option<ListDesc>,
    pub cont: Vec<BlockId>,
}

/// Metadata head record of one group of a grouped range-tree node.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroupInfo {
    pub id: u64,
    /// Live point count of the group.
    pub n: u64,
    pub cont: Vec<BlockId>,
}

/// One record stored in a block. Every structure in the crate shares this
/// enum so that a single store can hold all of them.
#[derive(Clone, Debug, PartialEq)]
pub enum Rec {
    Pt(Point),
    /// Point tagged as auxiliary (buffered-insert origin) in a corner.
    PtAux(Point),
    /// Pending insert record in an update buffer.
    BufI(Point),
    /// Pending delete record in an update buffer.
    BufD(Point),
    Slab(SlabEntry),
    Child(ChildEntry),
    KeyPtr(KeyEntry),
    /// Leaf chaining record of an eager blocked list.
    Link { next: BlockId, prev: BlockId },
    El(ListElem),
    Group(GroupEntry),
    Run(RunEntry),
    Seg(SegEntry),
    Form(FormEntry),
    EpstInfo(Box<EpstInfo>),
    PlanarInfo(Box<PlanarInfo>),
    SmallInfo(Box<SmallInfo>),
    GroupedInfo(Box<GroupedInfo>),
    GroupInfo(Box<GroupInfo>),
}

impl Rec {
    pub fn as_point(&self) -> Option<Point> {
        match self {
            Rec::Pt(p) | Rec::PtAux(p) => Some(*p),
            _ => None,
        }
    }
}

/// Sort points by tie-broken x order.
pub fn sort_by_x(pts: &mut [Point]) {
    pts.sort_by_key(|p| p.xkey());
}

/// Sort points by tie-broken y order.
pub fn sort_by_y(pts: &mut [Point]) {
    pts.sort_by_key(|p| p.ykey());
}

/// Sort points by descending tie-broken y order.
pub fn sort_by_y_desc(pts: &mut [Point]) {
    pts.sort_by_key(|p| std::cmp::Reverse(p.ykey()));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_orders_break_ties_by_id() {
        let a = Point::new(5, 7, 1);
        let b = Point::new(5, 7, 2);
        assert!(a.xkey() < b.xkey());
        assert!(a.ykey() < b.ykey());
    }

    #[test]
    fn swaps_round_trip_coordinates() {
        let p = Point::new(3, -9, 4);
        let s = p.swap_xy();
        assert_eq!((s.x, s.y), (-9, 3));
        let n = p.swap_neg();
        assert_eq!((n.x, n.y), (-9, -3));
    }
}
