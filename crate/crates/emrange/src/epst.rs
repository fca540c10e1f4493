//! Buffered external priority search tree: dynamic three-sided reporting
//! over `[a,b] x [c,+inf)` windows.
//!
//! Each internal node keeps a top point set `S(v)` (the highest points of its
//! subtree not held by an ancestor), insert/delete buffers that move updates
//! downward in batches, and a slab summary over the union of every child's
//! top set and insert buffer so queries report child points without touching
//! the children. Descent is pruned by each child's cached minimum top-set
//! key: anything deeper is lower still.

use std::cmp::Reverse;
use std::collections::HashSet;

use thiserror::Error;

use crate::corner::{Corner, CornerError, PrefixMode, Tagged};
use crate::emstore::{read_chain, write_chain, Store};
use crate::rec::{BlockId, ChildEntry, CornerDesc, EpstInfo, Key, Point, Rec, SlabEntry, MAX_KEY};

#[derive(Debug, Error, PartialEq)]
pub enum EpstError {
    #[error("duplicate insert of id {} at x={}", .0.id, .0.x)]
    DuplicateInsert(Point),
    #[error("delete of absent point id {} at x={}", .0.id, .0.x)]
    DeleteAbsent(Point),
    #[error("second delete of a point whose first delete is still pending (id {})", .0.id)]
    DoubleDelete(Point),
    #[error("structure poisoned by an earlier fault")]
    Poisoned,
    #[error(transparent)]
    Corner(#[from] CornerError),
}

/// Rounds `b^e` up to an integer, guarding against float error on exact powers.
pub fn ceil_pow(b: usize, e: f64) -> usize {
    (((b as f64).powf(e) - 1e-9).ceil().max(1.0)) as usize
}

/// Derived shape parameters of one tree instance.
#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub b: usize,
    pub delta: f64,
    /// Target child count created by splits.
    pub fanout: usize,
    /// Smallest pending batch worth pushing to one child.
    pub batch_min: usize,
    /// Capacity of the per-node insert and delete buffers.
    pub buf_cap: usize,
    /// Fill target of an internal node's top point set.
    pub s_target: usize,
    pub leaf_cap: usize,
    pub degree_cap: usize,
}

impl Params {
    pub fn new(b: usize, delta: f64) -> Params {
        assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
        let fanout = ceil_pow(b, delta).max(2);
        Params {
            b,
            delta,
            fanout,
            batch_min: ceil_pow(b, delta),
            buf_cap: ceil_pow(b, 3.0 * delta).max(4 * b),
            s_target: b,
            leaf_cap: 2 * b,
            degree_cap: 4 * fanout,
        }
    }

    /// Weight above which a node at `level` splits (leaves are level 0).
    pub fn weight_cap(&self, level: u32) -> u64 {
        let mut w = 2u128 * self.b as u128;
        for _ in 0..level {
            w = w.saturating_mul(self.fanout as u128);
        }
        w.min(u64::MAX as u128) as u64
    }
}

/// Per-query visit accounting.
#[derive(Clone, Copy, Debug)]
pub struct QueryStats {
    pub nodes_visited: u32,
    pub off_path_visits: u32,
    /// Smallest number of reported top-set points coinciding with any
    /// off-path visit; `u32::MAX` when no off-path visit happened.
    pub min_off_path_reported: u32,
    pub reported: u32,
}

impl Default for QueryStats {
    fn default() -> Self {
        QueryStats {
            nodes_visited: 0,
            off_path_visits: 0,
            min_off_path_reported: u32::MAX,
            reported: 0,
        }
    }
}

fn read_pts(store: &Store, blocks: &[BlockId]) -> Vec<Point> {
    let mut out = Vec::new();
    for &b in blocks {
        for r in store.read(b).iter() {
            match r {
                Rec::Pt(p) => out.push(*p),
                other => panic!("point block holds {other:?}"),
            }
        }
    }
    out
}

/// Rewrite a list of point blocks to hold exactly `pts`, reusing, freeing, or
/// allocating blocks as the length requires.
fn rewrite_pts(store: &Store, mut blocks: Vec<BlockId>, pts: &[Point]) -> Vec<BlockId> {
    let b = store.b();
    let need = pts.len().div_ceil(b);
    while blocks.len() > need {
        store.free(blocks.pop().expect("block list underflow"));
    }
    while blocks.len() < need {
        blocks.push(store.alloc());
    }
    for (&blk, chunk) in blocks.iter().zip(pts.chunks(b)) {
        store.write(blk, chunk.iter().map(|p| Rec::Pt(*p)).collect());
    }
    blocks
}

/// One tree node held in memory while it is read or rewritten.
struct NodeData {
    id: BlockId,
    info: EpstInfo,
    children: Vec<ChildEntry>,
    slabs: Vec<SlabEntry>,
    /// Leaf: points sorted by ascending x-key. Internal: top point set sorted
    /// by descending y-key.
    s: Vec<Point>,
    i: Vec<Point>,
    d: Vec<Point>,
}

impl NodeData {
    fn load(store: &Store, id: BlockId) -> NodeData {
        let head = store.read(id);
        let info = match head.first() {
            Some(Rec::EpstInfo(b)) => (**b).clone(),
            other => panic!("block {id} is not a tree node: {other:?}"),
        };
        let recs = read_chain(store, &head[1..], &info.cont);
        let mut children = Vec::new();
        let mut slabs = Vec::new();
        for r in recs {
            match r {
                Rec::Child(c) => children.push(c),
                Rec::Slab(s) => slabs.push(s),
                other => panic!("unexpected record in node chain: {other:?}"),
            }
        }
        let s = read_pts(store, &info.s_blocks);
        let i = read_pts(store, &info.i_blocks);
        let d = read_pts(store, &info.d_blocks);
        NodeData { id, info, children, slabs, s, i, d }
    }

    fn new_leaf(store: &Store) -> NodeData {
        NodeData {
            id: store.alloc(),
            info: EpstInfo { exhausted: true, ..EpstInfo::default() },
            children: Vec::new(),
            slabs: Vec::new(),
            s: Vec::new(),
            i: Vec::new(),
            d: Vec::new(),
        }
    }

    fn is_leaf(&self) -> bool {
        self.info.level == 0
    }

    fn save(&mut self, store: &Store) {
        self.info.s_len = self.s.len() as u32;
        self.info.i_len = self.i.len() as u32;
        self.info.d_len = self.d.len() as u32;
        self.info.s_blocks = rewrite_pts(store, std::mem::take(&mut self.info.s_blocks), &self.s);
        self.info.i_blocks = rewrite_pts(store, std::mem::take(&mut self.info.i_blocks), &self.i);
        self.info.d_blocks = rewrite_pts(store, std::mem::take(&mut self.info.d_blocks), &self.d);
        self.info.fr_n = self.slabs.iter().map(|s| s.n as u32).sum();
        self.info.fr_n_pri = self.slabs.iter().map(|s| s.n_pri as u32).sum();
        let mut tail = Vec::with_capacity(self.children.len() + self.slabs.len());
        tail.extend(self.children.iter().map(|c| Rec::Child(*c)));
        tail.extend(self.slabs.iter().map(|s| Rec::Slab(*s)));
        let info = self.info.clone();
        let cont = write_chain(
            store,
            self.id,
            std::mem::take(&mut self.info.cont),
            tail,
            move |cont| Rec::EpstInfo(Box::new(EpstInfo { cont, ..info })),
        );
        self.info.cont = cont;
    }

    /// This node's contribution to its parent's slab summary.
    fn content_tagged(&self) -> Vec<Tagged> {
        let mut out: Vec<Tagged> = self.s.iter().map(|p| (*p, true)).collect();
        if !self.is_leaf() {
            out.extend(self.i.iter().map(|p| (*p, false)));
        }
        out
    }

    /// Smallest y-key of the top set (`MAX_KEY` when empty).
    fn s_min(&self) -> Key {
        if self.is_leaf() {
            self.s.iter().map(|p| p.ykey()).min().unwrap_or(MAX_KEY)
        } else {
            self.s.last().map(|p| p.ykey()).unwrap_or(MAX_KEY)
        }
    }

    fn recompute_exhausted(&mut self) {
        self.info.exhausted = if self.is_leaf() {
            self.s.is_empty()
        } else {
            self.i.is_empty() && self.children.iter().all(|c| c.exhausted && c.s_len == 0)
        };
    }

    /// True when the subtree holds nothing outside the top point set.
    fn below_empty(&self) -> bool {
        if self.is_leaf() {
            true
        } else {
            self.i.is_empty() && self.children.iter().all(|c| c.exhausted && c.s_len == 0)
        }
    }

    fn corner(&self) -> Corner {
        Corner {
            desc: CornerDesc {
                catalog: None,
                prefix: None,
                n: self.slabs.iter().map(|s| s.n as u32).sum(),
                n_pri: self.slabs.iter().map(|s| s.n_pri as u32).sum(),
            },
            slabs: self.slabs.clone(),
        }
    }
}

/// Outcome of a batched update on one node, consumed by the caller to patch
/// its child entry and rebuild that child's slab run.
struct ChildResult {
    s_min: Key,
    s_len: u32,
    weight: u64,
    exhausted: bool,
    degree: usize,
    level: u32,
    content: Vec<Tagged>,
}

impl ChildResult {
    fn of(nd: &NodeData) -> ChildResult {
        ChildResult {
            s_min: nd.s_min(),
            s_len: nd.s.len() as u32,
            weight: nd.info.weight,
            exhausted: nd.info.exhausted,
            degree: nd.children.len(),
            level: nd.info.level,
            content: nd.content_tagged(),
        }
    }

    fn patch(&self, entry: &mut ChildEntry) {
        entry.s_min = self.s_min;
        entry.s_len = self.s_len;
        entry.weight = self.weight;
        entry.exhausted = self.exhausted;
    }
}

/// Route a key to the child interval that contains it.
fn child_idx(children: &[ChildEntry], k: Key) -> usize {
    children
        .iter()
        .position(|c| k <= c.sep)
        .unwrap_or(children.len() - 1)
}

/// Group the slab list by owning child (slabs are x-disjoint and each lies
/// inside one child interval).
fn slab_groups(children: &[ChildEntry], slabs: &[SlabEntry]) -> Vec<Vec<SlabEntry>> {
    let mut groups = vec![Vec::new(); children.len()];
    let mut gi = 0usize;
    for sl in slabs {
        while gi + 1 < children.len() && sl.x_lo > children[gi].sep {
            gi += 1;
        }
        groups[gi].push(*sl);
    }
    groups
}

fn merge_desc(a: &[Point], mut extra: Vec<Point>) -> Vec<Point> {
    extra.extend_from_slice(a);
    extra.sort_by_key(|p| Reverse(p.ykey()));
    extra
}

pub struct Epst {
    store: Store,
    params: Params,
    root: BlockId,
    n: u64,
    poisoned: bool,
}

impl Epst {
    pub fn new(store: Store, delta: f64) -> Epst {
        let params = Params::new(store.b(), delta);
        let mut root = NodeData::new_leaf(&store);
        root.save(&store);
        Epst { root: root.id, store, params, n: 0, poisoned: false }
    }

    /// Re-open a tree whose root block survived from an earlier instance.
    /// The root block id is stable across every operation, so it is the only
    /// handle an owner has to persist.
    pub fn attach(store: Store, delta: f64, root: BlockId) -> Epst {
        let params = Params::new(store.b(), delta);
        let n = match store.read(root).first() {
            Some(Rec::EpstInfo(i)) => i.weight,
            other => panic!("block {root} is not a tree node: {other:?}"),
        };
        Epst { store, params, root, n, poisoned: false }
    }

    pub fn root_block(&self) -> BlockId {
        self.root
    }

    pub fn params(&self) -> Params {
        self.params
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn guard(&self) -> Result<(), EpstError> {
        if self.poisoned {
            Err(EpstError::Poisoned)
        } else {
            Ok(())
        }
    }

    pub fn insert(&mut self, p: Point) -> Result<(), EpstError> {
        self.guard()?;
        let r = self.insert_inner(p);
        if r.is_err() {
            self.poisoned = true;
        }
        r
    }

    fn insert_inner(&mut self, p: Point) -> Result<(), EpstError> {
        let res = self.batch_insert(self.root, vec![p])?;
        self.n += 1;
        if res.weight > self.params.weight_cap(res.level) || res.degree > self.params.degree_cap {
            self.split_root()?;
        }
        Ok(())
    }

    pub fn delete(&mut self, p: Point) -> Result<(), EpstError> {
        self.guard()?;
        let r = self.batch_delete(self.root, vec![p]).map(|_| ());
        match r {
            Ok(()) => {
                self.n -= 1;
                Ok(())
            }
            Err(e) => {
                self.poisoned = true;
                Err(e)
            }
        }
    }

    /// Apply a batch of new points to the subtree rooted at `id`.
    fn batch_insert(&mut self, id: BlockId, batch: Vec<Point>) -> Result<ChildResult, EpstError> {
        let mut nd = NodeData::load(&self.store, id);
        if nd.is_leaf() {
            let mut batch = batch;
            batch.sort_by_key(|p| p.xkey());
            let mut merged = Vec::with_capacity(nd.s.len() + batch.len());
            let mut bi = batch.into_iter().peekable();
            for old in nd.s.drain(..) {
                while bi.peek().is_some_and(|q| q.xkey() < old.xkey()) {
                    merged.push(bi.next().expect("peeked"));
                }
                merged.push(old);
            }
            merged.extend(bi);
            for w in merged.windows(2) {
                if w[0].xkey() == w[1].xkey() {
                    return Err(EpstError::DuplicateInsert(w[1]));
                }
            }
            nd.s = merged;
            nd.info.weight = nd.s.len() as u64;
            nd.recompute_exhausted();
            nd.save(&self.store);
            return Ok(ChildResult::of(&nd));
        }

        let mut seen: HashSet<Key> = nd.s.iter().chain(nd.i.iter()).map(|p| p.xkey()).collect();
        for q in &batch {
            if !seen.insert(q.xkey()) {
                return Err(EpstError::DuplicateInsert(*q));
            }
        }
        nd.info.weight += batch.len() as u64;

        // Cancel arrivals that exactly match a pending delete: the delete was
        // aimed at an identical record, so both annihilate.
        let batch = if nd.d.is_empty() {
            batch
        } else {
            let mut dset: HashSet<Point> = nd.d.iter().copied().collect();
            let mut kept = Vec::with_capacity(batch.len());
            for q in batch {
                if dset.remove(&q) {
                    let pos = nd.d.iter().position(|x| *x == q).expect("pending delete");
                    nd.d.remove(pos);
                } else {
                    kept.push(q);
                }
            }
            kept
        };

        // Admission: arrivals above the top-set minimum must enter it; the
        // set only grows toward its target when nothing lives below it.
        let pre_exhausted = nd.below_empty();
        let merged = merge_desc(&nd.s, batch);
        let keep = if pre_exhausted {
            self.params.s_target.min(merged.len())
        } else {
            nd.s.len()
        };
        let mut merged = merged;
        let overflow = merged.split_off(keep);
        nd.s = merged;
        if !overflow.is_empty() {
            nd.i.extend(overflow);
            nd.info.exhausted = false;
        }
        if nd.i.len() > self.params.buf_cap {
            self.flush_i(&mut nd, false)?;
        }
        nd.recompute_exhausted();
        nd.save(&self.store);
        Ok(ChildResult::of(&nd))
    }

    /// Apply a batch of deletions to the subtree rooted at `id`.
    fn batch_delete(&mut self, id: BlockId, dels: Vec<Point>) -> Result<ChildResult, EpstError> {
        let mut nd = NodeData::load(&self.store, id);
        if nd.is_leaf() {
            for dl in &dels {
                match nd.s.iter().position(|q| q == dl) {
                    Some(pos) => {
                        nd.s.remove(pos);
                    }
                    None => return Err(EpstError::DeleteAbsent(*dl)),
                }
            }
            nd.info.weight = nd.s.len() as u64;
            nd.recompute_exhausted();
            nd.save(&self.store);
            return Ok(ChildResult::of(&nd));
        }

        for dl in dels.iter() {
            if let Some(pos) = nd.i.iter().position(|q| q == dl) {
                nd.i.remove(pos);
            } else if let Some(pos) = nd.s.iter().position(|q| q == dl) {
                nd.s.remove(pos);
            } else if nd.d.contains(dl) {
                return Err(EpstError::DoubleDelete(*dl));
            } else {
                nd.d.push(*dl);
            }
        }
        nd.info.weight -= dels.len() as u64;
        if nd.d.len() > self.params.buf_cap {
            self.flush_d(&mut nd)?;
        }
        if nd.s.len() * 2 < self.params.s_target && !nd.below_empty() {
            self.refill(&mut nd)?;
        }
        nd.recompute_exhausted();
        nd.save(&self.store);
        Ok(ChildResult::of(&nd))
    }

    /// Push buffered inserts down to children holding enough of them; with
    /// `force`, empty the buffer completely.
    fn flush_i(&mut self, nd: &mut NodeData, force: bool) -> Result<(), EpstError> {
        loop {
            let done = if force {
                nd.i.is_empty()
            } else {
                nd.i.len() <= self.params.buf_cap
            };
            if done {
                break;
            }
            let mut parts: Vec<Vec<Point>> = vec![Vec::new(); nd.children.len()];
            for q in nd.i.drain(..) {
                parts[child_idx(&nd.children, q.xkey())].push(q);
            }
            let mut plan: Vec<(BlockId, Vec<Point>)> = Vec::new();
            let mut keep: Vec<Point> = Vec::new();
            let largest = parts.iter().map(Vec::len).max().unwrap_or(0);
            for (idx, part) in parts.into_iter().enumerate() {
                if !part.is_empty()
                    && (force || part.len() >= self.params.batch_min || part.len() == largest)
                {
                    plan.push((nd.children[idx].node, part));
                } else {
                    keep.extend(part);
                }
            }
            nd.i = keep;
            for (cid, part) in plan {
                let res = self.batch_insert(cid, part)?;
                let idx = nd
                    .children
                    .iter()
                    .position(|c| c.node == cid)
                    .expect("flushed child vanished");
                res.patch(&mut nd.children[idx]);
                self.rebuild_group(nd, idx, &res.content)?;
                self.ensure_child_fits(nd, idx, res.degree)?;
            }
        }
        Ok(())
    }

    /// Push every buffered delete down one level.
    fn flush_d(&mut self, nd: &mut NodeData) -> Result<(), EpstError> {
        let mut parts: Vec<Vec<Point>> = vec![Vec::new(); nd.children.len()];
        for q in nd.d.drain(..) {
            parts[child_idx(&nd.children, q.xkey())].push(q);
        }
        let plan: Vec<(BlockId, Vec<Point>)> = parts
            .into_iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(idx, p)| (nd.children[idx].node, p))
            .collect();
        for (cid, part) in plan {
            let res = self.batch_delete(cid, part)?;
            let idx = nd
                .children
                .iter()
                .position(|c| c.node == cid)
                .expect("flushed child vanished");
            res.patch(&mut nd.children[idx]);
            self.rebuild_group(nd, idx, &res.content)?;
        }
        Ok(())
    }

    /// Rebuild the slab run summarizing child `idx` from its fresh content.
    fn rebuild_group(
        &self,
        nd: &mut NodeData,
        idx: usize,
        content: &[Tagged],
    ) -> Result<(), EpstError> {
        let groups = slab_groups(&nd.children, &nd.slabs);
        for sl in &groups[idx] {
            self.store.free(sl.block);
        }
        let fresh = if content.is_empty() {
            Vec::new()
        } else {
            Corner::build(&self.store, content, content.len(), false, PrefixMode::Off)?.slabs
        };
        let mut flat = Vec::with_capacity(nd.slabs.len() + fresh.len());
        for (gi, group) in groups.into_iter().enumerate() {
            if gi == idx {
                flat.extend(fresh.iter().copied());
            } else {
                flat.extend(group);
            }
        }
        nd.slabs = flat;
        Ok(())
    }

    /// Pull the highest points below `nd` back into its top set after deletes
    /// (or a split) have thinned it.
    ///
    /// Pulls proceed in global descending y order across per-child streams of
    /// top-set points (read from the slab summary) plus the node's own insert
    /// buffer. Draining a child's stream applies its pulls at once so the
    /// child refills itself; its refreshed top set — never higher than the
    /// last point pulled from it — re-enters the merge. The final top-set
    /// minimum therefore dominates everything left below.
    fn refill(&mut self, nd: &mut NodeData) -> Result<(), EpstError> {
        if nd.is_leaf() {
            return Ok(());
        }
        let target = self.params.s_target;
        let dset: HashSet<Point> = nd.d.iter().copied().collect();
        let groups = slab_groups(&nd.children, &nd.slabs);
        let mut streams: Vec<Vec<Point>> = groups
            .iter()
            .map(|g| {
                let mut v = Vec::new();
                for sl in g {
                    if sl.n_pri == 0 {
                        continue;
                    }
                    for r in self.store.read(sl.block).iter() {
                        if let Rec::Pt(p) = r {
                            v.push(*p);
                        }
                    }
                }
                v.sort_by_key(|p| Reverse(p.ykey()));
                v
            })
            .collect();
        let mut cursor = vec![0usize; streams.len()];
        let mut pulls: Vec<Vec<Point>> = vec![Vec::new(); streams.len()];
        let mut aux: Vec<Point> = nd.i.clone();
        aux.sort_by_key(|p| Reverse(p.ykey()));
        let mut ai = 0usize;
        let mut taken: Vec<Point> = Vec::new();
        let mut from_i: HashSet<Point> = HashSet::new();
        let mut dead: HashSet<Point> = HashSet::new();
        while nd.s.len() + taken.len() < target {
            let mut best: Option<(usize, Key)> = None;
            for (ci, st) in streams.iter().enumerate() {
                if let Some(q) = st.get(cursor[ci]) {
                    if best.is_none_or(|(_, bk)| q.ykey() > bk) {
                        best = Some((ci, q.ykey()));
                    }
                }
            }
            let take_aux = match (best, aux.get(ai)) {
                (Some((_, bk)), Some(a)) => a.ykey() > bk,
                (None, Some(_)) => true,
                (_, None) => false,
            };
            if take_aux {
                let q = aux[ai];
                ai += 1;
                from_i.insert(q);
                taken.push(q);
                continue;
            }
            let Some((ci, _)) = best else { break };
            let q = streams[ci][cursor[ci]];
            cursor[ci] += 1;
            pulls[ci].push(q);
            if dset.contains(&q) && !dead.contains(&q) {
                dead.insert(q);
            } else {
                taken.push(q);
            }
            if cursor[ci] == streams[ci].len() {
                streams[ci] = self.apply_pulls(nd, ci, std::mem::take(&mut pulls[ci]))?;
                cursor[ci] = 0;
            }
        }
        for (ci, p) in pulls.iter_mut().enumerate() {
            if !p.is_empty() {
                self.apply_pulls(nd, ci, std::mem::take(p))?;
            }
        }
        nd.s.extend(taken);
        if !from_i.is_empty() {
            nd.i.retain(|q| !from_i.contains(q));
        }
        if !dead.is_empty() {
            nd.d.retain(|q| !dead.contains(q));
        }
        nd.recompute_exhausted();
        Ok(())
    }

    /// Remove points the refill pulled out of child `idx`, let the child
    /// refill itself, and return its refreshed top set in descending y order.
    fn apply_pulls(
        &mut self,
        nd: &mut NodeData,
        idx: usize,
        pulls: Vec<Point>,
    ) -> Result<Vec<Point>, EpstError> {
        let removed: HashSet<Point> = pulls.iter().copied().collect();
        let mut ch = NodeData::load(&self.store, nd.children[idx].node);
        ch.s.retain(|q| !removed.contains(q));
        ch.info.weight -= pulls.len() as u64;
        if !ch.is_leaf() && ch.s.len() * 2 < self.params.s_target && !ch.below_empty() {
            self.refill(&mut ch)?;
        }
        ch.recompute_exhausted();
        ch.save(&self.store);
        ChildResult::of(&ch).patch(&mut nd.children[idx]);
        let content = ch.content_tagged();
        self.rebuild_group(nd, idx, &content)?;
        let mut s_desc = ch.s;
        s_desc.sort_by_key(|p| Reverse(p.ykey()));
        Ok(s_desc)
    }

    /// Split the child at `idx` (and recursively any oversized half).
    fn ensure_child_fits(
        &mut self,
        parent: &mut NodeData,
        idx: usize,
        degree: usize,
    ) -> Result<(), EpstError> {
        let level = parent.info.level - 1;
        let over = parent.children[idx].weight > self.params.weight_cap(level)
            || degree > self.params.degree_cap;
        if !over {
            return Ok(());
        }
        let (dl, dr) = self.split_child(parent, idx)?;
        self.ensure_child_fits(parent, idx + 1, dr)?;
        self.ensure_child_fits(parent, idx, dl)?;
        Ok(())
    }

    /// Split one child in two by x, returning the halves' degrees.
    fn split_child(
        &mut self,
        parent: &mut NodeData,
        idx: usize,
    ) -> Result<(usize, usize), EpstError> {
        let centry = parent.children[idx];
        let mut left = NodeData::load(&self.store, centry.node);
        if !left.is_leaf() && left.children.len() < 2 {
            // A lone-child node only overflows through its buffers; pushing
            // them down splits the child, giving a boundary to divide at.
            self.flush_d(&mut left)?;
            self.flush_i(&mut left, true)?;
            assert!(left.children.len() >= 2, "forced flush left nothing to split");
        }
        let right;
        if left.is_leaf() {
            let mid = left.s.len() / 2;
            assert!(mid >= 1, "splitting a leaf with fewer than two points");
            let right_pts = left.s.split_off(mid);
            let mut r = NodeData::new_leaf(&self.store);
            r.s = right_pts;
            r.info.weight = r.s.len() as u64;
            left.info.weight = left.s.len() as u64;
            right = r;
        } else {
            let total: u64 = left.children.iter().map(|c| c.weight).sum();
            let mut acc = 0u64;
            let mut k = left.children.len() - 1;
            for (ci, c) in left.children.iter().enumerate() {
                acc += c.weight;
                if acc * 2 >= total && ci + 1 < left.children.len() {
                    k = ci + 1;
                    break;
                }
            }
            let boundary = left.children[k - 1].sep;
            let r_children = left.children.split_off(k);
            let (ls, rs): (Vec<Point>, Vec<Point>) =
                left.s.drain(..).partition(|p| p.xkey() <= boundary);
            let (li, ri): (Vec<Point>, Vec<Point>) =
                left.i.drain(..).partition(|p| p.xkey() <= boundary);
            let (ld, rd): (Vec<Point>, Vec<Point>) =
                left.d.drain(..).partition(|p| p.xkey() <= boundary);
            let (lsl, rsl): (Vec<SlabEntry>, Vec<SlabEntry>) =
                left.slabs.drain(..).partition(|sl| sl.x_lo <= boundary);
            left.s = ls;
            left.i = li;
            left.d = ld;
            left.slabs = lsl;
            let mut r = NodeData {
                id: self.store.alloc(),
                info: EpstInfo { level: left.info.level, ..EpstInfo::default() },
                children: r_children,
                slabs: rsl,
                s: rs,
                i: ri,
                d: rd,
            };
            let lw: u64 = left.children.iter().map(|c| c.weight).sum::<u64>()
                + left.s.len() as u64
                + left.i.len() as u64
                - left.d.len() as u64;
            let rw: u64 = r.children.iter().map(|c| c.weight).sum::<u64>()
                + r.s.len() as u64
                + r.i.len() as u64
                - r.d.len() as u64;
            debug_assert_eq!(lw + rw, left.info.weight);
            left.info.weight = lw;
            r.info.weight = rw;
            let half = self.params.s_target / 2;
            left.recompute_exhausted();
            r.recompute_exhausted();
            if left.s.len() < half && !left.below_empty() {
                self.refill(&mut left)?;
            }
            if r.s.len() < half && !r.below_empty() {
                self.refill(&mut r)?;
            }
            right = r;
        }
        let mut left = left;
        let mut right = right;
        let sep_left = if left.is_leaf() {
            left.s.last().expect("nonempty left leaf").xkey()
        } else {
            left.children.last().expect("nonempty children").sep
        };
        left.recompute_exhausted();
        right.recompute_exhausted();
        left.save(&self.store);
        right.save(&self.store);
        let mut le = ChildEntry::new(sep_left, left.id);
        ChildResult::of(&left).patch(&mut le);
        let mut re = ChildEntry::new(centry.sep, right.id);
        ChildResult::of(&right).patch(&mut re);
        parent.children.splice(idx..=idx, [le, re]);
        let lc = left.content_tagged();
        let rc = right.content_tagged();
        self.rebuild_group(parent, idx, &lc)?;
        self.rebuild_group(parent, idx + 1, &rc)?;
        Ok((left.children.len(), right.children.len()))
    }

    /// Grow the tree by one level: the root's content moves to a fresh block
    /// that becomes the single child of the (re-written) root, which is then
    /// split and refilled.
    fn split_root(&mut self) -> Result<(), EpstError> {
        let old = self.store.read(self.root).to_vec();
        let moved = self.store.alloc();
        self.store.write(moved, old);
        let mnd = NodeData::load(&self.store, moved);
        let mut entry = ChildEntry::new(MAX_KEY, moved);
        ChildResult::of(&mnd).patch(&mut entry);
        let degree = mnd.children.len();
        let content = mnd.content_tagged();
        let mut root = NodeData {
            id: self.root,
            info: EpstInfo {
                level: mnd.info.level + 1,
                weight: mnd.info.weight,
                ..EpstInfo::default()
            },
            children: vec![entry],
            slabs: Vec::new(),
            s: Vec::new(),
            i: Vec::new(),
            d: Vec::new(),
        };
        self.rebuild_group(&mut root, 0, &content)?;
        self.ensure_child_fits(&mut root, 0, degree)?;
        self.refill(&mut root)?;
        root.recompute_exhausted();
        root.save(&self.store);
        Ok(())
    }

    pub fn query3s(&self, a: i64, b: i64, c: i64) -> Result<Vec<Point>, EpstError> {
        self.query3s_stats(a, b, c).map(|(pts, _)| pts)
    }

    pub fn query3s_stats(
        &self,
        a: i64,
        b: i64,
        c: i64,
    ) -> Result<(Vec<Point>, QueryStats), EpstError> {
        self.guard()?;
        let mut stats = QueryStats::default();
        let mut out = Vec::new();
        if a <= b {
            let xlo: Key = (a, 0);
            let xhi: Key = (b, u64::MAX);
            let ylo: Key = (c, 0);
            let nd = NodeData::load(&self.store, self.root);
            stats.nodes_visited += 1;
            if nd.is_leaf() {
                for p in &nd.s {
                    if p.xkey() >= xlo && p.xkey() <= xhi && p.ykey() >= ylo {
                        out.push(*p);
                    }
                }
            } else {
                for p in &nd.s {
                    if p.ykey() < ylo {
                        break;
                    }
                    if p.xkey() >= xlo && p.xkey() <= xhi {
                        out.push(*p);
                    }
                }
                for p in &nd.i {
                    if p.xkey() >= xlo && p.xkey() <= xhi && p.ykey() >= ylo {
                        out.push(*p);
                    }
                }
                self.visit_children(&nd, xlo, xhi, ylo, &[], &mut out, &mut stats);
            }
        }
        out.sort_by_key(|p| p.xkey());
        stats.reported = out.len() as u32;
        Ok((out, stats))
    }

    /// Report child points from `nd`'s slab summary and descend where the
    /// cached child top-set minimum proves deeper hits may exist.
    fn visit_children(
        &self,
        nd: &NodeData,
        xlo: Key,
        xhi: Key,
        ylo: Key,
        del_above: &[Point],
        out: &mut Vec<Point>,
        stats: &mut QueryStats,
    ) {
        let hits = nd.corner().query_window(&self.store, xlo, xhi, ylo);
        let mut del_all: Vec<Point> = del_above.to_vec();
        del_all.extend_from_slice(&nd.d);
        let del_set: HashSet<Point> = del_all.iter().copied().collect();
        for (p, _) in &hits {
            if !del_set.contains(p) {
                out.push(*p);
            }
        }
        if nd.info.level < 2 {
            return;
        }
        let mut prev = crate::rec::MIN_KEY;
        for ce in &nd.children {
            let lo = prev;
            prev = ce.sep;
            if ce.sep < xlo || lo >= xhi {
                continue;
            }
            if ce.exhausted || ce.s_min < ylo {
                continue;
            }
            let contains_lo = lo < xlo && xlo <= ce.sep;
            let contains_hi = lo < xhi && xhi <= ce.sep;
            let off_path = !contains_lo && !contains_hi;
            let child_del: Vec<Point> = del_all
                .iter()
                .filter(|q| q.xkey() > lo && q.xkey() <= ce.sep)
                .copied()
                .collect();
            if off_path {
                let reported_here = hits
                    .iter()
                    .filter(|(p, pri)| {
                        *pri && p.xkey() > lo && p.xkey() <= ce.sep && !del_set.contains(p)
                    })
                    .count() as u32;
                stats.off_path_visits += 1;
                stats.min_off_path_reported = stats.min_off_path_reported.min(reported_here);
            }
            stats.nodes_visited += 1;
            let child = NodeData::load_for_query(&self.store, ce.node);
            self.visit_children(&child, xlo, xhi, ylo, &child_del, out, stats);
        }
    }

    /// Every live point, in x-key order.
    pub fn content(&self) -> Vec<Point> {
        let mut pts = self.gather(self.root);
        pts.sort_by_key(|p| p.xkey());
        pts
    }

    fn gather(&self, id: BlockId) -> Vec<Point> {
        let nd = NodeData::load(&self.store, id);
        if nd.is_leaf() {
            return nd.s;
        }
        let mut below: Vec<Point> = Vec::new();
        for ce in &nd.children {
            below.extend(self.gather(ce.node));
        }
        if !nd.d.is_empty() {
            let dset: HashSet<Point> = nd.d.iter().copied().collect();
            below.retain(|p| !dset.contains(p));
        }
        below.extend(nd.s);
        below.extend(nd.i);
        below
    }

    pub fn destroy(self) {
        self.destroy_node(self.root);
    }

    fn destroy_node(&self, id: BlockId) {
        let nd = NodeData::load(&self.store, id);
        for ce in &nd.children {
            self.destroy_node(ce.node);
        }
        for sl in &nd.slabs {
            self.store.free(sl.block);
        }
        for &b in nd
            .info
            .s_blocks
            .iter()
            .chain(nd.info.i_blocks.iter())
            .chain(nd.info.d_blocks.iter())
            .chain(nd.info.cont.iter())
        {
            self.store.free(b);
        }
        self.store.free(id);
    }

    /// Verify every structural invariant, returning the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let stat = self.check_node(self.root, None, crate::rec::MIN_KEY, MAX_KEY, true)?;
        if stat.weight != self.n {
            return Err(format!(
                "root weight {} does not match live count {}",
                stat.weight, self.n
            ));
        }
        Ok(())
    }

    fn check_node(
        &self,
        id: BlockId,
        expect_level: Option<u32>,
        lo: Key,
        hi: Key,
        is_root: bool,
    ) -> Result<NodeStat, String> {
        let p = self.params;
        let nd = NodeData::load(&self.store, id);
        let fail = |msg: String| Err::<NodeStat, String>(format!("node {id}: {msg}"));
        if let Some(l) = expect_level {
            if nd.info.level != l {
                return fail(format!("level {} where parent expects {l}", nd.info.level));
            }
        }
        if nd.info.s_len as usize != nd.s.len()
            || nd.info.i_len as usize != nd.i.len()
            || nd.info.d_len as usize != nd.d.len()
        {
            return fail("stored lengths disagree with block contents".into());
        }
        for q in nd.s.iter().chain(nd.i.iter()).chain(nd.d.iter()) {
            if q.xkey() <= lo || q.xkey() > hi {
                return fail(format!("point {q:?} outside x-interval ({lo:?},{hi:?}]"));
            }
        }
        if nd.is_leaf() {
            if !nd.children.is_empty() || !nd.slabs.is_empty() {
                return fail("leaf with children or slabs".into());
            }
            if !nd.i.is_empty() || !nd.d.is_empty() {
                return fail("leaf with pending buffers".into());
            }
            if nd.s.len() > p.leaf_cap {
                return fail(format!("leaf holds {} > {}", nd.s.len(), p.leaf_cap));
            }
            if nd.s.windows(2).any(|w| w[0].xkey() >= w[1].xkey()) {
                return fail("leaf points not strictly x-sorted".into());
            }
            if nd.info.weight != nd.s.len() as u64 {
                return fail("leaf weight mismatch".into());
            }
            if nd.info.exhausted != nd.s.is_empty() {
                return fail("leaf exhausted flag wrong".into());
            }
            return Ok(NodeStat {
                s_min: nd.s_min(),
                s_len: nd.s.len() as u32,
                weight: nd.info.weight,
                exhausted: nd.info.exhausted,
                max_y_all: nd.s.iter().map(|q| q.ykey()).max(),
                fr_part: nd.content_tagged(),
            });
        }

        if nd.children.is_empty() {
            return fail("internal node without children".into());
        }
        if nd.children.len() > p.degree_cap {
            return fail(format!("degree {} > {}", nd.children.len(), p.degree_cap));
        }
        if nd.children.last().expect("children").sep != hi {
            return fail("last child separator differs from node boundary".into());
        }
        let mut prev = lo;
        for ce in &nd.children {
            if ce.sep <= prev {
                return fail("child separators not strictly increasing".into());
            }
            prev = ce.sep;
        }
        if nd.s.len() > 2 * p.b {
            return fail(format!("top set holds {} > {}", nd.s.len(), 2 * p.b));
        }
        if nd.s.windows(2).any(|w| w[0].ykey() < w[1].ykey()) {
            return fail("top set not y-descending".into());
        }
        if nd.i.len() > p.buf_cap || nd.d.len() > p.buf_cap {
            return fail("pending buffer over capacity".into());
        }
        if nd.info.weight > p.weight_cap(nd.info.level) {
            return fail(format!(
                "weight {} above split threshold {}",
                nd.info.weight,
                p.weight_cap(nd.info.level)
            ));
        }
        let _ = is_root;

        let mut prev = lo;
        let mut sum_w = nd.s.len() as i128 + nd.i.len() as i128 - nd.d.len() as i128;
        let mut max_below: Option<Key> = nd.i.iter().map(|q| q.ykey()).max();
        let mut fr_expect: Vec<(Point, bool)> = Vec::new();
        for ce in &nd.children {
            let sub = self.check_node(ce.node, Some(nd.info.level - 1), prev, ce.sep, false)?;
            prev = ce.sep;
            if sub.s_min != ce.s_min
                || sub.s_len != ce.s_len
                || sub.weight != ce.weight
                || sub.exhausted != ce.exhausted
            {
                return fail(format!("stale summary for child {}", ce.node));
            }
            sum_w += sub.weight as i128;
            max_below = max_below.max(sub.max_y_all);
            fr_expect.extend(sub.fr_part);
        }
        if nd.info.weight as i128 != sum_w {
            return fail(format!("weight {} != recomputed {}", nd.info.weight, sum_w));
        }
        if let Some(mb) = max_below {
            match nd.s.last() {
                Some(last) => {
                    if mb > last.ykey() {
                        return fail(format!(
                            "subtree point above top-set minimum ({mb:?} > {:?})",
                            last.ykey()
                        ));
                    }
                }
                None => return fail("empty top set over a nonempty subtree".into()),
            }
        }
        if nd.s.len() * 2 < p.s_target && !nd.below_empty() {
            return fail(format!("top set underfull ({}) with points below", nd.s.len()));
        }
        if nd.info.exhausted != nd.below_empty() {
            return fail("exhausted flag inconsistent with children".into());
        }
        if nd.info.exhausted && !nd.d.is_empty() {
            return fail("pending deletes under an exhausted node".into());
        }

        // Slab summary: exact content match plus per-slab metadata.
        let mut fr_have: Vec<(Point, bool)> = Vec::new();
        let groups = slab_groups(&nd.children, &nd.slabs);
        let mut gprev = lo;
        for (gi, group) in groups.iter().enumerate() {
            let ghi = nd.children[gi].sep;
            for sl in group {
                if sl.x_lo <= gprev || sl.x_hi > ghi {
                    return fail("slab outside its child interval".into());
                }
                let recs = self.store.read(sl.block);
                let mut n = 0u16;
                let mut n_pri = 0u16;
                let mut prev_y: Option<Key> = None;
                let mut xmin = MAX_KEY;
                let mut xmax = crate::rec::MIN_KEY;
                let mut top_pri: Option<Key> = None;
                for r in recs.iter() {
                    let (q, pri) = match r {
                        Rec::Pt(q) => (*q, true),
                        Rec::PtAux(q) => (*q, false),
                        other => return fail(format!("slab block holds {other:?}")),
                    };
                    if let Some(py) = prev_y {
                        if q.ykey() > py {
                            return fail("slab not y-descending".into());
                        }
                    }
                    prev_y = Some(q.ykey());
                    n += 1;
                    if pri {
                        n_pri += 1;
                        if top_pri.is_none() {
                            top_pri = Some(q.ykey());
                        }
                    }
                    xmin = xmin.min(q.xkey());
                    xmax = xmax.max(q.xkey());
                    fr_have.push((q, pri));
                }
                if n != sl.n
                    || n_pri != sl.n_pri
                    || xmin != sl.x_lo
                    || xmax != sl.x_hi
                    || top_pri != sl.y_top_pri
                {
                    return fail("slab metadata disagrees with its block".into());
                }
                if Some(sl.y_top) != recs.first().and_then(|r| r.as_point().map(|q| q.ykey())) {
                    return fail("slab y_top wrong".into());
                }
            }
            gprev = ghi;
        }
        let keyf = |t: &(Point, bool)| (t.0.x, t.0.y, t.0.id, t.1);
        fr_have.sort_by_key(keyf);
        fr_expect.sort_by_key(keyf);
        if fr_have != fr_expect {
            return fail("slab summary content diverges from child sets".into());
        }
        if nd.info.fr_n as usize != fr_have.len()
            || nd.info.fr_n_pri as usize != fr_have.iter().filter(|t| t.1).count()
        {
            return fail("slab summary counts wrong".into());
        }

        let max_y_all = max_below.max(nd.s.first().map(|q| q.ykey()));
        Ok(NodeStat {
            s_min: nd.s_min(),
            s_len: nd.s.len() as u32,
            weight: nd.info.weight,
            exhausted: nd.info.exhausted,
            max_y_all,
            fr_part: nd.content_tagged(),
        })
    }
}

struct NodeStat {
    s_min: Key,
    s_len: u32,
    weight: u64,
    exhausted: bool,
    max_y_all: Option<Key>,
    fr_part: Vec<Tagged>,
}

impl NodeData {
    /// Query-path load: metadata plus the pending-delete blocks; the top set
    /// and insert buffer stay unread (they are reported by the parent).
    fn load_for_query(store: &Store, id: BlockId) -> NodeData {
        let head = store.read(id);
        let info = match head.first() {
            Some(Rec::EpstInfo(b)) => (**b).clone(),
            other => panic!("block {id} is not a tree node: {other:?}"),
        };
        let recs = read_chain(store, &head[1..], &info.cont);
        let mut children = Vec::new();
        let mut slabs = Vec::new();
        for r in recs {
            match r {
                Rec::Child(c) => children.push(c),
                Rec::Slab(s) => slabs.push(s),
                other => panic!("unexpected record in node chain: {other:?}"),
            }
        }
        let d = read_pts(store, &info.d_blocks);
        NodeData { id, info, children, slabs, s: Vec::new(), i: Vec::new(), d }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emstore::StoreConfig;
    use crate::oracle::{canon, OracleSet};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn mk(b: usize, m: usize, delta: f64) -> Epst {
        let store = Store::new(StoreConfig::new(b, m)).expect("store");
        Epst::new(store, delta)
    }

    #[test]
    fn params_round_exact_powers() {
        assert_eq!(ceil_pow(256, 0.25), 4);
        assert_eq!(ceil_pow(64, 1.0 / 3.0), 4);
        assert_eq!(ceil_pow(16, 0.5), 4);
        let p = Params::new(256, 1.0 / 3.0);
        assert_eq!(p.fanout, 7);
        assert_eq!(p.buf_cap, 4 * 256);
        assert_eq!(p.weight_cap(0), 512);
        assert_eq!(p.weight_cap(2), 2 * 49 * 256);
    }

    fn rand_point(rng: &mut StdRng, id: u64, span: i64) -> Point {
        Point::new(rng.gen_range(-span..=span), rng.gen_range(-span..=span), id)
    }

    fn drive_against_oracle(b: usize, delta: f64, ops: usize, seed: u64, check_every: usize) {
        let mut t = mk(b, 8, delta);
        let mut o = OracleSet::new();
        let mut rng = StdRng::seed_from_u64(seed);
        let mut next_id = 0u64;
        let trace = std::env::var("EPST_TRACE").is_ok();
        for step in 0..ops {
            let roll: f64 = rng.gen();
            if roll < 0.6 || o.is_empty() {
                let p = rand_point(&mut rng, next_id, 200);
                next_id += 1;
                if trace {
                    eprintln!("step {step}: insert {p:?}");
                }
                o.o_insert(p).expect("oracle insert");
                t.insert(p).expect("tree insert");
            } else if roll < 0.8 {
                let victim = o.points()[rng.gen_range(0..o.len())];
                if trace {
                    eprintln!("step {step}: delete {victim:?}");
                }
                o.o_delete(victim).expect("oracle delete");
                t.delete(victim).expect("tree delete");
            } else {
                let (a, bb) = {
                    let u = rng.gen_range(-220..=220);
                    let v = rng.gen_range(-220..=220);
                    (u.min(v), u.max(v))
                };
                let c = rng.gen_range(-220..=220);
                let got = t.query3s(a, bb, c).expect("query");
                assert_eq!(got, o.o_query3s(a, bb, c), "query mismatch at step {step}");
            }
            if step % check_every == 0 || step + 1 == ops {
                t.check_invariants()
                    .unwrap_or_else(|e| panic!("invariants at step {step}: {e}"));
                assert_eq!(t.content(), canon(o.points().to_vec()), "content at step {step}");
                assert_eq!(t.len() as usize, o.len());
            }
        }
        t.destroy();
    }

    #[test]
    fn random_ops_match_oracle_small_blocks() {
        drive_against_oracle(16, 1.0 / 3.0, 3000, 7, 100);
    }

    #[test]
    fn random_ops_match_oracle_medium_blocks() {
        drive_against_oracle(64, 0.25, 1500, 11, 150);
    }

    #[test]
    fn random_ops_match_oracle_tiny_blocks() {
        drive_against_oracle(4, 0.4, 900, 23, 60);
    }

    #[test]
    fn duplicate_insert_faults_in_leaf_root() {
        let mut t = mk(16, 4, 0.5);
        let p = Point::new(3, 9, 1);
        t.insert(p).expect("first insert");
        assert_eq!(t.insert(Point::new(3, 5, 1)), Err(EpstError::DuplicateInsert(Point::new(3, 5, 1))));
        assert_eq!(t.insert(p), Err(EpstError::Poisoned));
    }

    #[test]
    fn deep_duplicate_insert_faults_during_flush() {
        let mut t = mk(4, 4, 0.4);
        for k in 0..60 {
            t.insert(Point::new(k, k, k as u64)).expect("insert");
        }
        // Same (x,id) as a point that sank to a leaf; low y so it sinks too.
        let mut res = t.insert(Point::new(0, -5, 0));
        let mut extra = 1000u64;
        while res.is_ok() {
            res = t.insert(Point::new((extra % 60) as i64, -(extra as i64), extra));
            extra += 1;
            assert!(extra < 3000, "duplicate never surfaced");
        }
        assert!(matches!(res, Err(EpstError::DuplicateInsert(_))));
    }

    // Regression: a refill that drains one child's whole top set must keep
    // pulling in global y order after that child restocks itself.
    #[test]
    fn refill_keeps_top_set_dominant() {
        drive_against_oracle(8, 0.4, 250, 1023, 1);
    }

    #[test]
    fn delete_absent_faults() {
        let mut t = mk(16, 4, 0.5);
        t.insert(Point::new(1, 1, 1)).expect("insert");
        assert_eq!(
            t.delete(Point::new(2, 2, 2)),
            Err(EpstError::DeleteAbsent(Point::new(2, 2, 2)))
        );
    }

    #[test]
    fn double_delete_of_pending_target_faults() {
        let mut t = mk(16, 8, 0.5);
        for k in 0..400 {
            t.insert(Point::new(k, k, k as u64)).expect("insert");
        }
        let victim = Point::new(0, 0, 0);
        t.delete(victim).expect("first delete pends");
        assert_eq!(t.delete(victim), Err(EpstError::DoubleDelete(victim)));
    }

    #[test]
    fn off_path_visits_report_at_least_half_a_block() {
        let b = 16;
        let mut t = mk(b, 8, 1.0 / 3.0);
        let mut rng = StdRng::seed_from_u64(99);
        for id in 0..4000u64 {
            t.insert(rand_point(&mut rng, id, 5000)).expect("insert");
        }
        let mut saw_off_path = false;
        for _ in 0..200 {
            let (a, bb) = {
                let u = rng.gen_range(-5000..=5000);
                let v = rng.gen_range(-5000..=5000);
                (u.min(v), u.max(v))
            };
            let c = rng.gen_range(-5000..=5000);
            let (_, stats) = t.query3s_stats(a, bb, c).expect("query");
            if stats.off_path_visits > 0 {
                saw_off_path = true;
                assert!(
                    stats.min_off_path_reported >= (b as u32) / 2,
                    "off-path visit with only {} reported",
                    stats.min_off_path_reported
                );
            }
        }
        assert!(saw_off_path, "workload never exercised off-path visits");
    }

    #[test]
    fn destroy_releases_every_block() {
        let store = Store::new(StoreConfig::new(16, 8)).expect("store");
        let mut t = Epst::new(store.clone(), 0.5);
        let mut rng = StdRng::seed_from_u64(3);
        for id in 0..2000u64 {
            t.insert(rand_point(&mut rng, id, 300)).expect("insert");
        }
        for _ in 0..500 {
            let pts = t.content();
            let victim = pts[rng.gen_range(0..pts.len())];
            t.delete(victim).expect("delete");
        }
        t.destroy();
        assert_eq!(store.stats().live_blocks, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prop_small_sequences_match_oracle(seed in 0u64..5000) {
            drive_against_oracle(8, 0.4, 250, seed, 50);
        }
    }

    #[test]
    #[ignore = "manual I/O profiling; run with --ignored --nocapture"]
    fn io_profile() {
        let n = 100_000u64;
        for &(b, m) in &[(16usize, 128usize), (64, 128), (256, 128)] {
            let mut t = mk(b, m, 1.0 / 3.0);
            let mut rng = StdRng::seed_from_u64(42);
            t.store().reset_stats();
            for id in 0..n {
                t.insert(rand_point(&mut rng, id, 1_000_000)).expect("insert");
            }
            let st = t.store().stats();
            println!(
                "B={b} M={m}: insert mean I/O = {:.4} (reads {:.4} writes {:.4}), blocks {}",
                (st.reads + st.writes) as f64 / n as f64,
                st.reads as f64 / n as f64,
                st.writes as f64 / n as f64,
                st.live_blocks
            );
        }
        // Query cost at a small cache.
        let (b, m) = (256usize, 16usize);
        let mut t = mk(b, m, 1.0 / 3.0);
        let mut rng = StdRng::seed_from_u64(7);
        for id in 0..n {
            t.insert(rand_point(&mut rng, id, 1_000_000)).expect("insert");
        }
        let mut worst = 0f64;
        let mut sum = 0f64;
        let q = 1000;
        for _ in 0..q {
            let u = rng.gen_range(-1_000_000i64..=1_000_000);
            let w = rng.gen_range(1..=200_000i64);
            let c = rng.gen_range(-1_000_000i64..=1_000_000);
            t.store().reset_stats();
            let (pts, stats) = t.query3s_stats(u, u.saturating_add(w), c).expect("query");
            let st = t.store().stats();
            let k = pts.len() as f64;
            let budget = 16.0 * (n as f64).log(b as f64) + 8.0 * (1.0 + k / b as f64);
            let cost = st.reads as f64;
            sum += cost;
            let slack = budget - cost;
            if cost > worst {
                worst = cost;
            }
            assert!(slack >= 0.0, "query read {cost} over budget {budget} (k={k}, visits={})", stats.nodes_visited);
        }
        println!("B={b} M={m}: mean query reads {:.2}, worst {worst}", sum / q as f64);
    }
}
