//! Blocked sorted lists: small B+-trees over the shared record enum, keyed by
//! a per-record key. Two modes share the `ListDesc` descriptor:
//!
//! * eager — every update walks to its leaf; leaves are chained with `Link`
//!   records so cursors can step in either direction. Used for directory and
//!   mixed point/reference lists.
//! * buffered — internal blocks carry pending insert/delete records that are
//!   flushed downward in batches; reads merge pendings in memory and never
//!   write. Used where update cost must stay well below one I/O per element.
//!
//! Keys are unique within a list; inserting an existing key is an error that
//! callers surface as a structure fault.

use thiserror::Error;

use crate::emstore::Store;
use crate::rec::{BlockId, Key, KeyEntry, ListDesc, Point, Rec};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ListError {
    #[error("duplicate list key")]
    DuplicateKey,
    #[error("absent list key")]
    AbsentKey,
}

/// The ordering key of a storable list element.
pub fn key_of(r: &Rec) -> Key {
    match r {
        Rec::Pt(p) | Rec::PtAux(p) | Rec::BufI(p) | Rec::BufD(p) => p.ykey(),
        Rec::El(e) => e.key(),
        Rec::Group(g) => g.y_lo,
        _ => unreachable!("record kind not storable in a list"),
    }
}

/// Fresh empty list (either mode).
pub fn new() -> ListDesc {
    ListDesc { root: 0, height: 0, n: 0 }
}

// ---------------------------------------------------------------------------
// eager mode
// ---------------------------------------------------------------------------

fn leaf_cap(b: usize) -> usize {
    b - 1
}

fn split_leaf(store: &Store, block: BlockId, elems: Vec<Rec>) -> (Key, (Key, BlockId)) {
    let link = match store.read(block)[0] {
        Rec::Link { next, prev } => (next, prev),
        _ => unreachable!("leaf starts with a link"),
    };
    let mid = elems.len().div_ceil(2);
    let right: Vec<Rec> = elems[mid..].to_vec();
    let left: Vec<Rec> = elems[..mid].to_vec();
    let rblk = store.alloc();
    let lmax = key_of(left.last().unwrap());
    let rmax = key_of(right.last().unwrap());
    let mut lrecs = vec![Rec::Link { next: rblk, prev: link.1 }];
    lrecs.extend(left);
    let mut rrecs = vec![Rec::Link { next: link.0, prev: block }];
    rrecs.extend(right);
    store.write(block, lrecs);
    store.write(rblk, rrecs);
    if link.0 != 0 {
        let mut nrecs = store.read(link.0).as_ref().clone();
        if let Rec::Link { prev, .. } = &mut nrecs[0] {
            *prev = rblk;
        }
        store.write(link.0, nrecs);
    }
    (lmax, (rmax, rblk))
}

struct InsUp {
    max: Key,
    split: Option<(Key, BlockId)>,
}

fn ins_rec(store: &Store, node: BlockId, level: u8, rec: Rec) -> Result<InsUp, ListError> {
    let b = store.b();
    let key = key_of(&rec);
    if level == 0 {
        let mut recs = store.read(node).as_ref().clone();
        let pos = recs[1..].partition_point(|r| key_of(r) < key) + 1;
        if pos < recs.len() && key_of(&recs[pos]) == key {
            return Err(ListError::DuplicateKey);
        }
        recs.insert(pos, rec);
        if recs.len() - 1 <= leaf_cap(b) {
            let max = key_of(recs.last().unwrap());
            store.write(node, recs);
            return Ok(InsUp { max, split: None });
        }
        let elems: Vec<Rec> = recs[1..].to_vec();
        let (lmax, split) = split_leaf(store, node, elems);
        return Ok(InsUp { max: lmax, split: Some(split) });
    }
    let mut kids: Vec<KeyEntry> = read_keyptrs(store, node);
    let idx = kids
        .partition_point(|k| k.key < key)
        .min(kids.len() - 1);
    let up = ins_rec(store, kids[idx].block, level - 1, rec)?;
    kids[idx].key = up.max;
    if let Some((k, blk)) = up.split {
        kids.insert(idx + 1, KeyEntry { key: k, block: blk });
    }
    if kids.len() <= b {
        let max = kids.last().unwrap().key;
        store.write(node, kids.into_iter().map(Rec::KeyPtr).collect());
        return Ok(InsUp { max, split: None });
    }
    let mid = kids.len().div_ceil(2);
    let right: Vec<KeyEntry> = kids[mid..].to_vec();
    let left: Vec<KeyEntry> = kids[..mid].to_vec();
    let rblk = store.alloc();
    let lmax = left.last().unwrap().key;
    let rmax = right.last().unwrap().key;
    store.write(node, left.into_iter().map(Rec::KeyPtr).collect());
    store.write(rblk, right.into_iter().map(Rec::KeyPtr).collect());
    Ok(InsUp { max: lmax, split: Some((rmax, rblk)) })
}

fn read_keyptrs(store: &Store, node: BlockId) -> Vec<KeyEntry> {
    store
        .read(node)
        .iter()
        .map(|r| match r {
            Rec::KeyPtr(k) => *k,
            _ => unreachable!("internal node holds key pointers"),
        })
        .collect()
}

/// Insert one element; errors if its key is present.
pub fn insert(store: &Store, d: &mut ListDesc, rec: Rec) -> Result<(), ListError> {
    if d.root == 0 {
        let blk = store.alloc();
        store.write(blk, vec![Rec::Link { next: 0, prev: 0 }, rec]);
        *d = ListDesc { root: blk, height: 0, n: 1 };
        return Ok(());
    }
    let up = ins_rec(store, d.root, d.height, rec)?;
    if let Some((k, blk)) = up.split {
        let nroot = store.alloc();
        store.write(
            nroot,
            vec![
                Rec::KeyPtr(KeyEntry { key: up.max, block: d.root }),
                Rec::KeyPtr(KeyEntry { key: k, block: blk }),
            ],
        );
        d.root = nroot;
        d.height += 1;
    }
    d.n += 1;
    Ok(())
}

struct DelUp {
    removed: Rec,
    max: Option<Key>,
}

fn del_rec(store: &Store, node: BlockId, level: u8, key: Key) -> Option<DelUp> {
    if level == 0 {
        let mut recs = store.read(node).as_ref().clone();
        let pos = recs[1..].partition_point(|r| key_of(r) < key) + 1;
        if pos >= recs.len() || key_of(&recs[pos]) != key {
            return None;
        }
        let removed = recs.remove(pos);
        if recs.len() > 1 {
            let max = key_of(recs.last().unwrap());
            store.write(node, recs);
            return Some(DelUp { removed, max: Some(max) });
        }
        // empty leaf: unlink from the chain and free it
        let (next, prev) = match recs[0] {
            Rec::Link { next, prev } => (next, prev),
            _ => unreachable!("leaf starts with a link"),
        };
        if prev != 0 {
            let mut p = store.read(prev).as_ref().clone();
            if let Rec::Link { next: pn, .. } = &mut p[0] {
                *pn = next;
            }
            store.write(prev, p);
        }
        if next != 0 {
            let mut nx = store.read(next).as_ref().clone();
            if let Rec::Link { prev: np, .. } = &mut nx[0] {
                *np = prev;
            }
            store.write(next, nx);
        }
        store.free(node);
        return Some(DelUp { removed, max: None });
    }
    let mut kids = read_keyptrs(store, node);
    let idx = kids.partition_point(|k| k.key < key);
    if idx >= kids.len() {
        return None;
    }
    let up = del_rec(store, kids[idx].block, level - 1, key)?;
    match up.max {
        Some(m) => kids[idx].key = m,
        None => {
            kids.remove(idx);
        }
    }
    if kids.is_empty() {
        store.free(node);
        return Some(DelUp { removed: up.removed, max: None });
    }
    let max = kids.last().unwrap().key;
    store.write(node, kids.into_iter().map(Rec::KeyPtr).collect());
    Some(DelUp { removed: up.removed, max: Some(max) })
}

/// Remove and return the element with this key, if present.
pub fn remove(store: &Store, d: &mut ListDesc, key: Key) -> Option<Rec> {
    if d.root == 0 {
        return None;
    }
    let up = del_rec(store, d.root, d.height, key)?;
    d.n -= 1;
    if up.max.is_none() {
        *d = ListDesc { root: 0, height: 0, n: 0 };
        return Some(up.removed);
    }
    while d.height > 0 {
        let kids = read_keyptrs(store, d.root);
        if kids.len() > 1 {
            break;
        }
        store.free(d.root);
        d.root = kids[0].block;
        d.height -= 1;
    }
    Some(up.removed)
}

/// Exact-key lookup.
pub fn get(store: &Store, d: &ListDesc, key: Key) -> Option<Rec> {
    let c = seek_ge(store, d, key)?;
    let r = c.rec(store);
    (key_of(&r) == key).then_some(r)
}

/// Overwrite the element with this key in place (key must not change).
pub fn update(store: &Store, d: &ListDesc, rec: Rec) -> bool {
    let key = key_of(&rec);
    let Some(c) = seek_ge(store, d, key) else { return false };
    let mut recs = store.read(c.block).as_ref().clone();
    if key_of(&recs[c.idx]) != key {
        return false;
    }
    recs[c.idx] = rec;
    store.write(c.block, recs);
    true
}

/// Position in an eager list: a leaf block plus an element index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cursor {
    pub block: BlockId,
    pub idx: usize,
}

impl Cursor {
    pub fn rec(&self, store: &Store) -> Rec {
        store.read(self.block)[self.idx].clone()
    }

    pub fn key(&self, store: &Store) -> Key {
        key_of(&self.rec(store))
    }

    pub fn next(&self, store: &Store) -> Option<Cursor> {
        let recs = store.read(self.block);
        if self.idx + 1 < recs.len() {
            return Some(Cursor { block: self.block, idx: self.idx + 1 });
        }
        match recs[0] {
            Rec::Link { next, .. } if next != 0 => Some(Cursor { block: next, idx: 1 }),
            _ => None,
        }
    }

    pub fn prev(&self, store: &Store) -> Option<Cursor> {
        if self.idx > 1 {
            return Some(Cursor { block: self.block, idx: self.idx - 1 });
        }
        match store.read(self.block)[0] {
            Rec::Link { prev, .. } if prev != 0 => {
                let len = store.read(prev).len();
                Some(Cursor { block: prev, idx: len - 1 })
            }
            _ => None,
        }
    }
}

/// Cursor at the first element with key >= `key`.
pub fn seek_ge(store: &Store, d: &ListDesc, key: Key) -> Option<Cursor> {
    if d.root == 0 {
        return None;
    }
    let mut node = d.root;
    for _ in 0..d.height {
        let kids = read_keyptrs(store, node);
        let idx = kids.partition_point(|k| k.key < key);
        if idx >= kids.len() {
            return None;
        }
        node = kids[idx].block;
    }
    let recs = store.read(node);
    let pos = recs[1..].partition_point(|r| key_of(r) < key) + 1;
    debug_assert!(pos < recs.len(), "subtree max promised an element >= key");
    Some(Cursor { block: node, idx: pos })
}

/// Cursor at the last element with key <= `key`.
pub fn seek_le(store: &Store, d: &ListDesc, key: Key) -> Option<Cursor> {
    if d.root == 0 {
        return None;
    }
    let mut node = d.root;
    for _ in 0..d.height {
        let kids = read_keyptrs(store, node);
        let idx = kids.partition_point(|k| k.key < key).min(kids.len() - 1);
        node = kids[idx].block;
    }
    let recs = store.read(node);
    let pos = recs[1..].partition_point(|r| key_of(r) <= key);
    if pos == 0 {
        let prev = match recs[0] {
            Rec::Link { prev, .. } => prev,
            _ => unreachable!("leaf starts with a link"),
        };
        if prev == 0 {
            return None;
        }
        let len = store.read(prev).len();
        return Some(Cursor { block: prev, idx: len - 1 });
    }
    Some(Cursor { block: node, idx: pos })
}

/// Cursor at the smallest element.
pub fn first(store: &Store, d: &ListDesc) -> Option<Cursor> {
    if d.root == 0 {
        return None;
    }
    let mut node = d.root;
    for _ in 0..d.height {
        node = read_keyptrs(store, node)[0].block;
    }
    Some(Cursor { block: node, idx: 1 })
}

/// Cursor at the largest element.
pub fn last(store: &Store, d: &ListDesc) -> Option<Cursor> {
    if d.root == 0 {
        return None;
    }
    let mut node = d.root;
    for _ in 0..d.height {
        node = read_keyptrs(store, node).last().unwrap().block;
    }
    let len = store.read(node).len();
    Some(Cursor { block: node, idx: len - 1 })
}

/// All elements with lo <= key <= hi, in key order.
pub fn range(store: &Store, d: &ListDesc, lo: Key, hi: Key) -> Vec<Rec> {
    let mut out = Vec::new();
    let mut cur = seek_ge(store, d, lo);
    while let Some(c) = cur {
        let r = c.rec(store);
        if key_of(&r) > hi {
            break;
        }
        out.push(r);
        cur = c.next(store);
    }
    out
}

/// Remove and return all elements with lo <= key <= hi, in key order.
pub fn splice_range(store: &Store, d: &mut ListDesc, lo: Key, hi: Key) -> Vec<Rec> {
    let items = range(store, d, lo, hi);
    for r in &items {
        let removed = remove(store, d, key_of(r));
        debug_assert!(removed.is_some());
    }
    items
}

/// Insert many elements; errors on the first duplicate key.
pub fn extend(store: &Store, d: &mut ListDesc, recs: Vec<Rec>) -> Result<(), ListError> {
    for r in recs {
        insert(store, d, r)?;
    }
    Ok(())
}

/// Every element in key order.
pub fn content(store: &Store, d: &ListDesc) -> Vec<Rec> {
    let mut out = Vec::with_capacity(d.n as usize);
    let mut cur = first(store, d);
    while let Some(c) = cur {
        out.push(c.rec(store));
        cur = c.next(store);
    }
    out
}

fn free_rec(store: &Store, node: BlockId, level: u8) {
    if level > 0 {
        for k in read_keyptrs(store, node) {
            free_rec(store, k.block, level - 1);
        }
    }
    store.free(node);
}

/// Free every block of the list.
pub fn destroy(store: &Store, d: ListDesc) {
    if d.root != 0 {
        free_rec(store, d.root, d.height);
    }
}

/// Validate structural invariants; panics with a description on violation.
pub fn check(store: &Store, d: &ListDesc) {
    if d.root == 0 {
        assert_eq!(d.n, 0, "empty list with nonzero count");
        return;
    }
    fn walk(
        store: &Store,
        node: BlockId,
        level: u8,
        leaves: &mut Vec<BlockId>,
        count: &mut u64,
    ) -> Key {
        let b = store.b();
        if level == 0 {
            let recs = store.read(node);
            assert!(matches!(recs[0], Rec::Link { .. }), "leaf must start with a link");
            let elems = &recs[1..];
            assert!(!elems.is_empty() && elems.len() <= leaf_cap(b), "leaf occupancy");
            for w in elems.windows(2) {
                assert!(key_of(&w[0]) < key_of(&w[1]), "leaf must be strictly sorted");
            }
            leaves.push(node);
            *count += elems.len() as u64;
            return key_of(elems.last().unwrap());
        }
        let kids = read_keyptrs(store, node);
        assert!(!kids.is_empty() && kids.len() <= b, "internal occupancy");
        for w in kids.windows(2) {
            assert!(w[0].key < w[1].key, "routing keys must increase");
        }
        for k in &kids {
            let max = walk(store, k.block, level - 1, leaves, count);
            assert_eq!(max, k.key, "routing key must equal subtree max");
        }
        kids.last().unwrap().key
    }
    let mut leaves = Vec::new();
    let mut count = 0;
    walk(store, d.root, d.height, &mut leaves, &mut count);
    assert_eq!(count, d.n, "element count must match descriptor");
    if d.height > 0 {
        assert!(read_keyptrs(store, d.root).len() >= 2, "internal root needs two children");
    }
    // leaf chain must visit the leaves in key order
    let mut cur = leaves[0];
    for (i, &blk) in leaves.iter().enumerate() {
        assert_eq!(cur, blk, "leaf chain order");
        let (next, prev) = match store.read(cur)[0] {
            Rec::Link { next, prev } => (next, prev),
            _ => unreachable!(),
        };
        if i == 0 {
            assert_eq!(prev, 0, "first leaf has no predecessor");
        }
        cur = next;
    }
    assert_eq!(cur, 0, "last leaf terminates the chain");
}

// ---------------------------------------------------------------------------
// buffered mode
// ---------------------------------------------------------------------------

fn bfanout(b: usize) -> usize {
    (b / 16).max(4)
}

fn bpend_cap(b: usize) -> usize {
    b.saturating_sub(bfanout(b))
}

fn parse_internal(recs: &[Rec]) -> (Vec<KeyEntry>, Vec<Rec>) {
    let mut kids = Vec::new();
    let mut pend = Vec::new();
    for r in recs {
        match r {
            Rec::KeyPtr(k) => kids.push(*k),
            Rec::BufI(_) | Rec::BufD(_) => pend.push(r.clone()),
            _ => unreachable!("buffered internal holds key pointers and pendings"),
        }
    }
    (kids, pend)
}

fn write_internal(store: &Store, node: BlockId, kids: &[KeyEntry], pend: &[Rec]) {
    let mut recs: Vec<Rec> = kids.iter().map(|k| Rec::KeyPtr(*k)).collect();
    recs.extend(pend.iter().cloned());
    store.write(node, recs);
}

/// Push one pending onto a pending set, cancelling an exact opposite.
fn annihilate(pend: &mut Vec<Rec>, op: Rec) {
    let cancel = match &op {
        Rec::BufI(p) => pend.iter().position(|r| matches!(r, Rec::BufD(q) if q == p)),
        Rec::BufD(p) => pend.iter().position(|r| matches!(r, Rec::BufI(q) if q == p)),
        _ => unreachable!(),
    };
    match cancel {
        Some(i) => {
            pend.remove(i);
        }
        None => pend.push(op),
    }
}

/// Route a pending to a child index: first child whose key covers it, else
/// the last child.
fn route(kids: &[KeyEntry], key: Key) -> usize {
    kids.partition_point(|k| k.key < key).min(kids.len() - 1)
}

fn apply_to_leaf(store: &Store, node: BlockId, pend: Vec<Rec>) -> Vec<KeyEntry> {
    let b = store.b();
    let mut elems: Vec<Point> = store
        .read(node)
        .iter()
        .map(|r| match r {
            Rec::Pt(p) => *p,
            _ => unreachable!("buffered leaf holds points"),
        })
        .collect();
    for op in pend {
        match op {
            Rec::BufI(p) => {
                let pos = elems.partition_point(|q| q.ykey() < p.ykey());
                debug_assert!(
                    pos >= elems.len() || elems[pos].ykey() != p.ykey(),
                    "pending insert hit an existing key"
                );
                elems.insert(pos, p);
            }
            Rec::BufD(p) => {
                let pos = elems.partition_point(|q| q.ykey() < p.ykey());
                debug_assert!(
                    pos < elems.len() && elems[pos] == p,
                    "pending delete missed its element"
                );
                elems.remove(pos);
            }
            _ => unreachable!(),
        }
    }
    if elems.is_empty() {
        store.free(node);
        return Vec::new();
    }
    let pieces = elems.len().div_ceil(b);
    let mut out = Vec::with_capacity(pieces);
    let per = elems.len().div_ceil(pieces);
    for (i, chunk) in elems.chunks(per).enumerate() {
        let blk = if i == 0 { node } else { store.alloc() };
        out.push(KeyEntry { key: chunk.last().unwrap().ykey(), block: blk });
        store.write(blk, chunk.iter().map(|p| Rec::Pt(*p)).collect());
    }
    out
}

/// Deliver pendings into a child, flushing it if its buffer overflows.
/// Returns the child's replacement entries (empty = freed, several = split).
fn apply_to_child(store: &Store, child: BlockId, level: u8, pend: Vec<Rec>) -> Vec<KeyEntry> {
    let b = store.b();
    if level == 0 {
        return apply_to_leaf(store, child, pend);
    }
    let (kids, mut have) = parse_internal(&store.read(child));
    for op in pend {
        annihilate(&mut have, op);
    }
    if have.len() <= bpend_cap(b) {
        write_internal(store, child, &kids, &have);
        let key = kids.last().unwrap().key;
        return vec![KeyEntry { key, block: child }];
    }
    let kids = flush_pendings(store, kids, have, level);
    if kids.is_empty() {
        store.free(child);
        return Vec::new();
    }
    let pieces = kids.len().div_ceil(bfanout(b));
    let per = kids.len().div_ceil(pieces);
    let mut out = Vec::with_capacity(pieces);
    for (i, chunk) in kids.chunks(per).enumerate() {
        let blk = if i == 0 { child } else { store.alloc() };
        write_internal(store, blk, chunk, &[]);
        out.push(KeyEntry { key: chunk.last().unwrap().key, block: blk });
    }
    out
}

/// Distribute pendings over children and rebuild the child entry list.
fn flush_pendings(
    store: &Store,
    kids: Vec<KeyEntry>,
    pend: Vec<Rec>,
    level: u8,
) -> Vec<KeyEntry> {
    let mut routed: Vec<Vec<Rec>> = vec![Vec::new(); kids.len()];
    for op in pend {
        let idx = route(&kids, key_of(&op));
        annihilate(&mut routed[idx], op);
    }
    let mut out = Vec::with_capacity(kids.len());
    for (k, ops) in kids.into_iter().zip(routed) {
        if ops.is_empty() {
            out.push(k);
        } else {
            out.extend(apply_to_child(store, k.block, level - 1, ops));
        }
    }
    out
}

fn broot_apply(store: &Store, d: &mut ListDesc, op: Rec) {
    let b = store.b();
    if d.height == 0 {
        // root is a single leaf: apply directly
        let entries = apply_to_leaf(store, d.root, vec![op]);
        match entries.len() {
            0 => *d = ListDesc { root: 0, height: 0, n: d.n },
            1 => d.root = entries[0].block,
            _ => {
                let nroot = store.alloc();
                write_internal(store, nroot, &entries, &[]);
                *d = ListDesc { root: nroot, height: 1, n: d.n };
            }
        }
        return;
    }
    let (kids, mut pend) = parse_internal(&store.read(d.root));
    annihilate(&mut pend, op);
    if pend.len() <= bpend_cap(b) {
        write_internal(store, d.root, &kids, &pend);
        return;
    }
    let mut entries = flush_pendings(store, kids, pend, d.height);
    if entries.is_empty() {
        store.free(d.root);
        *d = ListDesc { root: 0, height: 0, n: d.n };
        return;
    }
    if entries.len() == 1 {
        // the root is down to a single child: collapse levels
        store.free(d.root);
        d.root = entries[0].block;
        d.height -= 1;
        while d.height > 0 {
            let (kids, pend) = parse_internal(&store.read(d.root));
            if kids.len() > 1 || !pend.is_empty() {
                break;
            }
            store.free(d.root);
            d.root = kids[0].block;
            d.height -= 1;
        }
        return;
    }
    while entries.len() > bfanout(b) {
        let per = entries.len().div_ceil(entries.len().div_ceil(bfanout(b)));
        let mut next = Vec::new();
        for chunk in entries.chunks(per) {
            let blk = store.alloc();
            write_internal(store, blk, chunk, &[]);
            next.push(KeyEntry { key: chunk.last().unwrap().key, block: blk });
        }
        entries = next;
        d.height += 1;
    }
    write_internal(store, d.root, &entries, &[]);
}

/// Buffered insert; the key must not be live (callers check via `bnear`).
pub fn binsert(store: &Store, d: &mut ListDesc, p: Point) {
    if d.root == 0 {
        let blk = store.alloc();
        store.write(blk, vec![Rec::Pt(p)]);
        *d = ListDesc { root: blk, height: 0, n: 1 };
        return;
    }
    broot_apply(store, d, Rec::BufI(p));
    d.n += 1;
}

/// Buffered delete of an exact live point.
pub fn bdelete(store: &Store, d: &mut ListDesc, p: Point) {
    assert!(d.root != 0, "delete from an empty list");
    broot_apply(store, d, Rec::BufD(p));
    d.n -= 1;
}

/// Net elements with lo <= key <= hi, in key order. Read-only.
pub fn brange(store: &Store, d: &ListDesc, lo: Key, hi: Key) -> Vec<Point> {
    if d.root == 0 {
        return Vec::new();
    }
    fn walk(
        store: &Store,
        node: BlockId,
        level: u8,
        carried: Vec<Rec>,
        lo: Key,
        hi: Key,
        out: &mut Vec<Point>,
    ) {
        if level == 0 {
            let mut elems: Vec<Point> =
                store.read(node).iter().filter_map(|r| r.as_point()).collect();
            for op in carried {
                match op {
                    Rec::BufI(p) => {
                        let pos = elems.partition_point(|q| q.ykey() < p.ykey());
                        elems.insert(pos, p);
                    }
                    Rec::BufD(p) => {
                        let pos = elems.partition_point(|q| q.ykey() < p.ykey());
                        debug_assert!(pos < elems.len() && elems[pos] == p);
                        elems.remove(pos);
                    }
                    _ => unreachable!(),
                }
            }
            out.extend(elems.into_iter().filter(|p| p.ykey() >= lo && p.ykey() <= hi));
            return;
        }
        let (kids, mut pend) = parse_internal(&store.read(node));
        for op in carried {
            annihilate(&mut pend, op);
        }
        let mut routed: Vec<Vec<Rec>> = vec![Vec::new(); kids.len()];
        for op in pend {
            routed[route(&kids, key_of(&op))].push(op);
        }
        let mut prev = crate::rec::MIN_KEY;
        for (i, (k, ops)) in kids.iter().zip(routed).enumerate() {
            let upper = if i + 1 == kids.len() { crate::rec::MAX_KEY } else { k.key };
            if prev <= hi && upper >= lo {
                walk(store, k.block, level - 1, ops, lo, hi, out);
            }
            prev = k.key;
        }
    }
    let mut out = Vec::new();
    walk(store, d.root, d.height, Vec::new(), lo, hi, &mut out);
    out
}

/// Strict predecessor, exact match, and strict successor of a key, through
/// the pending overlay. Read-only.
pub fn bnear(
    store: &Store,
    d: &ListDesc,
    key: Key,
) -> (Option<Point>, Option<Point>, Option<Point>) {
    if d.root == 0 {
        return (None, None, None);
    }
    fn seek(
        store: &Store,
        node: BlockId,
        level: u8,
        carried: Vec<Rec>,
        key: Key,
        side: i8, // -1 pred, 0 exact, +1 succ
    ) -> Option<Point> {
        if level == 0 {
            let mut elems: Vec<Point> =
                store.read(node).iter().filter_map(|r| r.as_point()).collect();
            for op in carried {
                match op {
                    Rec::BufI(p) => {
                        let pos = elems.partition_point(|q| q.ykey() < p.ykey());
                        elems.insert(pos, p);
                    }
                    Rec::BufD(p) => {
                        let pos = elems.partition_point(|q| q.ykey() < p.ykey());
                        debug_assert!(pos < elems.len() && elems[pos] == p);
                        elems.remove(pos);
                    }
                    _ => unreachable!(),
                }
            }
            return match side {
                -1 => elems.iter().rev().find(|p| p.ykey() < key).copied(),
                0 => elems.iter().find(|p| p.ykey() == key).copied(),
                _ => elems.iter().find(|p| p.ykey() > key).copied(),
            };
        }
        let (kids, mut pend) = parse_internal(&store.read(node));
        for op in carried {
            annihilate(&mut pend, op);
        }
        let mut routed: Vec<Vec<Rec>> = vec![Vec::new(); kids.len()];
        for op in pend {
            routed[route(&kids, key_of(&op))].push(op);
        }
        match side {
            -1 => {
                for i in (0..kids.len()).rev() {
                    let lower = if i == 0 { crate::rec::MIN_KEY } else { kids[i - 1].key };
                    if lower >= key && i > 0 {
                        continue;
                    }
                    if let Some(p) =
                        seek(store, kids[i].block, level - 1, std::mem::take(&mut routed[i]), key, -1)
                    {
                        return Some(p);
                    }
                }
                None
            }
            0 => {
                let i = kids.partition_point(|k| k.key < key).min(kids.len() - 1);
                seek(store, kids[i].block, level - 1, std::mem::take(&mut routed[i]), key, 0)
            }
            _ => {
                for i in 0..kids.len() {
                    let upper = if i + 1 == kids.len() { crate::rec::MAX_KEY } else { kids[i].key };
                    if upper <= key {
                        continue;
                    }
                    if let Some(p) =
                        seek(store, kids[i].block, level - 1, std::mem::take(&mut routed[i]), key, 1)
                    {
                        return Some(p);
                    }
                }
                None
            }
        }
    }
    (
        seek(store, d.root, d.height, Vec::new(), key, -1),
        seek(store, d.root, d.height, Vec::new(), key, 0),
        seek(store, d.root, d.height, Vec::new(), key, 1),
    )
}

/// Every net element in key order. Read-only.
pub fn bcontent(store: &Store, d: &ListDesc) -> Vec<Point> {
    brange(store, d, crate::rec::MIN_KEY, crate::rec::MAX_KEY)
}

/// Free every block of a buffered list.
pub fn bdestroy(store: &Store, d: ListDesc) {
    if d.root == 0 {
        return;
    }
    fn free_walk(store: &Store, node: BlockId, level: u8) {
        if level > 0 {
            let (kids, _) = parse_internal(&store.read(node));
            for k in kids {
                free_walk(store, k.block, level - 1);
            }
        }
        store.free(node);
    }
    free_walk(store, d.root, d.height);
}

/// Validate buffered-mode invariants; panics with a description on failure.
pub fn bcheck(store: &Store, d: &ListDesc) {
    if d.root == 0 {
        assert_eq!(d.n, 0, "empty list with nonzero count");
        return;
    }
    fn walk(store: &Store, node: BlockId, level: u8, net: &mut i64) -> Key {
        let b = store.b();
        if level == 0 {
            let recs = store.read(node);
            assert!(!recs.is_empty(), "buffered leaf must be nonempty");
            assert!(recs.len() <= b, "buffered leaf occupancy");
            let pts: Vec<Point> = recs.iter().filter_map(|r| r.as_point()).collect();
            assert_eq!(pts.len(), recs.len(), "buffered leaf holds points only");
            for w in pts.windows(2) {
                assert!(w[0].ykey() < w[1].ykey(), "buffered leaf strictly sorted");
            }
            *net += pts.len() as i64;
            return pts.last().unwrap().ykey();
        }
        let (kids, pend) = parse_internal(&store.read(node));
        assert!(!kids.is_empty() && kids.len() <= bfanout(b), "buffered fanout");
        assert!(pend.len() <= bpend_cap(b), "pending occupancy");
        for w in kids.windows(2) {
            assert!(w[0].key < w[1].key, "routing keys must increase");
        }
        for r in &pend {
            match r {
                Rec::BufI(_) => *net += 1,
                Rec::BufD(_) => *net -= 1,
                _ => unreachable!(),
            }
        }
        for k in &kids {
            let max = walk(store, k.block, level - 1, net);
            assert_eq!(max, k.key, "routing key equals applied subtree max");
        }
        kids.last().unwrap().key
    }
    let mut net = 0;
    walk(store, d.root, d.height, &mut net);
    assert_eq!(net, d.n as i64, "net count must match descriptor");
}
