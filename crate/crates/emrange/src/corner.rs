//! Bounded-size static three-sided structure: holds a few thousand points in
//! x-partitioned slab blocks (each sorted by descending y) plus a one-block
//! catalog, answering [a,b] x [c,+inf) windows output-sensitively and
//! rebuilding in a linear number of block writes.
//!
//! The slab catalog can either live in its own block (standalone mode) or be
//! embedded in the owning node's metadata records; a corner also optionally
//! maintains a prefix block holding the top primary points by y, so that
//! top-extraction costs one read.

use thiserror::Error;

use crate::emstore::Store;
use crate::rec::{BlockId, CornerDesc, Key, Point, Rec, SlabEntry, MAX_KEY, MIN_KEY};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum CornerError {
    #[error("corner capacity exceeded: {n} points > {cap}")]
    CapacityExceeded { n: usize, cap: usize },
}

/// A point plus its primary/auxiliary tag.
pub type Tagged = (Point, bool);

/// In-memory handle to a corner structure: descriptor plus slab entries.
#[derive(Clone, Debug, Default)]
pub struct Corner {
    pub desc: CornerDesc,
    pub slabs: Vec<SlabEntry>,
}

/// Whether to maintain the top-primary prefix block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrefixMode {
    /// No prefix block; top extraction falls back to a slab merge.
    Off,
    /// Build a fresh prefix block from the given points.
    Build,
    /// Reuse an existing prefix block; only sound when the primary content
    /// is unchanged since that block was written.
    Keep(BlockId),
}

/// Probe statistics for one query, used by instrumented envelope checks.
#[derive(Clone, Copy, Debug, Default)]
pub struct CornerProbe {
    /// Slabs read strictly inside the x-window.
    pub interior_slabs: usize,
    /// Minimum points reported from any interior slab read.
    pub min_interior_yield: usize,
    /// Slabs read that straddle a window boundary.
    pub boundary_slabs: usize,
}

impl Corner {
    /// Number of stored points.
    pub fn len(&self) -> usize {
        self.desc.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.desc.n == 0
    }

    /// Build from tagged points (primary flag true for main-set points).
    /// Writes one block per B points, plus a catalog block when
    /// `standalone_catalog`, plus a prefix block per `prefix`.
    pub fn build(
        store: &Store,
        pts: &[Tagged],
        cap: usize,
        standalone_catalog: bool,
        prefix: PrefixMode,
    ) -> Result<Corner, CornerError> {
        if pts.len() > cap {
            return Err(CornerError::CapacityExceeded { n: pts.len(), cap });
        }
        let b = store.b();
        let mut sorted: Vec<Tagged> = pts.to_vec();
        sorted.sort_by_key(|(p, _)| p.xkey());
        let mut slabs = Vec::new();
        for chunk in sorted.chunks(b) {
            let block = store.alloc();
            let mut by_y: Vec<Tagged> = chunk.to_vec();
            by_y.sort_by_key(|(p, _)| std::cmp::Reverse(p.ykey()));
            let x_lo = chunk.first().expect("nonempty chunk").0.xkey();
            let x_hi = chunk.last().expect("nonempty chunk").0.xkey();
            let y_top = by_y[0].0.ykey();
            let y_top_pri = by_y.iter().find(|(_, pri)| *pri).map(|(p, _)| p.ykey());
            let n_pri = chunk.iter().filter(|(_, pri)| *pri).count() as u16;
            store.write(
                block,
                by_y
                    .into_iter()
                    .map(|(p, pri)| if pri { Rec::Pt(p) } else { Rec::PtAux(p) })
                    .collect(),
            );
            slabs.push(SlabEntry {
                x_lo,
                x_hi,
                y_top,
                y_top_pri,
                n: chunk.len() as u16,
                n_pri,
                block,
            });
        }
        let n = sorted.len() as u32;
        let n_pri = sorted.iter().filter(|(_, pri)| *pri).count() as u32;
        let prefix_block = match prefix {
            PrefixMode::Off => None,
            PrefixMode::Keep(blk) => Some(blk),
            PrefixMode::Build => {
                if n_pri == 0 {
                    None
                } else {
                    let mut pris: Vec<Point> = sorted
                        .iter()
                        .filter(|(_, pri)| *pri)
                        .map(|(p, _)| *p)
                        .collect();
                    pris.sort_by_key(|p| std::cmp::Reverse(p.ykey()));
                    pris.truncate(b);
                    let blk = store.alloc();
                    store.write(blk, pris.into_iter().map(Rec::Pt).collect());
                    Some(blk)
                }
            }
        };
        let catalog = if standalone_catalog {
            // The catalog is a chain: each block starts with a Link record
            // whose `next` points at the following catalog block (0 ends).
            let per = b - 1;
            let chunks: Vec<&[SlabEntry]> =
                if slabs.is_empty() { vec![&[][..]] } else { slabs.chunks(per).collect() };
            let ids: Vec<BlockId> = chunks.iter().map(|_| store.alloc()).collect();
            for (i, chunk) in chunks.iter().enumerate() {
                let next = ids.get(i + 1).copied().unwrap_or(0);
                let mut recs = Vec::with_capacity(chunk.len() + 1);
                recs.push(Rec::Link { next, prev: 0 });
                recs.extend(chunk.iter().map(|s| Rec::Slab(*s)));
                store.write(ids[i], recs);
            }
            Some(ids[0])
        } else {
            None
        };
        Ok(Corner { desc: CornerDesc { catalog, prefix: prefix_block, n, n_pri }, slabs })
    }

    /// Load the slab entries of a standalone corner from its catalog chain.
    pub fn load(store: &Store, desc: CornerDesc) -> Corner {
        let mut slabs = Vec::new();
        let mut cur = desc.catalog.unwrap_or(0);
        while cur != 0 {
            let mut next = 0;
            for r in store.read(cur).iter() {
                match r {
                    Rec::Slab(s) => slabs.push(*s),
                    Rec::Link { next: nx, .. } => next = *nx,
                    _ => {}
                }
            }
            cur = next;
        }
        Corner { desc, slabs }
    }

    fn catalog_blocks(&self, store: &Store) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut cur = self.desc.catalog.unwrap_or(0);
        while cur != 0 {
            out.push(cur);
            let mut next = 0;
            for r in store.read(cur).iter() {
                if let Rec::Link { next: nx, .. } = r {
                    next = *nx;
                }
            }
            cur = next;
        }
        out
    }

    /// Key-space window query: points with xlo <= xkey <= xhi and
    /// ykey >= ylo, tagged with their primary flag.
    pub fn query_window(&self, store: &Store, xlo: Key, xhi: Key, ylo: Key) -> Vec<Tagged> {
        self.query_window_probed(store, xlo, xhi, ylo).0
    }

    /// As `query_window`, also returning probe statistics.
    pub fn query_window_probed(
        &self,
        store: &Store,
        xlo: Key,
        xhi: Key,
        ylo: Key,
    ) -> (Vec<Tagged>, CornerProbe) {
        let mut out = Vec::new();
        let mut probe = CornerProbe { min_interior_yield: usize::MAX, ..Default::default() };
        for s in &self.slabs {
            if s.x_hi < xlo || s.x_lo > xhi || s.y_top < ylo {
                continue;
            }
            let interior = s.x_lo >= xlo && s.x_hi <= xhi;
            let mut yield_here = 0usize;
            for rec in store.read(s.block).iter() {
                let (p, pri) = match rec {
                    Rec::Pt(p) => (*p, true),
                    Rec::PtAux(p) => (*p, false),
                    _ => continue,
                };
                if p.ykey() < ylo {
                    break; // slab blocks are sorted by descending y
                }
                if p.xkey() >= xlo && p.xkey() <= xhi {
                    out.push((p, pri));
                    yield_here += 1;
                }
            }
            if interior {
                probe.interior_slabs += 1;
                probe.min_interior_yield = probe.min_interior_yield.min(yield_here);
            } else {
                probe.boundary_slabs += 1;
            }
        }
        if probe.interior_slabs == 0 {
            probe.min_interior_yield = 0;
        }
        (out, probe)
    }

    /// Plain-coordinate three-sided query [a,b] x [c,+inf).
    pub fn query3s(&self, store: &Store, a: i64, b: i64, c: i64) -> Vec<Point> {
        self.query_window(store, (a, 0), (b, u64::MAX), (c, 0))
            .into_iter()
            .map(|(p, _)| p)
            .collect()
    }

    /// Count stored points inside a key-space x-window without reading
    /// interior slabs: (all, primary).
    pub fn count_window(&self, store: &Store, xlo: Key, xhi: Key) -> (u64, u64) {
        let mut all = 0u64;
        let mut pri = 0u64;
        for s in &self.slabs {
            if s.x_hi < xlo || s.x_lo > xhi {
                continue;
            }
            if s.x_lo >= xlo && s.x_hi <= xhi {
                all += s.n as u64;
                pri += s.n_pri as u64;
            } else {
                for rec in store.read(s.block).iter() {
                    let (p, is_pri) = match rec {
                        Rec::Pt(p) => (*p, true),
                        Rec::PtAux(p) => (*p, false),
                        _ => continue,
                    };
                    if p.xkey() >= xlo && p.xkey() <= xhi {
                        all += 1;
                        if is_pri {
                            pri += 1;
                        }
                    }
                }
            }
        }
        (all, pri)
    }

    /// The t largest primary points by (y,id), descending. Reads the prefix
    /// block when it covers the request, otherwise merges slab blocks.
    pub fn top_by_y(&self, store: &Store, t: usize) -> Vec<Point> {
        if t == 0 || self.desc.n_pri == 0 {
            return Vec::new();
        }
        let b = store.b();
        let covered = (self.desc.n_pri as usize).min(b);
        if let Some(blk) = self.desc.prefix {
            if t <= covered {
                let mut out: Vec<Point> = store
                    .read(blk)
                    .iter()
                    .filter_map(|r| match r {
                        Rec::Pt(p) => Some(*p),
                        _ => None,
                    })
                    .collect();
                out.truncate(t);
                return out;
            }
        }
        // Fallback: y-descending merge across slab blocks.
        let mut heads: Vec<Vec<Point>> = Vec::new();
        for s in &self.slabs {
            if s.n_pri == 0 {
                continue;
            }
            let pts: Vec<Point> = store
                .read(s.block)
                .iter()
                .filter_map(|r| match r {
                    Rec::Pt(p) => Some(*p),
                    _ => None,
                })
                .collect();
            heads.push(pts);
        }
        let mut idx = vec![0usize; heads.len()];
        let mut out = Vec::with_capacity(t.min(self.desc.n_pri as usize));
        while out.len() < t {
            let mut best: Option<(usize, Key)> = None;
            for (i, pts) in heads.iter().enumerate() {
                if idx[i] < pts.len() {
                    let k = pts[idx[i]].ykey();
                    if best.map(|(_, bk)| k > bk).unwrap_or(true) {
                        best = Some((i, k));
                    }
                }
            }
            match best {
                Some((i, _)) => {
                    out.push(heads[i][idx[i]]);
                    idx[i] += 1;
                }
                None => break,
            }
        }
        out
    }

    /// The maximal primary (y,id) key, from catalog data alone.
    pub fn top_primary_key(&self) -> Option<Key> {
        self.slabs.iter().filter_map(|s| s.y_top_pri).max()
    }

    /// All stored tagged points (for rebuilds and invariant checks).
    pub fn content(&self, store: &Store) -> Vec<Tagged> {
        let mut out = Vec::with_capacity(self.desc.n as usize);
        for s in &self.slabs {
            for rec in store.read(s.block).iter() {
                match rec {
                    Rec::Pt(p) => out.push((*p, true)),
                    Rec::PtAux(p) => out.push((*p, false)),
                    _ => {}
                }
            }
        }
        out
    }

    /// Free every block this corner owns.
    pub fn destroy(self, store: &Store) {
        let prefix = self.destroy_keeping_prefix(store);
        if let Some(blk) = prefix {
            store.free(blk);
        }
    }

    /// Free blocks but keep the prefix block alive (for rebuilds that reuse
    /// it via `PrefixMode::Keep`).
    pub fn destroy_keeping_prefix(self, store: &Store) -> Option<BlockId> {
        for blk in self.catalog_blocks(store) {
            store.free(blk);
        }
        for s in &self.slabs {
            store.free(s.block);
        }
        self.desc.prefix
    }

    /// Full-plane query, mostly for tests.
    pub fn all_points(&self, store: &Store) -> Vec<Point> {
        self.query_window(store, MIN_KEY, MAX_KEY, MIN_KEY)
            .into_iter()
            .map(|(p, _)| p)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emstore::StoreConfig;
    use crate::oracle::{canon, OracleSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(b: usize, m: usize) -> Store {
        Store::new(StoreConfig::new(b, m)).unwrap()
    }

    fn tag(pts: &[Point]) -> Vec<Tagged> {
        pts.iter().map(|&p| (p, true)).collect()
    }

    #[test]
    fn empty_build_answers_nothing() {
        let st = store(16, 4);
        let c = Corner::build(&st, &[], 64, true, PrefixMode::Build).unwrap();
        assert!(c.query3s(&st, i64::MIN, i64::MAX, i64::MIN).is_empty());
        assert!(c.top_by_y(&st, 3).is_empty());
    }

    #[test]
    fn three_full_slabs_use_three_blocks_plus_catalog() {
        let b = 16usize;
        let st = store(b, 4);
        let pts: Vec<Point> = (0..3 * b as i64).map(|i| Point::new(i, i * 7 % 23, i as u64)).collect();
        let before = st.stats().live_blocks;
        let c = Corner::build(&st, &tag(&pts), 2 * 128, true, PrefixMode::Off).unwrap();
        assert_eq!(c.slabs.len(), 3);
        assert_eq!(st.stats().live_blocks - before, 4);
    }

    #[test]
    fn one_point_overflow_makes_two_slabs() {
        let b = 16usize;
        let st = store(b, 4);
        let pts: Vec<Point> = (0..b as i64 + 1).map(|i| Point::new(i, -i, i as u64)).collect();
        let c = Corner::build(&st, &tag(&pts), 128, false, PrefixMode::Off).unwrap();
        assert_eq!(c.slabs.len(), 2);
    }

    #[test]
    fn full_range_query_reports_all() {
        let st = store(16, 8);
        let pts: Vec<Point> = (0..64).map(|i| Point::new(i, i, i as u64)).collect();
        let c = Corner::build(&st, &tag(&pts), 128, true, PrefixMode::Off).unwrap();
        let got = c.query3s(&st, 0, 63, 0);
        assert_eq!(canon(got), canon(pts));
    }

    #[test]
    fn capacity_overflow_faults() {
        let st = store(16, 4);
        let pts: Vec<Point> = (0..10).map(|i| Point::new(i, i, i as u64)).collect();
        let err = Corner::build(&st, &tag(&pts), 9, false, PrefixMode::Off).unwrap_err();
        assert!(matches!(err, CornerError::CapacityExceeded { n: 10, cap: 9 }));
    }

    #[test]
    fn random_queries_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let st = store(16, 8);
        let mut o = OracleSet::new();
        let mut pts = Vec::new();
        for id in 0..1000u64 {
            let p = Point::new(rng.gen_range(-500..500), rng.gen_range(-500..500), id);
            o.o_insert(p).unwrap();
            pts.push(p);
        }
        let c = Corner::build(&st, &tag(&pts), 2048, true, PrefixMode::Build).unwrap();
        for _ in 0..100 {
            let a = rng.gen_range(-600..600);
            let b = a + rng.gen_range(0..400);
            let y = rng.gen_range(-600..600);
            assert_eq!(canon(c.query3s(&st, a, b, y)), o.o_query3s(a, b, y));
        }
    }

    #[test]
    fn top_by_y_matches_sorted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = store(16, 8);
        let mut o = OracleSet::new();
        let mut pts = Vec::new();
        for id in 0..500u64 {
            let p = Point::new(rng.gen_range(-100..100), rng.gen_range(-1000..1000), id);
            o.o_insert(p).unwrap();
            pts.push(p);
        }
        let c = Corner::build(&st, &tag(&pts), 1024, true, PrefixMode::Build).unwrap();
        assert_eq!(c.top_by_y(&st, 37), o.o_top_by_y(37));
        // beyond the prefix block: exercises the merge fallback
        assert_eq!(c.top_by_y(&st, 123), o.o_top_by_y(123));
        // t exceeding the point count returns everything
        assert_eq!(c.top_by_y(&st, 1000), o.o_top_by_y(500));
        assert!(c.top_by_y(&st, 0).is_empty());
    }

    #[test]
    fn prefix_read_costs_one_io() {
        let st = store(16, 4);
        let pts: Vec<Point> = (0..100).map(|i| Point::new(i, i, i as u64)).collect();
        let c = Corner::build(&st, &tag(&pts), 256, true, PrefixMode::Build).unwrap();
        st.flush();
        st.reset_stats();
        let top = c.top_by_y(&st, 3);
        assert_eq!(top.iter().map(|p| p.y).collect::<Vec<_>>(), vec![99, 98, 97]);
        assert_eq!(st.stats().reads, 1);
    }

    #[test]
    fn top_extremes_and_fixed_values() {
        let st = store(16, 8);
        let pts: Vec<Point> = (1..=100).map(|i| Point::new(i, i, i as u64)).collect();
        let c = Corner::build(&st, &tag(&pts), 256, false, PrefixMode::Build).unwrap();
        let got: Vec<i64> = c.top_by_y(&st, 3).iter().map(|p| p.y).collect();
        assert_eq!(got, vec![100, 99, 98]);
    }

    #[test]
    fn count_window_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = store(16, 8);
        let mut pts = Vec::new();
        for id in 0..300u64 {
            pts.push(Point::new(rng.gen_range(-50..50), rng.gen_range(-50..50), id));
        }
        let tagged: Vec<Tagged> = pts
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i % 3 != 0))
            .collect();
        let c = Corner::build(&st, &tagged, 512, false, PrefixMode::Off).unwrap();
        for _ in 0..50 {
            let a = rng.gen_range(-60..60);
            let b = a + rng.gen_range(0..60);
            let (all, pri) = c.count_window(&st, (a, 0), (b, u64::MAX), );
            let want_all = pts.iter().filter(|p| a <= p.x && p.x <= b).count() as u64;
            let want_pri = tagged
                .iter()
                .filter(|(p, t)| *t && a <= p.x && p.x <= b)
                .count() as u64;
            assert_eq!((all, pri), (want_all, want_pri));
        }
    }

    #[test]
    fn catalog_chain_roundtrip_and_destroy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let st = store(16, 8);
        let before = st.stats().live_blocks;
        let pts: Vec<Point> = (0..400u64)
            .map(|id| Point::new(rng.gen_range(-500..500), rng.gen_range(-500..500), id))
            .collect();
        let c = Corner::build(&st, &tag(&pts), 1024, true, PrefixMode::Build).unwrap();
        assert!(c.slabs.len() > 16, "need a multi-block catalog for this test");
        let loaded = Corner::load(&st, c.desc);
        assert_eq!(loaded.slabs, c.slabs);
        assert_eq!(canon(loaded.all_points(&st)), canon(pts));
        loaded.destroy(&st);
        assert_eq!(st.stats().live_blocks, before);
    }

    #[test]
    fn build_write_budget_holds() {
        let b = 16usize;
        let st = store(b, 64);
        let pts: Vec<Point> = (0..75).map(|i| Point::new(i, i * 13 % 31, i as u64)).collect();
        st.reset_stats();
        let _c = Corner::build(&st, &tag(&pts), 256, true, PrefixMode::Build).unwrap();
        st.flush();
        let writes = st.stats().writes;
        let budget = 4 * (pts.len().div_ceil(b) + 1) as u64;
        assert!(writes <= budget, "writes {writes} exceed budget {budget}");
    }

    #[test]
    fn interior_slabs_always_yield() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = store(16, 8);
        let pts: Vec<Point> = (0..200u64)
            .map(|id| Point::new(rng.gen_range(-99..99), rng.gen_range(-99..99), id))
            .collect();
        let c = Corner::build(&st, &tag(&pts), 512, false, PrefixMode::Off).unwrap();
        for _ in 0..200 {
            let a = rng.gen_range(-120..120);
            let b = a + rng.gen_range(0..150);
            let y = rng.gen_range(-120..120);
            let (_, probe) = c.query_window_probed(&st, (a, 0), (b, u64::MAX), (y, 0));
            if probe.interior_slabs > 0 {
                assert!(probe.min_interior_yield >= 1);
            }
        }
    }
}
