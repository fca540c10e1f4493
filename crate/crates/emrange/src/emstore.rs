//! Simulated external memory: a block store with configurable block
//! capacity, an exact-LRU cache of a fixed number of blocks, and I/O
//! counters. Every persistent read and write in the crate goes through it;
//! mutating cached data is free and only block transfers count.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::rec::{BlockId, Rec};

/// Store configuration.
#[derive(Clone, Copy, Debug)]
pub struct StoreConfig {
    /// Records per block.
    pub block_capacity_b: usize,
    /// Blocks held in cache.
    pub cache_blocks_m: usize,
    /// When false, dirty evictions and flushes do not count writes.
    pub track_writes: bool,
}

impl StoreConfig {
    pub fn new(b: usize, m: usize) -> Self {
        StoreConfig { block_capacity_b: b, cache_blocks_m: m, track_writes: true }
    }
}

/// I/O counters. `reads`/`writes` are monotone between resets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IOStats {
    pub reads: u64,
    pub writes: u64,
    pub live_blocks: u64,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown or freed block {0}")]
    UnknownBlock(BlockId),
    #[error("block {block}: {len} records exceed capacity {cap}")]
    Oversize { block: BlockId, len: usize, cap: usize },
    #[error("invalid store config: {0}")]
    InvalidConfig(String),
}

struct CacheEntry<R> {
    data: Arc<Vec<R>>,
    dirty: bool,
    stamp: u64,
}

/// A block store over records of type `R` with an exact-LRU cache.
pub struct BlockStore<R> {
    cfg: StoreConfig,
    next_id: u64,
    backing: HashMap<BlockId, Arc<Vec<R>>>,
    cache: HashMap<BlockId, CacheEntry<R>>,
    lru: BTreeMap<u64, BlockId>,
    tick: u64,
    reads: u64,
    writes: u64,
}

impl<R: Clone> BlockStore<R> {
    pub fn new(cfg: StoreConfig) -> Result<Self, StoreError> {
        if cfg.block_capacity_b < 4 {
            return Err(StoreError::InvalidConfig(format!(
                "block_capacity_b must be >= 4, got {}",
                cfg.block_capacity_b
            )));
        }
        if cfg.cache_blocks_m < 1 {
            return Err(StoreError::InvalidConfig(format!(
                "cache_blocks_m must be >= 1, got {}",
                cfg.cache_blocks_m
            )));
        }
        Ok(BlockStore {
            cfg,
            next_id: 1,
            backing: HashMap::new(),
            cache: HashMap::new(),
            lru: BTreeMap::new(),
            tick: 0,
            reads: 0,
            writes: 0,
        })
    }

    pub fn config(&self) -> StoreConfig {
        self.cfg
    }

    /// Allocate a fresh, empty, never-reused block. Costs no I/O.
    pub fn alloc_block(&mut self) -> BlockId {
        let id = self.next_id;
        self.next_id += 1;
        self.backing.insert(id, Arc::new(Vec::new()));
        id
    }

    fn touch(&mut self, id: BlockId) {
        self.tick += 1;
        let stamp = self.tick;
        if let Some(e) = self.cache.get_mut(&id) {
            self.lru.remove(&e.stamp);
            e.stamp = stamp;
            self.lru.insert(stamp, id);
        }
    }

    fn evict_lru(&mut self) {
        if let Some((&stamp, &victim)) = self.lru.iter().next() {
            self.lru.remove(&stamp);
            let entry = self.cache.remove(&victim).expect("lru entry without cache entry");
            if entry.dirty {
                if self.cfg.track_writes {
                    self.writes += 1;
                }
                self.backing.insert(victim, entry.data);
            }
        }
    }

    fn make_room(&mut self) {
        while self.cache.len() >= self.cfg.cache_blocks_m {
            self.evict_lru();
        }
    }

    /// Read a block; counts one read iff the block was not cached.
    pub fn read_block(&mut self, id: BlockId) -> Result<Arc<Vec<R>>, StoreError> {
        if let Some(e) = self.cache.get(&id) {
            let data = Arc::clone(&e.data);
            self.touch(id);
            return Ok(data);
        }
        let data = self
            .backing
            .get(&id)
            .cloned()
            .ok_or(StoreError::UnknownBlock(id))?;
        self.reads += 1;
        self.make_room();
        self.tick += 1;
        let stamp = self.tick;
        self.cache.insert(id, CacheEntry { data: Arc::clone(&data), dirty: false, stamp });
        self.lru.insert(stamp, id);
        Ok(data)
    }

    /// Replace a block's contents in cache, marking it dirty. Free of I/O
    /// except for a dirty eviction needed to make room.
    pub fn write_block(&mut self, id: BlockId, contents: Vec<R>) -> Result<(), StoreError> {
        if contents.len() > self.cfg.block_capacity_b {
            return Err(StoreError::Oversize {
                block: id,
                len: contents.len(),
                cap: self.cfg.block_capacity_b,
            });
        }
        if !self.backing.contains_key(&id) && !self.cache.contains_key(&id) {
            return Err(StoreError::UnknownBlock(id));
        }
        if let Some(e) = self.cache.get_mut(&id) {
            e.data = Arc::new(contents);
            e.dirty = true;
            self.touch(id);
            return Ok(());
        }
        self.make_room();
        self.tick += 1;
        let stamp = self.tick;
        self.cache.insert(id, CacheEntry { data: Arc::new(contents), dirty: true, stamp });
        self.lru.insert(stamp, id);
        Ok(())
    }

    /// Drop a block entirely; a cached dirty copy is discarded without a
    /// write-back.
    pub fn free_block(&mut self, id: BlockId) -> Result<(), StoreError> {
        let in_backing = self.backing.remove(&id).is_some();
        let cached = self.cache.remove(&id);
        if let Some(e) = &cached {
            self.lru.remove(&e.stamp);
        }
        if in_backing || cached.is_some() {
            Ok(())
        } else {
            Err(StoreError::UnknownBlock(id))
        }
    }

    /// Write back and evict every dirty block; clean blocks stay cached.
    pub fn flush(&mut self) {
        let dirty: Vec<BlockId> = self
            .cache
            .iter()
            .filter(|(_, e)| e.dirty)
            .map(|(&id, _)| id)
            .collect();
        for id in dirty {
            let entry = self.cache.remove(&id).expect("dirty block vanished");
            self.lru.remove(&entry.stamp);
            if self.cfg.track_writes {
                self.writes += 1;
            }
            self.backing.insert(id, entry.data);
        }
    }

    pub fn io_stats(&self) -> IOStats {
        // Every live block has a backing entry: alloc creates one and only
        // free removes it, so cached ids are always a subset of backing ids.
        IOStats { reads: self.reads, writes: self.writes, live_blocks: self.backing.len() as u64 }
    }

    pub fn reset_stats(&mut self) {
        self.reads = 0;
        self.writes = 0;
    }
}

/// Shared handle to a record store. All structures embedded in one tree share
/// a single store so that I/O accounting is unified; the mutex realizes the
/// exclusive-access-per-operation contract.
#[derive(Clone)]
pub struct Store {
    inner: Arc<Mutex<BlockStore<Rec>>>,
    block_capacity: usize,
}

impl Store {
    pub fn new(cfg: StoreConfig) -> Result<Self, StoreError> {
        let b = cfg.block_capacity_b;
        Ok(Store { inner: Arc::new(Mutex::new(BlockStore::new(cfg)?)), block_capacity: b })
    }

    /// Records per block.
    pub fn b(&self) -> usize {
        self.block_capacity
    }

    pub fn alloc(&self) -> BlockId {
        self.inner.lock().unwrap().alloc_block()
    }

    pub fn read(&self, id: BlockId) -> Arc<Vec<Rec>> {
        self.inner.lock().unwrap().read_block(id).expect("read of unknown block")
    }

    pub fn try_read(&self, id: BlockId) -> Result<Arc<Vec<Rec>>, StoreError> {
        self.inner.lock().unwrap().read_block(id)
    }

    pub fn write(&self, id: BlockId, contents: Vec<Rec>) {
        self.inner.lock().unwrap().write_block(id, contents).expect("block write failed")
    }

    pub fn try_write(&self, id: BlockId, contents: Vec<Rec>) -> Result<(), StoreError> {
        self.inner.lock().unwrap().write_block(id, contents)
    }

    pub fn free(&self, id: BlockId) {
        self.inner.lock().unwrap().free_block(id).expect("free of unknown block")
    }

    pub fn flush(&self) {
        self.inner.lock().unwrap().flush()
    }

    pub fn stats(&self) -> IOStats {
        self.inner.lock().unwrap().io_stats()
    }

    pub fn reset_stats(&self) {
        self.inner.lock().unwrap().reset_stats()
    }
}

/// Read the tail records of a metadata chain: the records of `cont` blocks
/// appended in order to `head_tail` (the head block's records after its info
/// record).
pub fn read_chain(store: &Store, head_tail: &[Rec], cont: &[BlockId]) -> Vec<Rec> {
    let mut out = head_tail.to_vec();
    for &b in cont {
        out.extend(store.read(b).iter().cloned());
    }
    out
}

/// Write a metadata chain: `tail` records are packed behind the info record
/// in `head` and into continuation blocks, allocating or freeing
/// continuation blocks as the length requires. Returns the continuation
/// list; `make_info` receives it to embed in the head record.
pub fn write_chain(
    store: &Store,
    head: BlockId,
    mut cont: Vec<BlockId>,
    tail: Vec<Rec>,
    make_info: impl FnOnce(Vec<BlockId>) -> Rec,
) -> Vec<BlockId> {
    let b = store.b();
    let head_cap = b - 1;
    let overflow = tail.len().saturating_sub(head_cap);
    let need = overflow.div_ceil(b);
    while cont.len() > need {
        store.free(cont.pop().expect("cont underflow"));
    }
    while cont.len() < need {
        cont.push(store.alloc());
    }
    let mut head_recs = Vec::with_capacity(head_cap.min(tail.len()) + 1);
    head_recs.push(make_info(cont.clone()));
    let mut it = tail.into_iter();
    head_recs.extend(it.by_ref().take(head_cap));
    store.write(head, head_recs);
    for &cb in &cont {
        let chunk: Vec<Rec> = it.by_ref().take(b).collect();
        store.write(cb, chunk);
    }
    cont
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(b: usize, m: usize) -> BlockStore<u32> {
        BlockStore::new(StoreConfig::new(b, m)).unwrap()
    }

    #[test]
    fn alloc_is_fresh_and_counts_live() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        assert_eq!(s.io_stats().live_blocks, 1);
        let b = s.alloc_block();
        assert_ne!(a, b);
        assert_eq!(s.io_stats().live_blocks, 2);
        assert_eq!(s.io_stats().reads, 0);
    }

    #[test]
    fn freed_ids_are_never_reused() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.free_block(a).unwrap();
        let b = s.alloc_block();
        assert_ne!(a, b);
        assert_eq!(s.io_stats().live_blocks, 1);
    }

    #[test]
    fn cache_hit_reads_once() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.read_block(a).unwrap();
        s.read_block(a).unwrap();
        assert_eq!(s.io_stats().reads, 1);
    }

    #[test]
    fn single_block_cache_forces_evictions() {
        let mut s = store(4, 1);
        let a = s.alloc_block();
        let b = s.alloc_block();
        s.read_block(a).unwrap();
        s.read_block(b).unwrap();
        s.read_block(a).unwrap();
        assert_eq!(s.io_stats().reads, 3);
    }

    #[test]
    fn read_of_freed_block_faults() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.free_block(a).unwrap();
        assert_eq!(s.read_block(a), Err(StoreError::UnknownBlock(a)));
    }

    #[test]
    fn write_then_flush_counts_one_write() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.write_block(a, vec![7]).unwrap();
        assert_eq!(s.io_stats().writes, 0);
        s.flush();
        assert_eq!(s.io_stats().writes, 1);
        s.flush();
        assert_eq!(s.io_stats().writes, 1);
    }

    #[test]
    fn reset_stats_keeps_live_blocks() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.read_block(a).unwrap();
        s.write_block(a, vec![1]).unwrap();
        s.flush();
        s.reset_stats();
        let st = s.io_stats();
        assert_eq!((st.reads, st.writes, st.live_blocks), (0, 0, 1));
    }

    #[test]
    fn free_all_blocks_zeroes_live() {
        let mut s = store(4, 4);
        let ids: Vec<_> = (0..5).map(|_| s.alloc_block()).collect();
        for id in ids {
            s.free_block(id).unwrap();
        }
        assert_eq!(s.io_stats().live_blocks, 0);
    }

    #[test]
    fn oversized_write_faults() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        let err = s.write_block(a, vec![0; 5]).unwrap_err();
        assert!(matches!(err, StoreError::Oversize { .. }));
    }

    #[test]
    fn write_to_freed_block_faults() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.free_block(a).unwrap();
        assert_eq!(s.write_block(a, vec![1]), Err(StoreError::UnknownBlock(a)));
    }

    #[test]
    fn write_refreshes_recency_and_dirty_eviction_writes_back() {
        let mut s = store(4, 2);
        let a = s.alloc_block();
        let b = s.alloc_block();
        let c = s.alloc_block();
        s.read_block(a).unwrap(); // miss 1
        s.read_block(b).unwrap(); // miss 2
        s.write_block(a, vec![1]).unwrap(); // a becomes MRU, dirty
        s.read_block(c).unwrap(); // miss 3, evicts b (clean)
        assert_eq!(s.io_stats().writes, 0);
        s.read_block(a).unwrap(); // hit: a MRU again
        assert_eq!(s.io_stats().reads, 3);
        s.read_block(b).unwrap(); // miss 4, evicts c (clean)
        assert_eq!(s.io_stats().writes, 0);
        s.read_block(c).unwrap(); // miss 5, evicts dirty a -> 1 write
        assert_eq!(s.io_stats().reads, 5);
        assert_eq!(s.io_stats().writes, 1);
        // the written-back contents survive
        let got = s.read_block(a).unwrap(); // miss 6
        assert_eq!(*got, vec![1]);
    }

    #[test]
    fn dirty_free_discards_without_write_back() {
        let mut s = store(4, 4);
        let a = s.alloc_block();
        s.write_block(a, vec![9]).unwrap();
        s.free_block(a).unwrap();
        s.flush();
        assert_eq!(s.io_stats().writes, 0);
        assert_eq!(s.io_stats().live_blocks, 0);
    }

    #[test]
    fn track_writes_off_suppresses_write_counting() {
        let mut s: BlockStore<u32> = BlockStore::new(StoreConfig {
            block_capacity_b: 4,
            cache_blocks_m: 1,
            track_writes: false,
        })
        .unwrap();
        let a = s.alloc_block();
        let b = s.alloc_block();
        s.write_block(a, vec![1]).unwrap();
        s.read_block(b).unwrap(); // evicts dirty a
        s.flush();
        assert_eq!(s.io_stats().writes, 0);
        // contents still persisted despite uncounted write
        assert_eq!(*s.read_block(a).unwrap(), vec![1]);
    }

    #[test]
    fn invalid_configs_fault() {
        assert!(BlockStore::<u32>::new(StoreConfig::new(3, 4)).is_err());
        assert!(BlockStore::<u32>::new(StoreConfig::new(4, 0)).is_err());
    }

    #[test]
    fn chain_round_trip() {
        use crate::rec::{EpstInfo, Rec};
        let st = Store::new(StoreConfig::new(4, 8)).unwrap();
        let head = st.alloc();
        let tail: Vec<Rec> = (0..10)
            .map(|i| Rec::Pt(crate::rec::Point::new(i, i, i as u64)))
            .collect();
        let cont = write_chain(&st, head, Vec::new(), tail.clone(), |cont| {
            Rec::EpstInfo(Box::new(EpstInfo { cont, ..Default::default() }))
        });
        // 10 tail records: 3 behind the info record, then blocks of 4
        assert_eq!(cont.len(), 2);
        let head_recs = st.read(head);
        let got = read_chain(&st, &head_recs[1..], &cont);
        assert_eq!(got, tail);
        // shrinking the tail frees continuation blocks
        let cont2 = write_chain(&st, head, cont, tail[..2].to_vec(), |cont| {
            Rec::EpstInfo(Box::new(EpstInfo { cont, ..Default::default() }))
        });
        assert!(cont2.is_empty());
        let head_recs = st.read(head);
        assert_eq!(read_chain(&st, &head_recs[1..], &cont2), tail[..2].to_vec());
    }
}
