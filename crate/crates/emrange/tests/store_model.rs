//! Model test: the store's read counter must equal the number of cache
//! misses under an exact-LRU reference simulation, for any access sequence.

use proptest::prelude::*;

use emrange::emstore::{BlockStore, StoreConfig};

/// Reference LRU: a recency-ordered vector of block ids.
#[derive(Default)]
struct RefLru {
    cap: usize,
    recency: Vec<u64>, // front = LRU, back = MRU
    dirty: Vec<u64>,
    misses: u64,
    write_backs: u64,
}

impl RefLru {
    fn new(cap: usize) -> Self {
        RefLru { cap, ..Default::default() }
    }

    fn touch(&mut self, id: u64, make_dirty: bool) {
        if let Some(i) = self.recency.iter().position(|&x| x == id) {
            self.recency.remove(i);
        } else {
            if !make_dirty {
                self.misses += 1;
            }
            while self.recency.len() >= self.cap {
                let victim = self.recency.remove(0);
                if let Some(j) = self.dirty.iter().position(|&x| x == victim) {
                    self.dirty.remove(j);
                    self.write_backs += 1;
                }
            }
        }
        self.recency.push(id);
        if make_dirty && !self.dirty.contains(&id) {
            self.dirty.push(id);
        }
    }

    fn free(&mut self, id: u64) {
        self.recency.retain(|&x| x != id);
        self.dirty.retain(|&x| x != id);
    }

    fn flush(&mut self) {
        self.write_backs += self.dirty.len() as u64;
        for id in self.dirty.drain(..) {
            if let Some(i) = self.recency.iter().position(|&x| x == id) {
                self.recency.remove(i);
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Read(usize),
    Write(usize),
    Free(usize),
    Alloc,
    Flush,
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..24usize).prop_map(Op::Read),
        (0..24usize).prop_map(Op::Write),
        (0..24usize).prop_map(Op::Free),
        Just(Op::Alloc),
        Just(Op::Flush),
    ]
}

proptest! {
    #[test]
    fn reads_match_reference_lru(
        m in 1..6usize,
        ops in proptest::collection::vec(op_strategy(), 1..200),
    ) {
        let mut store: BlockStore<u32> = BlockStore::new(StoreConfig::new(4, m)).unwrap();
        let mut model = RefLru::new(m);
        let mut ids: Vec<u64> = Vec::new();
        let mut live: Vec<bool> = Vec::new();
        for _ in 0..4 {
            ids.push(store.alloc_block());
            live.push(true);
        }
        for op in ops {
            match op {
                Op::Alloc => {
                    ids.push(store.alloc_block());
                    live.push(true);
                }
                Op::Read(i) => {
                    let i = i % ids.len();
                    let r = store.read_block(ids[i]);
                    if live[i] {
                        prop_assert!(r.is_ok());
                        model.touch(ids[i], false);
                    } else {
                        prop_assert!(r.is_err());
                    }
                }
                Op::Write(i) => {
                    let i = i % ids.len();
                    let r = store.write_block(ids[i], vec![i as u32]);
                    if live[i] {
                        prop_assert!(r.is_ok());
                        model.touch(ids[i], true);
                    } else {
                        prop_assert!(r.is_err());
                    }
                }
                Op::Free(i) => {
                    let i = i % ids.len();
                    let r = store.free_block(ids[i]);
                    if live[i] {
                        prop_assert!(r.is_ok());
                        model.free(ids[i]);
                        live[i] = false;
                    } else {
                        prop_assert!(r.is_err());
                    }
                }
                Op::Flush => {
                    store.flush();
                    model.flush();
                }
            }
            let st = store.io_stats();
            prop_assert_eq!(st.reads, model.misses);
            prop_assert_eq!(st.writes, model.write_backs);
            prop_assert_eq!(st.live_blocks, live.iter().filter(|&&l| l).count() as u64);
        }
    }
}
