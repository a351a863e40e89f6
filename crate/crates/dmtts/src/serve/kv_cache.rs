//! Paged KV storage: a fixed pool of uniformly sized pages shared by all
//! sessions, and per-session per-(layer, kv-head) plane caches built from
//! pages taken out of the pool.
//!
//! Pages are owned by value: allocation moves them out of the pool's free
//! list into the session, teardown moves them back. Two live sessions can
//! therefore never alias a slot, and the mutex guards only the free list;
//! reads and writes of page contents need no synchronization at all.

use crate::error::{Error, Result};
use std::sync::{Arc, Mutex};

/// Pool shape: every page holds `page_size` positions of one K row and one
/// V row (head_dim wide each) for a single (layer, kv-head) plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub page_size: usize,
    pub n_pages: usize,
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be >= 1".into()));
        }
        if self.n_pages == 0 {
            return Err(Error::Config("n_pages must be >= 1".into()));
        }
        Ok(())
    }
}

/// One fixed-size block of K/V slots. `k` and `v` are `page_size * head_dim`
/// row-major; slot s occupies `s*head_dim..(s+1)*head_dim`.
#[derive(Debug)]
pub struct Page {
    id: u32,
    k: Vec<f64>,
    v: Vec<f64>,
}

impl Page {
    pub fn id(&self) -> u32 {
        self.id
    }
}

#[derive(Debug)]
struct PoolInner {
    free: Vec<Page>,
}

/// Shared page allocator. Cloning shares the same pool.
#[derive(Debug, Clone)]
pub struct PagePool {
    page_size: usize,
    head_dim: usize,
    capacity: usize,
    inner: Arc<Mutex<PoolInner>>,
}

impl PagePool {
    pub fn new(cfg: &PoolConfig, head_dim: usize) -> Result<PagePool> {
        cfg.validate()?;
        if head_dim == 0 {
            return Err(Error::Config("head_dim must be >= 1".into()));
        }
        let slot = cfg.page_size * head_dim;
        let free = (0..cfg.n_pages)
            .map(|id| Page { id: id as u32, k: vec![0.0; slot], v: vec![0.0; slot] })
            .collect();
        Ok(PagePool {
            page_size: cfg.page_size,
            head_dim,
            capacity: cfg.n_pages,
            inner: Arc::new(Mutex::new(PoolInner { free })),
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Pages currently on the free list.
    pub fn available(&self) -> usize {
        self.inner.lock().expect("pool lock").free.len()
    }

    /// Pages currently held by live sessions.
    pub fn in_use(&self) -> usize {
        self.capacity - self.available()
    }

    /// Takes exactly `n` pages or none: a partial grab would let one
    /// admission starve another while still failing itself.
    pub(crate) fn try_alloc(&self, n: usize) -> Option<Vec<Page>> {
        let mut inner = self.inner.lock().expect("pool lock");
        if inner.free.len() < n {
            return None;
        }
        let at = inner.free.len() - n;
        Some(inner.free.split_off(at))
    }

    pub(crate) fn release(&self, pages: impl IntoIterator<Item = Page>) {
        let mut inner = self.inner.lock().expect("pool lock");
        inner.free.extend(pages);
        debug_assert!(inner.free.len() <= self.capacity);
    }
}

/// K/V store for one (layer, kv-head) plane of one session. The page list
/// is the page table: logical position p lives in `pages[p / page_size]`
/// at slot `p % page_size`, so each position maps to exactly one slot.
#[derive(Debug)]
pub struct PlaneCache {
    pages: Vec<Page>,
    page_size: usize,
    head_dim: usize,
    len: usize,
}

impl PlaneCache {
    pub(crate) fn new(page_size: usize, head_dim: usize) -> PlaneCache {
        PlaneCache { pages: Vec::new(), page_size, head_dim, len: 0 }
    }

    /// Positions written so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether appending one more position requires a fresh page.
    pub(crate) fn at_page_boundary(&self) -> bool {
        self.len == self.pages.len() * self.page_size
    }

    pub(crate) fn grant(&mut self, page: Page) {
        debug_assert_eq!(page.k.len(), self.page_size * self.head_dim);
        self.pages.push(page);
    }

    /// Appends one position's K and V rows. Caller must have granted
    /// capacity; crossing the boundary without a page is a logic error.
    pub(crate) fn push(&mut self, k: &[f64], v: &[f64]) {
        assert!(!self.at_page_boundary(), "push without a granted page");
        debug_assert_eq!(k.len(), self.head_dim);
        debug_assert_eq!(v.len(), self.head_dim);
        let page = &mut self.pages[self.len / self.page_size];
        let slot = self.len % self.page_size;
        page.k[slot * self.head_dim..(slot + 1) * self.head_dim].copy_from_slice(k);
        page.v[slot * self.head_dim..(slot + 1) * self.head_dim].copy_from_slice(v);
        self.len += 1;
    }

    pub fn k_at(&self, pos: usize) -> &[f64] {
        debug_assert!(pos < self.len);
        let page = &self.pages[pos / self.page_size];
        let slot = pos % self.page_size;
        &page.k[slot * self.head_dim..(slot + 1) * self.head_dim]
    }

    pub fn v_at(&self, pos: usize) -> &[f64] {
        debug_assert!(pos < self.len);
        let page = &self.pages[pos / self.page_size];
        let slot = pos % self.page_size;
        &page.v[slot * self.head_dim..(slot + 1) * self.head_dim]
    }

    /// K and V slices for one whole page: positions
    /// `page_idx*page_size .. min(len, (page_idx+1)*page_size)`.
    pub(crate) fn page_rows(&self, page_idx: usize) -> (&[f64], &[f64], usize) {
        let start = page_idx * self.page_size;
        let used = self.len.saturating_sub(start).min(self.page_size);
        let page = &self.pages[page_idx];
        (&page.k[..used * self.head_dim], &page.v[..used * self.head_dim], used)
    }

    pub(crate) fn n_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn page_ids(&self) -> Vec<u32> {
        self.pages.iter().map(|p| p.id).collect()
    }

    pub(crate) fn take_pages(&mut self) -> Vec<Page> {
        self.len = 0;
        std::mem::take(&mut self.pages)
    }
}

/// Pages needed to hold `positions` slots at `page_size` per page.
pub fn pages_for(positions: usize, page_size: usize) -> usize {
    positions.div_ceil(page_size)
}
