//! Global token table.
//!
//! Every token string seen by the parser is mapped to a small integer
//! [`TokenHandle`] so that tree traversal, run-length comparison and frequency
//! counting are integer operations. Slots are reference counted: the frequency
//! maps retain one reference per recorded occurrence and the grouping trees one
//! per static node. When the count drops to zero the string is dropped and the
//! slot id goes onto a LIFO free list for reuse.

use std::fmt;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::{KelpError, Result};

/// Opaque identity of an interned token.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenHandle(u32);

impl TokenHandle {
    pub fn id(self) -> u32 {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_raw(id: u32) -> Self {
        TokenHandle(id)
    }
}

impl fmt::Debug for TokenHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Default)]
struct Slot {
    text: Option<Arc<str>>,
    refs: u64,
}

#[derive(Debug, Default)]
pub struct Interner {
    forward: FxHashMap<Arc<str>, TokenHandle>,
    slots: Vec<Slot>,
    free: Vec<u32>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the live handle for `text`, allocating a slot (refcount 0) if needed.
    pub fn intern(&mut self, text: &str) -> Result<TokenHandle> {
        if text.is_empty() {
            return Err(KelpError::EmptyToken);
        }
        if let Some(&h) = self.forward.get(text) {
            return Ok(h);
        }
        let text: Arc<str> = Arc::from(text);
        let id = match self.free.pop() {
            Some(id) => {
                let slot = &mut self.slots[id as usize];
                debug_assert!(slot.text.is_none() && slot.refs == 0);
                slot.text = Some(text.clone());
                id
            }
            None => {
                let id =
                    u32::try_from(self.slots.len()).map_err(|_| KelpError::invariant("token id space exhausted"))?;
                self.slots.push(Slot { text: Some(text.clone()), refs: 0 });
                id
            }
        };
        let h = TokenHandle(id);
        self.forward.insert(text, h);
        Ok(h)
    }

    /// Looks up a live token without allocating.
    pub fn lookup(&self, text: &str) -> Option<TokenHandle> {
        self.forward.get(text).copied()
    }

    pub fn resolve(&self, h: TokenHandle) -> Result<&str> {
        self.slots.get(h.0 as usize).and_then(|s| s.text.as_deref()).ok_or(KelpError::StaleHandle(h))
    }

    pub fn is_live(&self, h: TokenHandle) -> bool {
        self.resolve(h).is_ok()
    }

    pub fn refcount(&self, h: TokenHandle) -> Result<u64> {
        self.live_slot(h).map(|s| s.refs)
    }

    pub fn retain(&mut self, h: TokenHandle, n: u64) -> Result<()> {
        let slot = self.live_slot_mut(h)?;
        slot.refs += n;
        Ok(())
    }

    /// Drops `n` references. Returns `true` when this released the last one and
    /// the slot was reclaimed.
    pub fn release(&mut self, h: TokenHandle, n: u64) -> Result<bool> {
        let slot = self.live_slot_mut(h)?;
        if slot.refs < n {
            return Err(KelpError::invariant(format!("release of {n} refs on {h:?} holding {}", slot.refs)));
        }
        slot.refs -= n;
        if n == 0 || slot.refs > 0 {
            return Ok(false);
        }
        let text = slot.text.take().expect("live slot has text");
        self.forward.remove(&*text);
        self.free.push(h.0);
        Ok(true)
    }

    pub fn live_count(&self) -> usize {
        self.forward.len()
    }

    /// Iterates live handles with their refcounts, in id order.
    pub fn live(&self) -> impl Iterator<Item = (TokenHandle, u64)> + '_ {
        self.slots.iter().enumerate().filter(|(_, s)| s.text.is_some()).map(|(i, s)| (TokenHandle(i as u32), s.refs))
    }

    fn live_slot(&self, h: TokenHandle) -> Result<&Slot> {
        match self.slots.get(h.0 as usize) {
            Some(s) if s.text.is_some() => Ok(s),
            _ => Err(KelpError::StaleHandle(h)),
        }
    }

    fn live_slot_mut(&mut self, h: TokenHandle) -> Result<&mut Slot> {
        match self.slots.get_mut(h.0 as usize) {
            Some(s) if s.text.is_some() => Ok(s),
            _ => Err(KelpError::StaleHandle(h)),
        }
    }
}
