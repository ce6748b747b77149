use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Most recent output of each cacheable block, stored detached and pre-residual.
#[derive(Clone, Debug)]
pub struct Cache {
    slots: Vec<Option<Tensor>>,
    stats: CacheStats,
}

/// Block-level instrumentation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub computed: usize,
    pub reused: usize,
}

impl Cache {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            slots: vec![None; n_blocks],
            stats: CacheStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn fill_mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn is_full(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn slot(&self, i: usize) -> Option<&Tensor> {
        self.slots.get(i).and_then(Option::as_ref)
    }

    /// Reads slot `i`, checking it is filled and shaped like `expected`.
    pub fn read(&mut self, i: usize, expected: &[usize]) -> Result<&Tensor> {
        let limit = self.slots.len();
        let slot = self
            .slots
            .get(i)
            .ok_or(Error::IndexOutOfRange { what: "cache slot", index: i, limit })?
            .as_ref()
            .ok_or(Error::CacheSlotEmpty(i))?;
        if slot.shape() != expected {
            return Err(Error::CacheBatch {
                slot: i,
                cached: slot.shape().to_vec(),
                requested: expected.to_vec(),
            });
        }
        self.stats.reused += 1;
        Ok(slot)
    }

    pub fn write(&mut self, i: usize, value: Tensor) -> Result<()> {
        let limit = self.slots.len();
        let slot = self
            .slots
            .get_mut(i)
            .ok_or(Error::IndexOutOfRange { what: "cache slot", index: i, limit })?;
        *slot = Some(value.detach());
        Ok(())
    }

    pub(crate) fn record_compute(&mut self) {
        self.stats.computed += 1;
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Returns the counters accumulated since the last call and resets them.
    pub fn take_stats(&mut self) -> CacheStats {
        std::mem::take(&mut self.stats)
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
        self.stats = CacheStats::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_slot_read_fails() {
        let mut c = Cache::new(2);
        assert!(matches!(c.read(0, &[1]), Err(Error::CacheSlotEmpty(0))));
        assert!(matches!(c.read(5, &[1]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn write_then_read_and_count() {
        let mut c = Cache::new(2);
        c.write(1, Tensor::full(&[2, 3], 1.5).with_grad()).unwrap();
        assert_eq!(c.fill_mask(), vec![false, true]);
        assert!(!c.slot(1).unwrap().requires_grad());
        assert_eq!(c.read(1, &[2, 3]).unwrap().data()[0], 1.5);
        assert!(matches!(c.read(1, &[1, 3]), Err(Error::CacheBatch { .. })));
        assert_eq!(c.take_stats(), CacheStats { computed: 0, reused: 1 });
        assert_eq!(c.stats(), CacheStats::default());
    }
}
