use crate::error::TransferError;

/// An `(offset, length)` window into one instance's linear memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryRegion {
    pub offset: u32,
    pub length: u64,
}

impl MemoryRegion {
    pub const fn new(offset: u32, length: u64) -> Self {
        MemoryRegion { offset, length }
    }

    /// One past the last byte. Computed in u64 so it cannot overflow.
    pub fn end(&self) -> u64 {
        self.offset as u64 + self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn overlaps(&self, other: &MemoryRegion) -> bool {
        (self.offset as u64) < other.end() && (other.offset as u64) < self.end()
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &MemoryRegion) -> bool {
        self.offset <= other.offset && other.end() <= self.end()
    }

    pub fn check_bounds(&self, memory_size: u64) -> Result<(), TransferError> {
        if self.end() > memory_size {
            return Err(TransferError::bounds(alloc::format!(
                "region [{}, {}) exceeds linear memory of {} bytes",
                self.offset,
                self.end(),
                memory_size
            )));
        }
        Ok(())
    }

    /// Bounds check plus the non-empty rule every transfer requires.
    pub fn check_transferable(&self, memory_size: u64) -> Result<(), TransferError> {
        if self.is_empty() {
            return Err(TransferError::bounds("zero-length region cannot be transferred"));
        }
        self.check_bounds(memory_size)
    }

    /// Byte range for slicing a host view of linear memory.
    pub fn as_range(&self) -> core::ops::Range<usize> {
        self.offset as usize..self.end() as usize
    }
}
