use alloc::string::String;
use core::fmt;

/// Failure classes shared by every fallible shim operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    BoundsViolation,
    GuestAbiMissing,
    FrameMalformed,
    PeerUnreachable,
    HoseUnavailable,
    Timeout,
    RegistryMiss,
    AllocationFailed,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 8] = [
        ErrorKind::BoundsViolation,
        ErrorKind::GuestAbiMissing,
        ErrorKind::FrameMalformed,
        ErrorKind::PeerUnreachable,
        ErrorKind::HoseUnavailable,
        ErrorKind::Timeout,
        ErrorKind::RegistryMiss,
        ErrorKind::AllocationFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::BoundsViolation => "BoundsViolation",
            ErrorKind::GuestAbiMissing => "GuestAbiMissing",
            ErrorKind::FrameMalformed => "FrameMalformed",
            ErrorKind::PeerUnreachable => "PeerUnreachable",
            ErrorKind::HoseUnavailable => "HoseUnavailable",
            ErrorKind::Timeout => "Timeout",
            ErrorKind::RegistryMiss => "RegistryMiss",
            ErrorKind::AllocationFailed => "AllocationFailed",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A classified failure with a human readable detail message.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct TransferError {
    pub kind: ErrorKind,
    pub detail: String,
}

impl TransferError {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        TransferError {
            kind,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn bounds(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::BoundsViolation, detail)
    }

    pub fn abi(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::GuestAbiMissing, detail)
    }

    pub fn malformed(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::FrameMalformed, detail)
    }

    pub fn unreachable(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::PeerUnreachable, detail)
    }

    pub fn timeout(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::Timeout, detail)
    }

    pub fn registry(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::RegistryMiss, detail)
    }

    pub fn alloc(detail: impl Into<String>) -> Self {
        Self::new(ErrorKind::AllocationFailed, detail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn display_carries_kind_and_detail() {
        let e = TransferError::bounds("offset 70000 past 65536");
        assert_eq!(e.to_string(), "BoundsViolation: offset 70000 past 65536");
        assert_eq!(e.kind(), ErrorKind::BoundsViolation);
    }
}
