//! The guest-side contract: which exports a guest must provide and which
//! host imports it may declare.
//!
//! Conformance is decided from a module's import and export sections
//! alone; the std crate extracts those with a Wasm parser and hands them
//! to [`check_conformance`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::TransferError;

/// Host import namespace.
pub const IMPORT_MODULE: &str = "roadrunner";
pub const SEND_TO_HOST: &str = "send_to_host";
pub const ALLOCATE_MEMORY: &str = "allocate_memory";
pub const DEALLOCATE_MEMORY: &str = "deallocate_memory";
pub const RUN: &str = "run";
pub const CHECKSUM: &str = "checksum";
pub const MEMORY: &str = "memory";

/// Optional consumer export returning the checksum computed by the last `run()`.
pub const LAST_CHECKSUM: &str = "last_checksum";
/// Optional producer export `set_params(seed: i64, len: i32)`.
pub const SET_PARAMS: &str = "set_params";

/// Byte offset of the mailbox word holding the delivered region's offset.
pub const MAILBOX_OFFSET: u32 = 8;
/// Byte offset of the mailbox word holding the delivered region's length.
pub const MAILBOX_LEN: u32 = 12;
/// Linear memory below this offset is never handed out by guest allocators.
pub const RESERVED_PREFIX: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValType {
    I32,
    I64,
    F32,
    F64,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncSig {
    pub params: Vec<ValType>,
    pub results: Vec<ValType>,
}

impl FuncSig {
    pub fn new(params: &[ValType], results: &[ValType]) -> Self {
        FuncSig {
            params: params.to_vec(),
            results: results.to_vec(),
        }
    }
}

impl fmt::Display for FuncSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} -> {:?}", self.params, self.results)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExternDesc {
    Func(FuncSig),
    Memory,
    Table,
    Global,
    Tag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportDesc {
    pub module: String,
    pub name: String,
    pub kind: ExternDesc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportDesc {
    pub name: String,
    pub kind: ExternDesc,
}

/// `(name, signature)` for every function export a guest must provide.
pub fn required_exports() -> [(&'static str, FuncSig); 4] {
    use ValType::*;
    [
        (ALLOCATE_MEMORY, FuncSig::new(&[I32], &[I32])),
        (DEALLOCATE_MEMORY, FuncSig::new(&[I32], &[])),
        (RUN, FuncSig::new(&[], &[])),
        (CHECKSUM, FuncSig::new(&[I32, I32], &[I64])),
    ]
}

/// `(name, signature)` for every host function a guest may import from
/// [`IMPORT_MODULE`].
pub fn permitted_imports() -> [(&'static str, FuncSig); 1] {
    [(SEND_TO_HOST, FuncSig::new(&[ValType::I32, ValType::I32], &[]))]
}

/// Decide whether a module with these sections satisfies the guest ABI.
///
/// Requires the four function exports with exact signatures plus an
/// exported `memory`; rejects any import other than
/// `roadrunner.send_to_host(i32, i32)`.
pub fn check_conformance(imports: &[ImportDesc], exports: &[ExportDesc]) -> Result<(), TransferError> {
    for (name, sig) in required_exports() {
        match exports.iter().find(|e| e.name == name) {
            None => return Err(TransferError::abi(format!("missing export `{name}`"))),
            Some(ExportDesc { kind: ExternDesc::Func(found), .. }) if *found == sig => {}
            Some(ExportDesc { kind: ExternDesc::Func(found), .. }) => {
                return Err(TransferError::abi(format!(
                    "export `{name}` has signature {found}, expected {sig}"
                )))
            }
            Some(_) => return Err(TransferError::abi(format!("export `{name}` is not a function"))),
        }
    }
    if !exports
        .iter()
        .any(|e| e.name == MEMORY && e.kind == ExternDesc::Memory)
    {
        return Err(TransferError::abi("missing exported linear memory `memory`"));
    }
    let permitted = permitted_imports();
    for import in imports {
        let allowed = import.module == IMPORT_MODULE
            && permitted
                .iter()
                .any(|(name, sig)| import.name == *name && import.kind == ExternDesc::Func(sig.clone()));
        if !allowed {
            return Err(TransferError::abi(format!(
                "import `{}.{}` is outside the guest ABI",
                import.module, import.name
            )));
        }
    }
    Ok(())
}
