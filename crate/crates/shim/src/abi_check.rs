//! Static guest ABI conformance: parse the import and export sections and
//! compare them against [`wasmhose_core::abi`].

use wasmhose_core::abi::{self, ExportDesc, ExternDesc, FuncSig, ImportDesc, ValType};
use wasmhose_core::TransferError;
use wasmparser::{types::EntityType, Validator};

fn val_type(v: &wasmparser::ValType) -> ValType {
    match v {
        wasmparser::ValType::I32 => ValType::I32,
        wasmparser::ValType::I64 => ValType::I64,
        wasmparser::ValType::F32 => ValType::F32,
        wasmparser::ValType::F64 => ValType::F64,
        _ => ValType::Other,
    }
}

fn describe(types: wasmparser::types::TypesRef<'_>, ty: EntityType) -> ExternDesc {
    match ty {
        EntityType::Func(id) | EntityType::FuncExact(id) => {
            let f = types[id].unwrap_func();
            ExternDesc::Func(FuncSig {
                params: f.params().iter().map(val_type).collect(),
                results: f.results().iter().map(val_type).collect(),
            })
        }
        EntityType::Memory(_) => ExternDesc::Memory,
        EntityType::Table(_) => ExternDesc::Table,
        EntityType::Global(_) => ExternDesc::Global,
        EntityType::Tag(_) => ExternDesc::Tag,
    }
}

/// Import and export descriptors of a validated module.
pub fn module_sections(wasm: &[u8]) -> Result<(Vec<ImportDesc>, Vec<ExportDesc>), TransferError> {
    let types = Validator::new()
        .validate_all(wasm)
        .map_err(|e| TransferError::abi(format!("invalid wasm module: {e}")))?;
    let types = types.as_ref();
    let imports = types
        .core_imports()
        .into_iter()
        .flatten()
        .map(|(module, name, ty)| ImportDesc {
            module: module.to_string(),
            name: name.to_string(),
            kind: describe(types, ty),
        })
        .collect();
    let exports = types
        .core_exports()
        .into_iter()
        .flatten()
        .map(|(name, ty)| ExportDesc {
            name: name.to_string(),
            kind: describe(types, ty),
        })
        .collect();
    Ok((imports, exports))
}

/// `Ok` when `wasm` satisfies the guest ABI; `GuestAbiMissing` otherwise.
pub fn check_abi(wasm: &[u8]) -> Result<(), TransferError> {
    let (imports, exports) = module_sections(wasm)?;
    abi::check_conformance(&imports, &exports)
}
