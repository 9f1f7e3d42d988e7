//! The three sample guests, assembled from the WAT sources in `guests/`.

use std::path::Path;

use wasmhose_core::TransferError;

const RUNTIME: &str = include_str!("../guests/runtime.wat");
const ECHO: &str = include_str!("../guests/echo.wat");
const PRODUCER: &str = include_str!("../guests/producer.wat");
const CONSUMER: &str = include_str!("../guests/consumer.wat");

/// Prefix for config `wasm` paths naming a built-in sample guest.
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleGuest {
    Echo,
    Producer,
    Consumer,
}

impl SampleGuest {
    pub const ALL: [SampleGuest; 3] = [SampleGuest::Echo, SampleGuest::Producer, SampleGuest::Consumer];

    pub fn name(self) -> &'static str {
        match self {
            SampleGuest::Echo => "echo",
            SampleGuest::Producer => "producer",
            SampleGuest::Consumer => "consumer",
        }
    }

    pub fn from_name(name: &str) -> Option<SampleGuest> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    /// Full module text with the shared runtime spliced in.
    pub fn wat(self) -> String {
        let src = match self {
            SampleGuest::Echo => ECHO,
            SampleGuest::Producer => PRODUCER,
            SampleGuest::Consumer => CONSUMER,
        };
        src.replace(";; @runtime", RUNTIME)
    }

    pub fn wasm(self) -> Vec<u8> {
        wat::parse_str(self.wat()).expect("sample guest sources are valid WAT")
    }
}

/// Read a guest binary. `builtin:<name>` resolves to a sample guest; files
/// ending in `.wat` are assembled.
pub fn load_wasm(path: &str) -> Result<Vec<u8>, TransferError> {
    if let Some(name) = path.strip_prefix(BUILTIN_PREFIX) {
        return SampleGuest::from_name(name)
            .map(SampleGuest::wasm)
            .ok_or_else(|| TransferError::abi(format!("no built-in guest named `{name}`")));
    }
    let bytes = std::fs::read(path).map_err(|e| TransferError::abi(format!("cannot read `{path}`: {e}")))?;
    if Path::new(path).extension().is_some_and(|e| e == "wat") {
        return wat::parse_bytes(&bytes)
            .map(|b| b.into_owned())
            .map_err(|e| TransferError::abi(format!("`{path}` is not valid WAT: {e}")));
    }
    Ok(bytes)
}

/// Write `echo.wasm`, `producer.wasm` and `consumer.wasm` into `dir`.
pub fn write_sample_guests(dir: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    SampleGuest::ALL
        .into_iter()
        .map(|g| {
            let path = dir.join(format!("{}.wasm", g.name()));
            std::fs::write(&path, g.wasm())?;
            Ok(path)
        })
        .collect()
}
