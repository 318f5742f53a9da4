//! Command implementations behind the `capsim` binary. Each command is a
//! plain function so tests can drive it without a subprocess.

pub mod compare;
pub mod evaluate;
pub mod io;
pub mod pipeline;
pub mod simulate;

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use capsim::llm::{CassetteStore, HttpProvider, LlmClient, Mode, Provider, RetryPolicy, ENV_BASE_URL};

/// Builds a client for `mode`. Replay needs an existing cassette; record
/// creates it on first write; live keeps records in memory only.
pub fn make_client(mode: Mode, cassette: &Path, max_in_flight: usize) -> Result<LlmClient> {
    let provider = || -> Result<Arc<dyn Provider>> {
        let p = HttpProvider::from_env(RetryPolicy::default())
            .with_context(|| format!("mode `{mode}` needs {ENV_BASE_URL} to be set"))?;
        Ok(Arc::new(p))
    };
    let client = match mode {
        Mode::Replay => LlmClient::replay(Arc::new(CassetteStore::load(cassette)?)),
        Mode::Record => LlmClient::new(mode, Some(provider()?), Arc::new(CassetteStore::open_or_create(cassette)?)),
        Mode::Live => LlmClient::new(mode, Some(provider()?), Arc::new(CassetteStore::in_memory())),
    };
    Ok(client.with_max_in_flight(max_in_flight))
}
