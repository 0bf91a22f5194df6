//! Engine over a scratch copy of the reference fixtures.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use autocompose::engine::EngineConfig;
use autocompose::{Engine, ManualClock, PriceCatalog, RepositoryPaths};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Copies the reference log, config and catalog into `dir`.
pub fn seed_dir(dir: &Path) -> RepositoryPaths {
    for f in ["transa.txt", "config.txt"] {
        std::fs::copy(fixtures().join(f), dir.join(f)).unwrap();
    }
    RepositoryPaths::in_dir(dir)
}

pub fn reference_engine(dir: &Path, mine_every: usize) -> Engine {
    let paths = seed_dir(dir);
    let catalog = PriceCatalog::load(&fixtures().join("catalog.txt")).unwrap();
    let mut config = EngineConfig::new(paths, catalog);
    config.mine_every = mine_every;
    Engine::open(config, Arc::new(ManualClock::new(1_700_000_000))).unwrap()
}
