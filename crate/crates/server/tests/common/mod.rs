#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use fashionrec_core::catalog::{Catalog, FeatureStore};
use fashionrec_core::embedding::MockEmbedder;
use fashionrec_core::synth::{self, SynthConfig};
use fashionrec_server::{FixedClock, Orchestrator, OrchestratorConfig};
use tempfile::TempDir;

pub const DIM: usize = 32;
pub const T0: u64 = 1_700_000_000;

/// Default synthetic corpus written to `<tmp>/catalog`, server data in `<tmp>/data`.
pub struct Env {
    pub dir: TempDir,
    pub catalog: Arc<Catalog>,
    pub features: Arc<FeatureStore>,
}

impl Env {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        synth::generate(&SynthConfig::default()).write(&dir.path().join("catalog")).unwrap();
        let catalog = Arc::new(Catalog::open_dir(&dir.path().join("catalog")).unwrap());
        let features = Arc::new(FeatureStore::new(Arc::new(MockEmbedder::new(DIM).unwrap())));
        Self { dir, catalog, features }
    }

    pub fn data_dir(&self) -> std::path::PathBuf {
        self.dir.path().join("data")
    }

    pub fn config(&self) -> OrchestratorConfig {
        OrchestratorConfig {
            data_dir: self.data_dir(),
            ..OrchestratorConfig::default()
        }
    }

    pub fn orchestrator(&self) -> Orchestrator {
        self.orchestrator_with(self.config())
    }

    pub fn orchestrator_with(&self, config: OrchestratorConfig) -> Orchestrator {
        Orchestrator::new(self.catalog.clone(), self.features.clone(), config, Box::new(FixedClock(T0))).unwrap()
    }

    pub fn catalog_file(&self, locator: &str) -> Vec<u8> {
        std::fs::read(self.catalog.resolve_path(locator)).unwrap()
    }
}

pub fn golden_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares `actual` with the golden file, rewriting it when UPDATE_GOLDEN is set.
pub fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "golden {name} differs; rerun with UPDATE_GOLDEN=1 if intended");
}
