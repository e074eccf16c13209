#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use syntheval::mock_server::{self, MockModel, RunningMock};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn workbench_fixture() -> PathBuf {
    fixtures().join("workbench")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A scratch copy of the fixture workspace (templates, lexicons, corpus,
/// mock rules).
pub fn workbench() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&workbench_fixture(), dir.path());
    dir
}

pub fn localhost() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

pub fn mock_model(rule: &str) -> MockModel {
    MockModel::from_rule_file(workbench_fixture().join("rules").join(rule)).unwrap()
}

/// Blind and aware mocks on free localhost ports.
pub async fn spawn_mocks() -> (RunningMock, RunningMock) {
    let blind = mock_server::spawn(mock_model("negation_blind.json"), localhost()).await.unwrap();
    let aware = mock_server::spawn(mock_model("negation_aware.json"), localhost()).await.unwrap();
    (blind, aware)
}

/// Both mocks on a background runtime, for tests that drive the
/// blocking CLI entry point.
pub struct BackgroundMocks {
    pub blind: RunningMock,
    pub aware: RunningMock,
    _rt: tokio::runtime::Runtime,
}

impl BackgroundMocks {
    pub fn start() -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let (blind, aware) = rt.block_on(spawn_mocks());
        Self { blind, aware, _rt: rt }
    }
}

pub fn args<'a>(items: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    std::iter::once("syntheval").chain(items).map(String::from).collect()
}
