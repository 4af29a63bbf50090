#![allow(dead_code)]

use std::path::{Path, PathBuf};

use asc::io::write_jsonl;
use asc::pipeline::Pipeline;
use asc::settings::Settings;
use asc::synth::Corpus;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Writes `dataset.jsonl` and `mock.jsonl` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> (PathBuf, PathBuf) {
    let dataset = dir.join("dataset.jsonl");
    let mock = dir.join("mock.jsonl");
    write_jsonl(&dataset, &corpus.dataset).unwrap();
    write_jsonl(&mock, &corpus.fixtures).unwrap();
    (dataset, mock)
}

/// Mock-backed settings with a cache under `work`.
pub fn mock_settings(work: &Path, mock: &Path, m: usize) -> Settings {
    let mut s = Settings {
        mock_fixtures: Some(mock.to_path_buf()),
        cache_dir: work.join("cache"),
        ..Settings::default()
    };
    s.pipeline.m = m;
    s.finish().unwrap()
}

pub fn mock_pipeline(work: &Path, mock: &Path, m: usize, theta: usize) -> Pipeline {
    let mut s = mock_settings(work, mock, m);
    s.pipeline.theta = theta;
    Pipeline::from_settings(s).unwrap()
}
