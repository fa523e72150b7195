#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedloc_core::multifloor::{self, UjiDataset};

pub const TINY_CONFIG: &str = r#"
seed = 3

[scenario]
n_clients = 4
n_samples = 40
n_test = 60

[training]
rounds = 3
local_steps = 5
hidden = [8]

[verify]
n_users = 120
n_bins = 5
n_dbs = 12
short_steps = 20

[uji]
data_dir = "uji"
n_clients = 4
compare_floors = [1]
classifier_hidden = [16]
classifier_rounds = 2
classifier_local_steps = 5
regressor_hidden = [8]
regressor_rounds = 2
regressor_local_steps = 5
"#;

pub fn fedloc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedloc"))
}

pub fn run(args: &[&str]) -> Output {
    fedloc().args(args).env("RUST_LOG", "warn").output().expect("spawn fedloc")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes `body` as `config.toml` under `dir`, plus a synthetic dataset in
/// `dir/uji`, and returns the config path.
pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    write_synthetic_uji(&dir.join("uji"), 11);
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

pub fn write_synthetic_uji(dir: &Path, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let (records, _) = multifloor::synthetic_uji(240, 3, 16, 60.0, 40.0, seed);
    let (train, test) = records.split_at(180);
    for (name, part) in [("trainingData.csv", train), ("validationData.csv", test)] {
        let ds = UjiDataset { records: part.to_vec(), origin: (0.0, 0.0) };
        multifloor::write_ujiindoorloc(&ds, -105.0, fs::File::create(dir.join(name)).unwrap()).unwrap();
    }
}

pub fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

/// Relative path and contents of every file under `root`, sorted.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
