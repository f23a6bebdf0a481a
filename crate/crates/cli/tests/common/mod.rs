#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shel_core::sim::{generate, DgpConfig, Truth};

pub fn shel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shel"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a generated dataset as `y,cluster,x1..xp` and returns its truth.
pub fn write_fixture(path: &Path, cfg: &DgpConfig) -> Truth {
    let (data, truth) = generate(cfg).expect("fixture");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    let p = data.n_covariates();
    let header: Vec<String> = ["y".to_string(), "cluster".to_string()]
        .into_iter()
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect();
    writeln!(f, "{}", header.join(",")).unwrap();
    for r in 0..data.n_obs() {
        let mut row = vec![format!("{:?}", data.y()[r]), data.labels()[r].to_string()];
        row.extend((0..p).map(|j| format!("{:?}", data.x()[(r, j)])));
        writeln!(f, "{}", row.join(",")).unwrap();
    }
    truth
}

pub fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
