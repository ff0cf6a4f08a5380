#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small deterministic table: two numeric columns, one categorical, a
/// two-valued sensitive column and a label that leans on both.
pub fn synthetic_csv(rows: usize) -> String {
    let mut s = String::from("x1,x2,color,sex,income\n");
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..rows {
        let sex = if next() < 0.6 { "M" } else { "F" };
        let x1 = next() * 4.0 - 2.0;
        let x2 = next() * 10.0;
        let color = ["red", "green", "blue"][i % 3];
        let score = x1 + if sex == "M" { 0.8 } else { -0.4 } + 0.3 * next();
        let label = if score > 0.2 { "yes" } else { "no" };
        // A few holes exercise the missing-value path.
        if i % 97 == 13 {
            writeln!(s, "{x1:.4},?,{color},{sex},{label}").unwrap();
        } else {
            writeln!(s, "{x1:.4},{x2:.4},{color},{sex},{label}").unwrap();
        }
    }
    s
}

pub fn config_toml(data: &str, clients: usize, alphas: Option<&str>, extra_train: &str) -> String {
    let alphas = alphas.map(|a| format!("alphas = {a}\n")).unwrap_or_default();
    format!(
        r#"seeds = [0, 1]
output_dir = "out"

[data]
path = "{data}"
numeric = ["x1", "x2"]
categorical = ["color"]
sensitive = "sex"
sensitive_values = ["F", "M"]
label = "income"
positive = "yes"

[partition]
num_clients = {clients}
{alphas}min_client_records = 10

[net]
hidden = [8, 8]

[train]
rounds = 4
local_epochs = 1
batch_size = 32
learning_rate = 1e-2
evaluate_every = 2
{extra_train}
"#
    )
}

/// A temp dir holding `data.csv` and `exp.toml`.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.csv"), synthetic_csv(600)).unwrap();
        std::fs::write(dir.path().join("exp.toml"), config).unwrap();
        Workspace { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("exp.toml")
    }

    pub fn run(&self, args: &[&str]) -> Output {
        run_with_env(&self.config(), args, &[])
    }
}

pub fn run_with_env(config: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_equifl"));
    cmd.args(&args[..1]).arg("--config").arg(config).args(&args[1..]);
    cmd.env("RUST_LOG", "warn").env("EQUIFL_THREADS", "2");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
