#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

pub const DT: &str = env!("CARGO_BIN_EXE_dt");

const CONFIG_VARS: [&str; 10] = [
    "DT_SERVER",
    "DT_DATA_ROOT",
    "DT_HOST",
    "DT_PORT",
    "DT_BACKEND",
    "DT_BACKEND_URL",
    "DT_MODEL",
    "DT_EMBEDDING_DIM",
    "DT_RULES_PATH",
    "DT_RESOURCES_PATH",
];

/// `dt` with no inherited service configuration.
pub fn dt() -> Command {
    let mut cmd = Command::new(DT);
    for v in CONFIG_VARS {
        cmd.env_remove(v);
    }
    cmd.env("RUST_LOG", "warn");
    cmd
}

pub struct Server {
    pub child: Child,
    pub url: String,
}

impl Server {
    /// Starts `dt serve` on an ephemeral port over `data_root`.
    pub fn start(data_root: &Path, extra: &[&str]) -> Server {
        let mut child = dt()
            .args(["serve", "--port", "0", "--host", "127.0.0.1", "--data-root"])
            .arg(data_root)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn dt serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .expect("read listening line");
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| {
                let _ = child.kill();
                panic!("unexpected first line from dt serve: {line:?}")
            })
            .to_string();
        Server { child, url }
    }

    pub fn run(&self, args: &[&str]) -> Output {
        dt().arg("--server").arg(&self.url).args(args).output().expect("run dt")
    }

    /// Runs and returns stdout, panicking with stderr on failure.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "dt {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// SIGKILL, no shutdown path.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
