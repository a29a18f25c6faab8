#![allow(dead_code)]

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use wirecheck_core::synth::HarnessSpec;

pub const TOKEN: &str = "test-token-7f3a";

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_wirecheck")
}

pub fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run(args: &[&str]) -> Run {
    let out = Command::new(bin()).args(args).output().expect("spawn wirecheck");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_spec(dir: &Path, name: &str, spec: &HarnessSpec) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(spec).unwrap()).unwrap();
    p
}

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub struct Server {
    pub child: Child,
    pub port: u16,
    pub dir: PathBuf,
}

impl Server {
    /// Starts `wirecheck serve` on a free port with state under `dir`, waiting until it answers.
    pub fn start(dir: &Path) -> Server {
        let token_file = dir.join("token");
        if !token_file.exists() {
            std::fs::write(&token_file, format!("{TOKEN}\n")).unwrap();
        }
        let port = free_port();
        let child = Command::new(bin())
            .args(["serve", "--port", &port.to_string()])
            .arg("--profiles-dir")
            .arg(dir.join("profiles"))
            .arg("--auth-token-file")
            .arg(&token_file)
            .arg("--sessions-db")
            .arg(dir.join("db"))
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn server");
        let server = Server { child, port, dir: dir.to_path_buf() };
        let client = reqwest::blocking::Client::new();
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let ok = client.get(server.url("/profiles")).bearer_auth(TOKEN).send().map(|r| r.status().is_success());
            if ok.unwrap_or(false) {
                return server;
            }
            assert!(Instant::now() < deadline, "server did not come up");
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://127.0.0.1:{}{path}", self.port)
    }

    /// SIGKILL: no chance to flush or shut down.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn png_part(bytes: Vec<u8>, name: &str) -> reqwest::blocking::multipart::Part {
    reqwest::blocking::multipart::Part::bytes(bytes).file_name(name.to_string()).mime_str("image/png").unwrap()
}
