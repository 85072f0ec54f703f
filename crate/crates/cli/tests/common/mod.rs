#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

pub const ORCID: &str = "0000-0002-1825-0097";

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conflate"))
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("conflate runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Cells of the first table row whose label is `label`.
pub fn table_row(text: &str, label: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .find(|cells| cells.first().map(String::as_str) == Some(label))
        .unwrap_or_else(|| panic!("no {label} row in:\n{text}"))
}

/// A `conflate serve` child process, killed on drop.
pub struct ServeProcess {
    child: Child,
    pub url: String,
}

impl ServeProcess {
    pub fn start(extra: &[&str]) -> Self {
        let mut child = bin()
            .args(["serve", "--port", "0", "--difficulty", "2"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("serve starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Self { child, url }
    }

    pub fn cli(&self, args: &[&str]) -> Output {
        bin()
            .args(args)
            .args(["--node-url", &self.url])
            .output()
            .unwrap()
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn csv_row(doi: &str, sources: &str, common: u64, unique: u64, weighted: u64) -> String {
    format!(
        "author,{ORCID},Sciences,{doi},{sources},{common},{unique},{},{weighted}\n",
        common + unique
    )
}

pub fn csv_body(rows: &[String]) -> String {
    let mut s = conflate_core::report::ENTITY_CSV_HEADER.join(",") + "\n";
    for r in rows {
        s.push_str(r);
    }
    s
}
