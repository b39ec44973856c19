//! Run manifests and the stderr logger.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{Level, LevelFilter, Log, Metadata, Record};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Line-delimited JSON when verbose, plain `warning:`/`error:` lines
/// otherwise.
struct StderrLogger {
    json: bool,
}

impl Log for StderrLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        self.json || m.level() <= Level::Warn
    }

    fn log(&self, r: &Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let mut err = std::io::stderr().lock();
        let _ = if self.json {
            writeln!(
                err,
                "{}",
                json!({ "level": r.level().as_str().to_lowercase(), "target": r.target(), "message": r.args().to_string() })
            )
        } else {
            let label = if r.level() == Level::Warn { "warning" } else { "error" };
            writeln!(err, "{label}: {}", r.args())
        };
    }

    fn flush(&self) {}
}

pub fn init_logging(verbose: bool) {
    let logger = Box::new(StderrLogger { json: verbose });
    if log::set_boxed_logger(logger).is_ok() {
        log::set_max_level(if verbose { LevelFilter::Debug } else { LevelFilter::Warn });
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Digest of a file, or of a directory's sorted (relative path, digest)
/// listing.
pub fn digest(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut entries = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".run.json") {
                let rel = p.strip_prefix(path).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                entries.push((rel, hash_file(&p)?));
            }
        }
    }
    entries.sort();
    let mut h = Sha256::new();
    for (rel, d) in entries {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(d.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

/// Everything needed to repeat a run: the arguments, seed, input digests
/// and tool version. Contains no timestamps so repeated runs match.
pub struct RunManifest {
    pub subcommand: &'static str,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<Value> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok(json!({ "path": p.to_string_lossy(), "sha256": digest(p)? })))
            .collect::<Result<Vec<_>>>()?;
        Ok(json!({
            "tool": "synthherd",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "args": self.args,
            "seed": self.seed,
            "inputs": inputs,
            "outputs": self.outputs.iter().map(|p| p.to_string_lossy()).collect::<Vec<_>>(),
        }))
    }

    /// Writes `<output>.run.json` next to each output.
    pub fn write(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_json()?)?;
        text.push('\n');
        for out in &self.outputs {
            let path = run_path(out);
            fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn run_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
