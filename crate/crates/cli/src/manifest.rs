//! Run manifests: enough recorded state to replay a command exactly.
//!
//! A manifest is a tab-separated key/value text file. Everything in it except
//! the `elapsed_ms` line is a function of the arguments and the input bytes,
//! and so is every artifact it lists.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Drops output-location options, which do not affect any artifact.
pub fn replayable_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub run_id: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// `(path, sha256)` of every input file, in argument order.
    pub inputs: Vec<(String, String)>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub config: Vec<(String, String)>,
    pub elapsed_ms: u128,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    /// Deterministic identifier of a run: arguments, input contents and
    /// library version.
    pub fn run_id(args: &[String], inputs: &[(String, String)]) -> String {
        let mut h = Sha256::new();
        h.update(VERSION.as_bytes());
        for a in args {
            h.update([0u8]);
            h.update(a.as_bytes());
        }
        for (_, digest) in inputs {
            h.update([1u8]);
            h.update(digest.as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.tsv")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# mdrr run manifest\n");
        let mut kv = |k: &str, v: &str| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        kv("run_id", &self.run_id);
        kv("version", VERSION);
        kv("command", &self.command);
        kv("seed", &self.seed.to_string());
        for (path, digest) in &self.inputs {
            kv("input", &format!("{path}\t{digest}"));
        }
        if let Some(n) = self.n {
            kv("n", &n.to_string());
        }
        if let Some(m) = self.m {
            kv("m", &m.to_string());
        }
        for (k, v) in &self.config {
            kv("config", &format!("{k}\t{v}"));
        }
        for a in &self.args {
            kv("arg", a);
        }
        kv("elapsed_ms", &self.elapsed_ms.to_string());
        for a in &self.artifacts {
            kv("artifact", &format!("{}\t{}", a.name, a.sha256));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest {
            run_id: String::new(),
            command: String::new(),
            args: Vec::new(),
            seed: 0,
            inputs: Vec::new(),
            n: None,
            m: None,
            config: Vec::new(),
            elapsed_ms: 0,
            artifacts: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once('\t').with_context(|| format!("manifest line {}: no tab", i + 1))?;
            let pair = || -> Result<(String, String)> {
                let (a, b) = rest.split_once('\t').with_context(|| format!("manifest line {}: expected two fields", i + 1))?;
                Ok((a.to_string(), b.to_string()))
            };
            match key {
                "run_id" => m.run_id = rest.to_string(),
                "version" | "elapsed_ms" => {}
                "command" => m.command = rest.to_string(),
                "seed" => m.seed = rest.parse().context("manifest seed")?,
                "input" => m.inputs.push(pair()?),
                "n" => m.n = Some(rest.parse().context("manifest n")?),
                "m" => m.m = Some(rest.parse().context("manifest m")?),
                "config" => m.config.push(pair()?),
                "arg" => m.args.push(rest.to_string()),
                "artifact" => {
                    let (name, sha256) = pair()?;
                    m.artifacts.push(Artifact { name, sha256 });
                }
                other => bail!("manifest line {}: unknown key {other:?}", i + 1),
            }
        }
        if m.run_id.is_empty() || m.command.is_empty() {
            bail!("manifest lacks run_id or command");
        }
        Ok(m)
    }
}

/// Collects artifacts for one run, each stamped with the run id on its first
/// line, and writes them together with the manifest.
pub struct ArtifactWriter {
    dir: PathBuf,
    run_id: String,
    artifacts: Vec<(String, Vec<u8>)>,
}

impl ArtifactWriter {
    pub fn new(dir: PathBuf, run_id: String) -> Self {
        Self { dir, run_id, artifacts: Vec::new() }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// The first-line reference every artifact carries, without the `# `.
    pub fn stamp(&self) -> String {
        format!("manifest {}", self.run_id)
    }

    /// Adds a text artifact, prefixing the manifest reference.
    pub fn text(&mut self, name: &str, body: &str) {
        let content = format!("# {}\n{body}", self.stamp());
        self.raw(name, content.into_bytes());
    }

    /// Adds an artifact whose bytes already start with the reference.
    pub fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.artifacts.push((name.to_string(), bytes));
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        manifest.artifacts.clear();
        for (name, bytes) in &self.artifacts {
            let path = self.dir.join(name);
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            manifest.artifacts.push(Artifact { name: name.clone(), sha256: sha256_hex(bytes) });
        }
        let path = self.dir.join(Manifest::file_name(&manifest.command));
        std::fs::write(&path, manifest.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
