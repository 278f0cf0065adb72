use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, GlobalArgs, TOOL_VERSION};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Header shared by every JSON report.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub seed: u64,
    pub config: &'a C,
    pub result: &'a R,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the compact JSON serialization of the resolved config.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

pub fn envelope<'a, C: Serialize, R: Serialize>(
    command: &'a str,
    seed: u64,
    config: &'a C,
    result: &'a R,
) -> Envelope<'a, C, R> {
    Envelope {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: "absrate",
        tool_version: TOOL_VERSION,
        command,
        config_hash: config_hash(config),
        seed,
        config,
        result,
    }
}

/// A CSV table preceded by `#` provenance lines.
pub struct Table<'a> {
    pub header: &'a str,
    pub rows: Vec<String>,
}

impl Table<'_> {
    pub fn render(&self, command: &str, hash: &str, seed: u64) -> String {
        let mut s = format!("# absrate {TOOL_VERSION} command={command} config_hash={hash} seed={seed}\n");
        s.push_str(self.header);
        s.push('\n');
        for row in &self.rows {
            s.push_str(row);
            s.push('\n');
        }
        s
    }
}

/// Where reports go: files under an output directory, and optionally standard output.
pub struct Sink {
    dir: Option<PathBuf>,
    stdout: bool,
}

impl Sink {
    pub fn new(args: &GlobalArgs) -> Self {
        let dir = match (&args.out, args.stdout) {
            (Some(d), _) => Some(d.clone()),
            (None, true) => None,
            (None, false) => Some(PathBuf::from("out")),
        };
        Self { dir, stdout: args.stdout }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn write_file(&self, name: &str, text: &str) -> Result<(), CliError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|source| CliError::Write { path, source })
    }

    /// The main report of a command; also echoed on standard output under `--stdout`.
    pub fn report<C: Serialize, R: Serialize>(&self, name: &str, env: &Envelope<'_, C, R>) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(env).expect("report serializes");
        text.push('\n');
        if self.stdout {
            print!("{text}");
        }
        self.write_file(name, &text)
    }

    pub fn table<C: Serialize, R: Serialize>(
        &self,
        name: &str,
        env: &Envelope<'_, C, R>,
        table: &Table<'_>,
    ) -> Result<(), CliError> {
        self.write_file(name, &table.render(env.command, &env.config_hash, env.seed))
    }

    pub fn raw(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_file(name, text)
    }
}
