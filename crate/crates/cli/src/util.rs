//! Run plumbing shared by every subcommand: output-directory locking,
//! config echoing, thread-pool setup, and exit-code mapping.

use std::fs;
use std::path::{Path, PathBuf};

use sacropipe_core::{Error, Result};

/// Exclusive lock on an output directory for the duration of a stage.
/// The lock file is removed on drop; a leftover lock from a crashed run
/// must be removed manually (the error says so).
pub struct RunGuard {
    lock_path: PathBuf,
}

impl RunGuard {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let lock_path = out_dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(_) => Ok(Self { lock_path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory is locked by {}; another stage may be running \
                 (remove the file if it is stale)",
                lock_path.display()
            ))),
            Err(e) => Err(Error::io(&lock_path, e)),
        }
    }
}

impl Drop for RunGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock_path);
    }
}

/// Serialize a value as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Every run records exactly what it was invoked with.
pub fn write_config_echo(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    inputs: serde_json::Value,
) -> Result<()> {
    let echo = serde_json::json!({
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": inputs,
    });
    write_json(&out_dir.join("config_echo.json"), &echo)
}

/// Load a TOML config file, or fall back to `T::default()`.
pub fn load_toml_config<T>(path: Option<&Path>) -> Result<T>
where
    T: serde::de::DeserializeOwned + Default,
{
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let body = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Exit-code contract: 0 success, 2 config error, 3 upstream artifact
/// missing, 4 numerical failure, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidSpec(_)
        | Error::InvalidParam(_)
        | Error::Schedule(_)
        | Error::Split(_) => 2,
        Error::UpstreamMissing { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

/// Honor `SACROPIPE_THREADS` before any parallel work starts.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SACROPIPE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("SACROPIPE_THREADS={v} is not a thread count")))?;
        if n == 0 {
            return Err(Error::Config("SACROPIPE_THREADS must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
