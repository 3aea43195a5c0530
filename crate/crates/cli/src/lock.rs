//! Exclusive lock on an output directory for the lifetime of a command.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const LOCK_FILE: &str = ".jmfusion.lock";

#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    // Without /proc (non-Linux) assume the holder is alive.
    let proc = Path::new("/proc");
    !proc.is_dir() || proc.join(pid.to_string()).exists()
}

impl DirLock {
    /// Take the lock or fail with `Locked`. A lock left by a dead process is
    /// taken over.
    pub fn acquire(dir: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{} {}", std::process::id(), command).map_err(|e| CliError::io(&path, e))?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid = holder.split_whitespace().next().and_then(|p| p.parse::<u32>().ok());
                    match pid {
                        Some(p) if !pid_alive(p) => {
                            log::warn!("removing stale lock left by pid {p}");
                            let _ = fs::remove_file(&path);
                        }
                        _ => {
                            return Err(CliError::Locked { dir: dir.to_path_buf(), holder: holder.trim().to_string() })
                        }
                    }
                }
                Err(e) => return Err(CliError::io(&path, e)),
            }
        }
        Err(CliError::Locked { dir: dir.to_path_buf(), holder: "unknown".into() })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
