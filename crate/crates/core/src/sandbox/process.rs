//! Child process plumbing shared by the workflow runtime and nested code runs.

use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread::JoinHandle;

/// Cap on captured stderr per process.
pub const STDERR_CAP: usize = 64 * 1024;

/// Builds a command that runs in its own process group inside `scratch`,
/// with a minimal environment and, when asked, a private network namespace.
pub fn sandboxed_command(argv: &[String], scratch: &Path, isolate_network: bool) -> io::Result<Command> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(scratch)
        .env_clear()
        .env("PATH", std::env::var("PATH").unwrap_or_else(|_| "/usr/bin:/bin".into()))
        .env("HOME", scratch)
        .env("TMPDIR", scratch)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if isolate_network {
        // SAFETY: only async-signal-safe calls between fork and exec.
        unsafe {
            cmd.pre_exec(|| {
                // Best effort: without privileges the call fails and the
                // runtime's own socket guard is the remaining layer.
                libc::unshare(libc::CLONE_NEWNET);
                Ok(())
            });
        }
    }
    Ok(cmd)
}

/// SIGKILLs the child's whole process group and reaps the child. Safe to call
/// after the child exited on its own: an unreaped child keeps its pid, so the
/// group id cannot have been recycled.
pub fn kill_group(child: &mut Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: plain syscall on a process group we created.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
    let _ = child.wait();
}

/// Drains a pipe on a background thread, keeping at most `cap` bytes.
pub fn capture<R: Read + Send + 'static>(mut pipe: R, cap: usize) -> JoinHandle<String> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

/// Number of live (non-zombie) processes in process group `pgid`, read from
/// `/proc`. Zombies are skipped because reaping orphans is up to init.
pub fn group_members(pgid: u32) -> usize {
    let Ok(entries) = std::fs::read_dir("/proc") else { return 0 };
    entries
        .flatten()
        .filter(|e| e.file_name().to_string_lossy().bytes().all(|b| b.is_ascii_digit()))
        .filter_map(|e| std::fs::read_to_string(e.path().join("stat")).ok())
        .filter(|stat| {
            // Fields after the parenthesized command name: state ppid pgrp ...
            let Some(rest) = stat.rfind(')').map(|i| &stat[i + 1..]) else { return false };
            let mut fields = rest.split_whitespace();
            let state = fields.next().unwrap_or("Z");
            let pgrp = fields.nth(1).and_then(|f| f.parse::<u32>().ok());
            state != "Z" && state != "X" && pgrp == Some(pgid)
        })
        .count()
}

pub fn group_alive(pgid: u32) -> bool {
    group_members(pgid) > 0
}
