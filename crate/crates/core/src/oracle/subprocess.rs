//! Line-oriented client for an external blackbox process.
//!
//! Wire protocol, one request in flight at a time:
//!
//! ```text
//! request: x_1 x_2 ... x_n\n   (ASCII decimals, 17 significant digits)
//! reply:   F(x, xi)\n           (one ASCII decimal)
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::error::{Error, EvalError, Result};
use crate::format::fmt17;
use crate::oracle::Objective;
use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    /// Per-request deadline for the reply line.
    pub timeout: Duration,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
        }
    }
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
}

impl Process {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Blackbox served by a child process. Serial-only.
pub struct SubprocessObjective {
    n: usize,
    command: String,
    config: ProtocolConfig,
    process: Mutex<Option<Process>>,
}

impl SubprocessObjective {
    /// Launches `command` through `sh -c`.
    pub fn spawn(command: &str, n: usize, config: ProtocolConfig) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "dimension must be positive"));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Ok(Self {
            n,
            command: command.to_string(),
            config,
            process: Mutex::new(Some(Process {
                child,
                stdin,
                replies: rx,
            })),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn request(&self, x: &[f64]) -> Result<f64, EvalError> {
        let mut guard = self.process.lock().unwrap_or_else(|e| e.into_inner());
        let proc = guard
            .as_mut()
            .ok_or_else(|| EvalError::ProcessExited("process is no longer running".into()))?;

        let line = x.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(" ");
        let sent = writeln!(proc.stdin, "{line}").and_then(|_| proc.stdin.flush());
        if let Err(e) = sent {
            let status = describe_exit(&mut proc.child);
            if let Some(p) = guard.take() {
                p.kill();
            }
            return Err(EvalError::ProcessExited(format!("{e}; {status}")));
        }

        match proc.replies.recv_timeout(self.config.timeout) {
            Ok(Ok(reply)) => parse_reply(&reply),
            Ok(Err(e)) => {
                if let Some(p) = guard.take() {
                    p.kill();
                }
                Err(EvalError::Io(e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                if let Some(p) = guard.take() {
                    p.kill();
                }
                Err(EvalError::Timeout(self.config.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = describe_exit(&mut proc.child);
                if let Some(p) = guard.take() {
                    p.kill();
                }
                Err(EvalError::ProcessExited(status))
            }
        }
    }
}

fn describe_exit(child: &mut Child) -> String {
    match child.try_wait() {
        Ok(Some(status)) => format!("exited with {status}"),
        Ok(None) => "closed its output".to_string(),
        Err(e) => e.to_string(),
    }
}

fn parse_reply(reply: &str) -> Result<f64, EvalError> {
    let trimmed = reply.trim();
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(EvalError::Malformed(trimmed.to_string())),
    }
}

impl Objective for SubprocessObjective {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: &[f64], _noise: &mut StreamRng) -> Result<f64, EvalError> {
        self.request(x)
    }

    fn concurrent(&self) -> bool {
        false
    }
}

impl Drop for SubprocessObjective {
    fn drop(&mut self) {
        if let Some(p) = self
            .process
            .get_mut()
            .unwrap_or_else(|e| e.into_inner())
            .take()
        {
            p.kill();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply("6\n").unwrap(), 6.0);
        assert_eq!(parse_reply(" 1.2500000000000000e0 ").unwrap(), 1.25);
        assert!(matches!(parse_reply("nan"), Err(EvalError::Malformed(_))));
        assert!(matches!(parse_reply("inf"), Err(EvalError::Malformed(_))));
        assert!(matches!(parse_reply("six"), Err(EvalError::Malformed(_))));
        assert!(matches!(parse_reply(""), Err(EvalError::Malformed(_))));
    }
}
