//! Adapter that runs a user simulator as a subprocess.
//!
//! Wire contract: every argument of `args` (and `command` itself) may hold
//! `{x0}`, `{x1}`, … and `{s}` placeholders, which are replaced by the query
//! coordinates. The process must exit with status 0 and print the scalar
//! output on the last nonempty line of stdout, or write it to `result_file`.

use std::collections::HashMap;
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::acquisition::CostModel;
use crate::mfgp::{Domain, FidelitySpace, InputFidelityPoint};
use crate::model::MultifidelityModel;
use crate::{Error, Result};

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("`{command}` timed out after {timeout_secs} s")]
    Timeout { command: String, timeout_secs: f64 },

    #[error("`{command}` exited with code {code:?}: {stderr}")]
    NonZeroExit {
        command: String,
        code: Option<i32>,
        stderr: String,
    },

    #[error("no number in the output of `{command}`: {output:?}")]
    ParseFailure { command: String, output: String },

    #[error("could not run `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExternalError {
    pub fn command(&self) -> &str {
        match self {
            ExternalError::Timeout { command, .. }
            | ExternalError::NonZeroExit { command, .. }
            | ExternalError::ParseFailure { command, .. }
            | ExternalError::Spawn { command, .. } => command,
        }
    }
}

fn continuous() -> FidelitySpace {
    FidelitySpace::Continuous
}

fn default_timeout() -> f64 {
    60.0
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalModelSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "continuous")]
    pub fidelity: FidelitySpace,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    /// Read the output from this file (relative to `workdir`) instead of stdout.
    #[serde(default)]
    pub result_file: Option<PathBuf>,
    #[serde(default)]
    pub cost: Option<CostModel>,
    /// Concurrent subprocess limit.
    #[serde(default = "one")]
    pub max_processes: usize,
}

impl ExternalModelSpec {
    pub fn domain(&self) -> Result<Domain> {
        Domain::new(self.lower.clone(), self.upper.clone(), self.fidelity.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let domain = self
            .domain()
            .map_err(|e| Error::config("external.lower", e.to_string()))?;
        if self.command.trim().is_empty() {
            return Err(Error::config("external.command", "empty command"));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::config("external.timeout_secs", "must be positive"));
        }
        if self.max_processes == 0 {
            return Err(Error::config("external.max_processes", "must be at least 1"));
        }
        let template = format!("{} {}", self.command, self.args.join(" "));
        let mut needed: Vec<String> = (0..domain.dim()).map(|i| format!("{{x{i}}}")).collect();
        needed.push("{s}".into());
        for p in needed {
            if !template.contains(&p) {
                return Err(Error::config("external.args", format!("missing placeholder {p}")));
            }
        }
        if let Some(c) = &self.cost {
            c.validate(&domain.fidelity().clone())?;
        }
        Ok(())
    }

    fn render(&self, template: &str, x: &[f64], s: f64) -> String {
        let mut out = template.replace("{s}", &s.to_string());
        // highest index first so `{x1}` is not clobbered by a prefix match
        for (i, v) in x.iter().enumerate().rev() {
            out = out.replace(&format!("{{x{i}}}"), &v.to_string());
        }
        out
    }

    /// Command line with the point substituted, for diagnostics.
    pub fn rendered(&self, x: &[f64], s: f64) -> String {
        let mut parts = vec![self.render(&self.command, x, s)];
        parts.extend(self.args.iter().map(|a| self.render(a, x, s)));
        parts.join(" ")
    }
}

fn parse_last_number(text: &str) -> Option<f64> {
    let line = text.lines().rev().map(str::trim).find(|l| !l.is_empty())?;
    line.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

type CacheKey = (Vec<u64>, u64);

/// An external simulator with a per-instance result cache keyed on the exact `(x, s)` bits.
pub struct ExternalModel {
    spec: ExternalModelSpec,
    domain: Domain,
    cache: Mutex<HashMap<CacheKey, f64>>,
    invocations: AtomicUsize,
    slots: Slots,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("command", &self.spec.command)
            .field("invocations", &self.invocations())
            .finish()
    }
}

impl ExternalModel {
    pub fn new(spec: ExternalModelSpec) -> Result<Self> {
        spec.validate()?;
        let domain = spec.domain()?;
        let slots = Slots {
            free: Mutex::new(spec.max_processes),
            cv: Condvar::new(),
        };
        Ok(Self {
            spec,
            domain,
            cache: Mutex::new(HashMap::new()),
            invocations: AtomicUsize::new(0),
            slots,
        })
    }

    pub fn spec(&self) -> &ExternalModelSpec {
        &self.spec
    }

    /// Number of subprocesses started so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    fn run(&self, x: &[f64], s: f64) -> Result<f64, ExternalError> {
        let rendered = self.spec.rendered(x, s);
        let mut cmd = Command::new(self.spec.render(&self.spec.command, x, s));
        cmd.args(self.spec.args.iter().map(|a| self.spec.render(a, x, s)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &self.spec.workdir {
            cmd.current_dir(dir);
        }
        let _slot = self.slots.acquire();
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let mut child = cmd.spawn().map_err(|source| ExternalError::Spawn {
            command: rendered.clone(),
            source,
        })?;
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let timeout = Duration::from_secs_f64(self.spec.timeout_secs);
        let status = match child.wait_timeout(timeout) {
            Ok(Some(status)) => status,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ExternalError::Timeout {
                    command: rendered,
                    timeout_secs: self.spec.timeout_secs,
                });
            }
            Err(source) => {
                return Err(ExternalError::Spawn {
                    command: rendered,
                    source,
                })
            }
        };
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(ExternalError::NonZeroExit {
                command: rendered,
                code: status.code(),
                stderr: err.trim().to_string(),
            });
        }
        let text = match &self.spec.result_file {
            Some(path) => {
                let full = match &self.spec.workdir {
                    Some(dir) => dir.join(path),
                    None => path.clone(),
                };
                std::fs::read_to_string(&full).map_err(|source| ExternalError::Spawn {
                    command: format!("{rendered} (reading {})", full.display()),
                    source,
                })?
            }
            None => out,
        };
        parse_last_number(&text).ok_or(ExternalError::ParseFailure {
            command: rendered,
            output: text.trim().to_string(),
        })
    }

    /// Evaluates through the cache; at most one subprocess per distinct `(x, s)` unless it fails.
    pub fn eval_point(&self, p: &InputFidelityPoint) -> Result<f64> {
        self.domain.check(p)?;
        let key = (p.x.iter().map(|v| v.to_bits()).collect(), p.s.to_bits());
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = self.run(&p.x, p.s)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

impl MultifidelityModel for ExternalModel {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn evaluate(&self, x: &[f64], s: f64) -> Result<f64> {
        self.eval_point(&InputFidelityPoint::new(x.to_vec(), s))
    }
}

/// One-shot evaluation without a shared cache.
pub fn external_eval(spec: &ExternalModelSpec, p: &InputFidelityPoint) -> Result<f64> {
    ExternalModel::new(spec.clone())?.eval_point(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str, d: usize) -> ExternalModelSpec {
        let mut args = vec!["-c".to_string(), script.to_string(), "sh".to_string()];
        args.extend((0..d).map(|i| format!("{{x{i}}}")));
        args.push("{s}".into());
        ExternalModelSpec {
            command: "sh".into(),
            args,
            lower: vec![0.0; d],
            upper: vec![1.0; d],
            fidelity: FidelitySpace::Continuous,
            timeout_secs: 5.0,
            workdir: None,
            result_file: None,
            cost: None,
            max_processes: 1,
        }
    }

    #[test]
    fn renders_placeholders() {
        let mut spec = sh("", 12);
        spec.args = vec!["{x1}".into(), "{x11}".into(), "{s}".into()];
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 100.0).collect();
        assert_eq!(spec.render("{x1},{x11},{s}", &x, 0.5), "0.01,0.11,0.5");
    }

    #[test]
    fn missing_placeholder_is_a_config_error() {
        let mut spec = sh("echo 1", 2);
        spec.args.retain(|a| a != "{x1}");
        match spec.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "external.args"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_last_line() {
        assert_eq!(parse_last_number("log\n  2.5 \n\n"), Some(2.5));
        assert_eq!(parse_last_number("nan"), None);
        assert_eq!(parse_last_number(""), None);
    }

    #[test]
    fn nonzero_exit_code() {
        let m = ExternalModel::new(sh("exit 3", 1)).unwrap();
        match m.evaluate(&[0.5], 0.5) {
            Err(Error::External(ExternalError::NonZeroExit { code, command, .. })) => {
                assert_eq!(code, Some(3));
                assert!(command.contains("0.5"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unparsable_output() {
        let m = ExternalModel::new(sh("echo hello", 1)).unwrap();
        assert!(matches!(
            m.evaluate(&[0.5], 0.5),
            Err(Error::External(ExternalError::ParseFailure { .. }))
        ));
    }

    #[test]
    fn timeout() {
        let mut spec = sh("sleep 5", 1);
        spec.timeout_secs = 0.2;
        let m = ExternalModel::new(spec).unwrap();
        assert!(matches!(
            m.evaluate(&[0.5], 0.5),
            Err(Error::External(ExternalError::Timeout { .. }))
        ));
    }

    #[test]
    fn cache_prevents_second_spawn() {
        let m = ExternalModel::new(sh("echo $1", 1)).unwrap();
        assert_eq!(m.evaluate(&[0.25], 1.0).unwrap(), 0.25);
        assert_eq!(m.evaluate(&[0.25], 1.0).unwrap(), 0.25);
        assert_eq!(m.invocations(), 1);
        m.evaluate(&[0.25], 0.0).unwrap();
        assert_eq!(m.invocations(), 2);
    }

    #[test]
    fn result_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = sh("echo noise; echo $2 > out.txt", 1);
        spec.workdir = Some(dir.path().to_path_buf());
        spec.result_file = Some("out.txt".into());
        assert_eq!(
            external_eval(&spec, &InputFidelityPoint::new(vec![0.1], 0.75)).unwrap(),
            0.75
        );
    }
}
