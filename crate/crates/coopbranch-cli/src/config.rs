//! Flat key=value config files and flag/file/env precedence.
//!
//! A config file holds one `key = value` pair per line with `#` comments.
//! Keys are spelled exactly like the long flags they mirror (`lambda`,
//! `out-csv`, ...). Flags override file values; unknown keys are rejected so
//! a typo cannot silently fall back to a default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Failure modes the process exit code distinguishes.
#[derive(Debug)]
pub enum Failure {
    /// Bad invocation: exit code 2.
    Usage(String),
    /// Valid invocation that failed while running: exit code 1.
    Runtime(String),
}

impl Failure {
    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    #[must_use]
    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<coopbranch::Error> for Failure {
    fn from(e: coopbranch::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Parsed config file plus bookkeeping of which keys a command consumed.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
    path: Option<PathBuf>,
}

impl FileConfig {
    /// Loads `path` when given; an absent flag means an empty config.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::Usage(format!(
                    "{}:{}: expected `key = value`, got `{line}`",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Failure::Usage(format!(
                    "{}:{}: empty key",
                    path.display(),
                    idx + 1
                )));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(Failure::Usage(format!(
                    "{}:{}: duplicate key `{key}`",
                    path.display(),
                    idx + 1
                )));
            }
        }
        Ok(Self {
            values,
            used: BTreeSet::new(),
            path: Some(path.to_path_buf()),
        })
    }

    /// Resolves one setting: flag value if present, else the file value
    /// parsed as `T`, else `None`. Marks the key as recognized either way.
    pub fn take<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Failure::Usage(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }

    /// Rejects any file key no command consumed. Call after all `take`s.
    pub fn finish(self) -> CliResult<()> {
        let unknown: Vec<&String> = self
            .values
            .keys()
            .filter(|k| !self.used.contains(*k))
            .collect();
        if unknown.is_empty() {
            return Ok(());
        }
        let joined = unknown
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        let place = self
            .path
            .as_ref()
            .map_or_else(|| "config".to_string(), |p| p.display().to_string());
        Err(Failure::Usage(format!("{place}: unknown key(s): {joined}")))
    }
}

/// Unwraps a required setting with a usage error naming both spellings.
pub fn require<T>(value: Option<T>, key: &str) -> CliResult<T> {
    value.ok_or_else(|| {
        Failure::Usage(format!(
            "missing required `{key}` (flag --{key} or config key)"
        ))
    })
}

/// Seed precedence: flag, then config file, then COOPBRANCH_SEED, then 0.
pub fn resolve_seed(file: &mut FileConfig, flag: Option<u64>) -> CliResult<u64> {
    if let Some(seed) = file.take("seed", flag)? {
        return Ok(seed);
    }
    match std::env::var("COOPBRANCH_SEED") {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|e| Failure::Usage(format!("COOPBRANCH_SEED: cannot parse `{raw}`: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(Failure::Usage(format!("COOPBRANCH_SEED: {e}"))),
    }
}

/// Parses `lo:hi:step` into an inclusive grid. The end point is kept when it
/// lands within a half step, so `2.0:3.0:0.1` has eleven points.
pub fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(Failure::Usage(format!(
            "grid `{spec}`: expected `lo:hi:step`"
        )));
    };
    let parse = |s: &str| -> CliResult<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Failure::Usage(format!("grid `{spec}`: bad number `{s}`: {e}")))
    };
    let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);
    if !(lo.is_finite() && hi.is_finite() && step > 0.0 && step.is_finite() && lo <= hi) {
        return Err(Failure::Usage(format!(
            "grid `{spec}`: need finite lo <= hi and step > 0"
        )));
    }
    let mut grid = Vec::new();
    let mut k = 0u32;
    loop {
        let x = lo + f64::from(k) * step;
        if x > hi + step * 0.5 {
            break;
        }
        grid.push(x.min(hi));
        k += 1;
    }
    Ok(grid)
}

/// Parses a comma-separated list of times, e.g. `50,100,200,350,500`.
pub fn parse_times(spec: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let t = part
            .trim()
            .parse::<f64>()
            .map_err(|e| Failure::Usage(format!("times `{spec}`: bad number `{part}`: {e}")))?;
        out.push(t);
    }
    if out.is_empty() {
        return Err(Failure::Usage(format!("times `{spec}`: empty list")));
    }
    Ok(out)
}

/// Parses comma-separated integer walker starts, e.g. `0,1,2`.
pub fn parse_starts(spec: &str) -> CliResult<Vec<i64>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let s = part
            .trim()
            .parse::<i64>()
            .map_err(|e| Failure::Usage(format!("starts `{spec}`: bad integer `{part}`: {e}")))?;
        out.push(s);
    }
    Ok(out)
}

/// Checks a rate is finite and nonnegative at parse time so a bad flag is a
/// usage error rather than a runtime one.
pub fn check_rate(lambda: f64) -> CliResult<f64> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(lambda)
    } else {
        Err(Failure::Usage(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )))
    }
}
