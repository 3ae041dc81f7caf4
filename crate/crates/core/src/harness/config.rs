// SPDX-License-Identifier: Apache-2.0

//! `key = value` run configuration. `#` starts a comment line; `question`
//! may repeat and keeps its order.

use std::path::PathBuf;
use std::str::FromStr;

use crate::corpus::PathMode;
use crate::messages::{DEFAULT_K_MAX, DEFAULT_N_QUERIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleChoice {
    #[default]
    Rule,
    /// Obeys instructions embedded in corpus files.
    Permissive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportChoice {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output: PathBuf,
    pub k_max: u32,
    pub n_queries: u32,
    /// Derives every key and the ticket nonce. `None` draws one at random.
    pub seed: Option<u64>,
    pub oracle: OracleChoice,
    pub transport: TransportChoice,
    pub path_mode: PathMode,
    pub fixed_time: Option<String>,
    pub questions: Vec<String>,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            output: output.into(),
            k_max: DEFAULT_K_MAX,
            n_queries: DEFAULT_N_QUERIES,
            seed: None,
            oracle: OracleChoice::default(),
            transport: TransportChoice::default(),
            path_mode: PathMode::default(),
            fixed_time: None,
            questions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config line {line}: {reason}")]
pub struct ConfigError {
    pub line: usize,
    pub reason: String,
}

fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key} expects an unsigned integer, got {v:?}"))
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::new("", "");
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |reason: String| ConfigError { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "question" {
                if seen.contains(&key.to_string()) {
                    return Err(err(format!("duplicate key {key}")));
                }
                seen.push(key.to_string());
            }
            match key {
                "corpus" => cfg.corpus = value.into(),
                "output" => cfg.output = value.into(),
                "k_max" => cfg.k_max = parse_num(value, key).map_err(err)?,
                "n_queries" => cfg.n_queries = parse_num(value, key).map_err(err)?,
                "seed" => cfg.seed = Some(parse_num(value, key).map_err(err)?),
                "fixed_time" => cfg.fixed_time = Some(value.to_string()),
                "question" => cfg.questions.push(value.to_string()),
                "oracle" => {
                    cfg.oracle = match value {
                        "rule" => OracleChoice::Rule,
                        "permissive" => OracleChoice::Permissive,
                        _ => return Err(err(format!("unknown oracle {value:?}"))),
                    }
                }
                "transport" => {
                    cfg.transport = match value {
                        "in-process" => TransportChoice::InProcess,
                        "tcp" => TransportChoice::Tcp,
                        _ => return Err(err(format!("unknown transport {value:?}"))),
                    }
                }
                "path_mode" => {
                    cfg.path_mode = match value {
                        "plain" => PathMode::Plain,
                        "hashed" => PathMode::Hashed,
                        _ => return Err(err(format!("unknown path_mode {value:?}"))),
                    }
                }
                _ => return Err(err(format!("unknown key {key}"))),
            }
        }
        for (key, value) in [("corpus", &cfg.corpus), ("output", &cfg.output)] {
            if value.as_os_str().is_empty() {
                return Err(ConfigError {
                    line: 0,
                    reason: format!("missing required key {key}"),
                });
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "\
# audit
corpus = /data/repo
output = out
k_max = 6
n_queries=20
seed = 7
oracle = permissive
transport = tcp
path_mode = hashed
question = Does the file 'a = b' exist?
question = Second?
";
        let c: RunConfig = text.parse().unwrap();
        assert_eq!(c.corpus, PathBuf::from("/data/repo"));
        assert_eq!((c.k_max, c.n_queries, c.seed), (6, 20, Some(7)));
        assert_eq!(c.oracle, OracleChoice::Permissive);
        assert_eq!(c.transport, TransportChoice::Tcp);
        assert_eq!(c.path_mode, PathMode::Hashed);
        assert_eq!(c.questions, vec!["Does the file 'a = b' exist?", "Second?"]);
    }

    #[test]
    fn defaults_apply() {
        let c: RunConfig = "corpus=a\noutput=b\n".parse().unwrap();
        assert_eq!((c.k_max, c.n_queries), (40, 50));
        assert_eq!(c.seed, None);
        assert!(c.questions.is_empty());
    }

    #[test]
    fn errors_name_the_line() {
        let e = "corpus=a\noutput=b\nk_max=lots\n".parse::<RunConfig>().unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!("corpus=a\nnonsense\n".parse::<RunConfig>().unwrap_err().line, 2);
        assert_eq!("corpus=a\ncorpus=b\n".parse::<RunConfig>().unwrap_err().line, 2);
        assert!("corpus=a\n".parse::<RunConfig>().unwrap_err().reason.contains("output"));
        assert!("corpus=a\noutput=b\ncolour=red\n".parse::<RunConfig>().is_err());
    }
}
