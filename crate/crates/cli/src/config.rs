//! `key = value` configuration files. Command-line flags take precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

pub const SEED_ENV: &str = "CROWDQA_SEED";
pub const DEFAULT_SEED: u64 = 42;

const KNOWN_KEYS: &[&str] = &[
    "tag",
    "vocab_size",
    "preset",
    "steps",
    "batch_size",
    "learning_rate",
    "answer_only",
    "seed",
    "max_new_tokens",
    "temperature",
    "samples",
    "sample_batch_size",
    "top_k",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Failure::Usage(format!("config line {}: unknown key {key:?}", i + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Runtime(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Failure> {
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|_| Failure::Usage(format!("config: bad value for {key}: {v:?}"))))
            .transpose()
    }

    /// Flag, else config entry, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Flag, config, `CROWDQA_SEED`, then 42.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, Failure> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| Failure::Usage(format!("{SEED_ENV} is not an integer: {v:?}")))?),
            Err(_) => None,
        };
        self.pick(flag, "seed", env.unwrap_or(DEFAULT_SEED))
    }
}
