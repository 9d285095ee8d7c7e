//! Run configuration: a flat `key = value` file, overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use capsad::capsnet::Architecture;
use capsad::data::{find_dataset, DATA_ROOT_ENV};
use capsad::scoring::find_scorer;
use capsad::{Error, Result};

const KEYS: [&str; 11] = [
    "dataset",
    "data_root",
    "anomalous",
    "seed",
    "epochs",
    "batch_size",
    "cap",
    "scores",
    "out",
    "arch",
    "overwrite",
];

/// Raw settings before defaults are applied. Later layers win.
#[derive(Debug, Clone, Default)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("{origin}:{}: unknown key `{key}`", n + 1)));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.0.insert(key.to_string(), v.to_string());
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("`{key}` must be a non-negative integer, got `{v}`")))
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_root: PathBuf,
    pub anomalous: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cap: Option<usize>,
    pub scores: Vec<String>,
    pub out: PathBuf,
    pub arch: Architecture,
    pub overwrite: bool,
}

impl RunConfig {
    /// Applies defaults: epochs and batch size per dataset, data root from
    /// the environment or `./data`, seed 0, scores `pp,re`.
    pub fn resolve(s: &Settings) -> Result<Self> {
        let dataset = s
            .get("dataset")
            .ok_or_else(|| Error::Config("no dataset given".into()))?;
        let source = find_dataset(dataset)?;
        let anomalous = match s.get("anomalous") {
            None | Some("") => Vec::new(),
            Some(list) => list
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad anomalous class `{c}`")))
                })
                .collect::<Result<_>>()?,
        };
        let scores: Vec<String> = s
            .get("scores")
            .unwrap_or("pp,re")
            .split(',')
            .map(|k| k.trim().to_string())
            .collect();
        for k in &scores {
            find_scorer(k)?;
        }
        let seed = s.number("seed")?.unwrap_or(0);
        let data_root = s
            .get("data_root")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        let out = s.get("out").map(PathBuf::from).unwrap_or_else(|| {
            let tag: Vec<String> = anomalous.iter().map(usize::to_string).collect();
            PathBuf::from(format!("runs/{dataset}-a{}-s{seed}", tag.join("_")))
        });
        let overwrite = match s.get("overwrite") {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => return Err(Error::Config(format!("`overwrite` must be true or false, got `{v}`"))),
        };
        Ok(Self {
            dataset: dataset.to_string(),
            data_root,
            anomalous,
            seed,
            epochs: s.number("epochs")?.unwrap_or(source.default_epochs()),
            batch_size: s.number("batch_size")?.unwrap_or(source.default_batch_size()),
            cap: s.number("cap")?,
            scores,
            out,
            arch: s.get("arch").map_or(Ok(Architecture::Standard), Architecture::parse)?,
            overwrite,
        })
    }
}
