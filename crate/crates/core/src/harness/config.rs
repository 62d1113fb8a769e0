use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Algo, NqmixConfig};

/// A full experiment description, read from TOML.
///
/// Every key is optional; omitted keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Optional TOML payoff table for the matrix game; empty means the default table.
    pub payoff_file: String,
    pub algo: String,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Record real elapsed time in the `wall_ms` column. Off by default so that
    /// reruns produce byte-identical CSVs; the manifest always records timing.
    pub record_wall_time: bool,

    pub gamma: f64,
    pub tau_soft: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub batch_episodes: usize,
    pub buffer_capacity: usize,
    pub total_steps: u64,
    pub eval_interval_steps: u64,
    pub eval_episodes: usize,
    pub hidden_width: usize,
    pub epsilon_start: f64,
    pub epsilon_finish: f64,
    pub epsilon_anneal_fraction: f64,
    pub exploration_noise: f64,
    pub stochastic_eval: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = NqmixConfig::default();
        Self {
            env: "matrix".into(),
            payoff_file: String::new(),
            algo: "nqmix".into(),
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            record_wall_time: false,
            gamma: c.gamma,
            tau_soft: c.tau_soft,
            lr_critic: c.lr_critic,
            lr_actor: c.lr_actor,
            batch_episodes: c.batch_episodes,
            buffer_capacity: c.buffer_capacity,
            total_steps: c.total_steps,
            eval_interval_steps: c.eval_interval_steps,
            eval_episodes: c.eval_episodes,
            hidden_width: c.hidden_width,
            epsilon_start: c.epsilon_start,
            epsilon_finish: c.epsilon_finish,
            epsilon_anneal_fraction: c.epsilon_anneal_fraction,
            exploration_noise: c.exploration_noise,
            stochastic_eval: c.stochastic_eval,
        }
    }
}

fn known_keys() -> Vec<String> {
    match toml::Value::try_from(RunConfig::default()) {
        Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => unreachable!("RunConfig serialises to a table"),
    }
}

impl RunConfig {
    /// Parses TOML text. `path` is only used in diagnostics.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::InvalidValue {
            field: "<document>".into(),
            reason: e.message().to_string(),
        })?;
        let known = known_keys();
        if let Some(key) = table.keys().find(|k| !known.contains(k)) {
            return Err(Error::UnknownKey { path: path.to_path_buf(), key: key.clone() });
        }
        let mut config = RunConfig::default();
        for (key, value) in table {
            // Deserialise one field at a time so a type error names its key.
            let mut single = toml::Table::new();
            single.insert(key.clone(), value);
            let partial: RunConfig = toml::Value::Table(single)
                .try_into()
                .map_err(|e: toml::de::Error| Error::InvalidValue { field: key.clone(), reason: e.message().to_string() })?;
            config.take_field(&key, partial);
        }
        config.validate()?;
        Ok(config)
    }

    fn take_field(&mut self, key: &str, from: RunConfig) {
        match key {
            "env" => self.env = from.env,
            "payoff_file" => self.payoff_file = from.payoff_file,
            "algo" => self.algo = from.algo,
            "seeds" => self.seeds = from.seeds,
            "out_dir" => self.out_dir = from.out_dir,
            "record_wall_time" => self.record_wall_time = from.record_wall_time,
            "gamma" => self.gamma = from.gamma,
            "tau_soft" => self.tau_soft = from.tau_soft,
            "lr_critic" => self.lr_critic = from.lr_critic,
            "lr_actor" => self.lr_actor = from.lr_actor,
            "batch_episodes" => self.batch_episodes = from.batch_episodes,
            "buffer_capacity" => self.buffer_capacity = from.buffer_capacity,
            "total_steps" => self.total_steps = from.total_steps,
            "eval_interval_steps" => self.eval_interval_steps = from.eval_interval_steps,
            "eval_episodes" => self.eval_episodes = from.eval_episodes,
            "hidden_width" => self.hidden_width = from.hidden_width,
            "epsilon_start" => self.epsilon_start = from.epsilon_start,
            "epsilon_finish" => self.epsilon_finish = from.epsilon_finish,
            "epsilon_anneal_fraction" => self.epsilon_anneal_fraction = from.epsilon_anneal_fraction,
            "exploration_noise" => self.exploration_noise = from.exploration_noise,
            "stochastic_eval" => self.stochastic_eval = from.stochastic_eval,
            other => unreachable!("key `{other}` passed the known-key check"),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.algo.trim().is_empty() {
            return Err(Error::InvalidValue { field: "algo".into(), reason: "must not be empty".into() });
        }
        self.algo()?;
        if self.env.trim().is_empty() {
            return Err(Error::InvalidValue { field: "env".into(), reason: "must not be empty".into() });
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidValue { field: "seeds".into(), reason: "at least one seed is required".into() });
        }
        self.learner_config().validate()
    }

    pub fn algo(&self) -> Result<Algo> {
        self.algo.parse()
    }

    pub fn payoff_path(&self) -> Option<&Path> {
        (!self.payoff_file.is_empty()).then(|| Path::new(&self.payoff_file))
    }

    pub fn learner_config(&self) -> NqmixConfig {
        NqmixConfig {
            gamma: self.gamma,
            tau_soft: self.tau_soft,
            lr_critic: self.lr_critic,
            lr_actor: self.lr_actor,
            batch_episodes: self.batch_episodes,
            buffer_capacity: self.buffer_capacity,
            total_steps: self.total_steps,
            eval_interval_steps: self.eval_interval_steps,
            eval_episodes: self.eval_episodes,
            hidden_width: self.hidden_width,
            epsilon_start: self.epsilon_start,
            epsilon_finish: self.epsilon_finish,
            epsilon_anneal_fraction: self.epsilon_anneal_fraction,
            exploration_noise: self.exploration_noise,
            stochastic_eval: self.stochastic_eval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn omitted_keys_take_defaults() {
        let c = parse("algo = \"qmix\"\nseeds = [4]\n").unwrap();
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.eval_episodes, 32);
        assert_eq!(c.algo().unwrap(), Algo::Qmix);
        assert_eq!(c.seeds, vec![4]);
    }

    #[test]
    fn diagnostics_are_distinct() {
        assert!(matches!(parse("algo = \"\""), Err(Error::InvalidValue { field, .. }) if field == "algo"));
        assert!(matches!(parse("gama = 0.9"), Err(Error::UnknownKey { key, .. }) if key == "gama"));
        assert!(matches!(parse("gamma = \"high\""), Err(Error::InvalidValue { field, .. }) if field == "gamma"));
        assert!(matches!(parse("gamma = 1.5"), Err(Error::InvalidValue { field, .. }) if field == "gamma"));
        assert!(matches!(parse("seeds = []"), Err(Error::InvalidValue { field, .. }) if field == "seeds"));
        assert!(matches!(
            RunConfig::load(Path::new("/definitely/not/here.toml")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig { algo: "vdn".into(), seeds: vec![7, 8], ..Default::default() };
        assert_eq!(parse(&c.to_toml_string()).unwrap(), c);
    }
}
