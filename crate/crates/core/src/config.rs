//! Flat `key = value` model and training configuration.

use std::fmt::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::embed::Pooling;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {message}")]
    BadValue { key: String, value: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub glove_dim: usize,
    pub bert_dim: usize,
    pub pos_dim: usize,
    pub anonymization_dim: usize,
    pub index_dim: usize,
    pub index_max: usize,
    pub char_dim: usize,
    pub num_filters: usize,
    pub ngram_filter_size: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    /// Zero means the decoder hidden size.
    pub attention_hidden: usize,
    pub edge_hidden: usize,
    pub label_hidden: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub coverage_weight: f64,
    pub beam_size: usize,
    pub encoder_vocab_size: usize,
    pub decoder_vocab_size: usize,
    pub min_count: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub patience: usize,
    pub pooling: Pooling,
    pub source_copy: bool,
    pub target_copy: bool,
    pub max_len: usize,
    /// Stop once dev Smatch reaches this value; above 1 never stops early.
    pub target_smatch: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            glove_dim: 300,
            bert_dim: 0,
            pos_dim: 100,
            anonymization_dim: 50,
            index_dim: 50,
            index_max: 200,
            char_dim: 100,
            num_filters: 100,
            ngram_filter_size: 3,
            encoder_hidden: 512,
            encoder_layers: 2,
            decoder_hidden: 1024,
            decoder_layers: 2,
            attention_hidden: 0,
            edge_hidden: 256,
            label_hidden: 128,
            learning_rate: 0.001,
            max_grad_norm: 5.0,
            coverage_weight: 1.0,
            beam_size: 5,
            encoder_vocab_size: 18000,
            decoder_vocab_size: 12200,
            min_count: 1,
            batch_size: 64,
            epochs: 120,
            dropout: 0.33,
            seed: 1,
            patience: 20,
            pooling: Pooling::Average,
            source_copy: true,
            target_copy: true,
            max_len: 100,
            target_smatch: 2.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.to_string(), value: value.to_string(), message: e.to_string() })
}

macro_rules! fields {
    ($m:ident) => {
        $m! {
            "glove.dim" => glove_dim,
            "bert.dim" => bert_dim,
            "pos.dim" => pos_dim,
            "anonymization.dim" => anonymization_dim,
            "index.dim" => index_dim,
            "index.max" => index_max,
            "charcnn.char_dim" => char_dim,
            "charcnn.num_filters" => num_filters,
            "charcnn.ngram_filter_size" => ngram_filter_size,
            "encoder.hidden_size" => encoder_hidden,
            "encoder.num_layers" => encoder_layers,
            "decoder.hidden_size" => decoder_hidden,
            "decoder.num_layers" => decoder_layers,
            "attention.hidden_size" => attention_hidden,
            "biaffine.edge_hidden_size" => edge_hidden,
            "biaffine.label_hidden_size" => label_hidden,
            "optimizer.learning_rate" => learning_rate,
            "optimizer.max_grad_norm" => max_grad_norm,
            "coverage_loss_weight" => coverage_weight,
            "beam_size" => beam_size,
            "encoder_vocab_size" => encoder_vocab_size,
            "decoder_vocab_size" => decoder_vocab_size,
            "vocab.min_count" => min_count,
            "batch_size" => batch_size,
            "epochs" => epochs,
            "dropout" => dropout,
            "seed" => seed,
            "patience" => patience,
            "pooling" => pooling,
            "model.source_copy" => source_copy,
            "model.target_copy" => target_copy,
            "decoder.max_len" => max_len,
            "target_smatch" => target_smatch,
        }
    };
}

macro_rules! setter {
    ($($key:literal => $field:ident),* $(,)?) => {
        fn set_field(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
            match key {
                $($key => self.$field = parse(key, value)?,)*
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
            Ok(())
        }

        fn entries(&self) -> Vec<(&'static str, String)> {
            vec![$(($key, self.$field.to_string())),*]
        }
    };
}

impl Config {
    fields!(setter);

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.set_field(key.trim(), value.trim())
    }

    /// Defaults overridden by the `key = value` lines of `text`. Blank
    /// lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1 });
            };
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{} = {}", k, v);
        }
        out
    }

    pub fn attention_size(&self) -> usize {
        if self.attention_hidden == 0 {
            self.decoder_hidden
        } else {
            self.attention_hidden
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("glove.dim", self.glove_dim),
            ("pos.dim", self.pos_dim),
            ("anonymization.dim", self.anonymization_dim),
            ("index.dim", self.index_dim),
            ("index.max", self.index_max),
            ("charcnn.char_dim", self.char_dim),
            ("charcnn.num_filters", self.num_filters),
            ("charcnn.ngram_filter_size", self.ngram_filter_size),
            ("encoder.hidden_size", self.encoder_hidden),
            ("encoder.num_layers", self.encoder_layers),
            ("decoder.hidden_size", self.decoder_hidden),
            ("biaffine.edge_hidden_size", self.edge_hidden),
            ("biaffine.label_hidden_size", self.label_hidden),
            ("beam_size", self.beam_size),
            ("batch_size", self.batch_size),
            ("vocab.min_count", self.min_count),
            ("decoder.max_len", self.max_len),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{} must be positive", k)));
        }
        if self.decoder_hidden != 2 * self.encoder_hidden {
            return Err(ConfigError::Invalid("decoder.hidden_size must be twice encoder.hidden_size".into()));
        }
        if self.decoder_layers != self.encoder_layers {
            return Err(ConfigError::Invalid("decoder.num_layers must equal encoder.num_layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::Invalid("dropout must be in [0, 1)".into()));
        }
        if self.coverage_weight < 0.0 || self.learning_rate < 0.0 || self.max_grad_norm <= 0.0 {
            return Err(ConfigError::Invalid("coverage weight and learning rate must be nonnegative, max_grad_norm positive".into()));
        }
        Ok(())
    }
}
