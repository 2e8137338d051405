use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::DEFAULT_BINS;

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub bins: usize,
    /// Sinusoid frequencies of the time encoding.
    pub time_freqs: usize,
    /// Weight of the `-log C` regularizer.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            patch: 8,
            dim: 64,
            heads: 4,
            mlp_ratio: 4,
            encoder_depth: 2,
            decoder_depth: 4,
            bins: DEFAULT_BINS,
            time_freqs: 16,
            alpha: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.patch == 0 || self.height % self.patch != 0 || self.width % self.patch != 0 {
            return bad(format!(
                "{}x{} is not a multiple of patch {}",
                self.height, self.width, self.patch
            ));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} does not split into {} heads", self.dim, self.heads));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 || self.mlp_ratio == 0 {
            return bad("depths and mlp ratio must be positive".into());
        }
        if self.bins == 0 || self.time_freqs == 0 {
            return bad("bins and time frequencies must be positive".into());
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidInput(format!("bad value {value:?} for {key}"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match key {
            "height" => self.height = int(value)?,
            "width" => self.width = int(value)?,
            "patch" => self.patch = int(value)?,
            "dim" => self.dim = int(value)?,
            "heads" => self.heads = int(value)?,
            "mlp_ratio" => self.mlp_ratio = int(value)?,
            "encoder_depth" => self.encoder_depth = int(value)?,
            "decoder_depth" => self.decoder_depth = int(value)?,
            "bins" => self.bins = int(value)?,
            "time_freqs" => self.time_freqs = int(value)?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::InvalidInput(format!("unknown model option {key:?}"))),
        }
        Ok(())
    }
}
