use super::LmError;

/// Shape of a decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub mlp_ratio: usize,
    pub dropout: f32,
}

impl ModelConfig {
    /// Desk-scale preset that trains on a laptop CPU.
    pub fn tiny() -> Self {
        ModelConfig {
            vocab_size: 8192,
            context_length: 256,
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }

    /// GPT-2 small (124M parameters).
    pub fn gpt2_124m() -> Self {
        ModelConfig {
            vocab_size: 50257,
            context_length: 1024,
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            mlp_ratio: 4,
            dropout: 0.1,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "gpt2-124m" => Some(Self::gpt2_124m()),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_mlp(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.mlp_ratio == 0 {
            return bad("sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context_length < 2 {
            return bad("context_length must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    /// Number of learnable scalars, with the output projection tied to the
    /// token embedding.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let dm = self.d_mlp();
        let per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * dm + dm) + (dm * d + d);
        self.vocab_size * d + self.context_length * d + self.n_layers * per_layer + 2 * d
    }
}

/// Optimizer and schedule settings for fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub grad_clip: f32,
    /// Supervise only answer tokens instead of the whole document.
    pub answer_only: bool,
}

/// Learning rate used when training from a fresh initialization.
pub const FRESH_LEARNING_RATE: f32 = 3e-4;
/// Learning rate used when continuing from a checkpoint.
pub const FINETUNE_LEARNING_RATE: f32 = 2e-5;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 4,
            learning_rate: FRESH_LEARNING_RATE,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            answer_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.steps == 0 {
            return Err(LmError::InvalidConfig("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(LmError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LmError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(LmError::InvalidConfig("grad_clip must be positive".into()));
        }
        Ok(())
    }
}
