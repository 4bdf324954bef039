use serde::{Deserialize, Serialize};

use crate::ParserError;

/// Network dimensions and dropout rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Word embedding size; also the size of the pretrained and character
    /// representations it is summed with.
    pub d_w: usize,
    /// POS embedding size.
    pub d_t: usize,
    /// Character embedding size fed to the character BiLSTM.
    pub d_char: usize,
    /// BiLSTM output size, split evenly over the two directions.
    pub d_h: usize,
    pub rnn_layers: usize,
    pub d_fnn: usize,
    /// Width of the optional external context vectors, 0 when unused.
    pub context_dim: usize,
    pub word_dropout: f64,
    pub pos_dropout: f64,
    pub recurrent_dropout: f64,
    pub edge_dropout: f64,
    pub label_dropout: f64,
    /// Appends a constant 1 to both sides of every bilinear form.
    pub bilinear_bias: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            d_w: 100,
            d_t: 100,
            d_char: 100,
            d_h: 600,
            rnn_layers: 3,
            d_fnn: 600,
            context_dim: 0,
            word_dropout: 0.2,
            pos_dropout: 0.2,
            recurrent_dropout: 0.25,
            edge_dropout: 0.25,
            label_dropout: 0.33,
            bilinear_bias: false,
        }
    }
}

impl NetworkConfig {
    /// Small dimensions for tests and quick experiments.
    pub fn toy() -> Self {
        NetworkConfig {
            d_w: 32,
            d_t: 32,
            d_char: 32,
            d_h: 64,
            d_fnn: 64,
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParserError> {
        let dims = [
            ("d_w", self.d_w),
            ("d_t", self.d_t),
            ("d_char", self.d_char),
            ("d_h", self.d_h),
            ("rnn_layers", self.rnn_layers),
            ("d_fnn", self.d_fnn),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ParserError::Config(format!("{name} must be positive")));
        }
        for (name, v) in [("d_w", self.d_w), ("d_h", self.d_h)] {
            if v % 2 != 0 {
                return Err(ParserError::Config(format!(
                    "{name} must be even to split over two directions, got {v}"
                )));
            }
        }
        let rates = [
            ("word_dropout", self.word_dropout),
            ("pos_dropout", self.pos_dropout),
            ("recurrent_dropout", self.recurrent_dropout),
            ("edge_dropout", self.edge_dropout),
            ("label_dropout", self.label_dropout),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(0.0..1.0).contains(v)) {
            return Err(ParserError::Config(format!("{name} must lie in [0, 1), got {v}")));
        }
        Ok(())
    }
}

/// Which layers the semantic and syntactic tasks share in multitask mode.
/// The embedding layer is always shared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharingTopology {
    pub shared_rnn: bool,
    pub shared_fnn: bool,
    /// One more task-specific BiLSTM layer on top of the shared stack.
    pub task_rnn: bool,
}

impl SharingTopology {
    pub fn validate(&self) -> Result<(), ParserError> {
        if self.task_rnn && !self.shared_rnn {
            return Err(ParserError::Config("task_rnn requires shared_rnn".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// One optimizer step per minibatch, tasks interleaved in proportion
    /// to their batch counts.
    #[default]
    Alternating,
    /// One optimizer step per pair of minibatches, one from each task.
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Approximate number of tokens per minibatch.
    pub token_budget: usize,
    /// Weight of the label loss against the edge loss within a task.
    pub lambda_label: f64,
    pub omega_sem: f64,
    pub omega_syn: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mode: UpdateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            token_budget: 1000,
            lambda_label: 0.5,
            omega_sem: 0.975,
            omega_syn: 0.025,
            max_epochs: 100,
            patience: 5,
            seed: 1,
            mode: UpdateMode::Alternating,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ParserError> {
        let fail = |m: String| Err(ParserError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be a non-negative number, got {}", self.lr));
        }
        if !(self.lambda_label > 0.0 && self.lambda_label < 1.0) {
            return fail(format!("lambda_label must lie in (0, 1), got {}", self.lambda_label));
        }
        if self.omega_sem < 0.0 || self.omega_syn < 0.0 || (self.omega_sem + self.omega_syn - 1.0).abs() > 1e-9 {
            return fail(format!(
                "omega_sem and omega_syn must be non-negative and sum to 1, got {} and {}",
                self.omega_sem, self.omega_syn
            ));
        }
        if self.token_budget == 0 || self.max_epochs == 0 {
            return fail("token_budget and max_epochs must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        NetworkConfig::default().validate().unwrap();
        NetworkConfig::toy().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        SharingTopology::default().validate().unwrap();
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = NetworkConfig {
            edge_dropout: 1.0,
            ..NetworkConfig::default()
        };
        assert!(bad.validate().is_err());
        let odd = NetworkConfig {
            d_h: 63,
            ..NetworkConfig::default()
        };
        assert!(odd.validate().is_err());
        let topo = SharingTopology {
            task_rnn: true,
            ..SharingTopology::default()
        };
        assert!(topo.validate().is_err());
        let weights = TrainConfig {
            omega_syn: 0.5,
            ..TrainConfig::default()
        };
        assert!(weights.validate().is_err());
        let lambda = TrainConfig {
            lambda_label: 1.0,
            ..TrainConfig::default()
        };
        assert!(lambda.validate().is_err());
    }
}
