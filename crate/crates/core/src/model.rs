//! The full tagger: encoder, attention, pair representations and inference.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, Graph, ParamStore, Var};
use crate::corpus::AnnotatedSentence;
use crate::encoders::{word_pair_rep, Attention, Encoder, EncoderConfig, EncoderError, EncoderKind, Vocab};
use crate::grid::{
    decode, encode_grid, grid_from_probabilities, DecodedResult, EncodeWarning, GridError, OpeTag,
    OteTag, Task,
};
use crate::inference::{InferenceConfig, InferenceParams};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("model file {path}: {msg}")]
    File { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub encoder: EncoderConfig,
    pub inference: InferenceConfig,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_encoder(EncoderKind::Cnn, Task::Ope)
    }
}

impl ModelConfig {
    /// Defaults for an encoder, including its default number of turns.
    pub fn for_encoder(kind: EncoderKind, task: Task) -> Self {
        let (domain_dim, turns) = match kind {
            EncoderKind::Cnn => (100, 2),
            EncoderKind::Bilstm => (0, 3),
        };
        ModelConfig {
            task,
            encoder: EncoderConfig {
                kind,
                domain_dim,
                ..EncoderConfig::default()
            },
            inference: InferenceConfig {
                turns,
                ..InferenceConfig::default()
            },
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GtsModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub attention: Attention,
    pub inference: InferenceParams,
}

/// Class index of every gold cell in storage order, plus encode warnings.
pub fn gold_classes(ann: &AnnotatedSentence, task: Task) -> Result<(Vec<usize>, Vec<EncodeWarning>), GridError> {
    Ok(match task {
        Task::Ope => {
            let e = encode_grid::<OpeTag>(ann)?;
            (e.grid.class_indices(), e.warnings)
        }
        Task::Ote => {
            let e = encode_grid::<OteTag>(ann)?;
            (e.grid.class_indices(), e.warnings)
        }
    })
}

/// Argmax grid of a `[cells, |C|]` probability matrix, decoded.
pub fn decode_probabilities<S: Scalar>(probs: &[S], n: usize, task: Task) -> Result<DecodedResult, GridError> {
    Ok(match task {
        Task::Ope => decode(&grid_from_probabilities::<OpeTag, S>(probs, n)?),
        Task::Ote => decode(&grid_from_probabilities::<OteTag, S>(probs, n)?),
    })
}

impl GtsModel {
    /// Registers all parameters in `store`. Initialization order is fixed
    /// (embeddings, encoder, attention, classifier, refinement), so disabling
    /// inference leaves every other initial value unchanged.
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        config: &ModelConfig,
        vocab: Vocab,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let encoder = Encoder::init(store, &config.encoder, vocab.len(), rng)?;
        let d = config.encoder.output_dim();
        let att_dim = match config.encoder.attention_dim {
            0 => d,
            k => k,
        };
        let attention = Attention::init(store, d, att_dim, rng)?;
        let inference = InferenceParams::init(store, 2 * d, config.task.num_tags(), &config.inference, rng)?;
        Ok(GtsModel {
            config: config.clone(),
            vocab,
            encoder,
            attention,
            inference,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    /// Per-cell distributions `p^L` for one sentence, `[num_cells(n), |C|]`.
    pub fn forward<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tokens: &[String],
        train: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let ids = self.vocab.ids(tokens);
        let h = self.encoder.encode(g, store, &ids, self.config.dropout, train, rng)?;
        let (h, _) = self.attention.enhance(g, store, h)?;
        let r = word_pair_rep(g, h)?;
        Ok(self.inference.run(g, store, r, tokens.len())?)
    }

    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, tokens: &[String]) -> Result<DecodedResult, ModelError> {
        let mut g = Graph::new();
        // eval mode draws no random numbers
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = self.forward(&mut g, store, tokens, false, &mut rng)?;
        Ok(decode_probabilities(g.value(p).data(), tokens.len(), self.task())?)
    }

    pub fn save<T: Scalar>(&self, store: &ParamStore<T>, path: &Path) -> Result<(), ModelError> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            params: store.to_checkpoint(),
        };
        let err = |msg: String| ModelError::File {
            path: path.display().to_string(),
            msg,
        };
        let w = fs::File::create(path).map_err(|e| err(e.to_string()))?;
        serde_json::to_writer(BufWriter::new(w), &file).map_err(|e| err(e.to_string()))
    }

    pub fn load<T: Scalar>(path: &Path) -> Result<(Self, ParamStore<T>), ModelError> {
        let err = |msg: String| ModelError::File {
            path: path.display().to_string(),
            msg,
        };
        let r = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let file: ModelFile = serde_json::from_reader(BufReader::new(r)).map_err(|e| err(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(err(format!("unexpected format {:?}", file.format)));
        }
        let vocab_tokens = file.vocab;
        if vocab_tokens.first().map(String::as_str) != Some(crate::encoders::UNK) {
            return Err(err("vocabulary must start with the unknown token".into()));
        }
        let vocab = Vocab::build(vocab_tokens.iter().skip(1).map(String::as_str));
        let mut store = ParamStore::new();
        // throwaway init to get the layout, then overwrite every value
        let model = GtsModel::init(&mut store, &file.config, vocab, &mut ChaCha8Rng::seed_from_u64(0))?;
        let loaded = ParamStore::<T>::from_checkpoint(&file.params)?;
        if loaded.len() != store.len() {
            return Err(err(format!(
                "checkpoint has {} parameters, configuration expects {}",
                loaded.len(),
                store.len()
            )));
        }
        store.load_values_from(&loaded)?;
        Ok((model, store))
    }
}

pub const MODEL_FORMAT: &str = "gts-model";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: ModelConfig,
    vocab: Vec<String>,
    params: Checkpoint,
}
