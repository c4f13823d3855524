//! Grid cross-entropy, Adam, and the epoch loop with dev-set early stopping.
//!
//! Sentences are processed one at a time on their own tape and their
//! gradients summed into the batch; there is no padding. Batch members run
//! in parallel but are reduced in input order, so results do not depend on
//! the thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Graph, ParamStore, Tensor, Var};
use crate::corpus::AnnotatedSentence;
use crate::encoders::{load_embedding_file, EncoderError, Vocab};
use crate::eval::{score, EvalError};
use crate::grid::{DecodedResult, GridError};
use crate::model::{gold_classes, GtsModel, ModelConfig, ModelError};
use crate::scalar::Scalar;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training sentence {index}: {source}")]
    Gold { index: usize, source: GridError },
    #[error("non-finite loss at epoch {epoch}, batch {batch}, training sentence {sentence}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        sentence: usize,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("config file {path}: {msg}")]
    ConfigFile { path: String, msg: String },
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

impl From<EncoderError> for TrainError {
    fn from(e: EncoderError) -> Self {
        TrainError::Model(ModelError::Encoder(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Divide each sentence's loss by its cell count.
    pub normalize_loss: bool,
    /// Stop as soon as dev F1 reaches this value.
    pub target_dev_f1: Option<f64>,
    /// Worker threads for batch members; 0 lets the pool decide.
    pub threads: usize,
    pub general_embeddings: Option<PathBuf>,
    pub domain_embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 0.001,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            normalize_loss: false,
            target_dev_f1: None,
            threads: 0,
            general_embeddings: None,
            domain_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let err = |msg: String| TrainError::ConfigFile {
            path: path.display().to_string(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_toml_str(&text).map_err(err)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        // zero is allowed: it freezes every parameter
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.model.dropout));
        }
        self.model.encoder.validate()?;
        Ok(())
    }
}

/// `-sum log p(gold)` over the cells of one sentence, optionally divided by
/// the number of cells. `p` is `[cells, |C|]`.
pub fn grid_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: Var,
    gold: &[usize],
    normalize: bool,
) -> Result<Var, AutodiffError> {
    let picked = g.pick(p, gold)?;
    let logs = g.log(picked, T::lit(PROB_FLOOR))?;
    let total = g.sum(logs)?;
    let factor = if normalize {
        -1.0 / gold.len() as f64
    } else {
        -1.0
    };
    g.scale(total, T::lit(factor))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .ids()
            .map(|id| Tensor::zeros(store.value(id).shape()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let k = id.index();
            let (value, grad) = store.value_and_grad_mut(id);
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub clamped_logs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    /// Training sentences whose gold grid could not represent every span.
    pub encode_warnings: usize,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Equality ignoring wall time.
    pub fn same_run(&self, other: &TrainReport) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_dev_f1.to_bits() == other.best_dev_f1.to_bits()
            && self.encode_warnings == other.encode_warnings
    }

    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }
}

/// The trained model with parameters from the best dev epoch.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: GtsModel,
    pub params: ParamStore<T>,
    pub report: TrainReport,
}

/// Dropout stream for one sentence in one epoch.
fn sentence_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TrainError::Config(format!("thread pool: {e}")))
}

pub fn build_vocab(sentences: &[AnnotatedSentence]) -> Vocab {
    Vocab::build(sentences.iter().flat_map(|s| s.tokens().iter().map(String::as_str)))
}

/// Decodes every sentence with the current parameters.
pub fn predict_all<T: Scalar>(
    model: &GtsModel,
    params: &ParamStore<T>,
    sentences: &[AnnotatedSentence],
) -> Result<Vec<DecodedResult>, ModelError> {
    sentences
        .par_iter()
        .map(|s| model.predict(params, s.tokens()))
        .collect()
}

/// Headline F1 (pair or triplet) on `sentences`.
pub fn evaluate<T: Scalar>(
    model: &GtsModel,
    params: &ParamStore<T>,
    sentences: &[AnnotatedSentence],
) -> Result<f64, TrainError> {
    let preds = predict_all(model, params, sentences)?;
    Ok(score(&preds, sentences, model.task())?.headline_f1())
}

struct SentenceResult<T> {
    loss: f64,
    clamped: usize,
    grads: Gradients<T>,
}

pub fn train<T: Scalar>(
    config: &TrainConfig,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Trained<T>, TrainError> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(TrainError::Config("train and dev sets must be non-empty".into()));
    }
    let started = Instant::now();
    let pool = build_pool(config.threads)?;

    let mut model_config = config.model.clone();
    let general = config
        .general_embeddings
        .as_deref()
        .map(load_embedding_file)
        .transpose()?;
    let domain = config
        .domain_embeddings
        .as_deref()
        .map(load_embedding_file)
        .transpose()?;
    if let Some((dim, _)) = &general {
        model_config.encoder.general_dim = *dim;
    }
    if let Some((dim, _)) = &domain {
        model_config.encoder.domain_dim = *dim;
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::<T>::new();
    let model = GtsModel::init(&mut params, &model_config, build_vocab(train_set), &mut init_rng)?;
    if let Some((_, table)) = &general {
        model.encoder.load_pretrained(&mut params, &model.vocab, table, false)?;
    }
    if let Some((_, table)) = &domain {
        model.encoder.load_pretrained(&mut params, &model.vocab, table, true)?;
    }

    let mut encode_warnings = 0;
    let gold = train_set
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let (classes, warnings) =
                gold_classes(s, model.task()).map_err(|source| TrainError::Gold { index, source })?;
            encode_warnings += usize::from(!warnings.is_empty());
            Ok(classes)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let mut adam = Adam::new(&params, config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = params.clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_f1: f64::NEG_INFINITY,
        encode_warnings,
        wall_time_secs: 0.0,
    };
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut clamped_logs = 0;
        for (batch, members) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<SentenceResult<T>, TrainError>> = pool.install(|| {
                members
                    .par_iter()
                    .map(|&index| {
                        let non_finite = || TrainError::NonFiniteLoss {
                            epoch,
                            batch,
                            sentence: index,
                        };
                        let mut rng = sentence_rng(config.seed, epoch, index);
                        let mut g = Graph::new();
                        let tokens = train_set[index].tokens();
                        let p = match model.forward(&mut g, &params, tokens, true, &mut rng) {
                            Err(ModelError::Autodiff(AutodiffError::NonFinite { .. })) => {
                                return Err(non_finite())
                            }
                            other => other?,
                        };
                        let loss = grid_loss(&mut g, p, &gold[index], config.normalize_loss)
                            .map_err(|e| match e {
                                AutodiffError::NonFinite { .. } => non_finite(),
                                e => e.into(),
                            })?;
                        let value = g.value(loss).data()[0].as_f64();
                        if !value.is_finite() {
                            return Err(non_finite());
                        }
                        Ok(SentenceResult {
                            loss: value,
                            clamped: g.clamped_logs(),
                            grads: g.backward(loss)?,
                        })
                    })
                    .collect()
            });
            params.zero_grad();
            for r in results {
                let r = r?;
                epoch_loss += r.loss;
                clamped_logs += r.clamped;
                params.accumulate(&r.grads);
            }
            adam.step(&mut params);
        }

        let dev_f1 = pool.install(|| evaluate(&model, &params, dev_set))?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss,
            dev_f1,
            clamped_logs,
        };
        on_epoch(&record);
        report.epochs.push(record);

        if dev_f1 > report.best_dev_f1 {
            report.best_dev_f1 = dev_f1;
            report.best_epoch = epoch;
            best.load_values_from(&params)?;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.target_dev_f1.is_some_and(|t| dev_f1 >= t) || since_best >= config.patience {
            break;
        }
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(Trained {
        model,
        params: best,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub turns: usize,
    pub best_dev_f1: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_train_loss: f64,
}

impl AblationRow {
    fn from_report(turns: usize, r: &TrainReport) -> Self {
        AblationRow {
            turns,
            best_dev_f1: r.best_dev_f1,
            best_epoch: r.best_epoch,
            epochs_run: r.epochs.len(),
            final_train_loss: r.epochs.last().map_or(f64::NAN, |e| e.train_loss),
        }
    }
}

/// Trains one model per turn count with the same seed and configuration.
pub fn ablate_inference_times(
    config: &TrainConfig,
    train_set: &[AnnotatedSentence],
    dev_set: &[AnnotatedSentence],
    turns: &[usize],
) -> Result<Vec<(AblationRow, TrainReport)>, TrainError> {
    if turns.is_empty() {
        return Err(TrainError::Config("no turn counts given".into()));
    }
    turns
        .iter()
        .map(|&l| {
            let mut c = config.clone();
            c.model.inference.turns = l;
            let trained = train::<f64>(&c, train_set, dev_set, |_| {})?;
            Ok((AblationRow::from_report(l, &trained.report), trained.report))
        })
        .collect()
}

/// Fixed-width text rendering of an ablation table.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!("{:>5}{:>10}{:>12}{:>8}{:>14}\n", "L", "dev F1", "best epoch", "epochs", "final loss");
    for r in rows {
        out += &format!(
            "{:>5}{:>10.2}{:>12}{:>8}{:>14.4}\n",
            r.turns,
            100.0 * r.best_dev_f1,
            r.best_epoch,
            r.epochs_run,
            r.final_train_loss
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderKind;
    use crate::grid::Task;
    use crate::synthetic::SyntheticCorpus;

    fn small_config() -> TrainConfig {
        let mut model = ModelConfig::for_encoder(EncoderKind::Bilstm, Task::Ope);
        model.encoder.general_dim = 8;
        model.encoder.lstm_hidden = 4;
        model.inference.turns = 1;
        TrainConfig {
            model,
            batch_size: 4,
            max_epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn uniform_loss_is_cells_times_log_tags() {
        for (n, c) in [(1usize, 4usize), (2, 6), (5, 4)] {
            let cells = n * (n + 1) / 2;
            let mut g = Graph::<f64>::new();
            let p = g.constant(Tensor::full(&[cells, c], 1.0 / c as f64));
            let gold: Vec<usize> = (0..cells).map(|k| k % c).collect();
            let loss = grid_loss(&mut g, p, &gold, false).unwrap();
            let want = cells as f64 * (c as f64).ln();
            assert!((g.value(loss).data()[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_loss_is_zero_and_zero_probability_is_clamped() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let loss = grid_loss(&mut g, p, &[0, 1], false).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
        let loss = grid_loss(&mut g, p, &[1, 1], false).unwrap();
        assert!((g.value(loss).data()[0] + PROB_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(g.clamped_logs(), 1);
    }

    #[test]
    fn config_toml_round_trip_and_partial_files() {
        let c = small_config();
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = TrainConfig::from_toml_str("seed = 5\n[model.inference]\nturns = 0\n").unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.model.inference.turns, 0);
        assert_eq!(partial.batch_size, 32);
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = small_config();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.learning_rate = 0.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let sents = SyntheticCorpus::new(3).generate(6);
        let mut c = small_config();
        c.learning_rate = 0.0;
        let trained = train::<f64>(&c, &sents, &sents, |_| {}).unwrap();
        let mut fresh = ParamStore::<f64>::new();
        GtsModel::init(
            &mut fresh,
            &c.model,
            build_vocab(&sents),
            &mut ChaCha8Rng::seed_from_u64(c.seed),
        )
        .unwrap();
        for id in fresh.ids() {
            let a = fresh.value(id).data();
            let b = trained.params.value(id).data();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let sents = SyntheticCorpus::new(4).generate(10);
        let mut c = small_config();
        c.threads = 1;
        let a = train::<f64>(&c, &sents, &sents, |_| {}).unwrap();
        c.threads = 3;
        let b = train::<f64>(&c, &sents, &sents, |_| {}).unwrap();
        assert!(a.report.same_run(&b.report));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn early_stopping_keeps_the_best_epoch() {
        let sents = SyntheticCorpus::new(5).generate(8);
        let mut c = small_config();
        c.max_epochs = 6;
        c.patience = 2;
        let t = train::<f64>(&c, &sents, &sents, |_| {}).unwrap();
        let r = &t.report;
        assert!(r.best_epoch >= 1 && r.best_epoch <= r.epochs.len());
        let best = r.epochs[r.best_epoch - 1].dev_f1;
        assert_eq!(best, r.best_dev_f1);
        assert!(r.epochs[..r.best_epoch].iter().all(|e| e.dev_f1 <= best));
        assert_eq!(evaluate(&t.model, &t.params, &sents).unwrap(), best);
    }

    #[test]
    fn ablation_table_has_one_row_per_setting() {
        let sents = SyntheticCorpus::new(6).generate(6);
        let mut c = small_config();
        c.max_epochs = 1;
        let rows = ablate_inference_times(&c, &sents, &sents, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(rows.len(), 5);
        let text = render_ablation(&rows.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>());
        assert_eq!(text.lines().count(), 6);
        assert!(ablate_inference_times(&c, &sents, &sents, &[]).is_err());
    }
}
