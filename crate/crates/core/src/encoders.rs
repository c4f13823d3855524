//! Per-word contextual vectors and word-pair representations.
//!
//! Two sentence encoders are available: a stacked 1-D CNN over general and
//! domain embeddings, and a bidirectional LSTM. Either output passes through
//! an additive attention layer with a residual connection, and pair `(i, j)`
//! is represented by the concatenation of the two enhanced word vectors.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::grid::cell_coords;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    EmbeddingFile {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Token to embedding-row mapping. Row 0 is the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<unk>";

impl Vocab {
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab {
            tokens: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        };
        for t in tokens {
            if !v.index.contains_key(t) {
                v.index.insert(t.to_string(), v.tokens.len());
                v.tokens.push(t.to_string());
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Reads a text embedding file: a token then whitespace-separated floats on
/// each line. The dimension is taken from the first line.
pub fn load_embedding_file(path: &Path) -> Result<(usize, HashMap<String, Vec<f64>>), EncoderError> {
    let file = fs::File::open(path)?;
    let mut dim = None;
    let mut table = HashMap::new();
    let err = |line: usize, msg: String| EncoderError::EmbeddingFile {
        path: path.display().to_string(),
        line,
        msg,
    };
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(k + 1, format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let d = *dim.get_or_insert(values.len());
        if d == 0 || values.len() != d {
            return Err(err(
                k + 1,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        table.insert(token.to_string(), values);
    }
    Ok((dim.unwrap_or(0), table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Bilstm,
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(EncoderKind::Cnn),
            "bilstm" | "lstm" => Ok(EncoderKind::Bilstm),
            other => Err(format!("unknown encoder {other:?} (expected cnn or bilstm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub general_dim: usize,
    /// Domain embedding width; the CNN needs it, the BiLSTM uses it only when non-zero.
    pub domain_dim: usize,
    pub lstm_hidden: usize,
    /// Output width of each of the two first-layer convolutions.
    pub cnn_branch_width: usize,
    pub cnn_layers: usize,
    pub general_kernel: usize,
    pub domain_kernel: usize,
    pub kernel: usize,
    /// Width of the attention scoring space; 0 means "same as the word vectors".
    pub attention_dim: usize,
    pub freeze_embeddings: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Bilstm,
            general_dim: 300,
            domain_dim: 100,
            lstm_hidden: 50,
            cnn_branch_width: 128,
            cnn_layers: 4,
            general_kernel: 5,
            domain_kernel: 3,
            kernel: 5,
            attention_dim: 0,
            freeze_embeddings: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.general_dim == 0 {
            return bad("general_dim must be positive");
        }
        match self.kind {
            EncoderKind::Cnn => {
                if self.domain_dim == 0 {
                    return bad("the CNN encoder needs domain_dim > 0");
                }
                if self.cnn_layers == 0 || self.cnn_branch_width == 0 {
                    return bad("cnn_layers and cnn_branch_width must be positive");
                }
                if [self.general_kernel, self.domain_kernel, self.kernel].contains(&0) {
                    return bad("kernel widths must be positive");
                }
            }
            EncoderKind::Bilstm => {
                if self.lstm_hidden == 0 {
                    return bad("lstm_hidden must be positive");
                }
            }
        }
        Ok(())
    }

    /// Width of each word vector `h_i`.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Cnn => 2 * self.cnn_branch_width,
            EncoderKind::Bilstm => 2 * self.lstm_hidden,
        }
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<T: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

#[derive(Debug, Clone)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
    width: usize,
}

impl Conv {
    fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let kernel = store.insert(
            &format!("{name}.kernel"),
            glorot(rng, &[width * c_in, c_out], width * c_in, c_out),
        )?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Conv {
            kernel,
            bias,
            width,
        })
    }

    /// Same-padded 1-D convolution over the rows of `x` (`[n, c_in]`).
    fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, AutodiffError> {
        let (n, c) = (g.shape(x)[0], g.shape(x)[1]);
        let (left, right) = ((self.width - 1) / 2, self.width / 2);
        let mut parts = Vec::with_capacity(3);
        if left > 0 {
            parts.push(g.constant(Tensor::zeros(&[left, c])));
        }
        parts.push(x);
        if right > 0 {
            parts.push(g.constant(Tensor::zeros(&[right, c])));
        }
        let padded = if parts.len() == 1 {
            x
        } else {
            g.concat_rows(&parts)?
        };
        let idx: Vec<usize> = (0..n)
            .flat_map(|t| (0..self.width).map(move |k| t + k))
            .collect();
        let windows = g.gather_rows(padded, &idx)?;
        let cols = g.reshape(windows, &[n, self.width * c])?;
        let kernel = g.param(store, self.kernel);
        let bias = g.param(store, self.bias);
        let y = g.matmul(cols, kernel)?;
        g.add(y, bias)
    }
}

#[derive(Debug, Clone)]
struct LstmDirection {
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
}

impl LstmDirection {
    fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(LstmDirection {
            w_x: store.insert(
                &format!("{name}.w_x"),
                glorot(rng, &[input, 4 * hidden], input, 4 * hidden),
            )?,
            w_h: store.insert(
                &format!("{name}.w_h"),
                glorot(rng, &[hidden, 4 * hidden], hidden, 4 * hidden),
            )?,
            bias: store.insert(&format!("{name}.bias"), Tensor::zeros(&[4 * hidden]))?,
        })
    }

    /// Runs the recurrence over `order`, returning hidden states indexed by
    /// sentence position. Gate layout is `[input, forget, cell, output]`.
    fn run<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        hidden: usize,
        order: &[usize],
    ) -> Result<Vec<Var>, AutodiffError> {
        let w_x = g.param(store, self.w_x);
        let w_h = g.param(store, self.w_h);
        let bias = g.param(store, self.bias);
        let xw = g.matmul(x, w_x)?;
        let xw = g.add(xw, bias)?;
        let mut h = g.constant(Tensor::zeros(&[1, hidden]));
        let mut c = g.constant(Tensor::zeros(&[1, hidden]));
        let mut states = vec![h; order.len()];
        for &t in order {
            let xt = g.lookup(xw, t)?;
            let hw = g.matmul(h, w_h)?;
            let gates = g.add(xt, hw)?;
            let i = g.slice_last(gates, 0, hidden)?;
            let f = g.slice_last(gates, hidden, hidden)?;
            let u = g.slice_last(gates, 2 * hidden, hidden)?;
            let o = g.slice_last(gates, 3 * hidden, hidden)?;
            let i = g.sigmoid(i)?;
            let f = g.sigmoid(f)?;
            let u = g.tanh(u)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, u)?;
            c = g.add(keep, write)?;
            let squashed = g.tanh(c)?;
            h = g.mul(o, squashed)?;
            states[t] = h;
        }
        Ok(states)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Cnn { first: [Conv; 2], rest: Vec<Conv> },
    Bilstm { fwd: LstmDirection, bwd: LstmDirection },
}

/// Sentence encoder parameters (embeddings plus CNN or BiLSTM layers).
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    general: ParamId,
    domain: Option<ParamId>,
    body: Body,
}

impl Encoder {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        config: &EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let general = store.insert(
            "embed.general",
            Tensor::uniform(&[vocab_size, config.general_dim], 0.1, rng),
        )?;
        let domain = if config.domain_dim > 0 {
            Some(store.insert(
                "embed.domain",
                Tensor::uniform(&[vocab_size, config.domain_dim], 0.1, rng),
            )?)
        } else {
            None
        };
        if config.freeze_embeddings {
            store.set_frozen(general, true);
            if let Some(d) = domain {
                store.set_frozen(d, true);
            }
        }
        let body = match config.kind {
            EncoderKind::Cnn => {
                let w = config.cnn_branch_width;
                let first = [
                    Conv::init(
                        store,
                        "cnn.l1.general",
                        config.general_kernel,
                        config.general_dim,
                        w,
                        rng,
                    )?,
                    Conv::init(
                        store,
                        "cnn.l1.domain",
                        config.domain_kernel,
                        config.domain_dim,
                        w,
                        rng,
                    )?,
                ];
                let rest = (2..=config.cnn_layers)
                    .map(|l| Conv::init(store, &format!("cnn.l{l}"), config.kernel, 2 * w, 2 * w, rng))
                    .collect::<Result<Vec<_>, _>>()?;
                Body::Cnn { first, rest }
            }
            EncoderKind::Bilstm => {
                let input = config.general_dim + config.domain_dim;
                let h = config.lstm_hidden;
                Body::Bilstm {
                    fwd: LstmDirection::init(store, "lstm.fwd", input, h, rng)?,
                    bwd: LstmDirection::init(store, "lstm.bwd", input, h, rng)?,
                }
            }
        };
        Ok(Encoder {
            config: config.clone(),
            general,
            domain,
            body,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Copies pretrained vectors into the embedding rows of known tokens.
    /// Returns how many rows were replaced.
    pub fn load_pretrained<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        vocab: &Vocab,
        table: &HashMap<String, Vec<f64>>,
        domain: bool,
    ) -> Result<usize, EncoderError> {
        let id = if domain {
            self.domain
                .ok_or_else(|| EncoderError::Config("no domain embedding table".into()))?
        } else {
            self.general
        };
        let width = store.value(id).last_dim();
        let mut replaced = 0;
        for (row, token) in vocab.tokens().iter().enumerate() {
            if let Some(vec) = table.get(token) {
                if vec.len() != width {
                    return Err(EncoderError::Config(format!(
                        "pretrained vectors have {} dims, table expects {width}",
                        vec.len()
                    )));
                }
                let dst = &mut store.value_mut(id).data_mut()[row * width..(row + 1) * width];
                for (d, &v) in dst.iter_mut().zip(vec) {
                    *d = T::lit(v);
                }
                replaced += 1;
            }
        }
        Ok(replaced)
    }

    /// Contextual vectors `[n, output_dim]` for the token ids of one sentence.
    pub fn encode<T: Scalar, R: Rng>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        ids: &[usize],
        dropout: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptySentence);
        }
        let general = g.param(store, self.general);
        let general = g.gather_rows(general, ids)?;
        let general = g.dropout(general, dropout, train, rng)?;
        let domain = match self.domain {
            Some(d) => {
                let table = g.param(store, d);
                let rows = g.gather_rows(table, ids)?;
                Some(g.dropout(rows, dropout, train, rng)?)
            }
            None => None,
        };
        match &self.body {
            Body::Cnn { first, rest } => {
                let domain = domain.expect("validated: CNN has a domain table");
                let a = first[0].apply(g, store, general)?;
                let b = first[1].apply(g, store, domain)?;
                let mut x = g.concat(&[a, b])?;
                x = g.relu(x)?;
                x = g.dropout(x, dropout, train, rng)?;
                for conv in rest {
                    x = conv.apply(g, store, x)?;
                    x = g.relu(x)?;
                    x = g.dropout(x, dropout, train, rng)?;
                }
                Ok(x)
            }
            Body::Bilstm { fwd, bwd } => {
                let x = match domain {
                    Some(d) => g.concat(&[general, d])?,
                    None => general,
                };
                let n = ids.len();
                let h = self.config.lstm_hidden;
                let forward: Vec<usize> = (0..n).collect();
                let backward: Vec<usize> = (0..n).rev().collect();
                let fs = fwd.run(g, store, x, h, &forward)?;
                let bs = bwd.run(g, store, x, h, &backward)?;
                let f = g.concat_rows(&fs)?;
                let b = g.concat_rows(&bs)?;
                Ok(g.concat(&[f, b])?)
            }
        }
    }
}

/// Additive attention with a residual connection:
/// `u_ij = v . (W1 h_i + W2 h_j + b)`, `alpha = softmax_j(u)`,
/// `h~_i = h_i + sum_j alpha_ij h_j`.
#[derive(Debug, Clone)]
pub struct Attention {
    pub w_a1: ParamId,
    pub w_a2: ParamId,
    pub b_a: ParamId,
    pub v: ParamId,
}

impl Attention {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        dim: usize,
        att_dim: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(Attention {
            w_a1: store.insert("attn.w_a1", glorot(rng, &[dim, att_dim], dim, att_dim))?,
            w_a2: store.insert("attn.w_a2", glorot(rng, &[dim, att_dim], dim, att_dim))?,
            b_a: store.insert("attn.b_a", Tensor::zeros(&[att_dim]))?,
            v: store.insert("attn.v", glorot(rng, &[att_dim, 1], att_dim, 1))?,
        })
    }

    /// Returns the enhanced vectors `[n, d]` and the weights `[n, n]`.
    pub fn enhance<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        h: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let n = g.shape(h)[0];
        let w1 = g.param(store, self.w_a1);
        let w2 = g.param(store, self.w_a2);
        let b = g.param(store, self.b_a);
        let v = g.param(store, self.v);

        let left = g.matmul(h, w1)?;
        let left = g.matmul(left, v)?; // [n, 1]
        let right = g.matmul(h, w2)?;
        let right = g.add(right, b)?;
        let right = g.matmul(right, v)?; // [n, 1]

        let ones_row = g.constant(Tensor::full(&[1, n], T::one()));
        let ones_col = g.constant(Tensor::full(&[n, 1], T::one()));
        let rows = g.matmul(left, ones_row)?;
        let right_t = g.transpose(right)?;
        let cols = g.matmul(ones_col, right_t)?;
        let scores = g.add(rows, cols)?;
        let alpha = g.row_softmax(scores)?;
        let context = g.matmul(alpha, h)?;
        let enhanced = g.add(h, context)?;
        Ok((enhanced, alpha))
    }
}

/// `r_ij = [h_i; h_j]` for every `i <= j`, in grid storage order.
pub fn word_pair_rep<T: Scalar>(g: &mut Graph<T>, h: Var) -> Result<Var, AutodiffError> {
    let n = g.shape(h)[0];
    let (left, right): (Vec<usize>, Vec<usize>) = cell_coords(n).into_iter().unzip();
    let hi = g.gather_rows(h, &left)?;
    let hj = g.gather_rows(h, &right)?;
    g.concat(&[hi, hj])
}
