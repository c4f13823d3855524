//! Iterative refinement of per-cell tag distributions.
//!
//! Turn 0 classifies each pair representation directly. Every later turn
//! appends the max-pooled predictions of the two words involved to the cell
//! features, applies an affine map, and classifies again. All cells update
//! from the previous turn's snapshot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::encoders::glorot;
use crate::grid::{cell_coords, cell_index};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Number of refinement turns `L`.
    pub turns: usize,
    /// When false no refinement weights exist and `turns` is ignored.
    pub enabled: bool,
    /// Separate `(W_q, b_q)` for each turn instead of one shared pair.
    pub per_turn_weights: bool,
    /// Leave cell `(i, j)` itself out of the row and column max-pooling.
    pub exclude_current_cell: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            turns: 3,
            enabled: true,
            per_turn_weights: false,
            exclude_current_cell: false,
        }
    }
}

impl InferenceConfig {
    pub fn effective_turns(&self) -> usize {
        if self.enabled {
            self.turns
        } else {
            0
        }
    }
}

/// `(z, p)` for every upper-triangular cell, rows in grid storage order.
#[derive(Debug, Clone, Copy)]
pub struct GridState {
    pub z: Var,
    pub p: Var,
    pub turn: usize,
}

#[derive(Debug, Clone)]
pub struct InferenceParams {
    pub w_s: ParamId,
    pub b_s: ParamId,
    /// One `(W_q, b_q)` when shared, one per turn otherwise, none when disabled.
    pub refine: Vec<(ParamId, ParamId)>,
    pub config: InferenceConfig,
    pub num_tags: usize,
    pub z_dim: usize,
}

/// `dim(q) = dim(z) + 3 |C|`.
pub fn q_dim(z_dim: usize, num_tags: usize) -> usize {
    z_dim + 3 * num_tags
}

impl InferenceParams {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        z_dim: usize,
        num_tags: usize,
        config: &InferenceConfig,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let w_s = store.insert(
            "infer.w_s",
            glorot(rng, &[z_dim, num_tags], z_dim, num_tags),
        )?;
        let b_s = store.insert("infer.b_s", Tensor::zeros(&[num_tags]))?;
        let q = q_dim(z_dim, num_tags);
        let sets = match (config.enabled, config.per_turn_weights) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => config.turns,
        };
        let mut refine = Vec::with_capacity(sets);
        for t in 0..sets {
            let prefix = if config.per_turn_weights {
                format!("infer.t{}", t + 1)
            } else {
                "infer".to_string()
            };
            let w_q = store.insert(&format!("{prefix}.w_q"), glorot(rng, &[q, z_dim], q, z_dim))?;
            let b_q = store.insert(&format!("{prefix}.b_q"), Tensor::zeros(&[z_dim]))?;
            refine.push((w_q, b_q));
        }
        Ok(InferenceParams {
            w_s,
            b_s,
            refine,
            config: config.clone(),
            num_tags,
            z_dim,
        })
    }

    fn classify<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
    ) -> Result<Var, AutodiffError> {
        let w_s = g.param(store, self.w_s);
        let b_s = g.param(store, self.b_s);
        let logits = g.matmul(z, w_s)?;
        let logits = g.add(logits, b_s)?;
        g.row_softmax(logits)
    }

    /// `z^0 = r`, `p^0 = softmax(r W_s + b_s)`.
    pub fn initial_state<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        r: Var,
    ) -> Result<GridState, AutodiffError> {
        let p = self.classify(g, store, r)?;
        Ok(GridState { z: r, p, turn: 0 })
    }

    /// One synchronous turn over all cells of an `n`-word sentence.
    pub fn refine_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        state: GridState,
        n: usize,
    ) -> Result<GridState, AutodiffError> {
        let set = if self.config.per_turn_weights {
            state.turn
        } else {
            0
        };
        let &(w_q, b_q) = self.refine.get(set).ok_or_else(|| {
            AutodiffError::InvalidArgument(format!("no refinement weights for turn {}", state.turn + 1))
        })?;
        let (p_i, p_j) = row_col_evidence(g, state.p, n, self.config.exclude_current_cell)?;
        let q = g.concat(&[state.z, p_i, p_j, state.p])?;
        let w_q = g.param(store, w_q);
        let b_q = g.param(store, b_q);
        let z = g.matmul(q, w_q)?;
        let z = g.add(z, b_q)?;
        let p = self.classify(g, store, z)?;
        Ok(GridState {
            z,
            p,
            turn: state.turn + 1,
        })
    }

    /// Final distributions `p^L`, shape `[num_cells(n), |C|]`.
    pub fn run<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        r: Var,
        n: usize,
    ) -> Result<Var, AutodiffError> {
        let mut state = self.initial_state(g, store, r)?;
        for _ in 0..self.config.effective_turns() {
            state = self.refine_step(g, store, state, n)?;
        }
        Ok(state.p)
    }
}

/// Storage indices of the `n` cells involving word `w`.
fn word_cells(n: usize, w: usize) -> impl Iterator<Item = usize> {
    (0..n).map(move |k| cell_index(n, k.min(w), k.max(w)))
}

/// Max-pooled evidence for both words of every cell, returned as two
/// `[num_cells, |C|]` matrices aligned with `p`.
pub fn row_col_evidence<T: Scalar>(
    g: &mut Graph<T>,
    p: Var,
    n: usize,
    exclude_current: bool,
) -> Result<(Var, Var), AutodiffError> {
    let c = g.shape(p)[1];
    let coords = cell_coords(n);
    let m = coords.len();
    if !exclude_current {
        let idx: Vec<usize> = (0..n).flat_map(|w| word_cells(n, w)).collect();
        let pooled = g.gather_rows(p, &idx)?;
        let pooled = g.reshape(pooled, &[n, n, c])?;
        let per_word = g.max_over_axis(pooled, 1)?;
        let (left, right): (Vec<usize>, Vec<usize>) = coords.into_iter().unzip();
        let p_i = g.gather_rows(per_word, &left)?;
        let p_j = g.gather_rows(per_word, &right)?;
        return Ok((p_i, p_j));
    }
    if n == 1 {
        let zeros = g.constant(Tensor::zeros(&[m, c]));
        return Ok((zeros, zeros));
    }
    let mut side = |pick: fn((usize, usize)) -> usize| -> Result<Var, AutodiffError> {
        let idx: Vec<usize> = coords
            .iter()
            .flat_map(|&(i, j)| {
                let own = cell_index(n, i, j);
                word_cells(n, pick((i, j))).filter(move |&k| k != own)
            })
            .collect();
        let pooled = g.gather_rows(p, &idx)?;
        let pooled = g.reshape(pooled, &[m, n - 1, c])?;
        g.max_over_axis(pooled, 1)
    };
    let p_i = side(|(i, _)| i)?;
    let p_j = side(|(_, j)| j)?;
    Ok((p_i, p_j))
}
