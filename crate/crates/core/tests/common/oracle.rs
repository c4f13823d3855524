//! Brute-force references kept independent of the library's code paths.

use std::collections::BTreeSet;

use gts_core::corpus::{OpinionPair, OpinionTriplet, Polarity, Span};
use gts_core::grid::{TagGrid, TagSet};

/// Reads `(i, j)` straight from storage without the library's symmetric lookup.
fn raw<T: TagSet>(g: &TagGrid<T>, i: usize, j: usize) -> T {
    let (a, b) = (i.min(j), i.max(j));
    let n = g.n();
    let mut k = 0;
    for r in 0..a {
        k += n - r;
    }
    g.cells()[k + (b - a)]
}

/// Every span whose diagonal cells all carry `tag` and whose outside
/// neighbours do not.
fn enumerate_terms<T: TagSet>(g: &TagGrid<T>, tag: T) -> BTreeSet<Span> {
    let n = g.n();
    let mut out = BTreeSet::new();
    for l in 0..n {
        for r in l..n {
            let inside = (l..=r).all(|i| raw(g, i, i) == tag);
            let left_ok = l == 0 || raw(g, l - 1, l - 1) != tag;
            let right_ok = r + 1 == n || raw(g, r + 1, r + 1) != tag;
            if inside && left_ok && right_ok {
                out.insert(Span::new(l, r));
            }
        }
    }
    out
}

pub struct OracleResult {
    pub aspects: BTreeSet<Span>,
    pub opinions: BTreeSet<Span>,
    pub pairs: BTreeSet<OpinionPair>,
    pub triplets: BTreeSet<OpinionTriplet>,
}

/// `strict = true` additionally demands every cross cell be a pairing tag.
pub fn decode_oracle<T: TagSet>(g: &TagGrid<T>, with_sentiment: bool, strict: bool) -> OracleResult {
    let aspects = enumerate_terms(g, T::ASPECT);
    let opinions = enumerate_terms(g, T::OPINION);
    let mut pairs = BTreeSet::new();
    let mut triplets = BTreeSet::new();
    for a in &aspects {
        for o in &opinions {
            let cross: Vec<T> = (a.left..=a.right)
                .flat_map(|i| (o.left..=o.right).map(move |j| (i, j)))
                .map(|(i, j)| raw(g, i, j))
                .collect();
            let tagged = cross.iter().filter(|t| t.is_cross()).count();
            let linked = if strict { tagged == cross.len() } else { tagged > 0 };
            if !linked {
                continue;
            }
            pairs.insert(OpinionPair { aspect: *a, opinion: *o });
            if with_sentiment {
                let count = |p: Polarity| cross.iter().filter(|t| t.polarity() == Some(p)).count();
                let mut ranked = vec![
                    (count(Polarity::Negative), 2, Polarity::Negative),
                    (count(Polarity::Neutral), 1, Polarity::Neutral),
                    (count(Polarity::Positive), 0, Polarity::Positive),
                ];
                ranked.sort_by(|x, y| (y.0, y.1).cmp(&(x.0, x.1)));
                if ranked[0].0 > 0 {
                    triplets.insert(OpinionTriplet {
                        aspect: *a,
                        opinion: *o,
                        sentiment: ranked[0].2,
                    });
                }
            }
        }
    }
    OracleResult {
        aspects,
        opinions,
        pairs,
        triplets,
    }
}

pub type Mat = Vec<Vec<f64>>;

pub fn mat(rows: usize, cols: usize, data: &[f64]) -> Mat {
    assert_eq!(data.len(), rows * cols);
    data.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x W` for a row vector `x` and `W` stored as rows.
fn vec_mat(x: &[f64], w: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Additive attention written out one score at a time.
pub fn attention_oracle(h: &Mat, w1: &Mat, w2: &Mat, b: &[f64], v: &[f64]) -> (Mat, Mat) {
    let n = h.len();
    let mut alpha = vec![vec![0.0; n]; n];
    for i in 0..n {
        let a = vec_mat(&h[i], w1);
        let u: Vec<f64> = (0..n)
            .map(|j| {
                let c = vec_mat(&h[j], w2);
                let s: Vec<f64> = a.iter().zip(&c).zip(b).map(|((x, y), z)| x + y + z).collect();
                dot(v, &s)
            })
            .collect();
        alpha[i] = softmax(&u);
    }
    let enhanced = (0..n)
        .map(|i| {
            (0..h[i].len())
                .map(|d| h[i][d] + (0..n).map(|j| alpha[i][j] * h[j][d]).sum::<f64>())
                .collect()
        })
        .collect();
    (enhanced, alpha)
}

/// Upper-triangular cells of an `n`-word sentence in row-major order.
pub fn cells(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

fn find(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = (i.min(j), i.max(j));
    cells(n).iter().position(|&c| c == (a, b)).unwrap()
}

/// Elementwise max over every cell in row or column `w`.
pub fn evidence_oracle(p: &Mat, n: usize, w: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; p[0].len()];
    for k in 0..w {
        for (o, x) in out.iter_mut().zip(&p[find(n, k, w)]) {
            *o = o.max(*x);
        }
    }
    for k in w..n {
        for (o, x) in out.iter_mut().zip(&p[find(n, w, k)]) {
            *o = o.max(*x);
        }
    }
    out
}

/// One synchronous refinement turn, cell by cell.
pub fn refine_oracle(z: &Mat, p: &Mat, n: usize, w_q: &Mat, b_q: &[f64], w_s: &Mat, b_s: &[f64]) -> (Mat, Mat) {
    let mut z_next = Vec::new();
    let mut p_next = Vec::new();
    for (k, &(i, j)) in cells(n).iter().enumerate() {
        let mut q = z[k].clone();
        q.extend(evidence_oracle(p, n, i));
        q.extend(evidence_oracle(p, n, j));
        q.extend(&p[k]);
        let zk: Vec<f64> = vec_mat(&q, w_q).iter().zip(b_q).map(|(a, b)| a + b).collect();
        let logits: Vec<f64> = vec_mat(&zk, w_s).iter().zip(b_s).map(|(a, b)| a + b).collect();
        p_next.push(softmax(&logits));
        z_next.push(zk);
    }
    (z_next, p_next)
}

/// `softmax(z W_s + b_s)` per cell.
pub fn classify_oracle(z: &Mat, w_s: &Mat, b_s: &[f64]) -> Mat {
    z.iter()
        .map(|zk| softmax(&vec_mat(zk, w_s).iter().zip(b_s).map(|(a, b)| a + b).collect::<Vec<_>>()))
        .collect()
}
