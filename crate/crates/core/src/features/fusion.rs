//! Multi-view fusion: per-view linear projections, concatenated, trained
//! with a margin ranking loss over anchor pairs.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossDistance {
    /// Negative CSLS, matching the retrieval metric.
    Csls,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Output width of the name and structure projections.
    pub hidden_dim: usize,
    /// Output width of the time projection.
    pub time_dim: usize,
    pub distance: LossDistance,
    /// Neighbourhood size of the CSLS radii inside the loss.
    pub csls_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            learning_rate: 0.005,
            epochs: 60,
            negatives_per_positive: 5,
            seed: 7,
            hidden_dim: 64,
            time_dim: 32,
            distance: LossDistance::Csls,
            csls_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config("train.margin must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        if self.negatives_per_positive == 0 || self.hidden_dim == 0 || self.time_dim == 0 || self.csls_k == 0 {
            return Err(Error::Config("train counts and dimensions must be at least 1".into()));
        }
        Ok(())
    }
}

/// The three raw views of one graph, rows in entity order.
#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub name: EmbeddingMatrix,
    pub time: EmbeddingMatrix,
    pub structure: EmbeddingMatrix,
}

impl Views {
    pub fn rows(&self) -> usize {
        self.name.rows()
    }

    fn get(&self, v: usize) -> &EmbeddingMatrix {
        match v {
            0 => &self.name,
            1 => &self.time,
            _ => &self.structure,
        }
    }

    fn in_dims(&self) -> [usize; 3] {
        [self.name.dim(), self.time.dim(), self.structure.dim()]
    }

    fn check(&self) -> Result<()> {
        let n = self.rows();
        if self.time.rows() != n || self.structure.rows() != n {
            return Err(Error::InvalidArgument(format!(
                "views disagree on entity count: name {}, time {}, structure {}",
                n,
                self.time.rows(),
                self.structure.rows()
            )));
        }
        Ok(())
    }
}

/// Projection weights for the name, time and structure views.
///
/// Each block is an `in x out` row-major matrix; blocks are stored back to
/// back in one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    weights: Vec<f64>,
}

impl FusionModel {
    /// Identity-initialised projections (truncated or zero-padded when the
    /// widths differ), so training starts from the raw views.
    pub fn identity(in_dims: [usize; 3], out_dims: [usize; 3]) -> Self {
        let size: usize = in_dims.iter().zip(&out_dims).map(|(i, o)| i * o).sum();
        let mut model = Self {
            in_dims,
            out_dims,
            weights: vec![0.0; size],
        };
        for v in 0..3 {
            let off = model.offset(v);
            for d in 0..in_dims[v].min(out_dims[v]) {
                model.weights[off + d * out_dims[v] + d] = 1.0;
            }
        }
        model
    }

    fn offset(&self, view: usize) -> usize {
        (0..view).map(|v| self.in_dims[v] * self.out_dims[v]).sum()
    }

    fn out_offset(&self, view: usize) -> usize {
        self.out_dims[..view].iter().sum()
    }

    pub fn output_dim(&self) -> usize {
        self.out_dims.iter().sum()
    }

    pub fn out_dims(&self) -> [usize; 3] {
        self.out_dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// `[x_name W_name | x_time W_time | x_struct W_struct]` per row.
    pub fn embed(&self, views: &Views) -> EmbeddingMatrix {
        let dim = self.output_dim();
        let mut out = EmbeddingMatrix::zeros(views.rows(), dim);
        for v in 0..3 {
            let (off, oo, od) = (self.offset(v), self.out_offset(v), self.out_dims[v]);
            let m = views.get(v);
            for i in 0..views.rows() {
                let x = m.row(i);
                let row = &mut out.row_mut(i)[oo..oo + od];
                for (a, xa) in x.iter().enumerate() {
                    if *xa == 0.0 {
                        continue;
                    }
                    let w = &self.weights[off + a * od..off + (a + 1) * od];
                    for (r, wv) in row.iter_mut().zip(w) {
                        *r += xa * wv;
                    }
                }
            }
        }
        out
    }

    fn accumulate_grad(&self, views: &Views, grad_h: &[f64], rows: &[bool], grad: &mut [f64]) {
        let dim = self.output_dim();
        for v in 0..3 {
            let (off, oo, od) = (self.offset(v), self.out_offset(v), self.out_dims[v]);
            let m = views.get(v);
            for i in (0..views.rows()).filter(|&i| rows[i]) {
                let g = &grad_h[i * dim + oo..i * dim + oo + od];
                for (a, xa) in m.row(i).iter().enumerate() {
                    if *xa == 0.0 {
                        continue;
                    }
                    for (gw, gv) in grad[off + a * od..off + (a + 1) * od].iter_mut().zip(g) {
                        *gw += xa * gv;
                    }
                }
            }
        }
    }
}

/// One ranking constraint: `src` should be closer to `pos` than to `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub src: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Mean hinge loss `max(0, margin + d(src, pos) - d(src, neg))` over a fixed
/// set of triples.
pub struct MarginObjective<'a> {
    pub left: &'a Views,
    pub right: &'a Views,
    pub triples: &'a [Triple],
    pub margin: f64,
    pub distance: LossDistance,
    pub csls_k: usize,
}

struct Geometry {
    dim: usize,
    h1: EmbeddingMatrix,
    h2: EmbeddingMatrix,
    u1: Vec<f64>,
    u2: Vec<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
    k: usize,
    knn_tgt: RefCell<HashMap<usize, Vec<usize>>>,
    knn_src: RefCell<HashMap<usize, Vec<usize>>>,
}

impl Geometry {
    fn new(h1: EmbeddingMatrix, h2: EmbeddingMatrix, k: usize) -> Self {
        let (u1, _) = super::csls::normalized_rows(&h1);
        let (u2, _) = super::csls::normalized_rows(&h2);
        let norm = |m: &EmbeddingMatrix| m.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        Self {
            dim: h1.dim(),
            n1: norm(&h1),
            n2: norm(&h2),
            h1,
            h2,
            u1,
            u2,
            k,
            knn_tgt: RefCell::default(),
            knn_src: RefCell::default(),
        }
    }

    fn u1(&self, i: usize) -> &[f64] {
        &self.u1[i * self.dim..(i + 1) * self.dim]
    }

    fn u2(&self, j: usize) -> &[f64] {
        &self.u2[j * self.dim..(j + 1) * self.dim]
    }

    fn cos(&self, i: usize, j: usize) -> f64 {
        self.u1(i).iter().zip(self.u2(j)).map(|(a, b)| a * b).sum()
    }

    fn nearest(&self, scores: impl Iterator<Item = (usize, f64)>) -> Vec<usize> {
        let mut all: Vec<(usize, f64)> = scores.collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.into_iter().take(self.k).map(|(i, _)| i).collect()
    }

    fn knn_tgt(&self, i: usize) -> Vec<usize> {
        self.knn_tgt
            .borrow_mut()
            .entry(i)
            .or_insert_with(|| self.nearest((0..self.h2.rows()).map(|j| (j, self.cos(i, j)))))
            .clone()
    }

    fn knn_src(&self, j: usize) -> Vec<usize> {
        self.knn_src
            .borrow_mut()
            .entry(j)
            .or_insert_with(|| self.nearest((0..self.h1.rows()).map(|i| (i, self.cos(i, j)))))
            .clone()
    }

    fn distance(&self, kind: LossDistance, i: usize, j: usize) -> f64 {
        match kind {
            LossDistance::Csls => {
                let k = self.k as f64;
                let r_t: f64 = self.knn_tgt(i).iter().map(|&y| self.cos(i, y)).sum::<f64>() / k;
                let r_s: f64 = self.knn_src(j).iter().map(|&x| self.cos(x, j)).sum::<f64>() / k;
                -2.0 * self.cos(i, j) + r_t + r_s
            }
            LossDistance::Euclidean => self
                .h1
                .row(i)
                .iter()
                .zip(self.h2.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

struct GradSink<'g> {
    geo: &'g Geometry,
    g1: Vec<f64>,
    g2: Vec<f64>,
    touched1: Vec<bool>,
    touched2: Vec<bool>,
}

impl GradSink<'_> {
    /// Adds `coef * d cos(h1_i, h2_j)`.
    fn cos(&mut self, i: usize, j: usize, coef: f64) {
        let g = self.geo;
        let (ni, nj) = (g.n1[i], g.n2[j]);
        if ni == 0.0 || nj == 0.0 {
            return;
        }
        let c = g.cos(i, j);
        let d = g.dim;
        for t in 0..d {
            let (a, b) = (g.u1[i * d + t], g.u2[j * d + t]);
            self.g1[i * d + t] += coef * (b - c * a) / ni;
            self.g2[j * d + t] += coef * (a - c * b) / nj;
        }
        self.touched1[i] = true;
        self.touched2[j] = true;
    }

    fn distance(&mut self, kind: LossDistance, i: usize, j: usize, coef: f64) {
        let g = self.geo;
        match kind {
            LossDistance::Csls => {
                let per = coef / g.k as f64;
                self.cos(i, j, -2.0 * coef);
                for y in g.knn_tgt(i) {
                    self.cos(i, y, per);
                }
                for x in g.knn_src(j) {
                    self.cos(x, j, per);
                }
            }
            LossDistance::Euclidean => {
                let dist = g.distance(kind, i, j);
                if dist == 0.0 {
                    return;
                }
                let d = g.dim;
                for t in 0..d {
                    let diff = (g.h1.row(i)[t] - g.h2.row(j)[t]) / dist * coef;
                    self.g1[i * d + t] += diff;
                    self.g2[j * d + t] -= diff;
                }
                self.touched1[i] = true;
                self.touched2[j] = true;
            }
        }
    }
}

impl MarginObjective<'_> {
    fn geometry(&self, model: &FusionModel) -> Geometry {
        Geometry::new(model.embed(self.left), model.embed(self.right), self.csls_k)
    }

    pub fn loss(&self, model: &FusionModel) -> f64 {
        let geo = self.geometry(model);
        self.hinge_terms(&geo).iter().map(|(_, z)| z.max(0.0)).sum::<f64>() / self.triples.len().max(1) as f64
    }

    fn hinge_terms(&self, geo: &Geometry) -> Vec<(Triple, f64)> {
        self.triples
            .iter()
            .map(|t| {
                let z = self.margin + geo.distance(self.distance, t.src, t.pos) - geo.distance(self.distance, t.src, t.neg);
                (*t, z)
            })
            .collect()
    }

    /// Loss and its exact gradient with respect to the flat model weights.
    ///
    /// CSLS neighbourhoods are held at their current members, which is the
    /// derivative wherever the neighbourhood ordering is strict.
    pub fn loss_and_grad(&self, model: &FusionModel) -> (f64, Vec<f64>) {
        let geo = self.geometry(model);
        let dim = geo.dim;
        let mut sink = GradSink {
            geo: &geo,
            g1: vec![0.0; self.left.rows() * dim],
            g2: vec![0.0; self.right.rows() * dim],
            touched1: vec![false; self.left.rows()],
            touched2: vec![false; self.right.rows()],
        };
        let scale = 1.0 / self.triples.len().max(1) as f64;
        let mut loss = 0.0;
        for (t, z) in self.hinge_terms(&geo) {
            if z > 0.0 {
                loss += z;
                sink.distance(self.distance, t.src, t.pos, scale);
                sink.distance(self.distance, t.src, t.neg, -scale);
            }
        }
        let mut grad = vec![0.0; model.weights.len()];
        model.accumulate_grad(self.left, &sink.g1, &sink.touched1, &mut grad);
        model.accumulate_grad(self.right, &sink.g2, &sink.touched2, &mut grad);
        (loss * scale, grad)
    }
}

/// Outcome of [`fuse_and_train`].
#[derive(Debug, Clone)]
pub struct Fused {
    pub left: EmbeddingMatrix,
    pub right: EmbeddingMatrix,
    pub model: FusionModel,
    pub losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(size: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

/// Trains the view projections on anchor row pairs `(left row, right row)`
/// and returns the fused embeddings of both graphs.
///
/// Each epoch draws `negatives_per_positive` uniform negatives per anchor
/// from the right graph (never the anchor's own partner) and takes one Adam
/// step on the full batch.
pub fn fuse_and_train(left: &Views, right: &Views, anchors: &[(usize, usize)], cfg: &TrainConfig) -> Result<Fused> {
    cfg.validate()?;
    left.check()?;
    right.check()?;
    if left.in_dims() != right.in_dims() {
        return Err(Error::InvalidArgument(format!(
            "view widths differ between graphs: {:?} vs {:?}",
            left.in_dims(),
            right.in_dims()
        )));
    }
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("fusion training needs at least one anchor".into()));
    }
    let n2 = right.rows();
    if n2 < 2 {
        return Err(Error::InvalidArgument("fusion training needs at least two right-side entities".into()));
    }
    let csls_k = cfg.csls_k.min(n2 - 1).min(left.rows());
    let out_dims = [cfg.hidden_dim, cfg.time_dim, cfg.hidden_dim];
    let mut model = FusionModel::identity(left.in_dims(), out_dims);
    let mut adam = Adam::new(model.weights.len(), cfg.learning_rate);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut triples = Vec::with_capacity(anchors.len() * cfg.negatives_per_positive);

    for epoch in 0..cfg.epochs {
        triples.clear();
        for &(src, pos) in anchors {
            for _ in 0..cfg.negatives_per_positive {
                let mut neg = rng.random_range(0..n2 - 1);
                if neg >= pos {
                    neg += 1;
                }
                triples.push(Triple { src, pos, neg });
            }
        }
        let objective = MarginObjective {
            left,
            right,
            triples: &triples,
            margin: cfg.margin,
            distance: cfg.distance,
            csls_k,
        };
        let (loss, grad) = objective.loss_and_grad(&model);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("fusion training diverged at epoch {epoch} (loss {loss})")));
        }
        losses.push(loss);
        adam.step(&mut model.weights, &grad);
        log::debug!("fusion epoch {epoch}: loss {loss:.6}");
    }

    Ok(Fused {
        left: model.embed(left),
        right: model.embed(right),
        model,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn views(rows: &[Vec<f64>]) -> Views {
        let m = EmbeddingMatrix::from_rows(rows).unwrap();
        Views {
            name: m.clone(),
            time: EmbeddingMatrix::zeros(rows.len(), 2),
            structure: m,
        }
    }

    #[test]
    fn equal_distances_cost_the_margin() {
        let l = views(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![0.5, 0.5]]);
        let r = views(&[vec![0.9, 0.1], vec![0.2, 1.0], vec![0.4, 0.6]]);
        let triples = [Triple { src: 0, pos: 1, neg: 1 }, Triple { src: 2, pos: 0, neg: 0 }];
        for distance in [LossDistance::Csls, LossDistance::Euclidean] {
            let obj = MarginObjective {
                left: &l,
                right: &r,
                triples: &triples,
                margin: 0.7,
                distance,
                csls_k: 1,
            };
            let model = FusionModel::identity([2, 2, 2], [2, 2, 2]);
            assert!((obj.loss(&model) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn output_width_is_sum_of_views() {
        let model = FusionModel::identity([5, 3, 4], [6, 2, 7]);
        assert_eq!(model.output_dim(), 15);
        let v = Views {
            name: EmbeddingMatrix::zeros(4, 5),
            time: EmbeddingMatrix::zeros(4, 3),
            structure: EmbeddingMatrix::zeros(4, 4),
        };
        assert_eq!(model.embed(&v).dim(), 15);
    }

    #[test]
    fn identity_embedding_is_concatenation() {
        let v = Views {
            name: EmbeddingMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
            time: EmbeddingMatrix::from_rows(&[vec![3.0]]).unwrap(),
            structure: EmbeddingMatrix::from_rows(&[vec![4.0, 5.0]]).unwrap(),
        };
        let model = FusionModel::identity([2, 1, 2], [2, 1, 2]);
        assert_eq!(model.embed(&v).row(0), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn rejects_empty_anchors() {
        let l = views(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(fuse_and_train(&l, &l, &[], &TrainConfig::default()).is_err());
    }
}
