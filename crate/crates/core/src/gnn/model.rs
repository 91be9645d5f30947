//! Relational GCN with hand-written reverse-mode gradients.
//!
//! Layer `l` computes, for every node `v`,
//!
//! ```text
//! a_v = Σ_r Σ_{s ∈ N_r(v)} W_r · h_s / |N_r(v)|
//! h_v = ReLU(W_self · h_v + a_v)
//! ```
//!
//! where `N_r(v)` are the nodes sending to `v` along relation `r` of the
//! doubled (inverse-materialized) relation space. The mean over a group is
//! taken first and multiplied by `W_r` once per (node, relation) pair.
//!
//! All weights live in one flat parameter vector. Each matrix is stored
//! `in_dim × out_dim` row-major, so a layer is `x · W`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::features::GraphInput;
use crate::gnn::matrix::{axpy, mat_vec_acc, outer_acc, vec_mat_acc, Matrix};
use crate::subgraph::DISTANCE_BUCKETS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Stored relation types; the model holds weights for twice as many.
    pub num_relations: usize,
    pub use_distance: bool,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            num_layers: 3,
            hidden_dim: 32,
            num_relations: 0,
            use_distance: true,
            temperature: 0.05,
            seed: 0,
        }
    }
}

impl GnnConfig {
    pub fn relation_space(&self) -> usize {
        2 * self.num_relations
    }

    pub fn input_dim(&self) -> usize {
        self.relation_space() + if self.use_distance { DISTANCE_BUCKETS } else { 0 }
    }

    /// `[input_dim, hidden_dim, ..., hidden_dim]`, `num_layers + 1` entries.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(std::iter::repeat_n(self.hidden_dim, self.num_layers))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("num_layers and hidden_dim must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Start of this layer's relation matrices in the parameter vector; the
    /// self matrix follows them.
    pub offset: usize,
    pub relation_space: usize,
}

impl LayerShape {
    fn matrix_len(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub fn relation_offset(&self, r: usize) -> usize {
        self.offset + r * self.matrix_len()
    }

    pub fn self_offset(&self) -> usize {
        self.offset + self.relation_space * self.matrix_len()
    }

    pub fn num_params(&self) -> usize {
        (self.relation_space + 1) * self.matrix_len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    config: GnnConfig,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Outputs of all layers but the last (inputs of layers `1..L`).
    hidden: Vec<Matrix>,
    /// Per layer, the mean input over each message group.
    means: Vec<Matrix>,
    /// Per layer, the pre-activation.
    pre: Vec<Matrix>,
    pub output: Matrix,
}

fn layer_shapes(config: &GnnConfig) -> Vec<LayerShape> {
    let dims = config.layer_dims();
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let shape = LayerShape {
                in_dim: w[0],
                out_dim: w[1],
                offset,
                relation_space: config.relation_space(),
            };
            offset += shape.num_params();
            shape
        })
        .collect()
}

impl GnnModel {
    /// Fresh model with every matrix drawn uniformly from
    /// `±sqrt(6 / (in_dim + out_dim))`.
    pub fn new(config: GnnConfig) -> Result<Self> {
        config.validate()?;
        let layers = layer_shapes(&config);
        let total = layers.iter().map(LayerShape::num_params).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::with_capacity(total);
        for l in &layers {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            params.extend((0..l.num_params()).map(|_| rng.gen_range(-bound..bound)));
        }
        Ok(GnnModel { config, layers, params })
    }

    pub fn from_params(config: GnnConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layers = layer_shapes(&config);
        let total: usize = layers.iter().map(LayerShape::num_params).sum();
        if params.len() != total {
            return Err(Error::Dimension(format!("{} parameters for a model of {total}", params.len())));
        }
        Ok(GnnModel { config, layers, params })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_temperature(&mut self, tau: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.temperature = tau;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn relation_weight(&self, layer: usize, r: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.params[l.relation_offset(r)..l.relation_offset(r) + l.in_dim * l.out_dim]
    }

    pub fn self_weight(&self, layer: usize) -> &[f64] {
        let l = &self.layers[layer];
        &self.params[l.self_offset()..l.self_offset() + l.in_dim * l.out_dim]
    }

    fn check_input(&self, g: &GraphInput) -> Result<()> {
        if g.feature_dim() != self.config.input_dim() || g.relation_space() != self.config.relation_space() {
            return Err(Error::Dimension(format!(
                "graph has {} features over {} relations, model expects {} over {}",
                g.feature_dim(),
                g.relation_space(),
                self.config.input_dim(),
                self.config.relation_space()
            )));
        }
        Ok(())
    }

    /// Last-layer node representations.
    pub fn forward(&self, g: &GraphInput) -> Result<Matrix> {
        Ok(self.forward_cached(g)?.output)
    }

    pub fn forward_cached(&self, g: &GraphInput) -> Result<ForwardCache> {
        self.check_input(g)?;
        let n = g.num_nodes();
        let active = &g.features.active;
        let mut hidden: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut means = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let prev = if li == 0 { None } else { Some(&hidden[li - 1]) };
            let out = layer.out_dim;
            let mut z = Matrix::zeros(n, out);
            let w_self = self.self_weight(li);
            for v in 0..n {
                match prev {
                    None => {
                        for &k in &active[v] {
                            let k = k as usize;
                            axpy(1.0, &w_self[k * out..(k + 1) * out], z.row_mut(v));
                        }
                    }
                    Some(h) => vec_mat_acc(h.row(v), w_self, z.row_mut(v)),
                }
            }
            let mut m = Matrix::zeros(g.groups.len(), layer.in_dim);
            for (gi, group) in g.groups.iter().enumerate() {
                let srcs = g.group_sources(group);
                let inv = 1.0 / srcs.len() as f64;
                let row = m.row_mut(gi);
                for &s in srcs {
                    match prev {
                        None => active[s as usize].iter().for_each(|&k| row[k as usize] += inv),
                        Some(h) => axpy(inv, h.row(s as usize), row),
                    }
                }
                vec_mat_acc(m.row(gi), self.relation_weight(li, group.relation as usize), z.row_mut(group.target as usize));
            }
            let mut h = z.clone();
            h.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
            means.push(m);
            pre.push(z);
            hidden.push(h);
        }
        let output = hidden.pop().expect("at least one layer");
        Ok(ForwardCache {
            hidden,
            means,
            pre,
            output,
        })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂output` for the pass in `cache`.
    pub fn backward(&self, g: &GraphInput, cache: &ForwardCache, d_output: &Matrix, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let n = g.num_nodes();
        let active = &g.features.active;
        let mut d_h = d_output.clone();
        for li in (0..self.layers.len()).rev() {
            let layer = self.layers[li];
            let out = layer.out_dim;
            let prev = if li == 0 { None } else { Some(&cache.hidden[li - 1]) };
            let mut dz = d_h;
            for (d, &z) in dz.data_mut().iter_mut().zip(cache.pre[li].data()) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut d_in = Matrix::zeros(if prev.is_some() { n } else { 0 }, layer.in_dim);
            let (so, len) = (layer.self_offset(), layer.in_dim * out);
            for v in 0..n {
                let dzv = dz.row(v);
                if dzv.iter().all(|&x| x == 0.0) {
                    continue;
                }
                match prev {
                    None => {
                        for &k in &active[v] {
                            let k = k as usize;
                            axpy(1.0, dzv, &mut grad[so + k * out..so + (k + 1) * out]);
                        }
                    }
                    Some(h) => {
                        outer_acc(h.row(v), dzv, &mut grad[so..so + len]);
                        mat_vec_acc(&self.params[so..so + len], dzv, d_in.row_mut(v));
                    }
                }
            }
            let mut dm = vec![0.0; layer.in_dim];
            for (gi, group) in g.groups.iter().enumerate() {
                let dzt = dz.row(group.target as usize);
                if dzt.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let ro = layer.relation_offset(group.relation as usize);
                outer_acc(cache.means[li].row(gi), dzt, &mut grad[ro..ro + len]);
                if prev.is_some() {
                    dm.iter_mut().for_each(|x| *x = 0.0);
                    mat_vec_acc(&self.params[ro..ro + len], dzt, &mut dm);
                    let srcs = g.group_sources(group);
                    let inv = 1.0 / srcs.len() as f64;
                    for &s in srcs {
                        axpy(inv, &dm, d_in.row_mut(s as usize));
                    }
                }
            }
            d_h = d_in;
        }
    }

    /// Per-layer Frobenius norms of the parameters, for diagnostics.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| self.params[l.offset..l.offset + l.num_params()].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, Triple};
    use crate::subgraph::QuerySubgraph;

    fn config(layers: usize, hidden: usize, rels: usize) -> GnnConfig {
        GnnConfig {
            num_layers: layers,
            hidden_dim: hidden,
            num_relations: rels,
            use_distance: true,
            temperature: 0.1,
            seed: 3,
        }
    }

    fn input(triples: Vec<Triple>, rels: usize) -> GraphInput {
        let sg = QuerySubgraph::from_triples(0, triples, &[EntityId(0)], None, rels).unwrap();
        GraphInput::new(&sg, rels, true).unwrap()
    }

    #[test]
    fn no_edges_is_self_transform() {
        let model = GnnModel::new(config(1, 4, 2)).unwrap();
        let g = input(vec![], 2);
        let out = model.forward(&g).unwrap();
        let mut expected = vec![0.0; 4];
        vec_mat_acc(g.features.dense().row(0), model.self_weight(0), &mut expected);
        let expected: Vec<f64> = expected.iter().map(|x| x.max(0.0)).collect();
        assert_eq!(out.row(0), &expected[..]);
    }

    #[test]
    fn single_edge_aggregate_is_one_message() {
        let model = GnnModel::new(config(1, 5, 1)).unwrap();
        let g = input(vec![Triple::new(0, 0, 1)], 1);
        let cache = model.forward_cached(&g).unwrap();
        let x = g.features.dense();
        let mut z = vec![0.0; 5];
        vec_mat_acc(x.row(1), model.self_weight(0), &mut z);
        vec_mat_acc(x.row(0), model.relation_weight(0, 0), &mut z);
        assert_eq!(cache.pre[0].row(1), &z[..]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = GnnModel::new(config(1, 4, 3)).unwrap();
        let g = input(vec![Triple::new(0, 0, 1)], 2);
        assert!(matches!(model.forward(&g), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_temperature_rejected() {
        let mut c = config(1, 4, 1);
        c.temperature = 0.0;
        assert!(GnnModel::new(c).is_err());
    }

    #[test]
    fn parameter_count() {
        let model = GnnModel::new(config(2, 4, 3)).unwrap();
        // layer 0: (6 + 1) * 10 * 4, layer 1: (6 + 1) * 4 * 4
        assert_eq!(model.num_params(), 7 * 40 + 7 * 16);
    }
}
