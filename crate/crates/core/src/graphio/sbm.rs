use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::DenseMatrix;

use super::{Graph, GraphError, Split};

/// Planted-partition stochastic block model with Gaussian class features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    /// Nodes per class.
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Standard deviation of the noise added to one-hot class means.
    pub feature_noise: f64,
    /// Feature width; `0` means one column per class. Columns past the
    /// class count carry noise only.
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            blocks: vec![100; 3],
            p_in: 0.1,
            p_out: 0.01,
            feature_noise: 1.0,
            feature_dim: 0,
            train_per_class: 20,
            val_per_class: 30,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Invalid(m));
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return bad("every block needs at least one node".into());
        }
        if !(0.0..=1.0).contains(&self.p_out) || !(0.0..=1.0).contains(&self.p_in) {
            return bad("edge probabilities must lie in [0, 1]".into());
        }
        if self.p_out > self.p_in {
            return bad(format!("p_out {} exceeds p_in {}", self.p_out, self.p_in));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be a finite non-negative std".into());
        }
        if self.feature_dim != 0 && self.feature_dim < self.blocks.len() {
            return bad("feature_dim must be 0 or at least the class count".into());
        }
        if let Some(b) = self
            .blocks
            .iter()
            .find(|&&b| b < self.train_per_class + self.val_per_class)
        {
            return bad(format!(
                "block of {b} nodes cannot hold {} train + {} val nodes",
                self.train_per_class, self.val_per_class
            ));
        }
        Ok(())
    }
}

/// Samples a graph. Nodes are numbered block by block; edges are drawn in
/// lexicographic pair order, then features, then the per-class split.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph, GraphError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels: Vec<usize> = cfg
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(c, &size)| std::iter::repeat_n(c, size))
        .collect();
    let n = labels.len();
    let c = cfg.blocks.len();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let f = if cfg.feature_dim == 0 { c } else { cfg.feature_dim };
    let mut features = DenseMatrix::zeros(n, f);
    for (i, &l) in labels.iter().enumerate() {
        for k in 0..f {
            let mean = if k == l { 1.0 } else { 0.0 };
            let z: f64 = StandardNormal.sample(&mut rng);
            features.set(i, k, mean + cfg.feature_noise * z);
        }
    }

    let mut split = Split::default();
    let mut start = 0;
    for &size in &cfg.blocks {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut rng);
        let (train, rest) = members.split_at(cfg.train_per_class);
        let (val, test) = rest.split_at(cfg.val_per_class);
        split.train.extend_from_slice(train);
        split.val.extend_from_slice(val);
        split.test.extend_from_slice(test);
        start += size;
    }
    Graph::new(edges, features, labels, c, split)
}
