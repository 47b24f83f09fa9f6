use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{softmax, Activation, DenseNet};

/// Default layer count: two hidden ReLU layers and the output layer.
pub const DEFAULT_LAYERS: usize = 3;

pub fn default_hidden_width(d: usize) -> usize {
    d.max(64)
}

/// Shared query/object classifier producing a distribution over `c`
/// clusters. Hidden layers use ReLU; the output layer is linear and softmax
/// is applied in [`ClusterClassifier::classify`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterClassifier {
    net: DenseNet,
}

fn layer_dims(input: usize, hidden: usize, c: usize, layers: usize) -> Result<(Vec<usize>, Vec<Activation>)> {
    if layers == 0 {
        return Err(Error::OutOfRange("classifier needs at least one layer".into()));
    }
    if c == 0 {
        return Err(Error::OutOfRange("cluster count must be >= 1".into()));
    }
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden, layers - 1));
    dims.push(c);
    let mut acts = vec![Activation::Relu; layers - 1];
    acts.push(Activation::Identity);
    Ok((dims, acts))
}

impl ClusterClassifier {
    /// Xavier-initialised classifier for `d`-dimensional embeddings, with
    /// weights already representable in the `f32` file format.
    pub fn new(d: usize, c: usize, layers: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let (dims, acts) = layer_dims(d + 2, hidden, c, layers)?;
        let mut net = DenseNet::xavier(&dims, &acts, rng)?;
        net.round_to_f32();
        Ok(Self { net })
    }

    /// All-zero classifier: every input maps to the uniform distribution.
    pub fn zeros(d: usize, c: usize, layers: usize, hidden: usize) -> Result<Self> {
        let (dims, acts) = layer_dims(d + 2, hidden, c, layers)?;
        Ok(Self {
            net: DenseNet::zeros(&dims, &acts)?,
        })
    }

    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.input_dim() < 3 {
            return Err(Error::OutOfRange(format!(
                "classifier input dim {} leaves no room for an embedding",
                net.input_dim()
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn num_clusters(&self) -> usize {
        self.net.output_dim()
    }

    /// Embedding dimension `d` (the input is `d + 2`).
    pub fn dim(&self) -> usize {
        self.net.input_dim() - 2
    }

    pub fn layers(&self) -> usize {
        self.net.num_layers()
    }

    pub fn classify(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.forward(x)?))
    }
}

/// Indices of the `cr` largest entries of `prob`, by descending probability
/// with ties going to the lowest index.
pub fn top_clusters(prob: &[f64], cr: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..prob.len()).collect();
    let by_rank = |a: &usize, b: &usize| -> Ordering { prob[*b].total_cmp(&prob[*a]).then(a.cmp(b)) };
    if cr < idx.len() {
        idx.select_nth_unstable_by(cr, by_rank);
        idx.truncate(cr);
    }
    idx.sort_by(by_rank);
    idx
}
