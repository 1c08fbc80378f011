use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::trustgraph::{code_width, DEFAULT_BINS};

/// How a predicted class distribution is turned into one trust value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustReadout {
    /// Largest class probability.
    #[default]
    MaxProb,
    /// Probability-weighted mean of the class midpoints.
    ExpectedBin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnConfig {
    /// Output width of each propagation layer.
    pub layer_dims: Vec<usize>,
    /// Hidden widths of the prediction MLP.
    pub head_hidden: Vec<usize>,
    pub bins: usize,
    pub learning_rate: f64,
    /// L2 coefficient on every trainable parameter.
    pub l2: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub leaky_slope: f64,
    pub readout: TrustReadout,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            layer_dims: vec![32, 64, 32],
            head_hidden: vec![32],
            bins: DEFAULT_BINS,
            learning_rate: 5e-3,
            l2: 1e-5,
            dropout: 0.1,
            epochs: 100,
            batch_size: 128,
            train_fraction: 0.8,
            leaky_slope: 0.2,
            readout: TrustReadout::MaxProb,
        }
    }
}

impl GnnConfig {
    pub fn code_dim(&self) -> usize {
        code_width(self.bins)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive and L >= 1"));
        }
        if self.bins < 2 {
            return Err(Error::invalid("need at least 2 trust bins"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::invalid("learning_rate must be positive and l2 non-negative"));
        }
        if self.batch_size == 0 || !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("batch_size must be positive and train_fraction in (0, 1)"));
        }
        Ok(())
    }
}

/// Parameters of one propagation/aggregation layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Trust-code transform for messages from in-neighbors (`d_in x D_T`).
    pub in_msg: Matrix,
    /// Trust-code transform for messages from out-neighbors (`d_in x D_T`).
    pub out_msg: Matrix,
    /// Trust-code transform for messages into edge devices (`d_in x D_T`).
    pub ec_msg: Matrix,
    /// Shared attention transform (`d_in x d_in`).
    pub attn: Matrix,
    /// Attention scoring vector (`2 d_in x 1`), center half first.
    pub attn_vec: Matrix,
    /// Trustee/trustor fusion (`d_out x 4 d_in`).
    pub fuse_tf: Matrix,
    pub fuse_tf_bias: Matrix,
    /// Edge-device projection (`d_out x 2 d_in`).
    pub fuse_ec: Matrix,
    pub fuse_ec_bias: Matrix,
}

impl LayerParams {
    pub fn zeros(d_in: usize, d_out: usize, code_dim: usize) -> Self {
        LayerParams {
            in_msg: Matrix::zeros(d_in, code_dim),
            out_msg: Matrix::zeros(d_in, code_dim),
            ec_msg: Matrix::zeros(d_in, code_dim),
            attn: Matrix::zeros(d_in, d_in),
            attn_vec: Matrix::zeros(2 * d_in, 1),
            fuse_tf: Matrix::zeros(d_out, 4 * d_in),
            fuse_tf_bias: Matrix::zeros(d_out, 1),
            fuse_ec: Matrix::zeros(d_out, 2 * d_in),
            fuse_ec_bias: Matrix::zeros(d_out, 1),
        }
    }

    pub fn xavier<R: Rng + ?Sized>(d_in: usize, d_out: usize, code_dim: usize, rng: &mut R) -> Self {
        LayerParams {
            in_msg: Matrix::xavier(d_in, code_dim, code_dim, d_in, rng),
            out_msg: Matrix::xavier(d_in, code_dim, code_dim, d_in, rng),
            ec_msg: Matrix::xavier(d_in, code_dim, code_dim, d_in, rng),
            attn: Matrix::xavier(d_in, d_in, d_in, d_in, rng),
            attn_vec: Matrix::xavier(2 * d_in, 1, 2 * d_in, 1, rng),
            fuse_tf: Matrix::xavier(d_out, 4 * d_in, 4 * d_in, d_out, rng),
            fuse_tf_bias: Matrix::zeros(d_out, 1),
            fuse_ec: Matrix::xavier(d_out, 2 * d_in, 2 * d_in, d_out, rng),
            fuse_ec_bias: Matrix::zeros(d_out, 1),
        }
    }

    pub fn d_in(&self) -> usize {
        self.attn.rows
    }

    pub fn d_out(&self) -> usize {
        self.fuse_tf.rows
    }

    fn tensors(&self) -> [&Matrix; 9] {
        [
            &self.in_msg,
            &self.out_msg,
            &self.ec_msg,
            &self.attn,
            &self.attn_vec,
            &self.fuse_tf,
            &self.fuse_tf_bias,
            &self.fuse_ec,
            &self.fuse_ec_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.in_msg,
            &mut self.out_msg,
            &mut self.ec_msg,
            &mut self.attn,
            &mut self.attn_vec,
            &mut self.fuse_tf,
            &mut self.fuse_tf_bias,
            &mut self.fuse_ec,
            &mut self.fuse_ec_bias,
        ]
    }
}

/// Fully connected layer `W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
    /// Prediction MLP; the last layer emits one logit per trust class.
    pub head: Vec<Dense>,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.tensors_mut().into_iter().for_each(|t| t.data.fill(0.0));
        p
    }

    /// Every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        for d in &self.head {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        for d in &mut self.head {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    /// Names matching `tensors()` order, for diagnostics.
    pub fn tensor_names(&self) -> Vec<String> {
        const LAYER: [&str; 9] = [
            "in_msg",
            "out_msg",
            "ec_msg",
            "attn",
            "attn_vec",
            "fuse_tf",
            "fuse_tf_bias",
            "fuse_ec",
            "fuse_ec_bias",
        ];
        let mut out = Vec::new();
        for l in 0..self.layers.len() {
            out.extend(LAYER.iter().map(|n| format!("layer{l}.{n}")));
        }
        for h in 0..self.head.len() {
            out.push(format!("head{h}.weight"));
            out.push(format!("head{h}.bias"));
        }
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.squared_norm()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub config: GnnConfig,
    /// Width of the initial embeddings.
    pub input_dim: usize,
    pub params: Params,
}

impl GnnModel {
    /// Xavier-initialized weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(config: &GnnConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let code_dim = config.code_dim();
        let mut layers = Vec::new();
        let mut d_in = input_dim;
        for &d_out in &config.layer_dims {
            layers.push(LayerParams::xavier(d_in, d_out, code_dim, rng));
            d_in = d_out;
        }
        let mut head = Vec::new();
        let mut width = 2 * d_in;
        for &next in config.head_hidden.iter().chain(std::iter::once(&config.bins)) {
            head.push(Dense {
                weight: Matrix::xavier(next, width, width, next, rng),
                bias: Matrix::zeros(next, 1),
            });
            width = next;
        }
        Ok(GnnModel {
            config: config.clone(),
            input_dim,
            params: Params { layers, head },
        })
    }

    pub fn output_dim(&self) -> usize {
        self.params.layers.last().map_or(self.input_dim, |l| l.d_out())
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let code_dim = self.config.code_dim();
        let mut d_in = self.input_dim;
        if self.params.layers.len() != self.config.layer_dims.len() {
            return Err(Error::Dimension("layer count does not match config".into()));
        }
        for (i, l) in self.params.layers.iter().enumerate() {
            let want = LayerParams::zeros(d_in, self.config.layer_dims[i], code_dim);
            for (a, b) in l.tensors().iter().zip(want.tensors()) {
                if (a.rows, a.cols) != (b.rows, b.cols) || a.data.len() != a.rows * a.cols {
                    return Err(Error::Dimension(format!("layer {i}: tensor shape mismatch")));
                }
            }
            d_in = l.d_out();
        }
        let mut width = 2 * d_in;
        for (i, d) in self.params.head.iter().enumerate() {
            if d.weight.cols != width || d.bias.rows != d.weight.rows || d.bias.cols != 1 {
                return Err(Error::Dimension(format!("head layer {i}: shape mismatch")));
            }
            width = d.weight.rows;
        }
        if width != self.config.bins {
            return Err(Error::Dimension("head output width must equal bins".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let model: GnnModel = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?)?;
        model.validate()?;
        Ok(model)
    }
}
