//! Fully connected tanh network φ: R^d → R^p with exact first and
//! second-order derivatives.
//!
//! A forward pass can carry `d` tangent blocks alongside the primal batch
//! (one per input coordinate), which yields the input Jacobian. The reverse
//! pass accepts adjoints for both the outputs and the Jacobian blocks, so the
//! parameter gradient of any loss built from φ(x) and Dφ(x), in particular
//! ‖Dφ(x)‖²_F, comes out exactly.
//!
//! Rows of a recorded batch are stacked as `[primal; tangent_0; …; tangent_{d-1}]`,
//! each block `m` rows, so every layer is a single GEMM.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_into, MatView, Matrix};
use crate::rng::{streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub init_seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 2,
            output_dim: 2,
            hidden_layers: 5,
            hidden_width: 100,
            activation: Activation::Tanh,
            init_seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("hidden_layers", self.hidden_layers),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::param(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Parameters laid out layer by layer: row-major `outputs × inputs` weights,
/// then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    activation: Activation,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Gradient with the same layout as its network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    values: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(len: usize) -> Self {
        ParamGradient { values: vec![0.0; len] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamGradient) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }
}

fn layout(dims: &[usize]) -> (Vec<LayerShape>, usize) {
    let mut offset = 0;
    let layers = dims
        .windows(2)
        .map(|w| {
            let shape = LayerShape { inputs: w[0], outputs: w[1], weight_offset: offset, bias_offset: offset + w[0] * w[1] };
            offset += w[0] * w[1] + w[1];
            shape
        })
        .collect();
    (layers, offset)
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &NetworkConfig) -> Result<Network> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(std::iter::repeat_n(config.hidden_width, config.hidden_layers));
        dims.push(config.output_dim);
        let (layers, total) = layout(&dims);
        let mut params = vec![0.0; total];
        let mut rng = Rng::substream(config.init_seed, streams::INIT);
        for shape in &layers {
            let bound = (6.0 / (shape.inputs + shape.outputs) as f64).sqrt();
            for w in &mut params[shape.weight_offset..shape.bias_offset] {
                *w = rng.uniform(-bound, bound);
            }
        }
        Ok(Network { activation: config.activation, layers, params })
    }

    /// Builds a network from explicit `(weight, bias)` pairs, weight shaped
    /// `outputs × inputs`. Activations are applied between layers only, so a
    /// single pair is an affine map.
    pub fn from_layers(activation: Activation, layers: &[(Matrix, Vec<f64>)]) -> Result<Network> {
        if layers.is_empty() {
            return Err(Error::param("network needs at least one layer"));
        }
        let mut dims = vec![layers[0].0.cols()];
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.cols() != *dims.last().unwrap() || b.len() != w.rows() || w.rows() == 0 {
                return Err(Error::dim(format!("layer {i} has weight {:?} and bias {}", w.shape(), b.len())));
            }
            dims.push(w.rows());
        }
        let (shapes, total) = layout(&dims);
        let mut params = Vec::with_capacity(total);
        for (w, b) in layers {
            params.extend_from_slice(w.as_slice());
            params.extend_from_slice(b);
        }
        let net = Network { activation, layers: shapes, params };
        net.check_finite()?;
        Ok(net)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.layers
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

    pub fn weight(&self, layer: usize) -> Matrix {
        let s = &self.layers[layer];
        Matrix::from_vec(s.outputs, s.inputs, self.params[s.weight_offset..s.bias_offset].to_vec()).unwrap()
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = &self.layers[layer];
        &self.params[s.bias_offset..s.bias_offset + s.outputs]
    }

    /// Sets every weight to zero, leaving biases: the network becomes the
    /// constant map x ↦ b_out.
    pub fn zero_weights(&mut self) {
        for s in self.layers.clone() {
            self.params[s.weight_offset..s.bias_offset].iter_mut().for_each(|w| *w = 0.0);
        }
    }

    /// Network computing `U · φ(x)`.
    pub fn with_output_transform(&self, u: &Matrix) -> Result<Network> {
        let last = self.layers.len() - 1;
        let p = self.output_dim();
        if u.cols() != p {
            return Err(Error::dim(format!("output transform {:?} for {p} outputs", u.shape())));
        }
        let mut pairs: Vec<(Matrix, Vec<f64>)> = (0..self.layers.len()).map(|l| (self.weight(l), self.bias(l).to_vec())).collect();
        let (w, b) = &pairs[last];
        let new_w = u.matmul(w)?;
        let new_b = u.matvec(b)?;
        pairs[last] = (new_w, new_b);
        Network::from_layers(self.activation, &pairs)
    }

    fn weight_view(&self, layer: usize) -> MatView<'_> {
        let s = &self.layers[layer];
        MatView::new(&self.params[s.weight_offset..s.bias_offset], s.outputs, s.inputs)
    }

    pub fn zero_gradient(&self) -> ParamGradient {
        ParamGradient::zeros(self.params.len())
    }

    /// `params -= step · grad`; fails if the result is not finite.
    pub fn apply_update(&mut self, grad: &ParamGradient, step: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::dim(format!("gradient of length {} for {} parameters", grad.len(), self.params.len())));
        }
        for (p, g) in self.params.iter_mut().zip(&grad.values) {
            *p -= step * g;
        }
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        if self.params.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Input("network parameters are not finite".into()))
        }
    }

    fn check_inputs(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!("inputs have {} columns, network expects {}", x.cols(), self.input_dim())));
        }
        if !x.is_finite() {
            return Err(Error::Input("non-finite network input".into()));
        }
        Ok(())
    }

    /// Runs a batch forward, keeping what the reverse pass needs. With
    /// `tangents`, one forward-mode tangent per input coordinate is carried.
    pub fn record(&self, x: &Matrix, tangents: bool) -> Result<Tape> {
        self.check_inputs(x)?;
        let m = x.rows();
        let d = self.input_dim();
        let t = if tangents { d } else { 0 };
        let rows = (1 + t) * m;

        let mut input = vec![0.0; rows * d];
        input[..m * d].copy_from_slice(x.as_slice());
        for k in 0..t {
            for i in 0..m {
                input[((1 + k) * m + i) * d + k] = 1.0;
            }
        }

        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_tangents = Vec::with_capacity(last);
        let mut current = input;
        for (l, shape) in self.layers.iter().enumerate() {
            let width = shape.outputs;
            let mut z = vec![0.0; rows * width];
            gemm_into(1.0, MatView::new(&current, rows, shape.inputs), self.weight_view(l).t(), 0.0, &mut z, rows, width);
            let bias = self.bias(l);
            for row in z[..m * width].chunks_exact_mut(width) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            layer_inputs.push(current);
            if l == last {
                return Ok(Tape { m, tangents: t, layer_inputs, pre_tangents, output: z });
            }
            let (primal, tangent) = z.split_at_mut(m * width);
            primal.iter_mut().for_each(|v| *v = v.tanh());
            pre_tangents.push(tangent.to_vec());
            for block in tangent.chunks_exact_mut(m * width) {
                for (dz, a) in block.iter_mut().zip(primal.iter()) {
                    *dz *= 1.0 - a * a;
                }
            }
            current = z;
        }
        unreachable!("network has at least one layer")
    }

    /// Parameter gradient of `Σ_i ⟨G_i, φ(x_i)⟩ + Σ_k Σ_i ⟨H^k_i, ∂_k φ(x_i)⟩`
    /// where `G = output_adjoint` and `H^k = tangent_adjoint[k]` (all `m × p`).
    pub fn backward(&self, tape: &Tape, output_adjoint: &Matrix, tangent_adjoint: Option<&[Matrix]>) -> Result<ParamGradient> {
        let m = tape.m;
        let p = self.output_dim();
        if output_adjoint.shape() != (m, p) {
            return Err(Error::dim(format!("output adjoint {:?}, expected {:?}", output_adjoint.shape(), (m, p))));
        }
        if let Some(blocks) = tangent_adjoint {
            if tape.tangents == 0 && !blocks.is_empty() {
                return Err(Error::dim("tangent adjoints given for a tape recorded without tangents"));
            }
            if blocks.len() != tape.tangents || blocks.iter().any(|b| b.shape() != (m, p)) {
                return Err(Error::dim(format!("expected {} tangent adjoints of shape {:?}", tape.tangents, (m, p))));
            }
        }
        let t = tape.tangents;
        let rows = (1 + t) * m;

        let mut upstream = vec![0.0; rows * p];
        upstream[..m * p].copy_from_slice(output_adjoint.as_slice());
        if let Some(blocks) = tangent_adjoint {
            for (k, b) in blocks.iter().enumerate() {
                upstream[(1 + k) * m * p..(2 + k) * m * p].copy_from_slice(b.as_slice());
            }
        }

        let mut grad = self.zero_gradient();
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            let (width_in, width_out) = (shape.inputs, shape.outputs);
            let input = &tape.layer_inputs[l];
            {
                let dw = &mut grad.values[shape.weight_offset..shape.bias_offset];
                gemm_into(
                    1.0,
                    MatView::new(&upstream, rows, width_out).t(),
                    MatView::new(input, rows, width_in),
                    1.0,
                    dw,
                    width_out,
                    width_in,
                );
            }
            let db = &mut grad.values[shape.bias_offset..shape.bias_offset + width_out];
            for row in upstream[..m * width_out].chunks_exact(width_out) {
                db.iter_mut().zip(row).for_each(|(g, u)| *g += u);
            }
            if l == 0 {
                break;
            }

            let mut adj = vec![0.0; rows * width_in];
            gemm_into(1.0, MatView::new(&upstream, rows, width_out), self.weight_view(l), 0.0, &mut adj, rows, width_in);

            // `input` is the previous hidden layer's output: primal block then
            // the tangent blocks.
            let activ = &input[..m * width_in];
            let pre_tangent = &tape.pre_tangents[l - 1];
            let (adj_primal, adj_tangent) = adj.split_at(m * width_in);
            let block = m * width_in;
            let mut next = vec![0.0; rows * width_in];
            for i in 0..block {
                let a = activ[i];
                let ds = 1.0 - a * a;
                let dds = -2.0 * a * ds;
                let mut g = ds * adj_primal[i];
                for k in 0..t {
                    let h = adj_tangent[k * block + i];
                    // The tangent a' = tanh'(z)·z' also depends on the primal z.
                    g += dds * pre_tangent[k * block + i] * h;
                    next[(1 + k) * block + i] = ds * h;
                }
                next[i] = g;
            }
            upstream = next;
        }
        Ok(grad)
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.record(x, false)?.outputs())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    /// Gradient of `⟨upstream, φ(x)⟩` with respect to every parameter.
    pub fn grad_params(&self, x: &[f64], upstream: &[f64]) -> Result<ParamGradient> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dim(format!("upstream of length {} for {} outputs", upstream.len(), self.output_dim())));
        }
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let tape = self.record(&x, false)?;
        self.backward(&tape, &Matrix::from_vec(1, upstream.len(), upstream.to_vec())?, None)
    }

    /// `Dφ(x)`, shaped `p × d`.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let tape = self.record(&x, true)?;
        let (p, d) = (self.output_dim(), self.input_dim());
        let mut jac = Matrix::zeros(p, d);
        for k in 0..d {
            jac.set_column(k, tape.jacobian_block(k).row(0));
        }
        Ok(jac)
    }

    /// `‖Dφ(x)‖²_F` and its exact parameter gradient.
    pub fn dirichlet_point_value_and_grad(&self, x: &[f64]) -> Result<(f64, ParamGradient)> {
        let x = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let (values, grad) = self.dirichlet_batch(&x, 1.0, None)?;
        Ok((values[0], grad))
    }

    /// Per-sample `‖Dφ(x_i)‖²_F` and the gradient of
    /// `weight · Σ_i ‖Dφ(x_i)‖²_F + Σ_i ⟨G_i, φ(x_i)⟩`.
    pub fn dirichlet_batch(&self, x: &Matrix, weight: f64, output_adjoint: Option<&Matrix>) -> Result<(Vec<f64>, ParamGradient)> {
        let tape = self.record(x, true)?;
        let m = x.rows();
        let d = self.input_dim();
        let mut values = vec![0.0; m];
        let mut blocks = Vec::with_capacity(d);
        for k in 0..d {
            let jk = tape.jacobian_block(k);
            for (i, v) in values.iter_mut().enumerate() {
                *v += jk.row(i).iter().map(|x| x * x).sum::<f64>();
            }
            blocks.push(jk.scaled(2.0 * weight));
        }
        let zero;
        let out_adj = match output_adjoint {
            Some(g) => g,
            None => {
                zero = Matrix::zeros(m, self.output_dim());
                &zero
            }
        };
        let grad = self.backward(&tape, out_adj, Some(&blocks))?;
        Ok((values, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Network> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Network::from_bytes(&bytes).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
    }

    /// Checkpoint encoding: magic, version, activation, layer count, layer
    /// shapes (u64 pairs), parameter count, then little-endian f64 parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 16 * self.layers.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.activation.code().to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for s in &self.layers {
            out.extend_from_slice(&(s.inputs as u64).to_le_bytes());
            out.extend_from_slice(&(s.outputs as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Network, String> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| "truncated header")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("not a network checkpoint".into());
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let activation = Activation::from_code(read_u32(&mut r)?).ok_or("unknown activation")?;
        let num_layers = read_u64(&mut r)? as usize;
        if num_layers == 0 || num_layers > 1 << 16 {
            return Err(format!("implausible layer count {num_layers}"));
        }
        let mut dims = Vec::with_capacity(num_layers + 1);
        for l in 0..num_layers {
            let inputs = read_u64(&mut r)? as usize;
            let outputs = read_u64(&mut r)? as usize;
            if l == 0 {
                dims.push(inputs);
            } else if dims[l] != inputs {
                return Err(format!("layer {l} input width {inputs} does not chain"));
            }
            if inputs == 0 || outputs == 0 {
                return Err(format!("layer {l} has an empty side"));
            }
            dims.push(outputs);
        }
        let (layers, total) = layout(&dims);
        let stored = read_u64(&mut r)? as usize;
        if stored != total {
            return Err(format!("{stored} parameters stored, shapes need {total}"));
        }
        if r.len() != 8 * total {
            return Err(format!("expected {} parameter bytes, found {}", 8 * total, r.len()));
        }
        let params = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Network { activation, layers, params })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MINVARNN";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| "truncated checkpoint".to_string())?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut &[u8]) -> std::result::Result<u64, String> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| "truncated checkpoint".to_string())?;
    Ok(u64::from_le_bytes(buf))
}

/// Saved activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    m: usize,
    tangents: usize,
    /// Input to each layer, stacked primal/tangent blocks.
    layer_inputs: Vec<Vec<f64>>,
    /// Tangent pre-activations of each hidden layer.
    pre_tangents: Vec<Vec<f64>>,
    /// Last layer output, stacked.
    output: Vec<f64>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.m
    }

    fn output_width(&self) -> usize {
        self.output.len() / ((1 + self.tangents) * self.m).max(1)
    }

    /// `φ(x_i)` for every row, `m × p`.
    pub fn outputs(&self) -> Matrix {
        let p = self.output_width();
        Matrix::from_vec(self.m, p, self.output[..self.m * p].to_vec()).unwrap()
    }

    /// `∂φ(x_i)/∂x_k` for every row, `m × p`.
    pub fn jacobian_block(&self, k: usize) -> Matrix {
        assert!(k < self.tangents, "tape recorded {} tangents", self.tangents);
        let p = self.output_width();
        let start = (1 + k) * self.m * p;
        Matrix::from_vec(self.m, p, self.output[start..start + self.m * p].to_vec()).unwrap()
    }
}
