//! MLP model family with a full-logit forward pass and a single-logit
//! forward pass whose cost does not depend on the number of classes.
//!
//! Hidden layers are affine -> batch norm -> ReLU; the output layer is a
//! plain affine map, so the logits are pre-normalization outputs. In
//! inference mode batch norm is a per-feature affine function of its input,
//! which makes per-example results independent of batch composition.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Batch normalization parameters and running statistics for one layer.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

impl BatchNormState {
    pub fn new(width: usize) -> BatchNormState {
        BatchNormState {
            scale: Tensor::raw(1, width, vec![1.0; width]),
            shift: Tensor::zeros(1, width),
            running_mean: Tensor::zeros(1, width),
            running_var: Tensor::raw(1, width, vec![1.0; width]),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    /// Fold freshly computed batch statistics into the running statistics:
    /// `running = (1 - momentum) * running + momentum * batch`, so momentum 1
    /// makes the running statistics equal the current batch statistics.
    pub fn update(&mut self, batch_mean: &Tensor, batch_var: &Tensor) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(batch_mean.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(batch_var.data()) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Per-column mean and biased variance of a batch, as used by batch norm.
pub fn batch_statistics(x: &Tensor) -> (Tensor, Tensor) {
    let m = x.rows() as f64;
    let mean = x.sum_axis0().scale(1.0 / m);
    let mut var = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (j, &v) in x.row(i).iter().enumerate() {
            let d = v - mean.get(0, j);
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= m;
    }
    (mean, Tensor::raw(1, x.cols(), var))
}

#[derive(Clone, Debug)]
pub struct HiddenLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: BatchNormState,
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    hidden: Vec<HiddenLayer>,
    out_weight: Tensor,
    out_bias: Tensor,
}

/// Graph handles produced by a training-mode forward pass.
pub struct TrainGraph {
    pub logits: NodeId,
    /// Trainable parameter nodes, in the same order as
    /// [`MlpModel::visit_params_mut`].
    pub params: Vec<NodeId>,
    /// Per hidden layer: (batch mean, batch variance) of the pre-activation,
    /// for the running-statistics update.
    pub batch_stats: Vec<(Tensor, Tensor)>,
}

impl MlpModel {
    /// Seeded Glorot-uniform initialization:
    /// weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero,
    /// batch-norm scale 1 / shift 0, running mean 0 / variance 1.
    pub fn init(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<MlpModel> {
        if input_dim == 0 || classes == 0 {
            return Err(Error::Domain("input width and class count must be >= 1".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Domain("hidden widths must be >= 1".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d_in = input_dim;
        for (l, &d_out) in hidden.iter().enumerate() {
            let mut rng = Rng::derive(seed, l as u64);
            layers.push(HiddenLayer {
                weight: glorot(d_in, d_out, &mut rng),
                bias: Tensor::zeros(1, d_out),
                bn: BatchNormState::new(d_out),
            });
            d_in = d_out;
        }
        let mut rng = Rng::derive(seed, hidden.len() as u64);
        Ok(MlpModel {
            hidden: layers,
            out_weight: glorot(d_in, classes, &mut rng),
            out_bias: Tensor::zeros(1, classes),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.out_weight.rows(), |l| l.weight.rows())
    }

    pub fn num_classes(&self) -> usize {
        self.out_weight.cols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.weight.cols()).collect()
    }

    pub fn hidden_layers(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    /// Backbone of one example in inference mode. Shared by the full-logit
    /// and single-logit paths so they agree bit-exactly.
    fn backbone_row(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.hidden {
            let d_out = layer.weight.cols();
            let mut u = vec![0.0; d_out];
            for (l, &xv) in cur.iter().enumerate() {
                let wrow = layer.weight.row(l);
                for (uj, &w) in u.iter_mut().zip(wrow) {
                    *uj += xv * w;
                }
            }
            for (j, uj) in u.iter_mut().enumerate() {
                *uj += layer.bias.get(0, j);
                // inference batch norm: per-feature affine via running stats
                let bn = &layer.bn;
                let norm = (*uj - bn.running_mean.get(0, j))
                    / (bn.running_var.get(0, j) + bn.epsilon).sqrt();
                *uj = (norm * bn.scale.get(0, j) + bn.shift.get(0, j)).max(0.0);
            }
            cur = u;
        }
        cur
    }

    /// Logits for every class. In inference mode each example is processed
    /// independently, so results do not depend on batch composition; in
    /// train mode batch norm uses the statistics of this batch.
    pub fn forward_all(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward_all",
                lhs_rows: batch.rows(),
                lhs_cols: batch.cols(),
                rhs_rows: self.input_dim(),
                rhs_cols: self.num_classes(),
            });
        }
        match mode {
            Mode::Inference => {
                let (m, k) = (batch.rows(), self.num_classes());
                let mut out = vec![0.0; m * k];
                for i in 0..m {
                    let feats = self.backbone_row(batch.row(i));
                    let row = &mut out[i * k..(i + 1) * k];
                    for (l, &f) in feats.iter().enumerate() {
                        let wrow = self.out_weight.row(l);
                        for (o, &w) in row.iter_mut().zip(wrow) {
                            *o += f * w;
                        }
                    }
                    for (o, &b) in row.iter_mut().zip(self.out_bias.data()) {
                        *o += b;
                    }
                }
                Ok(Tensor::raw(m, k, out))
            }
            Mode::Train => {
                let mut tape = Tape::new();
                let graph = self.forward_train(&mut tape, batch)?;
                Ok(tape.value(graph.logits).clone())
            }
        }
    }

    /// The logit of a single class, in inference mode. Touches only column
    /// `class` of the output weights, so the cost is the backbone plus one
    /// dot product, independent of the class count. Bit-exact equal to
    /// `forward_all(x)[class]`: both accumulate the output dot product in
    /// ascending feature order.
    pub fn forward_single(&self, x: &Tensor, class: usize) -> Result<f64> {
        if x.rows() != 1 || x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward_single",
                lhs_rows: x.rows(),
                lhs_cols: x.cols(),
                rhs_rows: 1,
                rhs_cols: self.input_dim(),
            });
        }
        let k = self.num_classes();
        if class >= k {
            return Err(Error::Index {
                what: "class",
                index: class,
                len: k,
            });
        }
        let feats = self.backbone_row(x.row(0));
        let w = self.out_weight.data();
        let mut acc = 0.0;
        for (l, &f) in feats.iter().enumerate() {
            acc += f * w[l * k + class];
        }
        Ok(acc + self.out_bias.get(0, class))
    }

    /// Training-mode forward pass recorded on a tape, with batch-statistic
    /// batch norm. Returns the logits node, the parameter nodes and the
    /// batch statistics of each hidden layer.
    pub fn forward_train(&self, tape: &mut Tape, batch: &Tensor) -> Result<TrainGraph> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward_train",
                lhs_rows: batch.rows(),
                lhs_cols: batch.cols(),
                rhs_rows: self.input_dim(),
                rhs_cols: self.num_classes(),
            });
        }
        let m = batch.rows() as f64;
        let mut params = Vec::new();
        let mut batch_stats = Vec::new();
        let mut cur = tape.input(batch.clone());
        for layer in &self.hidden {
            let w = tape.input(layer.weight.clone());
            let b = tape.input(layer.bias.clone());
            let scale = tape.input(layer.bn.scale.clone());
            let shift = tape.input(layer.bn.shift.clone());
            params.extend_from_slice(&[w, b, scale, shift]);

            let lin = tape.matmul(cur, w)?;
            let u = tape.add_row(lin, b)?;
            let mu = {
                let s = tape.sum_axis0(u)?;
                tape.mul_scalar(s, 1.0 / m)
            };
            let centered = tape.sub_row(u, mu)?;
            let var = {
                let sq = tape.mul(centered, centered)?;
                let s = tape.sum_axis0(sq)?;
                tape.mul_scalar(s, 1.0 / m)
            };
            batch_stats.push((tape.value(mu).clone(), tape.value(var).clone()));
            let std = {
                let v_eps = tape.add_scalar(var, layer.bn.epsilon);
                tape.sqrt(v_eps)?
            };
            let normed = tape.div_row(centered, std)?;
            let scaled = tape.mul_row(normed, scale)?;
            let y = tape.add_row(scaled, shift)?;
            cur = tape.relu(y);
        }
        let w_out = tape.input(self.out_weight.clone());
        let b_out = tape.input(self.out_bias.clone());
        params.push(w_out);
        params.push(b_out);
        let lin = tape.matmul(cur, w_out)?;
        let logits = tape.add_row(lin, b_out)?;
        Ok(TrainGraph {
            logits,
            params,
            batch_stats,
        })
    }

    /// Visit trainable parameters mutably, in the order of
    /// [`TrainGraph::params`]: per hidden layer weight, bias, batch-norm
    /// scale, batch-norm shift; then the output weight and bias.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for layer in &mut self.hidden {
            f(&mut layer.weight);
            f(&mut layer.bias);
            f(&mut layer.bn.scale);
            f(&mut layer.bn.shift);
        }
        f(&mut self.out_weight);
        f(&mut self.out_bias);
    }

    /// Apply the freshly computed batch statistics to every layer's running
    /// statistics.
    pub fn update_running_stats(&mut self, batch_stats: &[(Tensor, Tensor)]) {
        for (layer, (mean, var)) in self.hidden.iter_mut().zip(batch_stats) {
            layer.bn.update(mean, var);
        }
    }

    /// True when every parameter and running statistic is bitwise equal.
    pub fn bits_eq(&self, other: &MlpModel) -> bool {
        if self.hidden.len() != other.hidden.len() {
            return false;
        }
        for (a, b) in self.hidden.iter().zip(&other.hidden) {
            if !(a.weight.bits_eq(&b.weight)
                && a.bias.bits_eq(&b.bias)
                && a.bn.scale.bits_eq(&b.bn.scale)
                && a.bn.shift.bits_eq(&b.bn.shift)
                && a.bn.running_mean.bits_eq(&b.bn.running_mean)
                && a.bn.running_var.bits_eq(&b.bn.running_var))
            {
                return false;
            }
        }
        self.out_weight.bits_eq(&other.out_weight) && self.out_bias.bits_eq(&other.out_bias)
    }

    // ---- checkpoint container ------------------------------------------

    /// Write a self-describing binary checkpoint: layer shapes, all
    /// parameters, batch-norm running statistics and (optionally) the loss
    /// configuration used in training. Floats are stored as raw bits, so a
    /// save/load round trip reproduces forward outputs bit-exactly.
    pub fn save(&self, path: &Path, loss: Option<&LossConfig>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        write_u32(&mut w, CKPT_VERSION)?;
        match loss {
            Some(cfg) => {
                let json = serde_json::to_vec(cfg)
                    .map_err(|e| Error::Checkpoint(format!("loss config: {e}")))?;
                write_u32(&mut w, json.len() as u32)?;
                w.write_all(&json)?;
            }
            None => write_u32(&mut w, 0)?,
        }
        write_u32(&mut w, self.hidden.len() as u32)?;
        for layer in &self.hidden {
            write_tensor(&mut w, &layer.weight)?;
            write_tensor(&mut w, &layer.bias)?;
            write_tensor(&mut w, &layer.bn.scale)?;
            write_tensor(&mut w, &layer.bn.shift)?;
            write_tensor(&mut w, &layer.bn.running_mean)?;
            write_tensor(&mut w, &layer.bn.running_var)?;
            write_f64(&mut w, layer.bn.momentum)?;
            write_f64(&mut w, layer.bn.epsilon)?;
        }
        write_tensor(&mut w, &self.out_weight)?;
        write_tensor(&mut w, &self.out_bias)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(MlpModel, Option<LossConfig>)> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?} in {}",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let json_len = read_u32(&mut r)? as usize;
        let loss = if json_len > 0 {
            let mut buf = vec![0u8; json_len];
            r.read_exact(&mut buf)?;
            Some(
                serde_json::from_slice(&buf)
                    .map_err(|e| Error::Checkpoint(format!("loss config: {e}")))?,
            )
        } else {
            None
        };
        let n_hidden = read_u32(&mut r)? as usize;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            let weight = read_tensor(&mut r)?;
            let bias = read_tensor(&mut r)?;
            let scale = read_tensor(&mut r)?;
            let shift = read_tensor(&mut r)?;
            let running_mean = read_tensor(&mut r)?;
            let running_var = read_tensor(&mut r)?;
            let momentum = read_f64(&mut r)?;
            let epsilon = read_f64(&mut r)?;
            if running_var.data().iter().any(|&v| v <= 0.0) {
                return Err(Error::Checkpoint(
                    "running variance must stay positive".into(),
                ));
            }
            hidden.push(HiddenLayer {
                weight,
                bias,
                bn: BatchNormState {
                    scale,
                    shift,
                    running_mean,
                    running_var,
                    momentum,
                    epsilon,
                },
            });
        }
        let out_weight = read_tensor(&mut r)?;
        let out_bias = read_tensor(&mut r)?;
        let model = MlpModel {
            hidden,
            out_weight,
            out_bias,
        };
        model.check_chain()?;
        Ok((model, loss))
    }

    fn check_chain(&self) -> Result<()> {
        let mut d = self.input_dim();
        for (i, layer) in self.hidden.iter().enumerate() {
            if layer.weight.rows() != d {
                return Err(Error::Checkpoint(format!(
                    "layer {i} expects input width {}, previous layer produces {d}",
                    layer.weight.rows()
                )));
            }
            d = layer.weight.cols();
        }
        if self.out_weight.rows() != d {
            return Err(Error::Checkpoint(format!(
                "output layer expects width {}, backbone produces {d}",
                self.out_weight.rows()
            )));
        }
        Ok(())
    }
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Tensor::raw(fan_in, fan_out, data)
}

const CKPT_MAGIC: &[u8; 4] = b"SLCK";
const CKPT_VERSION: u32 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_bits().to_le_bytes())?;
    Ok(())
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_u32(w, t.rows() as u32)?;
    write_u32(w, t.cols() as u32)?;
    for &v in t.data() {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_bits(u64::from_le_bytes(b)))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Ok(Tensor::raw(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossConfig, LossKind};

    #[test]
    fn zero_model_outputs_zero_logits() {
        let mut model = MlpModel::init(3, &[4], 5, 0).unwrap();
        model.visit_params_mut(|p| {
            for v in p.data_mut() {
                *v = 0.0;
            }
        });
        let x = Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        let z = model.forward_all(&x, Mode::Inference).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        for j in 0..5 {
            assert_eq!(model.forward_single(&x.row_tensor(0), j).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_linear_layer() {
        // no hidden layers: logits = x W + b with W = I, b = 0
        let mut model = MlpModel::init(2, &[], 2, 0).unwrap();
        model.visit_params_mut(|p| {
            for v in p.data_mut() {
                *v = 0.0;
            }
        });
        // out weight is the first visited parameter here
        let mut first = true;
        model.visit_params_mut(|p| {
            if first {
                p.set(0, 0, 1.0);
                p.set(1, 1, 1.0);
                first = false;
            }
        });
        let x = Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let z = model.forward_all(&x, Mode::Inference).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0]);
    }

    #[test]
    fn single_equals_all_bit_exact_randomized() {
        let mut rng = Rng::new(77);
        for trial in 0..100 {
            let d = 1 + rng.index(6);
            let k = 1 + rng.index(7);
            let hidden: Vec<usize> = (0..rng.index(3)).map(|_| 1 + rng.index(8)).collect();
            let model = MlpModel::init(d, &hidden, k, trial as u64).unwrap();
            let x = Tensor::raw(1, d, (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect());
            let all = model.forward_all(&x, Mode::Inference).unwrap();
            let j = rng.index(k);
            let single = model.forward_single(&x, j).unwrap();
            assert_eq!(
                single.to_bits(),
                all.get(0, j).to_bits(),
                "trial {trial}: single {single} != all {}",
                all.get(0, j)
            );
        }
    }

    #[test]
    fn batch_of_two_equals_concatenated_single_example_calls() {
        let model = MlpModel::init(4, &[6, 5], 3, 9).unwrap();
        let mut rng = Rng::new(4);
        let x = Tensor::raw(2, 4, (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let both = model.forward_all(&x, Mode::Inference).unwrap();
        for i in 0..2 {
            let one = model.forward_all(&x.row_tensor(i), Mode::Inference).unwrap();
            for j in 0..3 {
                assert_eq!(one.get(0, j).to_bits(), both.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn k1_degenerate_width() {
        let model = MlpModel::init(3, &[4], 1, 2).unwrap();
        let x = Tensor::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let all = model.forward_all(&x, Mode::Inference).unwrap();
        let single = model.forward_single(&x, 0).unwrap();
        assert_eq!(single.to_bits(), all.get(0, 0).to_bits());
    }

    #[test]
    fn class_out_of_range_is_index_error() {
        let model = MlpModel::init(2, &[], 3, 0).unwrap();
        let x = Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            model.forward_single(&x, 3),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let model = MlpModel::init(4, &[], 2, 0).unwrap();
        let x = Tensor::zeros(1, 3);
        assert!(model.forward_all(&x, Mode::Inference).is_err());
    }

    #[test]
    fn constant_batch_normalizes_to_shift() {
        // constant input: batch variance 0, normalized value 0, output = shift
        let model = MlpModel::init(2, &[3], 2, 1).unwrap();
        let x = Tensor::from_vec(2, 2, vec![0.7, -0.4, 0.7, -0.4]).unwrap();
        let mut tape = Tape::new();
        let graph = model.forward_train(&mut tape, &x).unwrap();
        let (_, var) = &graph.batch_stats[0];
        assert!(var.data().iter().all(|&v| v == 0.0));
        // shift is zero-initialized, and relu(0) = 0, so logits equal out bias (0)
        let logits = tape.value(graph.logits);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn momentum_one_adopts_batch_stats() {
        let mut bn = BatchNormState::new(2);
        bn.momentum = 1.0;
        let mean = Tensor::from_vec(1, 2, vec![3.0, -1.0]).unwrap();
        let var = Tensor::from_vec(1, 2, vec![0.5, 2.0]).unwrap();
        bn.update(&mean, &var);
        assert_eq!(bn.running_mean.data(), mean.data());
        assert_eq!(bn.running_var.data(), var.data());
    }

    #[test]
    fn momentum_recurrence_matches_hand_computation() {
        let mut bn = BatchNormState::new(1);
        bn.momentum = 0.9;
        let m1 = Tensor::scalar(2.0);
        let v1 = Tensor::scalar(1.0);
        let m2 = Tensor::scalar(-4.0);
        let v2 = Tensor::scalar(3.0);
        bn.update(&m1, &v1);
        bn.update(&m2, &v2);
        // r1 = 0.1*0 + 0.9*2; r2 = 0.1*r1 + 0.9*(-4)
        let r1 = 0.9 * 2.0;
        let r2 = 0.1 * r1 + 0.9 * (-4.0);
        assert!((bn.running_mean.get(0, 0) - r2).abs() < 1e-15);
        let s1 = 0.1 * 1.0 + 0.9 * 1.0;
        let s2 = 0.1 * s1 + 0.9 * 3.0;
        assert!((bn.running_var.get(0, 0) - s2).abs() < 1e-15);
    }

    #[test]
    fn inference_is_deterministic() {
        let model = MlpModel::init(5, &[8, 8], 4, 12).unwrap();
        let mut rng = Rng::new(1);
        let x = Tensor::raw(3, 5, (0..15).map(|_| rng.normal()).collect());
        let a = model.forward_all(&x, Mode::Inference).unwrap();
        let b = model.forward_all(&x, Mode::Inference).unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut model = MlpModel::init(4, &[6], 3, 21).unwrap();
        // make running stats non-trivial
        let mean = Tensor::from_vec(1, 6, vec![0.1, -0.2, 0.3, 0.0, 1.5, -0.7]).unwrap();
        let var = Tensor::from_vec(1, 6, vec![0.9, 1.1, 0.5, 2.0, 0.3, 1.7]).unwrap();
        model.update_running_stats(&[(mean, var)]);
        let cfg = LossConfig::new(LossKind::BatchCe);
        let path = std::env::temp_dir().join(format!("logitsep_ckpt_{}.bin", std::process::id()));
        model.save(&path, Some(&cfg)).unwrap();
        let (loaded, loss) = MlpModel::load(&path).unwrap();
        assert!(model.bits_eq(&loaded));
        assert_eq!(loss.unwrap().kind, LossKind::BatchCe);

        let mut rng = Rng::new(3);
        let x = Tensor::raw(2, 4, (0..8).map(|_| rng.normal()).collect());
        let a = model.forward_all(&x, Mode::Inference).unwrap();
        let b = loaded.forward_all(&x, Mode::Inference).unwrap();
        assert!(a.bits_eq(&b));
        std::fs::remove_file(path).ok();
    }
}
