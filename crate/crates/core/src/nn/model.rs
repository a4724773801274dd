use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::input::InputTensor;
use super::layers::{
    mean_freq, mean_freq_backward, pool_freq, pool_freq_backward, relu, relu_backward, BatchNorm,
    Conv, Param,
};
use super::spec::{ModelSpec, Variant};
use crate::error::{Error, Result};
use crate::geometry::{FRAMES, INSTRUMENTS};
use crate::raster::{FrameRaster, FreqAxis};

/// Per-frame instrument likelihoods, 258 x 7, in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRoll {
    pub raster: FrameRaster,
}

/// Largest f32 below one.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Logistic function, kept inside the open unit interval.
pub fn sigmoid(z: f32) -> f32 {
    let p = 1.0 / (1.0 + (-(z as f64)).exp());
    (p as f32).clamp(f32::MIN_POSITIVE, BELOW_ONE)
}

#[derive(Debug, Clone)]
struct ResBlock {
    convs: Vec<Conv>,
    bns: Vec<BatchNorm>,
    acts: Vec<Array3<f32>>,
}

impl ResBlock {
    fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            convs: (0..3).map(|_| Conv::new(width, width, 3, 1, false, rng)).collect(),
            bns: (0..3).map(|_| BatchNorm::new(width)).collect(),
            acts: Vec::new(),
        }
    }

    fn infer(&self, x: &Array3<f32>, time: usize) -> Array3<f32> {
        let mut h = x.clone();
        for i in 0..3 {
            h = self.bns[i].infer(&self.convs[i].infer(&h, time, 1));
            if i < 2 {
                h = relu(h);
            }
        }
        h + x
    }

    fn train_forward(&mut self, x: &Array3<f32>, time: usize) -> Array3<f32> {
        self.acts.clear();
        let mut h = x.clone();
        for i in 0..3 {
            h = self.convs[i].train_forward(h, time, 1);
            h = self.bns[i].train_forward(h);
            if i < 2 {
                h = relu(h);
                self.acts.push(h.clone());
            }
        }
        h + x
    }

    fn backward(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let mut d = dy.clone();
        for i in (0..3).rev() {
            if i < 2 {
                d = relu_backward(d, &self.acts[i]);
            }
            d = self.bns[i].backward(&d);
            d = self.convs[i].backward(&d);
        }
        d + dy
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(&mut self.bns) {
            v.extend(c.params_mut());
            v.extend(b.params_mut());
        }
        v
    }
}

/// Early conv, three residual blocks, late 1x1 conv; all along time.
#[derive(Debug, Clone)]
struct ResidualNet {
    early: Conv,
    early_bn: BatchNorm,
    early_act: Option<Array3<f32>>,
    blocks: Vec<ResBlock>,
    late: Conv,
    late_bn: BatchNorm,
}

impl ResidualNet {
    fn new(in_ch: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            early: Conv::new(in_ch, width, 3, 1, false, rng),
            early_bn: BatchNorm::new(width),
            early_act: None,
            blocks: (0..3).map(|_| ResBlock::new(width, rng)).collect(),
            late: Conv::new(width, INSTRUMENTS, 1, 1, false, rng),
            late_bn: BatchNorm::new(INSTRUMENTS),
        }
    }

    fn infer(&self, x: &Array3<f32>) -> Array3<f32> {
        let t = x.shape()[2];
        let mut h = relu(self.early_bn.infer(&self.early.infer(x, t, 1)));
        for b in &self.blocks {
            h = b.infer(&h, t);
        }
        self.late_bn.infer(&self.late.infer(&h, t, 1))
    }

    fn train_forward(&mut self, x: Array3<f32>) -> Array3<f32> {
        let t = x.shape()[2];
        let h = self.early.train_forward(x, t, 1);
        let mut h = relu(self.early_bn.train_forward(h));
        self.early_act = Some(h.clone());
        for b in &mut self.blocks {
            h = b.train_forward(&h, t);
        }
        let h = self.late.train_forward(h, t, 1);
        self.late_bn.train_forward(h)
    }

    fn backward(&mut self, dy: &Array3<f32>) {
        let mut d = self.late.backward(&self.late_bn.backward(dy));
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        let act = self.early_act.take().expect("train_forward first");
        let d = relu_backward(d, &act);
        self.early.backward(&self.early_bn.backward(&d));
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.early.params_mut();
        v.extend(self.early_bn.params_mut());
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.late.params_mut());
        v.extend(self.late_bn.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
struct BaselineBlock {
    conv: Conv,
    bn: BatchNorm,
    act: Option<Array3<f32>>,
    pick: Vec<u8>,
}

/// Four conv/bn/relu/pool blocks over (time, freq), frequency mean, 1x1 head.
#[derive(Debug, Clone)]
struct BaselineNet {
    blocks: Vec<BaselineBlock>,
    head: Conv,
    last_freq: usize,
}

impl BaselineNet {
    fn new(in_ch: usize, base: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut ch = in_ch;
        let blocks = (0..4)
            .map(|b| {
                let out = base << b;
                let block = BaselineBlock {
                    conv: Conv::new(ch, out, 3, 3, false, rng),
                    bn: BatchNorm::new(out),
                    act: None,
                    pick: Vec::new(),
                };
                ch = out;
                block
            })
            .collect();
        Self {
            blocks,
            head: Conv::new(ch, INSTRUMENTS, 1, 1, true, rng),
            last_freq: 0,
        }
    }

    fn infer(&self, x: &Array3<f32>, time: usize, mut freq: usize) -> Array3<f32> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = relu(b.bn.infer(&b.conv.infer(&h, time, freq)));
            h = pool_freq(&h, time, freq).0;
            freq /= 2;
        }
        self.head.infer(&mean_freq(&h, time, freq), time, 1)
    }

    fn train_forward(&mut self, x: Array3<f32>, time: usize, mut freq: usize) -> Array3<f32> {
        let mut h = x;
        for b in &mut self.blocks {
            h = b.conv.train_forward(h, time, freq);
            h = relu(b.bn.train_forward(h));
            let (pooled, pick) = pool_freq(&h, time, freq);
            b.act = Some(h);
            b.pick = pick;
            h = pooled;
            freq /= 2;
        }
        self.last_freq = freq;
        self.head.train_forward(mean_freq(&h, time, freq), time, 1)
    }

    fn backward(&mut self, dy: &Array3<f32>, time: usize) {
        let mut freq = self.last_freq;
        let mut d = mean_freq_backward(&self.head.backward(dy), freq);
        for b in self.blocks.iter_mut().rev() {
            let act = b.act.take().expect("train_forward first");
            let full = act.shape()[2] / time;
            d = pool_freq_backward(&d, &b.pick, time, full);
            d = relu_backward(d, &act);
            d = b.conv.backward(&b.bn.backward(&d));
            freq = full;
        }
        debug_assert!(freq > 0);
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            v.extend(b.bn.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
enum Net {
    Residual(ResidualNet),
    Baseline(BaselineNet),
}

/// A network built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    net: Net,
}

impl Model {
    /// Builds the network with He-normal weights drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = spec.input;
        let net = match spec.variant {
            Variant::Baseline2d => Net::Baseline(BaselineNet::new(input.channels, spec.base_channels, &mut rng)),
            _ => Net::Residual(ResidualNet::new(input.channels * input.bins, spec.width, &mut rng)),
        };
        Self { spec, net }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Trainable and buffer tensors in a fixed order (the checkpoint order).
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.net {
            Net::Residual(n) => n.params_mut(),
            Net::Baseline(n) => n.params_mut(),
        }
    }

    pub fn param_values(&mut self) -> Vec<Vec<f32>> {
        self.params_mut().into_iter().map(|p| p.value.clone()).collect()
    }

    pub fn trainable_count(&mut self) -> usize {
        self.params_mut().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn check(&self, input: &InputTensor) -> Result<()> {
        let expected = self.spec.input.shape();
        if input.shape() != expected {
            return Err(Error::shape(
                format!("{} input", self.spec.variant),
                &expected,
                &input.shape(),
            ));
        }
        Ok(())
    }

    /// Packs inputs into the network's activation layout.
    fn pack(&self, inputs: &[&InputTensor]) -> Result<Array3<f32>> {
        for i in inputs {
            self.check(i)?;
        }
        let [c, t, f] = self.spec.input.shape();
        let mut out = match self.net {
            // (B, C*F, T): channel-major flattening of (channel, bin)
            Net::Residual(_) => Array3::zeros((inputs.len(), c * f, t)),
            // (B, C, T*F)
            Net::Baseline(_) => Array3::zeros((inputs.len(), c, t * f)),
        };
        for (mut dst, input) in out.outer_iter_mut().zip(inputs) {
            match self.net {
                Net::Residual(_) => {
                    let flat = input
                        .data
                        .view()
                        .permuted_axes([0, 2, 1])
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((c * f, t))
                        .expect("contiguous");
                    dst.assign(&flat);
                }
                Net::Baseline(_) => {
                    let flat = input.data.view().into_shape_with_order((c, t * f)).expect("contiguous");
                    dst.assign(&flat);
                }
            }
        }
        Ok(out)
    }

    /// Evaluation-mode logits, `(batch, instruments, frames)`.
    pub fn logits(&self, inputs: &[&InputTensor]) -> Result<Array3<f32>> {
        let x = self.pack(inputs)?;
        let [_, t, f] = self.spec.input.shape();
        Ok(match &self.net {
            Net::Residual(n) => n.infer(&x),
            Net::Baseline(n) => n.infer(&x, t, f),
        })
    }

    /// Training-mode logits; caches activations for [`Model::backward`] and
    /// updates batch-norm running statistics.
    pub fn train_logits(&mut self, inputs: &[&InputTensor]) -> Result<Array3<f32>> {
        let x = self.pack(inputs)?;
        let [_, t, f] = self.spec.input.shape();
        Ok(match &mut self.net {
            Net::Residual(n) => n.train_forward(x),
            Net::Baseline(n) => n.train_forward(x, t, f),
        })
    }

    /// Accumulates parameter gradients for the last [`Model::train_logits`].
    pub fn backward(&mut self, dlogits: &Array3<f32>) {
        let t = self.spec.input.frames;
        match &mut self.net {
            Net::Residual(n) => n.backward(dlogits),
            Net::Baseline(n) => n.backward(dlogits, t),
        }
    }

    pub fn forward_batch(&self, inputs: &[&InputTensor]) -> Result<Vec<PredictionRoll>> {
        let logits = self.logits(inputs)?;
        logits
            .outer_iter()
            .map(|l| {
                let probs: Array2<f32> = l.t().mapv(sigmoid);
                Ok(PredictionRoll {
                    raster: FrameRaster::new(probs, FreqAxis::Instruments)?,
                })
            })
            .collect()
    }

    pub fn forward(&self, input: &InputTensor) -> Result<PredictionRoll> {
        Ok(self.forward_batch(&[input])?.pop().expect("one input"))
    }
}

/// `(frames, instruments)` label rolls stacked into `(batch, instruments, frames)`.
pub fn stack_labels(labels: &[&Array2<f32>]) -> Array3<f32> {
    let mut out = Array3::zeros((labels.len(), INSTRUMENTS, FRAMES));
    for (mut dst, l) in out.outer_iter_mut().zip(labels) {
        dst.assign(&l.t());
    }
    out
}

/// Helper for tests and tools: `(batch, instruments, frames)` logits back to
/// per-example `(frames, instruments)` matrices.
pub fn unstack_frames(x: &Array3<f32>) -> Vec<Array2<f32>> {
    x.axis_iter(Axis(0)).map(|l| l.t().to_owned()).collect()
}
