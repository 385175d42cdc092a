use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    batchnorm_backward, batchnorm_owned, batchnorm_train, concat_channels, conv2d_backward, conv2d_geom, dense,
    dense_backward, maxpool2, maxpool2_backward, relu, relu_backward, relu_owned, softmax, split_channels, BnCache, ConvGeom,
    Padding,
};
use super::tensor::{Scalar, Tensor4};
use crate::error::{invalid, shape, Error, Result};
use crate::synth::ClassLabel;

/// Running-statistics momentum: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// conv, ReLU, pool, batch norm, 1x1 projection, ReLU
    #[default]
    PoolThenNorm,
    /// conv, batch norm, ReLU, pool, 1x1 projection, ReLU
    NormThenActivate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InceptionConfig {
    /// Odd kernel size of each parallel path.
    pub kernels: Vec<usize>,
    /// Convolution channels per path.
    pub path_channels: Vec<usize>,
    /// 1x1 projection channels per path.
    pub proj_channels: Vec<usize>,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub n_classes: usize,
    pub stage_order: StageOrder,
    /// Input rows (frequency bins).
    pub input_height: usize,
    /// Input columns (frames).
    pub input_width: usize,
}

impl Default for InceptionConfig {
    fn default() -> Self {
        Self {
            kernels: vec![1, 3, 5],
            path_channels: vec![4, 4, 4],
            proj_channels: vec![4, 4, 4],
            blocks: 2,
            mlp_hidden: 7,
            n_classes: ClassLabel::COUNT,
            stage_order: StageOrder::PoolThenNorm,
            input_height: 150,
            input_width: 24,
        }
    }
}

impl InceptionConfig {
    /// Single 3x3 path per block: the stacked-convolution baseline.
    pub fn plain_cnn() -> Self {
        Self { kernels: vec![3], path_channels: vec![12], proj_channels: vec![12], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(invalid("a block needs at least one path"));
        }
        if self.path_channels.len() != self.kernels.len() || self.proj_channels.len() != self.kernels.len() {
            return Err(invalid("kernels, path_channels and proj_channels must have equal length"));
        }
        if let Some(k) = self.kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(invalid(format!("kernel sizes must be odd, got {k}")));
        }
        if self.path_channels.iter().chain(&self.proj_channels).any(|&c| c == 0) {
            return Err(invalid("channel counts must be positive"));
        }
        if self.blocks == 0 || self.mlp_hidden == 0 {
            return Err(invalid("blocks and mlp_hidden must be positive"));
        }
        if self.n_classes != ClassLabel::COUNT {
            return Err(invalid(format!("n_classes must be {}, got {}", ClassLabel::COUNT, self.n_classes)));
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        for b in 0..self.blocks {
            if h < 2 || w < 2 {
                return Err(invalid(format!("block {b} input of {h}x{w} is too small for 2x2 pooling")));
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }

    pub fn block_out_channels(&self) -> usize {
        self.proj_channels.iter().sum()
    }

    /// Length of the flattened feature vector entering the MLP.
    pub fn flat_len(&self) -> usize {
        let (h, w) = (0..self.blocks).fold((self.input_height, self.input_width), |(h, w), _| (h / 2, w / 2));
        h * w * self.block_out_channels()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

/// Flat parameter store with its shape manifest, gradients, non-trainable
/// buffers (batch-norm running statistics) and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    pub values: Vec<T>,
    pub grads: Vec<T>,
    pub entries: Vec<ParamEntry>,
    pub buffers: Vec<T>,
    pub buffer_entries: Vec<ParamEntry>,
    pub adam: AdamState<T>,
}

impl<T: Scalar> NetParams<T> {
    fn empty() -> Self {
        Self {
            values: vec![],
            grads: vec![],
            entries: vec![],
            buffers: vec![],
            buffer_entries: vec![],
            adam: AdamState { m: vec![], v: vec![], t: 0 },
        }
    }

    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.values.len();
        let e = ParamEntry { name, shape, offset };
        self.values.resize(offset + e.len(), T::zero());
        self.entries.push(e);
        offset
    }

    fn add_buffer(&mut self, name: String, shape: Vec<usize>, fill: T) -> usize {
        let offset = self.buffers.len();
        let e = ParamEntry { name, shape, offset };
        self.buffers.resize(offset + e.len(), fill);
        self.buffer_entries.push(e);
        offset
    }

    fn finish(&mut self) {
        let n = self.values.len();
        self.grads = vec![T::zero(); n];
        self.adam = AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 };
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn slice(&self, name: &str) -> Option<&[T]> {
        self.entry(name).map(|e| &self.values[e.offset..e.offset + e.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Stage {
    Conv { k: usize, cin: usize, cout: usize, w: usize, b: usize },
    Relu,
    Pool,
    Norm { c: usize, gamma: usize, beta: usize, mean: usize, var: usize },
    Dense { inp: usize, out: usize, w: usize, b: usize },
}

enum StageCache<T> {
    Input(Tensor4<T>),
    Output(Tensor4<T>),
    Pool([usize; 4], Vec<u32>),
    Norm(BnCache<T>),
}

struct ForwardCache<T> {
    blocks: Vec<Vec<Vec<StageCache<T>>>>,
    head: Vec<StageCache<T>>,
    probs: Vec<f64>,
    flat_shape: [usize; 4],
}

/// Inception-style classifier: `blocks` multi-path blocks followed by a
/// one-hidden-layer MLP and softmax.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: InceptionConfig,
    pub params: NetParams<T>,
    blocks: Vec<Vec<Vec<Stage>>>,
    head: Vec<Stage>,
}

/// Owns the activations of the last training-mode forward pass.
pub struct Trainer<T> {
    cache: Option<ForwardCache<T>>,
}

impl<T> Default for Trainer<T> {
    fn default() -> Self {
        Self { cache: None }
    }
}

/// Class distribution for one window or interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs(pub [f64; ClassLabel::COUNT]);

impl ClassProbs {
    pub fn new(p: [f64; ClassLabel::COUNT]) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::Numerical(format!("invalid probability vector {p:?}")));
        }
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self([1.0 / ClassLabel::COUNT as f64; ClassLabel::COUNT])
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.0.len() {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn label(&self) -> ClassLabel {
        ClassLabel::from_index(self.argmax()).expect("index below COUNT")
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the network and draws He-uniform weights from `seed`.
    pub fn new(config: InceptionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = NetParams::empty();
        let mut blocks = Vec::new();
        let mut cin = 1;
        for bi in 0..config.blocks {
            let mut paths = Vec::new();
            for (pi, ((&k, &pc), &proj)) in
                config.kernels.iter().zip(&config.path_channels).zip(&config.proj_channels).enumerate()
            {
                let pre = format!("block{bi}.path{pi}");
                let conv = Stage::Conv {
                    k,
                    cin,
                    cout: pc,
                    w: p.add(format!("{pre}.conv.weight"), vec![k, k, cin, pc]),
                    b: p.add(format!("{pre}.conv.bias"), vec![pc]),
                };
                let norm = Stage::Norm {
                    c: pc,
                    gamma: p.add(format!("{pre}.norm.gamma"), vec![pc]),
                    beta: p.add(format!("{pre}.norm.beta"), vec![pc]),
                    mean: p.add_buffer(format!("{pre}.norm.running_mean"), vec![pc], T::zero()),
                    var: p.add_buffer(format!("{pre}.norm.running_var"), vec![pc], T::one()),
                };
                let projection = Stage::Conv {
                    k: 1,
                    cin: pc,
                    cout: proj,
                    w: p.add(format!("{pre}.proj.weight"), vec![1, 1, pc, proj]),
                    b: p.add(format!("{pre}.proj.bias"), vec![proj]),
                };
                let stages = match config.stage_order {
                    StageOrder::PoolThenNorm => vec![conv, Stage::Relu, Stage::Pool, norm, projection, Stage::Relu],
                    StageOrder::NormThenActivate => {
                        vec![conv, norm, Stage::Relu, Stage::Pool, projection, Stage::Relu]
                    }
                };
                paths.push(stages);
            }
            blocks.push(paths);
            cin = config.block_out_channels();
        }
        let flat = config.flat_len();
        let hidden = config.mlp_hidden;
        let head = vec![
            Stage::Dense {
                inp: flat,
                out: hidden,
                w: p.add("mlp.hidden.weight".into(), vec![flat, hidden]),
                b: p.add("mlp.hidden.bias".into(), vec![hidden]),
            },
            Stage::Relu,
            Stage::Dense {
                inp: hidden,
                out: config.n_classes,
                w: p.add("mlp.out.weight".into(), vec![hidden, config.n_classes]),
                b: p.add("mlp.out.bias".into(), vec![config.n_classes]),
            },
        ];
        p.finish();
        let mut model = Self { config, params: p, blocks, head };
        model.init(seed);
        Ok(model)
    }

    fn all_stages(&self) -> impl Iterator<Item = &Stage> {
        self.blocks.iter().flatten().flatten().chain(&self.head)
    }

    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages: Vec<Stage> = self.all_stages().copied().collect();
        let v = &mut self.params.values;
        for s in stages {
            match s {
                Stage::Conv { k, cin, cout, w, .. } => {
                    let lim = (6.0 / (k * k * cin) as f64).sqrt();
                    for x in &mut v[w..w + k * k * cin * cout] {
                        *x = T::of(rng.random_range(-lim..lim));
                    }
                }
                Stage::Dense { inp, out, w, .. } => {
                    let lim = (6.0 / inp as f64).sqrt();
                    for x in &mut v[w..w + inp * out] {
                        *x = T::of(rng.random_range(-lim..lim));
                    }
                }
                Stage::Norm { c, gamma, .. } => v[gamma..gamma + c].fill(T::one()),
                Stage::Relu | Stage::Pool => {}
            }
        }
    }

    /// Trainable parameters, including biases and batch-norm scale/shift.
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let want = [self.config.input_height, self.config.input_width, 1];
        if x.shape[1..] != want {
            return Err(shape(format!(
                "model expects {}x{}x1 inputs, got {}x{}x{}",
                want[0], want[1], x.shape[1], x.shape[2], x.shape[3]
            )));
        }
        if x.batch() == 0 {
            return Err(shape("empty batch"));
        }
        Ok(())
    }

    fn stage_infer(&self, s: &Stage, x: Tensor4<T>) -> Result<Tensor4<T>> {
        let v = &self.params.values;
        Ok(match *s {
            Stage::Conv { k, cin, cout, w, b } => {
                let g = ConvGeom::new(x.shape, k, cin, cout, Padding::Same)?;
                conv2d_geom(&x, &v[w..w + k * k * cin * cout], Some(&v[b..b + cout]), &g)
            }
            Stage::Relu => relu_owned(x),
            Stage::Pool => maxpool2(&x)?.0,
            Stage::Norm { c, gamma, beta, mean, var } => {
                let buf = &self.params.buffers;
                let m: Vec<f64> = buf[mean..mean + c].iter().map(|v| v.as_f64()).collect();
                let s: Vec<f64> = buf[var..var + c].iter().map(|v| v.as_f64()).collect();
                batchnorm_owned(x, &v[gamma..gamma + c], &v[beta..beta + c], &m, &s)
            }
            Stage::Dense { inp, out, w, b } => dense(&x, &v[w..w + inp * out], &v[b..b + out], out)?,
        })
    }

    fn blocks_infer(&self, mut x: Tensor4<T>) -> Result<Tensor4<T>> {
        for paths in &self.blocks {
            let mut outs = Vec::with_capacity(paths.len());
            for stages in paths {
                let mut y = x.clone();
                for s in stages {
                    y = self.stage_infer(s, y)?;
                }
                outs.push(y);
            }
            x = concat_channels(&outs)?;
        }
        Ok(x)
    }

    /// Inference-mode logits (running batch-norm statistics).
    pub fn logits(&self, x: &Tensor4<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut y = self.blocks_infer(x.clone())?;
        let n = y.batch();
        y.shape = [n, 1, 1, y.item_len()];
        for s in &self.head {
            y = self.stage_infer(s, y)?;
        }
        Ok(y.data)
    }

    /// Output of one path of one block, for inspection.
    pub fn path_output(&self, block_input: &Tensor4<T>, block: usize, path: usize) -> Result<Tensor4<T>> {
        let stages = self
            .blocks
            .get(block)
            .and_then(|b| b.get(path))
            .ok_or_else(|| invalid(format!("no path {path} in block {block}")))?;
        let mut y = block_input.clone();
        for s in stages {
            y = self.stage_infer(s, y)?;
        }
        Ok(y)
    }

    /// Inference-mode output of every block, in order.
    pub fn block_outputs(&self, x: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        self.check_input(x)?;
        let mut outs = Vec::new();
        let mut y = x.clone();
        for b in 0..self.blocks.len() {
            let parts: Vec<_> =
                (0..self.blocks[b].len()).map(|p| self.path_output(&y, b, p)).collect::<Result<_>>()?;
            y = concat_channels(&parts)?;
            outs.push(y.clone());
        }
        Ok(outs)
    }

    /// Inference on a batch, processed in chunks of `chunk` items.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Vec<ClassProbs>> {
        self.predict_chunked(x, 64)
    }

    pub fn predict_chunked(&self, x: &Tensor4<T>, chunk: usize) -> Result<Vec<ClassProbs>> {
        self.check_input(x)?;
        let item = x.item_len();
        let mut out = Vec::with_capacity(x.batch());
        for part in x.data.chunks(item * chunk.max(1)) {
            let t = Tensor4 { shape: [part.len() / item, x.shape[1], x.shape[2], 1], data: part.to_vec() };
            let logits = self.logits(&t)?;
            for row in logits.chunks_exact(self.config.n_classes) {
                out.push(probs_from(&softmax(row))?);
            }
        }
        Ok(out)
    }

    /// Convenience over [`Model::predict`] for flattened `h x w` windows.
    pub fn predict_windows(&self, windows: &[f32]) -> Result<Vec<ClassProbs>> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let n = windows.len() / (h * w).max(1);
        self.predict(&Tensor4::from_windows(windows, n, h, w)?)
    }

    fn stage_train(
        &mut self,
        s: &Stage,
        x: Tensor4<T>,
    ) -> Result<(Tensor4<T>, StageCache<T>)> {
        let v = &self.params.values;
        Ok(match *s {
            Stage::Conv { k, cin, cout, w, b } => {
                let g = ConvGeom::new(x.shape, k, cin, cout, Padding::Same)?;
                let y = conv2d_geom(&x, &v[w..w + k * k * cin * cout], Some(&v[b..b + cout]), &g);
                (y, StageCache::Input(x))
            }
            Stage::Relu => {
                let y = relu(&x);
                (y.clone(), StageCache::Output(y))
            }
            Stage::Pool => {
                let (y, arg) = maxpool2(&x)?;
                (y, StageCache::Pool(x.shape, arg))
            }
            Stage::Norm { c, gamma, beta, mean, var } => {
                let (y, cache, bm, bv) = batchnorm_train(&x, &v[gamma..gamma + c], &v[beta..beta + c]);
                let buf = &mut self.params.buffers;
                for i in 0..c {
                    buf[mean + i] = T::of(BN_MOMENTUM * buf[mean + i].as_f64() + (1.0 - BN_MOMENTUM) * bm[i]);
                    buf[var + i] = T::of(BN_MOMENTUM * buf[var + i].as_f64() + (1.0 - BN_MOMENTUM) * bv[i]);
                }
                (y, StageCache::Norm(cache))
            }
            Stage::Dense { inp, out, w, b } => {
                let y = dense(&x, &v[w..w + inp * out], &v[b..b + out], out)?;
                (y, StageCache::Input(x))
            }
        })
    }

    fn stage_backward(
        &mut self,
        s: &Stage,
        cache: &StageCache<T>,
        mut dy: Tensor4<T>,
        need_dx: bool,
    ) -> Result<Tensor4<T>> {
        let (v, gr) = (&self.params.values, &mut self.params.grads);
        let accumulate = |dst: &mut [T], src: &[T]| dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
        Ok(match (*s, cache) {
            (Stage::Conv { k, cin, cout, w, b }, StageCache::Input(x)) => {
                let g = ConvGeom::new(x.shape, k, cin, cout, Padding::Same)?;
                let nw = k * k * cin * cout;
                let (dx, dk, db) = conv2d_backward(x, &v[w..w + nw], &dy, &g, need_dx);
                accumulate(&mut gr[w..w + nw], &dk);
                accumulate(&mut gr[b..b + cout], &db);
                dx.unwrap_or_else(|| Tensor4::zeros(x.shape))
            }
            (Stage::Relu, StageCache::Output(y)) => {
                relu_backward(y, &mut dy);
                dy
            }
            (Stage::Pool, StageCache::Pool(shape, arg)) => maxpool2_backward(*shape, arg, &dy),
            (Stage::Norm { c, gamma, beta, .. }, StageCache::Norm(bc)) => {
                let (dx, dg, db) = batchnorm_backward(bc, &v[gamma..gamma + c], &dy);
                accumulate(&mut gr[gamma..gamma + c], &dg);
                accumulate(&mut gr[beta..beta + c], &db);
                dx
            }
            (Stage::Dense { inp, out, w, b }, StageCache::Input(x)) => {
                let (dx, dw, db) = dense_backward(x, &v[w..w + inp * out], &dy);
                accumulate(&mut gr[w..w + inp * out], &dw);
                accumulate(&mut gr[b..b + out], &db);
                dx
            }
            _ => unreachable!("cache kind always matches its stage"),
        })
    }

    /// Training-mode forward pass: batch statistics for batch norm, running
    /// statistics updated, activations retained in `trainer`. Returns the
    /// class probabilities, `n_classes` per item.
    pub fn forward_train(&mut self, trainer: &mut Trainer<T>, x: &Tensor4<T>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let blocks = self.blocks.clone();
        let head = self.head.clone();
        let mut block_caches = Vec::with_capacity(blocks.len());
        let mut y = x.clone();
        for paths in &blocks {
            let mut outs = Vec::with_capacity(paths.len());
            let mut path_caches = Vec::with_capacity(paths.len());
            for stages in paths {
                let mut h = y.clone();
                let mut caches = Vec::with_capacity(stages.len());
                for s in stages {
                    let (o, c) = self.stage_train(s, h)?;
                    caches.push(c);
                    h = o;
                }
                outs.push(h);
                path_caches.push(caches);
            }
            y = concat_channels(&outs)?;
            block_caches.push(path_caches);
        }
        let flat_shape = y.shape;
        let n = y.batch();
        y.shape = [n, 1, 1, y.item_len()];
        let mut head_caches = Vec::with_capacity(head.len());
        for s in &head {
            let (o, c) = self.stage_train(s, y)?;
            head_caches.push(c);
            y = o;
        }
        let probs: Vec<f64> = y.data.chunks_exact(self.config.n_classes).flat_map(softmax).collect();
        trainer.cache = Some(ForwardCache { blocks: block_caches, head: head_caches, probs: probs.clone(), flat_shape });
        Ok(probs)
    }

    /// Gradient of the mean cross-entropy of the last [`Model::forward_train`]
    /// batch against `labels`, written to `params.grads`. Returns the loss.
    pub fn backward(&mut self, trainer: &mut Trainer<T>, labels: &[usize]) -> Result<f64> {
        let cache = trainer
            .cache
            .take()
            .ok_or_else(|| invalid("backward called without a retained forward pass"))?;
        let k = self.config.n_classes;
        let n = cache.probs.len() / k;
        if labels.len() != n {
            return Err(shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid(format!("label {l} out of range")));
        }
        let mut loss = 0.0;
        let mut dlogits = vec![T::zero(); n * k];
        for (i, &l) in labels.iter().enumerate() {
            let p = &cache.probs[i * k..(i + 1) * k];
            loss += xent_loss(l, p);
            for j in 0..k {
                let t = if j == l { 1.0 } else { 0.0 };
                dlogits[i * k + j] = T::of((p[j] - t) / n as f64);
            }
        }
        self.params.grads.iter_mut().for_each(|g| *g = T::zero());
        let head = self.head.clone();
        let mut dy = Tensor4 { shape: [n, 1, 1, k], data: dlogits };
        for (s, c) in head.iter().zip(&cache.head).rev() {
            dy = self.stage_backward(s, c, dy, true)?;
        }
        dy.shape = cache.flat_shape;
        let blocks = self.blocks.clone();
        for (bi, (paths, pcaches)) in blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let widths: Vec<usize> = self.config.proj_channels.clone();
            let parts = split_channels(&dy, &widths);
            let mut dx: Option<Tensor4<T>> = None;
            for ((stages, caches), mut d) in paths.iter().zip(pcaches).zip(parts) {
                for (si, (s, c)) in stages.iter().zip(caches).enumerate().rev() {
                    // The network input needs no gradient.
                    d = self.stage_backward(s, c, d, bi > 0 || si > 0)?;
                }
                match &mut dx {
                    None => dx = Some(d),
                    Some(acc) => acc.data.iter_mut().zip(&d.data).for_each(|(a, b)| *a += *b),
                }
            }
            dy = dx.expect("at least one path");
        }
        Ok(loss / n as f64)
    }
}

fn probs_from(p: &[f64]) -> Result<ClassProbs> {
    let arr: [f64; ClassLabel::COUNT] =
        p.try_into().map_err(|_| shape(format!("expected {} probabilities", ClassLabel::COUNT)))?;
    ClassProbs::new(arr)
}

/// Smallest probability fed to the logarithm.
pub const XENT_FLOOR: f64 = 1e-12;

/// Categorical cross-entropy `-ln max(p[label], 1e-12)`.
pub fn xent_loss(label: usize, probs: &[f64]) -> f64 {
    -probs[label].max(XENT_FLOOR).ln()
}
