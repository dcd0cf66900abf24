use super::arch::{kind_name, ArchSpec, LayerSpec, Width};
use super::batchnorm::{BatchNorm, BnCache, BnRoute, DualBn, DualBnCache, Phase};
use super::init::kaiming_init_rescaled;
use super::layers::{relu, relu_backward, Conv2d, Dense, MaxPool2d};
use super::loss::Objective;
use super::tensor::Tensor;
use super::Batch;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    DualBn(DualBn),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
}

impl Layer {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::DualBn(d) => vec![&d.clean.gamma, &d.clean.beta, &d.noised.gamma, &d.noised.beta],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::DualBn(d) => vec![
                &mut d.clean.gamma,
                &mut d.clean.beta,
                &mut d.noised.gamma,
                &mut d.noised.beta,
            ],
            _ => vec![],
        }
    }

    fn param_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Dense(_) | Layer::Conv2d(_) => &["weight", "bias"],
            Layer::BatchNorm(_) => &["gamma", "beta"],
            Layer::DualBn(_) => &["clean.gamma", "clean.beta", "noised.gamma", "noised.beta"],
            _ => &[],
        }
    }

    fn buffers(&self) -> Vec<&Tensor> {
        match self {
            Layer::BatchNorm(b) => vec![&b.running_mean, &b.running_var],
            Layer::DualBn(d) => vec![
                &d.clean.running_mean,
                &d.clean.running_var,
                &d.noised.running_mean,
                &d.noised.running_var,
            ],
            _ => vec![],
        }
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::BatchNorm(b) => vec![&mut b.running_mean, &mut b.running_var],
            Layer::DualBn(d) => vec![
                &mut d.clean.running_mean,
                &mut d.clean.running_var,
                &mut d.noised.running_mean,
                &mut d.noised.running_var,
            ],
            _ => vec![],
        }
    }
}

/// Forward-pass configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub phase: Phase,
    pub route: BnRoute,
    /// Fold batch statistics into tracked running statistics.
    pub update_stats: bool,
}

impl Mode {
    pub fn train() -> Mode {
        Mode { phase: Phase::Train, route: BnRoute::Clean, update_stats: true }
    }

    pub fn eval() -> Mode {
        Mode { phase: Phase::Eval, route: BnRoute::Clean, update_stats: false }
    }

    pub fn with_route(self, route: BnRoute) -> Mode {
        Mode { route, ..self }
    }

    pub fn frozen(self) -> Mode {
        Mode { update_stats: false, ..self }
    }
}

#[derive(Debug)]
enum Cache {
    Dense(Tensor),
    Conv { cols: Vec<f64>, in_shape: Vec<usize> },
    Bn(BnCache),
    DualBn(DualBnCache),
    Relu(Tensor),
    Pool { argmax: Vec<usize>, in_len: usize },
    Flatten,
}

/// Per-layer intermediates recorded by a forward pass.
#[derive(Debug)]
pub struct Tape {
    caches: Vec<Cache>,
}

impl Tape {
    /// Batch-norm caches in layer order (dual layers contribute each branch
    /// that ran, clean first).
    pub(crate) fn bn_caches(&self) -> Vec<&BnCache> {
        let mut out = Vec::new();
        for c in &self.caches {
            match c {
                Cache::Bn(b) => out.push(b),
                Cache::DualBn(d) => {
                    if let Some((b, _)) = &d.clean {
                        out.push(b);
                    }
                    if let Some((b, _)) = &d.noised {
                        out.push(b);
                    }
                }
                _ => {}
            }
        }
        out
    }
}

/// A network instantiated at some width of an [`ArchSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub arch: ArchSpec,
    pub width: Width,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

enum Cursor {
    Image { c: usize, full_c: usize, h: usize, w: usize },
    Flat { f: usize, full_f: usize },
}

impl ModelGraph {
    /// Build and initialize `arch` at `width`; initialization is a pure
    /// function of `seed`.
    pub fn build(arch: &ArchSpec, width: Width, seed: u64) -> Result<ModelGraph> {
        let mut model = ModelGraph::skeleton(arch, width)?;
        model.seed = seed;
        model.initialize(seed);
        Ok(model)
    }

    /// Shapes only; all weights zero.
    pub fn skeleton(arch: &ArchSpec, width: Width) -> Result<ModelGraph> {
        arch.check_width(width)?;
        let last = arch
            .last_weight_layer()
            .ok_or_else(|| Error::Config(format!("architecture `{}` has no weight layers", arch.id)))?;
        let mut cur = match arch.input.as_slice() {
            &[c, h, w] => Cursor::Image { c, full_c: c, h, w },
            &[f] => Cursor::Flat { f, full_f: f },
            other => return Err(Error::Config(format!("input shape {other:?} must be [C,H,W] or [D]"))),
        };
        let bad = |i: usize, l: &LayerSpec, what: &str| {
            Error::Config(format!("layer {i} ({}): {what}", kind_name(l)))
        };
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let slice = |full: usize| if i == last { Some(full) } else { width.scale(full) };
            let layer = match (spec, &mut cur) {
                (LayerSpec::Conv2d { out, kernel, stride, padding }, Cursor::Image { c, full_c, h, w }) => {
                    let o = slice(*out).ok_or_else(|| bad(i, spec, "width not divisible"))?;
                    if *stride == 0 || *h + 2 * padding < *kernel || *w + 2 * padding < *kernel {
                        return Err(bad(i, spec, "kernel does not fit the input"));
                    }
                    let conv = Conv2d::new(*c, o, *kernel, *stride, *padding, *full_c, *out);
                    let (ho, wo) = conv.output_hw(*h, *w);
                    cur = Cursor::Image { c: o, full_c: *out, h: ho, w: wo };
                    Layer::Conv2d(conv)
                }
                (LayerSpec::Dense { out }, Cursor::Flat { f, full_f }) => {
                    let o = slice(*out).ok_or_else(|| bad(i, spec, "width not divisible"))?;
                    let d = Dense::new(*f, o, *full_f, *out);
                    cur = Cursor::Flat { f: o, full_f: *out };
                    Layer::Dense(d)
                }
                (LayerSpec::BatchNorm, Cursor::Image { c: n, .. } | Cursor::Flat { f: n, .. }) => {
                    if arch.dual_bn {
                        Layer::DualBn(DualBn::new(*n, arch.bn_mode))
                    } else {
                        Layer::BatchNorm(BatchNorm::new(*n, arch.bn_mode))
                    }
                }
                (LayerSpec::Relu, _) => Layer::Relu,
                (LayerSpec::MaxPool2d { kernel, stride }, Cursor::Image { h, w, .. }) => {
                    if *h < *kernel || *w < *kernel || *stride == 0 {
                        return Err(bad(i, spec, "pool window larger than input"));
                    }
                    let p = MaxPool2d { kernel: *kernel, stride: *stride };
                    let (ho, wo) = p.output_hw(*h, *w);
                    *h = ho;
                    *w = wo;
                    Layer::MaxPool2d(p)
                }
                (LayerSpec::Flatten, Cursor::Image { c, full_c, h, w }) => {
                    cur = Cursor::Flat { f: *c * *h * *w, full_f: *full_c * *h * *w };
                    Layer::Flatten
                }
                (LayerSpec::Flatten, Cursor::Flat { .. }) => Layer::Flatten,
                _ => return Err(bad(i, spec, "incompatible with the preceding layer's output")),
            };
            layers.push(layer);
        }
        match cur {
            Cursor::Flat { f, .. } if f == arch.classes => {}
            _ => {
                return Err(Error::Config(format!(
                    "architecture `{}` must end in {} logits",
                    arch.id, arch.classes
                )))
            }
        }
        Ok(ModelGraph { arch: arch.clone(), width, seed: 0, layers })
    }

    fn initialize(&mut self, seed: u64) {
        let mut r = rng::stream(seed, &[rng::TAG_INIT]);
        let rescale = self.arch.rescale_init;
        let rescale_layer = self.arch.rescale_layer;
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    let fan = if rescale { d.full_in } else { d.in_features() };
                    kaiming_init_rescaled(&mut d.weight, fan, &mut r);
                    if rescale_layer {
                        d.out_scale = d.full_in as f64 / d.in_features() as f64;
                    }
                }
                Layer::Conv2d(c) => {
                    let k2 = c.kernel() * c.kernel();
                    let fan = if rescale { c.full_in * k2 } else { c.in_channels() * k2 };
                    kaiming_init_rescaled(&mut c.weight, fan, &mut r);
                    if rescale_layer {
                        c.out_scale = c.full_in as f64 / c.in_channels() as f64;
                    }
                }
                _ => {}
            }
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn has_dual_bn(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::DualBn(_)))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, p) in l.param_names().iter().zip(l.params()) {
                out.push((format!("{i}.{name}"), p));
            }
        }
        out
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        set_flat(self.params_mut(), flat)
    }

    pub fn flat_buffers(&self) -> Vec<f64> {
        self.buffers().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_buffers(&mut self, flat: &[f64]) -> Result<()> {
        set_flat(self.buffers_mut(), flat)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.arch.input.len() + 1 || x.shape()[1..] != self.arch.input[..] {
            let mut want = vec![x.batch()];
            want.extend_from_slice(&self.arch.input);
            return Err(Error::shape("model input", &want, x.shape()));
        }
        Ok(())
    }

    /// Forward pass without touching running statistics.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        mode.route.validate()?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Dense(d) => (d.forward(&h)?, Cache::Dense(h)),
                Layer::Conv2d(c) => {
                    let (y, cols) = c.forward(&h)?;
                    (y, Cache::Conv { cols, in_shape: h.shape().to_vec() })
                }
                Layer::BatchNorm(b) => {
                    let (y, c) = b.forward(&h, mode.phase)?;
                    (y, Cache::Bn(c))
                }
                Layer::DualBn(d) => {
                    let (y, c) = d.forward(&h, mode.phase, mode.route)?;
                    (y, Cache::DualBn(c))
                }
                Layer::Relu => (relu(&h), Cache::Relu(h)),
                Layer::MaxPool2d(p) => {
                    let (y, argmax) = p.forward(&h)?;
                    (y, Cache::Pool { argmax, in_len: h.len() })
                }
                Layer::Flatten => {
                    let (n, f) = (h.batch(), h.row_len());
                    (h.reshape(&[n, f])?, Cache::Flatten)
                }
            };
            caches.push(cache);
            h = y;
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("forward logits".into()));
        }
        Ok((h, Tape { caches }))
    }

    /// Forward pass that folds batch statistics into tracked BN layers when
    /// `mode.update_stats` is set in the training phase.
    pub fn forward_train(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        let (y, tape) = self.forward(x, mode)?;
        if mode.update_stats && mode.phase == Phase::Train {
            self.commit_stats(&tape);
        }
        Ok((y, tape))
    }

    fn commit_stats(&mut self, tape: &Tape) {
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches) {
            match (layer, cache) {
                (Layer::BatchNorm(b), Cache::Bn(c)) => b.commit(c),
                (Layer::DualBn(d), Cache::DualBn(c)) => d.commit(c),
                _ => {}
            }
        }
    }

    pub fn predict(&self, x: &Tensor, route: BnRoute) -> Result<Tensor> {
        Ok(self.forward(x, Mode::eval().with_route(route))?.0)
    }

    /// Reverse pass: parameter gradients (aligned with [`Self::params`]) and
    /// the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, dlogits: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let mut grads: Vec<Tensor> = self.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut offset = grads.len();
        let mut g = dlogits.data().to_vec();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let np = layer.params().len();
            offset -= np;
            let gs = &mut grads[offset..offset + np];
            match (layer, cache) {
                (Layer::Dense(d), Cache::Dense(x)) => {
                    let (dw, db) = gs.split_at_mut(1);
                    g = d.backward(x, &g, dw[0].data_mut(), db[0].data_mut());
                }
                (Layer::Conv2d(c), Cache::Conv { cols, in_shape }) => {
                    let (dw, db) = gs.split_at_mut(1);
                    g = c.backward(cols, in_shape, &g, dw[0].data_mut(), db[0].data_mut());
                }
                (Layer::BatchNorm(b), Cache::Bn(c)) => {
                    let (dg, db) = gs.split_at_mut(1);
                    g = b.backward(c, &g, 1.0, dg[0].data_mut(), db[0].data_mut());
                }
                (Layer::DualBn(d), Cache::DualBn(c)) => {
                    let mut dx = vec![0.0; g.len()];
                    let (clean, noised) = gs.split_at_mut(2);
                    if let Some((bc, w)) = &c.clean {
                        let (dg, db) = clean.split_at_mut(1);
                        let part = d.clean.backward(bc, &g, *w, dg[0].data_mut(), db[0].data_mut());
                        dx.iter_mut().zip(part).for_each(|(a, b)| *a += b);
                    }
                    if let Some((bn, w)) = &c.noised {
                        let (dg, db) = noised.split_at_mut(1);
                        let part = d.noised.backward(bn, &g, *w, dg[0].data_mut(), db[0].data_mut());
                        dx.iter_mut().zip(part).for_each(|(a, b)| *a += b);
                    }
                    g = dx;
                }
                (Layer::Relu, Cache::Relu(x)) => g = relu_backward(x, &g),
                (Layer::MaxPool2d(_), Cache::Pool { argmax, in_len }) => {
                    g = MaxPool2d::backward(argmax, *in_len, &g);
                }
                (Layer::Flatten, Cache::Flatten) => {}
                _ => return Err(Error::Invalid("tape does not match model layers".into())),
            }
        }
        let mut in_shape = vec![dlogits.batch()];
        in_shape.extend_from_slice(&self.arch.input);
        let dx = Tensor::from_vec(&in_shape, g)?;
        for t in &grads {
            if !t.is_finite() {
                return Err(Error::NonFinite("parameter gradient".into()));
            }
        }
        Ok((grads, dx))
    }

    /// Loss, parameter gradients and input gradient for one batch.
    pub fn loss_and_grads(
        &mut self,
        batch: &Batch,
        objective: &dyn Objective,
        mode: Mode,
    ) -> Result<(f64, Vec<Tensor>, Tensor)> {
        let (logits, tape) = self.forward_train(&batch.inputs, mode)?;
        let (loss, dlogits) = objective.loss_grad(&logits, &batch.labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let (grads, dx) = self.backward(&tape, &dlogits)?;
        Ok((loss, grads, dx))
    }

    /// Loss and input gradient with statistics left untouched.
    pub fn input_gradient(
        &self,
        x: &Tensor,
        labels: &[usize],
        objective: &dyn Objective,
        mode: Mode,
    ) -> Result<(f64, Tensor)> {
        let (logits, tape) = self.forward(x, mode)?;
        let (loss, dlogits) = objective.loss_grad(&logits, labels)?;
        let (_, dx) = self.backward(&tape, &dlogits)?;
        Ok((loss, dx))
    }
}

fn set_flat(targets: Vec<&mut Tensor>, flat: &[f64]) -> Result<()> {
    let total: usize = targets.iter().map(|t| t.len()).sum();
    if total != flat.len() {
        return Err(Error::shape("flat parameter vector", &[total], &[flat.len()]));
    }
    let mut off = 0;
    for t in targets {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    Ok(())
}
