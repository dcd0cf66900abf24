use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::batchnorm::BnMode;
use crate::error::{Error, Result};

/// Width ratio relative to the ×1 network, kept as an exact fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Width {
    num: u32,
    den: u32,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Width {
    pub const FULL: Width = Width { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Width> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Invalid(format!("width {num}/{den} outside (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Width { num: num / g, den: den / g })
    }

    /// `k` atoms of size `1/m`.
    pub fn atoms(k: usize, m: usize) -> Result<Width> {
        Width::new(k as u32, m as u32)
    }

    /// Nearest multiple of `1/den` to `ratio`; errors unless `ratio` is
    /// within 1e-9 of it.
    pub fn from_ratio(ratio: f64, den: usize) -> Result<Width> {
        let k = (ratio * den as f64).round();
        if (k - ratio * den as f64).abs() > 1e-9 {
            return Err(Error::Invalid(format!("width {ratio} is not a multiple of 1/{den}")));
        }
        Width::new(k as u32, den as u32)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Channels of a layer with `full` channels at this width, if exact.
    pub fn scale(self, full: usize) -> Option<usize> {
        let p = full * self.num as usize;
        (p % self.den as usize == 0 && p > 0).then(|| p / self.den as usize)
    }

    /// Number of `1/m` atoms that fit in this width.
    pub fn atoms_in(self, m: usize) -> usize {
        (self.num as usize * m) / self.den as usize
    }
}

impl Ord for Width {
    fn cmp(&self, o: &Self) -> Ordering {
        (self.num as u64 * o.den as u64).cmp(&(o.num as u64 * self.den as u64))
    }
}

impl PartialOrd for Width {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

fn one() -> usize {
    1
}

/// One entry of a declarative layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Dense {
        out: usize,
    },
    BatchNorm,
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

fn yes() -> bool {
    true
}

/// Architecture of the ×1 network. Hidden widths are sliced by the width
/// ratio; raw input channels and the class logits never are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub id: String,
    /// `[C, H, W]` for images or `[D]` for feature vectors.
    pub input: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub bn_mode: BnMode,
    /// Replace every batch-norm with a clean/noised pair.
    #[serde(default)]
    pub dual_bn: bool,
    /// Kaiming fan-in taken from the ×1 network instead of the slice.
    #[serde(default = "yes")]
    pub rescale_init: bool,
    /// Multiply sliced-input layer outputs by `full_in / in`.
    #[serde(default)]
    pub rescale_layer: bool,
}

impl ArchSpec {
    /// CNN for 28×28 three-channel digit images.
    pub fn digits_cnn() -> ArchSpec {
        use LayerSpec::*;
        let conv = |out| Conv2d { out, kernel: 5, stride: 1, padding: 2 };
        let pool = MaxPool2d { kernel: 2, stride: 2 };
        ArchSpec {
            id: "digits_cnn".into(),
            input: vec![3, 28, 28],
            classes: 10,
            layers: vec![
                conv(64), BatchNorm, Relu, pool.clone(),
                conv(64), BatchNorm, Relu, pool,
                conv(128), BatchNorm, Relu,
                Flatten,
                Dense { out: 2048 }, BatchNorm, Relu,
                Dense { out: 512 }, BatchNorm, Relu,
                Dense { out: 10 },
            ],
            bn_mode: BnMode::BatchAverage,
            dual_bn: false,
            rescale_init: true,
            rescale_layer: false,
        }
    }

    /// Small CNN for desk-scale runs on `1×side×side` images.
    pub fn desk_cnn(side: usize, classes: usize) -> ArchSpec {
        use LayerSpec::*;
        let conv = |out| Conv2d { out, kernel: 3, stride: 1, padding: 1 };
        let pool = MaxPool2d { kernel: 2, stride: 2 };
        ArchSpec {
            id: "desk_cnn".into(),
            input: vec![1, side, side],
            classes,
            layers: vec![
                conv(16), BatchNorm, Relu, pool.clone(),
                conv(32), BatchNorm, Relu, pool,
                Flatten,
                Dense { out: 64 }, BatchNorm, Relu,
                Dense { out: classes },
            ],
            bn_mode: BnMode::BatchAverage,
            dual_bn: false,
            rescale_init: true,
            rescale_layer: false,
        }
    }

    /// Multi-layer perceptron with batch-norm after each hidden layer.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> ArchSpec {
        let mut layers = Vec::new();
        for &h in hidden {
            layers.push(LayerSpec::Dense { out: h });
            layers.push(LayerSpec::BatchNorm);
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out: classes });
        ArchSpec {
            id: "mlp".into(),
            input: vec![input],
            classes,
            layers,
            bn_mode: BnMode::BatchAverage,
            dual_bn: false,
            rescale_init: true,
            rescale_layer: false,
        }
    }

    pub fn preset(name: &str, input_side: usize, classes: usize) -> Result<ArchSpec> {
        match name {
            "digits_cnn" => Ok(ArchSpec::digits_cnn()),
            "desk_cnn" => Ok(ArchSpec::desk_cnn(input_side, classes)),
            other => Err(Error::Config(format!("unknown architecture preset `{other}`"))),
        }
    }

    pub(crate) fn last_weight_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }))
    }

    /// Widths at which every hidden layer divides exactly.
    pub fn check_width(&self, width: Width) -> Result<()> {
        let last = self.last_weight_layer();
        for (i, l) in self.layers.iter().enumerate() {
            let out = match l {
                LayerSpec::Conv2d { out, .. } | LayerSpec::Dense { out } => *out,
                _ => continue,
            };
            if Some(i) != last && width.scale(out).is_none() {
                return Err(Error::Config(format!(
                    "layer {i} ({}) has {out} units, not divisible at width {width}",
                    kind_name(l)
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn kind_name(l: &LayerSpec) -> &'static str {
    match l {
        LayerSpec::Conv2d { .. } => "conv2d",
        LayerSpec::Dense { .. } => "dense",
        LayerSpec::BatchNorm => "batch_norm",
        LayerSpec::Relu => "relu",
        LayerSpec::MaxPool2d { .. } => "max_pool2d",
        LayerSpec::Flatten => "flatten",
    }
}
