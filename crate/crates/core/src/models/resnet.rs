//! ResNet-18 and its squeeze-and-excitation variant.

use candle_core::{Module, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{apply, conv, Conv, gap, linear, max_pool_3x3_s2, Bn, CResult, Mode};
use super::Network;

struct SqueezeExcite {
    fc1: Linear,
    fc2: Linear,
}

impl SqueezeExcite {
    fn new(vb: VarBuilder, channels: usize, reduction: usize) -> CResult<Self> {
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            fc1: linear(vb.pp("fc1"), channels, hidden)?,
            fc2: linear(vb.pp("fc2"), hidden, channels)?,
        })
    }

    fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let s = apply(&self.fc1, &gap(x)?)?.relu()?;
        let s = candle_nn::ops::sigmoid(&apply(&self.fc2, &s)?)?;
        x.broadcast_mul(&s.unsqueeze(2)?.unsqueeze(3)?)
    }
}

struct BasicBlock {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
    se: Option<SqueezeExcite>,
    downsample: Option<(Conv, Bn)>,
}

impl BasicBlock {
    fn new(vb: VarBuilder, c_in: usize, c_out: usize, stride: usize, se: Option<usize>) -> CResult<Self> {
        let downsample = if stride != 1 || c_in != c_out {
            Some((
                conv(vb.pp("downsample.0"), c_in, c_out, 1, stride, 0, 1, false)?,
                Bn::new(c_out, vb.pp("downsample.1"))?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: conv(vb.pp("conv1"), c_in, c_out, 3, stride, 1, 1, false)?,
            bn1: Bn::new(c_out, vb.pp("bn1"))?,
            conv2: conv(vb.pp("conv2"), c_out, c_out, 3, 1, 1, 1, false)?,
            bn2: Bn::new(c_out, vb.pp("bn2"))?,
            se: se.map(|r| SqueezeExcite::new(vb.pp("se"), c_out, r)).transpose()?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu()?;
        let mut y = self.bn2.forward(&self.conv2.forward(&y)?, mode)?;
        if let Some(se) = &self.se {
            y = se.forward(&y)?;
        }
        let shortcut = match &self.downsample {
            Some((c, bn)) => bn.forward(&c.forward(x)?, mode)?,
            None => x.clone(),
        };
        (y + shortcut)?.relu()
    }
}

pub(crate) struct ResNet {
    stem: (Conv, Bn),
    layers: Vec<Vec<BasicBlock>>,
    fc: Linear,
}

impl ResNet {
    /// `se_reduction` turns every block into an SE block.
    pub fn new(vb: VarBuilder, se_reduction: Option<usize>) -> CResult<Self> {
        let stem = (
            conv(vb.pp("conv1"), 1, 64, 7, 2, 3, 1, false)?,
            Bn::new(64, vb.pp("bn1"))?,
        );
        let mut layers = Vec::new();
        let mut c_in = 64;
        for (i, &c) in [64, 128, 256, 512].iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let lv = vb.pp(format!("layer{}", i + 1));
            layers.push(vec![
                BasicBlock::new(lv.pp("0"), c_in, c, stride, se_reduction)?,
                BasicBlock::new(lv.pp("1"), c, c, 1, se_reduction)?,
            ]);
            c_in = c;
        }
        Ok(Self {
            stem,
            layers,
            fc: linear(vb.pp("fc"), 512, 2)?,
        })
    }
}

impl Network for ResNet {
    fn stage_names(&self) -> &'static [&'static str] {
        &["stem", "layer1", "layer2", "layer3", "layer4"]
    }

    fn stage(&self, index: usize, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        if index == 0 {
            let y = self.stem.1.forward(&self.stem.0.forward(x)?, mode)?.relu()?;
            return max_pool_3x3_s2(&y);
        }
        let mut x = x.clone();
        for block in &self.layers[index - 1] {
            x = block.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn head(&self, x: &Tensor, _mode: &mut Mode) -> CResult<Tensor> {
        apply(&self.fc, &gap(x)?)
    }

    fn cam_weights(&self) -> Option<Tensor> {
        Some(self.fc.weight().clone())
    }
}
