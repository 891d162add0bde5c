//! Plain convolutional stacks: the compact reference CNN, VGG-11 and
//! MobileNet v1.

use candle_core::{Module, Tensor};
use candle_nn::{Linear, VarBuilder};

use super::layers::{apply, conv, Conv, dropout, gap, linear, max_pool2, Bn, CResult, Mode};
use super::Network;

/// Three 3x3 conv blocks (16/32/64) with 2x2 max pooling, GAP, linear head.
pub(crate) struct TinyCnn {
    convs: Vec<Conv>,
    head: Linear,
}

impl TinyCnn {
    pub const WIDTHS: [usize; 3] = [16, 32, 64];

    pub fn new(vb: VarBuilder) -> CResult<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c) in Self::WIDTHS.iter().enumerate() {
            convs.push(conv(vb.pp(format!("conv{}", i + 1)), c_in, c, 3, 1, 1, 1, true)?);
            c_in = c;
        }
        Ok(Self {
            convs,
            head: linear(vb.pp("fc"), c_in, 2)?,
        })
    }
}

impl Network for TinyCnn {
    fn stage_names(&self) -> &'static [&'static str] {
        &["block1", "block2", "features"]
    }

    fn stage(&self, index: usize, x: &Tensor, _mode: &mut Mode) -> CResult<Tensor> {
        max_pool2(&self.convs[index].forward(x)?.relu()?)
    }

    fn head(&self, x: &Tensor, _mode: &mut Mode) -> CResult<Tensor> {
        apply(&self.head, &gap(x)?)
    }

    fn cam_weights(&self) -> Option<Tensor> {
        Some(self.head.weight().clone())
    }
}

/// VGG-11 ("configuration A"): eight conv layers in five pooled groups and a
/// three-layer fully connected classifier with dropout.
pub(crate) struct Vgg {
    groups: Vec<Vec<(Conv, Option<Bn>)>>,
    fc: Vec<Linear>,
    dropout: f64,
}

impl Vgg {
    const CONFIG: [&'static [usize]; 5] = [&[64], &[128], &[256, 256], &[512, 512], &[512, 512]];

    pub fn new(vb: VarBuilder, h: usize, w: usize, width: f64, hidden: usize, batch_norm: bool) -> CResult<Self> {
        let mut groups = Vec::new();
        let mut c_in = 1;
        let mut k = 0;
        for cfg in Self::CONFIG {
            let mut group = Vec::new();
            for &c in cfg {
                let c = ((c as f64 * width).round() as usize).max(1);
                let vbk = vb.pp("features").pp(k.to_string());
                let bn = if batch_norm { Some(Bn::new(c, vbk.pp("bn"))?) } else { None };
                group.push((conv(vbk, c_in, c, 3, 1, 1, 1, true)?, bn));
                c_in = c;
                k += 1;
            }
            groups.push(group);
        }
        let flat = c_in * (h >> 5) * (w >> 5);
        let fc = vec![
            linear(vb.pp("classifier").pp("0"), flat, hidden)?,
            linear(vb.pp("classifier").pp("1"), hidden, hidden)?,
            linear(vb.pp("classifier").pp("2"), hidden, 2)?,
        ];
        Ok(Self {
            groups,
            fc,
            dropout: 0.5,
        })
    }
}

impl Network for Vgg {
    fn stage_names(&self) -> &'static [&'static str] {
        &["group1", "group2", "group3", "group4", "features"]
    }

    fn stage(&self, index: usize, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let mut x = x.clone();
        for (c, bn) in &self.groups[index] {
            x = c.forward(&x)?;
            if let Some(bn) = bn {
                x = bn.forward(&x, mode)?;
            }
            x = x.relu()?;
        }
        max_pool2(&x)
    }

    fn head(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let mut x = x.flatten_from(1)?;
        for fc in &self.fc[..2] {
            x = dropout(&apply(fc, &x)?.relu()?, self.dropout, mode)?;
        }
        apply(&self.fc[2], &x)
    }
}

/// MobileNet v1: a strided stem followed by 13 depthwise-separable blocks.
pub(crate) struct MobileNet {
    stem: (Conv, Bn),
    blocks: Vec<(Conv, Bn, Conv, Bn)>,
    head: Linear,
}

impl MobileNet {
    const BLOCKS: [(usize, usize); 13] = [
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ];

    pub fn new(vb: VarBuilder, width: f64) -> CResult<Self> {
        let scale = |c: usize| ((c as f64 * width).round() as usize).max(1);
        let c0 = scale(32);
        let stem = (
            conv(vb.pp("stem.conv"), 1, c0, 3, 2, 1, 1, false)?,
            Bn::new(c0, vb.pp("stem.bn"))?,
        );
        let mut blocks = Vec::new();
        let mut c_in = c0;
        for (i, &(c, stride)) in Self::BLOCKS.iter().enumerate() {
            let c = scale(c);
            let b = vb.pp("blocks").pp(i.to_string());
            blocks.push((
                conv(b.pp("dw"), c_in, c_in, 3, stride, 1, c_in, false)?,
                Bn::new(c_in, b.pp("dw_bn"))?,
                conv(b.pp("pw"), c_in, c, 1, 1, 0, 1, false)?,
                Bn::new(c, b.pp("pw_bn"))?,
            ));
            c_in = c;
        }
        Ok(Self {
            stem,
            blocks,
            head: linear(vb.pp("fc"), c_in, 2)?,
        })
    }
}

impl Network for MobileNet {
    fn stage_names(&self) -> &'static [&'static str] {
        &["stem", "features"]
    }

    fn stage(&self, index: usize, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        if index == 0 {
            return self.stem.1.forward(&self.stem.0.forward(x)?, mode)?.relu();
        }
        let mut x = x.clone();
        for (dw, dw_bn, pw, pw_bn) in &self.blocks {
            x = dw_bn.forward(&dw.forward(&x)?, mode)?.relu()?;
            x = pw_bn.forward(&pw.forward(&x)?, mode)?.relu()?;
        }
        Ok(x)
    }

    fn head(&self, x: &Tensor, _mode: &mut Mode) -> CResult<Tensor> {
        apply(&self.head, &gap(x)?)
    }

    fn cam_weights(&self) -> Option<Tensor> {
        Some(self.head.weight().clone())
    }
}
