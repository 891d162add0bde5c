//! Frame-sequence classifiers. Each spectrogram column (one mel vector) is a
//! time step.
//!
//! `ssm_seq` and `xlstm_seq` are compact reference forms of a selective
//! state-space block and an sLSTM block; they keep the gating structure but
//! not the fused kernels of the originals.

use candle_core::{Module, Tensor, D};
use candle_nn::rnn::{LSTMConfig, LSTM, RNN};
use candle_nn::ops::sigmoid;
use candle_nn::{Linear, VarBuilder};

use super::layers::{apply, conv, Conv, dropout, linear, max_pool2, Bn, CResult, Mode, Norm};
use super::Network;

/// N x 1 x H x W grid -> N x W x H tokens (one per column).
fn tokens(x: &Tensor) -> CResult<Tensor> {
    x.squeeze(1)?.transpose(1, 2)?.contiguous()
}

fn log_sigmoid(x: &Tensor) -> CResult<Tensor> {
    // min(x, 0) - log(1 + exp(-|x|))
    let soft = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    x.minimum(0.0)?.sub(&soft)
}

fn silu(x: &Tensor) -> CResult<Tensor> {
    x.mul(&sigmoid(x)?)
}

/// Two conv blocks, then an LSTM over the pooled time axis.
pub(crate) struct CnnLstm {
    convs: Vec<(Conv, Bn)>,
    lstm: LSTM,
    fc: Linear,
}

impl CnnLstm {
    pub const CHANNELS: [usize; 2] = [32, 64];

    pub fn new(vb: VarBuilder, h: usize, hidden: usize) -> CResult<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c) in Self::CHANNELS.iter().enumerate() {
            let b = vb.pp(format!("conv{}", i + 1));
            convs.push((conv(b.pp("conv"), c_in, c, 3, 1, 1, 1, true)?, Bn::new(c, b.pp("bn"))?));
            c_in = c;
        }
        let feat = c_in * (h / 4);
        Ok(Self {
            convs,
            lstm: candle_nn::rnn::lstm(feat, hidden, LSTMConfig::default(), vb.pp("lstm"))?,
            fc: linear(vb.pp("fc"), hidden, 2)?,
        })
    }
}

impl Network for CnnLstm {
    fn stage_names(&self) -> &'static [&'static str] {
        &["features"]
    }

    fn stage(&self, _index: usize, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let mut x = x.clone();
        for (c, bn) in &self.convs {
            x = bn.forward(&c.forward(&x)?, mode)?.relu()?;
            x = max_pool2(&x)?;
        }
        Ok(x)
    }

    fn head(&self, x: &Tensor, _mode: &mut Mode) -> CResult<Tensor> {
        // N x C x H' x W' -> N x W' x (C * H')
        let (n, c, h, w) = x.dims4()?;
        let seq = x.permute((0, 3, 1, 2))?.reshape((n, w, c * h))?;
        let states = self.lstm.seq(&seq)?;
        let last = states.last().expect("non-empty sequence").h();
        apply(&self.fc, last)
    }
}

struct SsmBlock {
    norm: Norm,
    in_proj: Linear,
    gate: Linear,
    out_proj: Linear,
}

impl SsmBlock {
    fn new(vb: VarBuilder, d: usize) -> CResult<Self> {
        Ok(Self {
            norm: Norm::new(d, vb.pp("norm"))?,
            in_proj: linear(vb.pp("in_proj"), d, 2 * d)?,
            gate: linear(vb.pp("decay"), d, d)?,
            out_proj: linear(vb.pp("out_proj"), d, d)?,
        })
    }

    /// Input-dependent decay `a_t`, state `h_t = a_t h_{t-1} + (1 - a_t) v_t`,
    /// output `h_t * silu(z_t)`.
    fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let (n, t_len, d) = x.dims3()?;
        let u = self.norm.forward(x)?;
        let vz = apply(&self.in_proj, &u)?;
        let v = vz.narrow(D::Minus1, 0, d)?;
        let z = vz.narrow(D::Minus1, d, d)?;
        let a = sigmoid(&apply(&self.gate, &u)?)?;
        let drive = ((1.0 - &a)? * v)?;
        let mut h = Tensor::zeros((n, d), x.dtype(), x.device())?;
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let a_t = a.narrow(1, t, 1)?.squeeze(1)?;
            let b_t = drive.narrow(1, t, 1)?.squeeze(1)?;
            h = ((a_t * &h)? + b_t)?;
            outs.push(h.clone());
        }
        let y = (Tensor::stack(&outs, 1)? * silu(&z)?)?;
        x + apply(&self.out_proj, &y)?
    }
}

/// Gated diagonal recurrence with selective (input-dependent) decay.
pub(crate) struct SsmSeq {
    embed: Linear,
    blocks: Vec<SsmBlock>,
    norm: Norm,
    fc: Linear,
    dropout: f64,
}

impl SsmSeq {
    pub fn new(vb: VarBuilder, features: usize, d: usize, depth: usize) -> CResult<Self> {
        Ok(Self {
            embed: linear(vb.pp("embed"), features, d)?,
            blocks: (0..depth)
                .map(|i| SsmBlock::new(vb.pp("blocks").pp(i.to_string()), d))
                .collect::<CResult<_>>()?,
            norm: Norm::new(d, vb.pp("norm"))?,
            fc: linear(vb.pp("fc"), d, 2)?,
            dropout: 0.1,
        })
    }
}

impl Network for SsmSeq {
    fn head(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let mut h = apply(&self.embed, &tokens(x)?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let pooled = self.norm.forward(&h)?.mean(1)?;
        apply(&self.fc, &dropout(&pooled, self.dropout, mode)?)
    }
}

struct SlstmBlock {
    norm: Norm,
    w: Linear,
    r: Tensor,
    out_proj: Linear,
    d: usize,
}

impl SlstmBlock {
    fn new(vb: VarBuilder, d: usize) -> CResult<Self> {
        Ok(Self {
            norm: Norm::new(d, vb.pp("norm"))?,
            w: linear(vb.pp("w"), d, 4 * d)?,
            r: vb.get((4 * d, d), "recurrent")?,
            out_proj: linear(vb.pp("out_proj"), d, d)?,
            d,
        })
    }

    /// sLSTM cell with exponential input/forget gates and the max-log
    /// stabiliser `m_t`.
    fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let (n, t_len, _) = x.dims3()?;
        let d = self.d;
        let pre = apply(&self.w, &self.norm.forward(x)?)?;
        let zeros = Tensor::zeros((n, d), x.dtype(), x.device())?;
        let (mut h, mut c, mut nrm, mut m) = (zeros.clone(), zeros.clone(), zeros.clone(), zeros);
        let r_t = self.r.t()?;
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let g = (pre.narrow(1, t, 1)?.squeeze(1)? + h.matmul(&r_t)?)?;
            let i_raw = g.narrow(1, 0, d)?;
            let f_log = log_sigmoid(&g.narrow(1, d, d)?)?;
            let z = g.narrow(1, 2 * d, d)?.tanh()?;
            let o = sigmoid(&g.narrow(1, 3 * d, d)?)?;
            let f_shift = (&f_log + &m)?;
            let m_new = f_shift.maximum(&i_raw)?;
            let i_gate = (&i_raw - &m_new)?.exp()?;
            let f_gate = (f_shift - &m_new)?.exp()?;
            c = ((&f_gate * &c)? + (&i_gate * z)?)?;
            nrm = ((f_gate * &nrm)? + i_gate)?;
            h = (o * c.div(&(&nrm + 1e-6)?)?)?;
            m = m_new;
            outs.push(h.clone());
        }
        x + apply(&self.out_proj, &Tensor::stack(&outs, 1)?)?
    }
}

/// Stack of residual sLSTM blocks.
pub(crate) struct XlstmSeq {
    embed: Linear,
    blocks: Vec<SlstmBlock>,
    norm: Norm,
    fc: Linear,
    dropout: f64,
}

impl XlstmSeq {
    pub fn new(vb: VarBuilder, features: usize, d: usize, depth: usize) -> CResult<Self> {
        Ok(Self {
            embed: linear(vb.pp("embed"), features, d)?,
            blocks: (0..depth)
                .map(|i| SlstmBlock::new(vb.pp("blocks").pp(i.to_string()), d))
                .collect::<CResult<_>>()?,
            norm: Norm::new(d, vb.pp("norm"))?,
            fc: linear(vb.pp("fc"), d, 2)?,
            dropout: 0.1,
        })
    }
}

impl Network for XlstmSeq {
    fn head(&self, x: &Tensor, mode: &mut Mode) -> CResult<Tensor> {
        let mut h = apply(&self.embed, &tokens(x)?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let pooled = self.norm.forward(&h)?.mean(1)?;
        apply(&self.fc, &dropout(&pooled, self.dropout, mode)?)
    }
}
