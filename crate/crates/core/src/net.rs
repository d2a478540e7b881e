//! The three function approximators: noise predictor, mask encoder, and
//! signal decoder. All are tanh MLPs over flat `f64` vectors; the noise
//! predictor is conditioned on the step through a sinusoidal embedding
//! concatenated to its input.

use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpCache};
use crate::params::{init_params, ParamVector};
use crate::rng::RngStream;

/// Sinusoidal step embedding of even width `k`: frequencies
/// `10000^(-2j/k)` for `j = 0..k/2`, sines then cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    pub fn new(width: usize) -> Result<Self> {
        if width < 2 || !width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "time embedding width must be even and >= 2, got {width}"
            )));
        }
        let half = width / 2;
        let freqs = (0..half)
            .map(|j| 10000f64.powf(-2.0 * j as f64 / width as f64))
            .collect();
        Ok(TimeEmbedding { freqs })
    }

    pub fn width(&self) -> usize {
        self.freqs.len() * 2
    }

    pub fn embed(&self, t: usize) -> Vec<f64> {
        let tf = t as f64;
        let mut out = Vec::with_capacity(self.width());
        out.extend(self.freqs.iter().map(|w| (w * tf).sin()));
        out.extend(self.freqs.iter().map(|w| (w * tf).cos()));
        out
    }
}

/// Noise predictor: `(x_t, t) -> predicted noise`, input `D + k` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    mlp: Mlp,
    time: TimeEmbedding,
    data_dim: usize,
    params: ParamVector,
}

impl DenoiserNet {
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        time_width: usize,
        stream: &mut RngStream,
    ) -> Result<Self> {
        let time = TimeEmbedding::new(time_width)?;
        let mlp = Mlp::new(data_dim + time.width(), hidden, data_dim);
        let params = init_params(stream, mlp.layout())?;
        Ok(DenoiserNet {
            mlp,
            time,
            data_dim,
            params,
        })
    }

    pub fn zeros(data_dim: usize, hidden: &[usize], time_width: usize) -> Result<Self> {
        let time = TimeEmbedding::new(time_width)?;
        let mlp = Mlp::new(data_dim + time.width(), hidden, data_dim);
        let params = ParamVector::zeros(mlp.layout());
        Ok(DenoiserNet {
            mlp,
            time,
            data_dim,
            params,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.mlp.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    fn net_input(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        if x_t.len() != self.data_dim {
            return Err(Error::DimMismatch {
                expected: self.data_dim,
                got: x_t.len(),
                context: "denoiser input".into(),
            });
        }
        let mut input = Vec::with_capacity(self.mlp.input_dim());
        input.extend_from_slice(x_t);
        input.extend(self.time.embed(t));
        Ok(input)
    }

    /// Predicted noise for the noisy sample `x_t` at step `t`.
    pub fn eval(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.mlp.forward(&self.params, &self.net_input(x_t, t)?)
    }

    pub(crate) fn eval_cached(&self, x_t: &[f64], t: usize) -> Result<(Vec<f64>, MlpCache)> {
        self.mlp
            .forward_cached(&self.params, &self.net_input(x_t, t)?)
    }

    pub(crate) fn backward(&self, cache: &MlpCache, d_out: &[f64], d_params: &mut [f64]) {
        self.mlp.backward(&self.params, cache, d_out, d_params);
    }
}

/// Mask encoder: `x -> (raw mask mean, variance logit)`, both `D` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEncoderNet {
    mlp: Mlp,
    data_dim: usize,
    params: ParamVector,
}

impl MaskEncoderNet {
    pub fn init(data_dim: usize, hidden: &[usize], stream: &mut RngStream) -> Result<Self> {
        let mlp = Mlp::new(data_dim, hidden, 2 * data_dim);
        let params = init_params(stream, mlp.layout())?;
        Ok(MaskEncoderNet {
            mlp,
            data_dim,
            params,
        })
    }

    pub fn zeros(data_dim: usize, hidden: &[usize]) -> Self {
        let mlp = Mlp::new(data_dim, hidden, 2 * data_dim);
        let params = ParamVector::zeros(mlp.layout());
        MaskEncoderNet {
            mlp,
            data_dim,
            params,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.mlp.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.data_dim {
            return Err(Error::DimMismatch {
                expected: self.data_dim,
                got: x.len(),
                context: "mask encoder input".into(),
            });
        }
        Ok(())
    }

    /// Raw mask mean and variance logit, before any clamping.
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let out = self.mlp.forward(&self.params, x)?;
        let (mu_raw, xi) = out.split_at(self.data_dim);
        Ok((mu_raw.to_vec(), xi.to_vec()))
    }

    pub fn eval_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        rows.iter().map(|r| self.eval(r)).collect()
    }

    pub(crate) fn eval_cached(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, MlpCache)> {
        self.check_input(x)?;
        let (out, cache) = self.mlp.forward_cached(&self.params, x)?;
        let (mu_raw, xi) = out.split_at(self.data_dim);
        Ok((mu_raw.to_vec(), xi.to_vec(), cache))
    }

    /// `d_out` is `d_mu_raw` concatenated with `d_xi`.
    pub(crate) fn backward(&self, cache: &MlpCache, d_out: &[f64], d_params: &mut [f64]) {
        self.mlp.backward(&self.params, cache, d_out, d_params);
    }
}

/// Signal decoder: bottleneck sample (`D` wide) to predicted signal (`d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalDecoderNet {
    mlp: Mlp,
    params: ParamVector,
}

impl SignalDecoderNet {
    pub fn init(
        data_dim: usize,
        hidden: &[usize],
        signal_dim: usize,
        stream: &mut RngStream,
    ) -> Result<Self> {
        let mlp = Mlp::new(data_dim, hidden, signal_dim);
        let params = init_params(stream, mlp.layout())?;
        Ok(SignalDecoderNet { mlp, params })
    }

    pub fn zeros(data_dim: usize, hidden: &[usize], signal_dim: usize) -> Self {
        let mlp = Mlp::new(data_dim, hidden, signal_dim);
        let params = ParamVector::zeros(mlp.layout());
        SignalDecoderNet { mlp, params }
    }

    pub fn signal_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.mlp.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn eval(&self, x_s: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward(&self.params, x_s)
    }

    pub(crate) fn eval_cached(&self, x_s: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.mlp.forward_cached(&self.params, x_s)
    }

    /// Returns the gradient with respect to the decoder input.
    pub(crate) fn backward(
        &self,
        cache: &MlpCache,
        d_out: &[f64],
        d_params: &mut [f64],
    ) -> Vec<f64> {
        self.mlp.backward(&self.params, cache, d_out, d_params)
    }
}
