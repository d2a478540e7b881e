//! Dense feed-forward networks on flat parameter vectors: tanh hidden
//! layers, identity output, exact reverse-mode gradients.
//!
//! An [`Mlp`] holds only the layer dimensions; parameters live in a
//! [`ParamVector`] whose layout the `Mlp` defines (`layer{i}.weight` with
//! shape `[out, in]` row-major, then `layer{i}.bias`). `backward`
//! accumulates into a caller-owned gradient buffer so batch sums and
//! multi-term losses compose naturally.

use crate::error::{Error, Result};
use crate::params::{Block, Layout, ParamVector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    dims: Vec<usize>,
}

/// Post-activation values per layer, `activations[0]` being the input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Mlp {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Mlp { dims }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn layout(&self) -> Layout {
        let mut blocks = Vec::new();
        for l in 0..self.num_layers() {
            blocks.push(Block {
                name: format!("layer{l}.weight"),
                shape: vec![self.dims[l + 1], self.dims[l]],
            });
            blocks.push(Block {
                name: format!("layer{l}.bias"),
                shape: vec![self.dims[l + 1]],
            });
        }
        Layout::new(blocks).expect("mlp layout is non-empty and positive")
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        if *params.layout() != self.layout() {
            return Err(Error::InvalidArgument(
                "parameter layout does not match network architecture".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: input.len(),
                context: "mlp input".into(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(params, input)?.0)
    }

    pub fn forward_cached(
        &self,
        params: &ParamVector,
        input: &[f64],
    ) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(input)?;
        let values = params.values();
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(input.to_vec());
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &values[off..off + n_out * n_in];
            let b = &values[off + n_out * n_in..off + n_out * n_in + n_out];
            off += n_out * n_in + n_out;
            let prev = &activations[l];
            let last = l + 1 == self.num_layers();
            let mut out = Vec::with_capacity(n_out);
            for i in 0..n_out {
                let mut acc = b[i];
                let row = &w[i * n_in..(i + 1) * n_in];
                for (wij, aj) in row.iter().zip(prev) {
                    acc += wij * aj;
                }
                out.push(if last { acc } else { acc.tanh() });
            }
            activations.push(out);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, MlpCache { activations }))
    }

    /// Backpropagate `d_output` through the cached forward pass, adding
    /// parameter gradients into `d_params` (same layout as the params) and
    /// returning the gradient with respect to the input.
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &MlpCache,
        d_output: &[f64],
        d_params: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(d_output.len(), self.output_dim(), "d_output dimension");
        assert_eq!(d_params.len(), params.len(), "gradient buffer length");
        let values = params.values();

        // block offsets per layer
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for l in 0..self.num_layers() {
            offsets.push(off);
            off += self.dims[l + 1] * self.dims[l] + self.dims[l + 1];
        }

        let mut d_act = d_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let last = l + 1 == self.num_layers();
            let a_out = &cache.activations[l + 1];
            let a_in = &cache.activations[l];

            // identity on the output layer, tanh elsewhere
            let d_z: Vec<f64> = if last {
                d_act
            } else {
                d_act
                    .iter()
                    .zip(a_out)
                    .map(|(d, a)| d * (1.0 - a * a))
                    .collect()
            };

            let w_off = offsets[l];
            let b_off = w_off + n_out * n_in;
            for i in 0..n_out {
                let dzi = d_z[i];
                let row = &mut d_params[w_off + i * n_in..w_off + (i + 1) * n_in];
                for (g, aj) in row.iter_mut().zip(a_in) {
                    *g += dzi * aj;
                }
                d_params[b_off + i] += dzi;
            }

            let w = &values[w_off..w_off + n_out * n_in];
            let mut d_prev = vec![0.0; n_in];
            for i in 0..n_out {
                let dzi = d_z[i];
                let row = &w[i * n_in..(i + 1) * n_in];
                for (dp, wij) in d_prev.iter_mut().zip(row) {
                    *dp += wij * dzi;
                }
            }
            d_act = d_prev;
        }
        d_act
    }
}
