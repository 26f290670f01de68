use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Cache, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A fixed chain of layers with a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    seed: u64,
    params: Vec<f64>,
    #[serde(skip)]
    shapes: Vec<Vec<usize>>,
    #[serde(skip)]
    offsets: Vec<usize>,
    #[serde(skip)]
    tape: Option<Vec<Cache>>,
}

/// Gradients produced by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Tensor,
}

fn layout(specs: &[LayerSpec], input_shape: &[usize]) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::Config {
            layer: 0,
            message: format!("invalid input shape {input_shape:?}"),
        });
    }
    let mut shapes = vec![input_shape.to_vec()];
    let mut offsets = vec![0];
    for (i, spec) in specs.iter().enumerate() {
        let next = spec.output_shape(&shapes[i], i)?;
        let count = spec.param_count(&shapes[i]);
        offsets.push(offsets[i] + count);
        shapes.push(next);
    }
    Ok((shapes, offsets))
}

impl Network {
    pub fn build(specs: Vec<LayerSpec>, input_shape: &[usize], seed: u64) -> Result<Self> {
        let (shapes, offsets) = layout(&specs, input_shape)?;
        let mut params = vec![0.0; *offsets.last().unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, spec) in specs.iter().enumerate() {
            spec.init(
                &shapes[i],
                &mut params[offsets[i]..offsets[i + 1]],
                &mut rng,
            );
        }
        Ok(Self {
            specs,
            input_shape: input_shape.to_vec(),
            seed,
            params,
            shapes,
            offsets,
            tape: None,
        })
    }

    /// Recomputes derived layout after deserialization.
    pub fn restore(mut self) -> Result<Self> {
        let (shapes, offsets) = layout(&self.specs, &self.input_shape)?;
        if *offsets.last().unwrap() != self.params.len() {
            return Err(Error::shape(format!(
                "stored parameter vector has {} entries, layers need {}",
                self.params.len(),
                offsets.last().unwrap()
            )));
        }
        self.shapes = shapes;
        self.offsets = offsets;
        self.tape = None;
        Ok(self)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameters of layer `index`.
    pub fn layer_params(&self, index: usize) -> &[f64] {
        &self.params[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn layer_params_mut(&mut self, index: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[index], self.offsets[index + 1]);
        &mut self.params[a..b]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.sample_shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "network expects samples of shape {:?}, got {:?}",
                self.input_shape,
                input.sample_shape()
            )));
        }
        if !input.all_finite() {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    fn run(&self, input: &Tensor, record: bool) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(input)?;
        let mut tape = Vec::with_capacity(if record { self.specs.len() } else { 0 });
        let mut x = input.clone();
        for (i, spec) in self.specs.iter().enumerate() {
            let (y, cache) = spec.forward(self.layer_params(i), &x, &self.shapes[i + 1], record);
            if let Some(c) = cache {
                tape.push(c);
            }
            x = y;
        }
        Ok((x, tape))
    }

    /// Forward pass that records activations for a following [`backward`](Self::backward).
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (out, tape) = self.run(input, true)?;
        self.tape = Some(tape);
        Ok(out)
    }

    /// Forward pass without recording; does not touch the network.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.run(input, false)?.0)
    }

    /// Consumes the recorded tape of the last [`forward`](Self::forward).
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Gradients> {
        let tape = self.tape.take().ok_or_else(|| {
            Error::State("backward called without a recorded forward pass".into())
        })?;
        if grad_output.sample_shape() != self.output_shape() {
            return Err(Error::shape(format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_output.sample_shape(),
                self.output_shape()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_output.clone();
        for (i, spec) in self.specs.iter().enumerate().rev() {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            g = spec.backward(
                &self.params[a..b],
                &tape[i],
                &g,
                &self.shapes[i],
                &mut grads[a..b],
            );
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    /// Writes `layer,index,value` rows for inspection.
    pub fn dump_params_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "index", "value"])?;
        for layer in 0..self.specs.len() {
            for (j, v) in self.layer_params(layer).iter().enumerate() {
                w.write_record([layer.to_string(), j.to_string(), format!("{v:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
