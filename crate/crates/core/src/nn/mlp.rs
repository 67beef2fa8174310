use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use super::kernels;
use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, m: &mut Array2<f64>) {
        match self {
            Activation::Elu => m.mapv_inplace(kernels::elu),
            Activation::Tanh => m.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    fn apply_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Identity => v,
        }
    }
}

/// Layer sizes (input, hidden.., output) and one activation per linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    /// ELU on every hidden layer, linear output.
    pub fn elu_hidden(layer_sizes: &[usize]) -> Self {
        let n = layer_sizes.len().saturating_sub(1);
        let mut activations = vec![Activation::Elu; n];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        MlpSpec {
            layer_sizes: layer_sizes.to_vec(),
            activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least an input and an output size".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("MLP layer sizes must be positive".into()));
        }
        if self.activations.len() != self.layer_sizes.len() - 1 {
            return Err(Error::dim(
                "MLP activations",
                self.layer_sizes.len() - 1,
                self.activations.len(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// An MLP whose parameters live in a [`ParamSet`] under `{prefix}l{i}.weight`
/// (`[out, in]`) and `{prefix}l{i}.bias`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub prefix: String,
}

impl Mlp {
    pub fn new(spec: MlpSpec, prefix: &str) -> Result<Self> {
        spec.validate()?;
        Ok(Mlp {
            spec,
            prefix: prefix.to_string(),
        })
    }

    fn weight_name(&self, i: usize) -> String {
        format!("{}l{i}.weight", self.prefix)
    }

    fn bias_name(&self, i: usize) -> String {
        format!("{}l{i}.bias", self.prefix)
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layer_sizes.len() - 1
    }

    /// Orthogonal weights (`hidden_gain` for hidden layers, `output_gain` for
    /// the last), zero biases.
    pub fn init<R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<()> {
        let n = self.num_layers();
        for i in 0..n {
            let (fan_in, fan_out) = (self.spec.layer_sizes[i], self.spec.layer_sizes[i + 1]);
            let gain = if i + 1 == n { output_gain } else { hidden_gain };
            let w = orthogonal(fan_out, fan_in, gain, rng);
            params.insert(&self.weight_name(i), &[fan_out, fan_in], w)?;
            params.insert_zeros(&self.bias_name(i), &[fan_out])?;
        }
        Ok(())
    }

    /// Adds all-zero parameters.
    pub fn init_zeros(&self, params: &mut ParamSet) -> Result<()> {
        for i in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.spec.layer_sizes[i], self.spec.layer_sizes[i + 1]);
            params.insert_zeros(&self.weight_name(i), &[fan_out, fan_in])?;
            params.insert_zeros(&self.bias_name(i), &[fan_out])?;
        }
        Ok(())
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, params: &ParamSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::dim(
                format!("{}input", self.prefix),
                self.spec.input_dim(),
                x.ncols(),
            ));
        }
        let mut h: Option<Array2<f64>> = None;
        for i in 0..self.num_layers() {
            let w = lookup(params, &self.weight_name(i))?;
            let b = lookup(params, &self.bias_name(i))?;
            let input = h.as_ref().map_or(x, |m| m.view());
            let mut y = kernels::linear(input, w.as_matrix(), Some(b.as_vector()));
            self.spec.activations[i].apply(&mut y);
            h = Some(y);
        }
        Ok(h.expect("at least one layer"))
    }

    pub fn forward(&self, params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        if input.len() != self.spec.input_dim() {
            return Err(Error::dim(
                format!("{}input", self.prefix),
                self.spec.input_dim(),
                input.len(),
            ));
        }
        Ok(self.forward_batch(params, x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_tape(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.spec.input_dim() {
            return Err(Error::dim(
                format!("{}input", self.prefix),
                self.spec.input_dim(),
                cols,
            ));
        }
        let mut h = x;
        for i in 0..self.num_layers() {
            let w = tape.param_by_name(params, &self.weight_name(i))?;
            let b = tape.param_by_name(params, &self.bias_name(i))?;
            let y = tape.linear(h, w, Some(b))?;
            h = self.spec.activations[i].apply_tape(tape, y);
        }
        Ok(h)
    }
}

fn lookup<'a>(params: &'a ParamSet, name: &str) -> Result<&'a super::params::ParamEntry> {
    params
        .get(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
}

/// Forward pass of an unprefixed MLP (`l{i}.weight`, `l{i}.bias`).
pub fn mlp_forward(spec: &MlpSpec, params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
    Mlp::new(spec.clone(), "")?.forward(params, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec {
            layer_sizes: vec![5, 7, 3],
            activations: vec![Activation::Elu, Activation::Elu],
        };
        let mlp = Mlp::new(spec.clone(), "").unwrap();
        let mut p = ParamSet::new();
        mlp.init_zeros(&mut p).unwrap();
        let y = mlp_forward(&spec, &p, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn encoder_sized_mlp_outputs_64() {
        let spec = MlpSpec::elu_hidden(&[175, 128, 64]);
        let mlp = Mlp::new(spec.clone(), "").unwrap();
        let mut p = ParamSet::new();
        mlp.init(&mut p, 2f64.sqrt(), 1.0, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let y = mlp_forward(&spec, &p, &vec![0.1; 175]).unwrap();
        assert_eq!(y.len(), 64);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec {
            layer_sizes: vec![3, 3],
            activations: vec![Activation::Identity],
        };
        let mut p = ParamSet::new();
        p.insert(
            "l0.weight",
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        p.insert_zeros("l0.bias", &[3]).unwrap();
        let v = [0.25, -4.0, 7.5];
        assert_eq!(mlp_forward(&spec, &p, &v).unwrap(), v.to_vec());
    }

    #[test]
    fn wrong_input_length_is_dimension_error() {
        let spec = MlpSpec::elu_hidden(&[4, 2]);
        let mlp = Mlp::new(spec.clone(), "").unwrap();
        let mut p = ParamSet::new();
        mlp.init_zeros(&mut p).unwrap();
        assert!(matches!(
            mlp_forward(&spec, &p, &[1.0; 3]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn single_size_spec_rejected() {
        let spec = MlpSpec {
            layer_sizes: vec![4],
            activations: vec![],
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn taped_and_plain_forward_agree_bitwise() {
        let spec = MlpSpec::elu_hidden(&[6, 5, 4]);
        let mlp = Mlp::new(spec, "net.").unwrap();
        let mut p = ParamSet::new();
        mlp.init(&mut p, 1.3, 0.7, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i as f64 - j as f64) * 0.37);
        let plain = mlp.forward_batch(&p, x.view()).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x);
        let y = mlp.forward_tape(&mut t, &p, xv).unwrap();
        assert_eq!(t.value(y), &plain);
    }
}
