use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{sigmoid, Gradients, Tape, Var};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation code {other}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Layer stack description: `widths[i] -> widths[i + 1]` for each layer,
/// with one activation and one dropout rate per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout: Vec<f64>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, dropout: Vec<f64>) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            activations,
            dropout,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same activation on every hidden layer, `output` on the last, uniform dropout
    /// on hidden layers only.
    pub fn uniform(widths: Vec<usize>, hidden: Activation, output: Activation, dropout: f64) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let mut activations = vec![hidden; layers];
        let mut rates = vec![dropout; layers];
        if let Some(last) = activations.last_mut() {
            *last = output;
        }
        if let Some(last) = rates.last_mut() {
            *last = 0.0;
        }
        MlpSpec::new(widths, activations, rates)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least two widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        let layers = self.layers();
        if self.activations.len() != layers || self.dropout.len() != layers {
            return Err(Error::Config(format!(
                "MLP with {layers} layers needs {layers} activations and dropout rates"
            )));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    /// Expected parameter shapes, `[weights, bias]` per layer.
    pub fn param_shapes(&self) -> Vec<[usize; 2]> {
        self.widths
            .windows(2)
            .flat_map(|w| [[w[0], w[1]], [1, w[1]]])
            .collect()
    }
}

/// A multilayer perceptron with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

/// Handles produced when an MLP is recorded on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub output: Var,
    pub params: Vec<Var>,
}

impl Mlp {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, [r, c])| {
                let fan_in = spec.widths[i / 2] as f64;
                let bound = 1.0 / fan_in.sqrt();
                let vals = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor::new(r, c, vals).expect("param shape")
            })
            .collect();
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        check_params(&spec, &params)?;
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records a forward pass on `tape`. Dropout is active only when `training`.
    pub fn record<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        input: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<MlpVars> {
        self.record_inner(tape, input, training, rng, true)
    }

    /// Evaluation-mode recording with the weights as constant leaves, for
    /// differentiating through a frozen network.
    pub fn record_frozen(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mut no_rng = crate::rng::seeded(0);
        Ok(self.record_inner(tape, input, false, &mut no_rng, false)?.output)
    }

    fn record_inner<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        input: Var,
        training: bool,
        rng: &mut R,
        trainable: bool,
    ) -> Result<MlpVars> {
        let width = tape.value(input).cols();
        if width != self.spec.input_width() {
            return Err(Error::dim("layer 0 input width", self.spec.input_width(), width));
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.leaf(p.clone()) })
            .collect();
        let mut h = input;
        for layer in 0..self.spec.layers() {
            let z = tape.matmul(h, params[2 * layer]);
            let z = tape.add_bias(z, params[2 * layer + 1]);
            h = match self.spec.activations[layer] {
                Activation::Identity => z,
                Activation::Relu => tape.relu(z),
                Activation::Sigmoid => tape.sigmoid(z),
            };
            let rate = self.spec.dropout[layer];
            if training && rate > 0.0 {
                let shape = tape.value(h).shape();
                let keep = 1.0 - rate;
                let mask = (0..shape[0] * shape[1])
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                h = tape.mul_const(h, Tensor::new(shape[0], shape[1], mask)?);
            }
        }
        Ok(MlpVars { output: h, params })
    }

    /// Tape-free inference (no dropout). Bit-identical to an evaluation-mode
    /// [`Mlp::record`].
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.spec.input_width() {
            return Err(Error::dim("layer 0 input width", self.spec.input_width(), input.cols()));
        }
        let mut h = input.clone();
        for layer in 0..self.spec.layers() {
            let mut z = h.matmul(&self.params[2 * layer])?;
            let bias = self.params[2 * layer + 1].values();
            let cols = z.cols();
            let act = self.spec.activations[layer];
            for (i, v) in z.values_mut().iter_mut().enumerate() {
                *v = act.apply(*v + bias[i % cols]);
            }
            h = z;
        }
        Ok(h)
    }

    /// Extracts per-parameter gradients in parameter order.
    pub fn collect_grads(&self, vars: &MlpVars, grads: &Gradients) -> Vec<Tensor> {
        vars.params
            .iter()
            .zip(&self.params)
            .map(|(v, p)| grads.wrt_or_zeros(*v, p.shape()))
            .collect()
    }
}

fn check_params(spec: &MlpSpec, params: &[Tensor]) -> Result<()> {
    let shapes = spec.param_shapes();
    if shapes.len() != params.len() {
        return Err(Error::dim("parameter count", shapes.len(), params.len()));
    }
    for (i, (s, p)) in shapes.iter().zip(params).enumerate() {
        if *s != p.shape() {
            return Err(Error::dim(
                format!("layer {} {}", i / 2, if i % 2 == 0 { "weights" } else { "bias" }),
                format!("{s:?}"),
                format!("{:?}", p.shape()),
            ));
        }
    }
    Ok(())
}

/// A recorded forward pass of a bare parameter list.
pub struct Forward {
    pub output: Tensor,
    pub tape: Tape,
    pub output_var: Var,
    pub param_vars: Vec<Var>,
}

/// Runs `spec` with `params` on `input`, returning the output and the tape.
pub fn forward<R: Rng + ?Sized>(
    spec: &MlpSpec,
    params: &[Tensor],
    input: &Tensor,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    let mlp = Mlp::from_params(spec.clone(), params.to_vec())?;
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let vars = mlp.record(&mut tape, x, training, rng)?;
    Ok(Forward {
        output: tape.value(vars.output).clone(),
        output_var: vars.output,
        param_vars: vars.params,
        tape,
    })
}

/// Gradients of every parameter given an upstream gradient on the output.
pub fn backward(fwd: &Forward, seed: Tensor) -> Result<Vec<Tensor>> {
    let grads = fwd.tape.backward_with_seed(fwd.output_var, seed)?;
    Ok(fwd
        .param_vars
        .iter()
        .map(|v| grads.wrt_or_zeros(*v, fwd.tape.value(*v).shape()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![3, 3], vec![Activation::Identity], vec![0.0]).unwrap();
        let params = vec![Tensor::identity(3), Tensor::zeros(1, 3)];
        let x = Tensor::row(vec![0.5, -2.0, 7.0]);
        let out = forward(&spec, &params, &x, false, &mut seeded(0)).unwrap();
        assert_eq!(out.output, x);
    }

    #[test]
    fn relu_with_identity_weights() {
        let spec = MlpSpec::new(vec![2, 2], vec![Activation::Relu], vec![0.0]).unwrap();
        let params = vec![Tensor::identity(2), Tensor::zeros(1, 2)];
        let out = forward(&spec, &params, &Tensor::row(vec![-1.0, 2.0]), false, &mut seeded(0)).unwrap();
        assert_eq!(out.output.values(), &[0.0, 2.0]);
    }

    #[test]
    fn eval_forward_is_deterministic_and_matches_infer() {
        let spec = MlpSpec::new(
            vec![3, 4, 2],
            vec![Activation::Relu, Activation::Sigmoid],
            vec![0.3, 0.0],
        )
        .unwrap();
        let mlp = Mlp::init(spec.clone(), &mut seeded(11)).unwrap();
        let x = Tensor::new(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let a = forward(&spec, mlp.params(), &x, false, &mut seeded(1)).unwrap();
        let b = forward(&spec, mlp.params(), &x, false, &mut seeded(2)).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(mlp.infer(&x).unwrap(), a.output);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = MlpSpec::new(vec![3, 2], vec![Activation::Relu], vec![0.0]).unwrap();
        let err = forward(&spec, &[Tensor::zeros(2, 2), Tensor::zeros(1, 2)], &Tensor::row(vec![1.0; 3]), false, &mut seeded(0))
            .err()
            .unwrap();
        assert!(err.to_string().contains("layer 0 weights"), "{err}");
        let mlp = Mlp::init(spec, &mut seeded(0)).unwrap();
        let err = mlp.infer(&Tensor::row(vec![1.0; 4])).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn dropout_rate_zero_and_eval_mode_are_identity() {
        let spec = MlpSpec::new(vec![4, 6], vec![Activation::Relu], vec![0.0]).unwrap();
        let mlp = Mlp::init(spec, &mut seeded(5)).unwrap();
        let x = Tensor::row(vec![0.3, 0.1, -0.2, 0.9]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = mlp.record(&mut tape, xv, true, &mut seeded(9)).unwrap();
        assert_eq!(tape.value(out.output), &mlp.infer(&x).unwrap());

        let spec = MlpSpec::new(vec![4, 6], vec![Activation::Relu], vec![0.9]).unwrap();
        let mlp = Mlp::init(spec, &mut seeded(5)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = mlp.record(&mut tape, xv, false, &mut seeded(9)).unwrap();
        assert_eq!(tape.value(out.output), &mlp.infer(&x).unwrap());
    }

    #[test]
    fn backward_seed_checked() {
        let spec = MlpSpec::new(vec![2, 3], vec![Activation::Identity], vec![0.0]).unwrap();
        let mlp = Mlp::init(spec.clone(), &mut seeded(0)).unwrap();
        let fwd = forward(&spec, mlp.params(), &Tensor::row(vec![1.0, 2.0]), false, &mut seeded(0)).unwrap();
        assert!(backward(&fwd, Tensor::scalar(1.0)).is_err());
        let g = backward(&fwd, Tensor::row(vec![1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g[0].values(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(g[1].values(), &[1.0, 1.0, 1.0]);
    }
}
