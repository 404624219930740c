//! Fully connected solution network `u(x, t; θ)` with cubic-ReLU activations.
//!
//! Two evaluation routes exist:
//!
//! * [`SmoothField::eval`] runs the network on any [`Real`] one point at a
//!   time. Used for plain values and derivative cross-checks.
//! * [`MlpParams::forward_jet`] evaluates a whole batch at once and propagates
//!   value, input gradient and spatial Laplacian through every layer as extra
//!   column blocks of the same matrix product. [`MlpParams::backward`] then
//!   runs the reverse sweep of that computation, giving parameter gradients of
//!   any loss built from those quantities. Per point this costs `n_in + 2`
//!   column blocks, linear in the dimension.
//!
//! Parameters are flattened layer by layer, weights row-major (`[out][in]`)
//! followed by the bias.

use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ad::{DerivativeBundle, Real, ScalarField, SmoothField};
use crate::error::{Result, RqaError};
use crate::geometry::{substream, Stream};

pub const DEFAULT_WIDTH: usize = 100;
pub const HIDDEN_LAYERS: usize = 3;

/// `σ(z) = max(z³, 0)`.
pub fn activation(z: f64) -> f64 {
    if z > 0.0 {
        z * z * z
    } else {
        0.0
    }
}

/// σ and its first three derivatives. σ'' and σ''' are taken as 0 at z = 0.
#[inline]
fn activation_derivs(z: f64) -> (f64, f64, f64, f64) {
    if z > 0.0 {
        let z2 = z * z;
        (z2 * z, 3.0 * z2, 6.0 * z, 6.0)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    }
}

fn activation_real<R: Real>(z: R) -> R {
    if z.value() > 0.0 {
        z.clone() * z.clone() * z
    } else {
        z.lift(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Layer {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<Layer>,
    pub spatial_dim: usize,
    pub time_dependent: bool,
    pub seed: u64,
}

/// Derivative order requested from the batched forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Value,
    /// Value, input gradient and spatial Laplacian.
    Second,
}

/// Weight and bias initialization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights with variance `1 / (3 fan_in)`, biases uniform on
    /// `±1/√fan_in`.
    #[default]
    FanIn,
    /// Weights with variance `2 / fan_in`, zero biases.
    He,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::FanIn => "fan_in",
            InitScheme::He => "he",
        }
    }

    fn weight_variance(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::FanIn => 1.0 / (3.0 * fan_in as f64),
            InitScheme::He => 2.0 / fan_in as f64,
        }
    }

    fn bias_bound(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::FanIn => 1.0 / (fan_in as f64).sqrt(),
            InitScheme::He => 0.0,
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = RqaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fan_in" => Ok(InitScheme::FanIn),
            "he" => Ok(InitScheme::He),
            _ => Err(RqaError::invalid(format!("unknown init scheme `{s}`"))),
        }
    }
}

impl MlpParams {
    /// Three hidden layers of `width` units with the default [`InitScheme`].
    pub fn init(seed: u64, d: usize, time_dependent: bool, width: usize) -> Result<Self> {
        Self::init_with(InitScheme::default(), seed, d, time_dependent, width)
    }

    /// Weights are normal, truncated at three standard deviations, with the
    /// scheme's variance.
    pub fn init_with(
        scheme: InitScheme,
        seed: u64,
        d: usize,
        time_dependent: bool,
        width: usize,
    ) -> Result<Self> {
        if d == 0 || width == 0 {
            return Err(RqaError::invalid("network needs d >= 1 and width >= 1"));
        }
        let mut rng = substream(seed, Stream::Init, 0);
        let n_in = d + usize::from(time_dependent);
        let mut sizes = vec![n_in];
        sizes.extend(std::iter::repeat_n(width, HIDDEN_LAYERS));
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (inp, out) = (io[0], io[1]);
                let scale = scheme.weight_variance(inp).sqrt();
                let weight = Array2::from_shape_simple_fn((out, inp), || {
                    scale * truncated_normal(&mut rng, 3.0)
                });
                let bound = scheme.bias_bound(inp);
                let bias = if bound > 0.0 {
                    Array1::from_shape_simple_fn(out, || rng.random_range(-bound..bound))
                } else {
                    Array1::zeros(out)
                };
                Layer { weight, bias }
            })
            .collect();
        Ok(MlpParams {
            layers,
            spatial_dim: d,
            time_dependent,
            seed,
        })
    }

    /// Builds a network from explicit layers, checking shapes.
    pub fn from_layers(
        layers: Vec<Layer>,
        spatial_dim: usize,
        time_dependent: bool,
        seed: u64,
    ) -> Result<Self> {
        let p = MlpParams {
            layers,
            spatial_dim,
            time_dependent,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let mut fan_in = self.input_dim();
        if self.layers.is_empty() {
            return Err(RqaError::invalid("network has no layers"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.ncols() != fan_in || l.bias.len() != l.weight.nrows() {
                return Err(RqaError::invalid(format!("inconsistent shape in layer {k}")));
            }
            fan_in = l.weight.nrows();
        }
        if fan_in != 1 {
            return Err(RqaError::invalid("network output dimension must be 1"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.spatial_dim + usize::from(self.time_dependent)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Visits every parameter in flat order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                f(i, w);
                i += 1;
            }
        }
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(RqaError::LengthMismatch {
                what: "flat parameters",
                got: flat.len(),
                expected: self.num_params(),
            });
        }
        self.for_each_param_mut(|i, w| *w = flat[i]);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn assemble_input<'a, R: Real>(&self, x: &'a [R], t: Option<&'a R>) -> Vec<R> {
        let mut input = x.to_vec();
        if self.time_dependent {
            if let Some(t) = t {
                input.push(t.clone());
            }
        }
        input
    }

    fn eval_input<R: Real>(&self, input: Vec<R>) -> R {
        let mut h = input;
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let next: Vec<R> = (0..l.weight.nrows())
                .map(|r| {
                    let row = l.weight.row(r);
                    let mut acc = h[0].lift(l.bias[r]);
                    for (w, hv) in row.iter().zip(&h) {
                        acc = acc + hv.clone() * *w;
                    }
                    if k == last {
                        acc
                    } else {
                        activation_real(acc)
                    }
                })
                .collect();
            h = next;
        }
        h.pop().expect("output layer has one unit")
    }

    /// Plain forward pass. `t` is ignored for stationary networks.
    pub fn forward(&self, x: &[f64], t: Option<f64>) -> Result<f64> {
        if x.len() != self.spatial_dim || (self.time_dependent && t.is_none()) {
            return Err(RqaError::LengthMismatch {
                what: "network input",
                got: x.len() + usize::from(t.is_some()),
                expected: self.input_dim(),
            });
        }
        let v = self.eval_input(self.assemble_input(x, t.as_ref()));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RqaError::Evaluation {
                x: x.to_vec(),
                t: t.unwrap_or(0.0),
                what: "network output",
            })
        }
    }

    /// Batched forward pass over the rows of `inputs` (shape `(n, input_dim)`).
    pub fn forward_jet(&self, inputs: ArrayView2<f64>, order: Order) -> Result<JetTape> {
        let n = inputs.nrows();
        let n_in = self.input_dim();
        if inputs.ncols() != n_in {
            return Err(RqaError::LengthMismatch {
                what: "network input columns",
                got: inputs.ncols(),
                expected: n_in,
            });
        }
        let layout = Layout {
            n,
            n_in,
            n_spatial: self.spatial_dim,
            order,
        };
        let mut h0 = Array2::zeros((n_in, layout.channels() * n));
        h0.slice_mut(s![.., 0..n]).assign(&inputs.t());
        if order == Order::Second {
            for j in 0..n_in {
                h0.slice_mut(s![j, layout.grad_cols(j)]).fill(1.0);
            }
        }

        let mut post = vec![h0];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut a = l.weight.dot(post.last().unwrap());
            a.slice_mut(s![.., 0..n])
                .zip_mut_with(&l.bias.view().insert_axis(Axis(1)), |v, b| *v += b);
            if k < last {
                post.push(layout.activate(&a));
            }
            pre.push(a);
        }
        let out = pre.last().unwrap();
        let value = out.slice(s![0, 0..n]).to_vec();
        let (grad, laplacian) = match order {
            Order::Value => (None, None),
            Order::Second => {
                let mut g = Array2::zeros((n, n_in));
                for j in 0..n_in {
                    g.column_mut(j).assign(&out.slice(s![0, layout.grad_cols(j)]));
                }
                (Some(g), Some(out.slice(s![0, layout.lap_cols()]).to_vec()))
            }
        };
        let output = JetBatch {
            value,
            grad,
            laplacian,
            n_spatial: self.spatial_dim,
        };
        if !output.is_finite() {
            return Err(RqaError::invalid("network batch output is not finite"));
        }
        Ok(JetTape {
            layout,
            pre,
            post,
            output,
        })
    }

    /// Reverse sweep: gradient of `Σ_p adjoint_p · output_p` with respect to
    /// every parameter, in flat order.
    pub fn backward(&self, tape: &JetTape, adjoint: &JetAdjoint) -> Result<Vec<f64>> {
        let layout = tape.layout;
        let n = layout.n;
        if adjoint.value.len() != n {
            return Err(RqaError::LengthMismatch {
                what: "value adjoint",
                got: adjoint.value.len(),
                expected: n,
            });
        }
        let mut abar = Array2::zeros((1, layout.channels() * n));
        abar.slice_mut(s![0, 0..n])
            .assign(&ndarray::ArrayView1::from(&adjoint.value));
        if layout.order == Order::Second {
            if let Some(g) = &adjoint.grad {
                if g.dim() != (n, layout.n_in) {
                    return Err(RqaError::invalid("gradient adjoint has wrong shape"));
                }
                for j in 0..layout.n_in {
                    abar.slice_mut(s![0, layout.grad_cols(j)]).assign(&g.column(j));
                }
            }
            if let Some(l) = &adjoint.laplacian {
                abar.slice_mut(s![0, layout.lap_cols()])
                    .assign(&ndarray::ArrayView1::from(l));
            }
        } else if adjoint.grad.is_some() || adjoint.laplacian.is_some() {
            return Err(RqaError::invalid("derivative adjoints need a second-order tape"));
        }

        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let wbar = abar.dot(&tape.post[k].t());
            let bbar = abar.slice(s![.., 0..n]).sum_axis(Axis(1));
            grads.push((wbar, bbar));
            if k > 0 {
                let hbar = self.layers[k].weight.t().dot(&abar);
                abar = layout.activate_backward(&tape.pre[k - 1], &hbar);
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in grads.iter().rev() {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        Ok(flat)
    }

    /// Loss value and its parameter gradient. `loss` maps the batch outputs to
    /// a scalar and its adjoint with respect to those outputs; a non-finite
    /// loss is rejected before the reverse sweep.
    pub fn parameter_gradient<F>(
        &self,
        inputs: ArrayView2<f64>,
        order: Order,
        loss: F,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&JetBatch) -> Result<(f64, JetAdjoint)>,
    {
        let tape = self.forward_jet(inputs, order)?;
        let (value, adjoint) = loss(&tape.output)?;
        if !value.is_finite() {
            return Err(RqaError::invalid("loss is not finite"));
        }
        Ok((value, self.backward(&tape, &adjoint)?))
    }

    // -----------------------------------------------------------------------
    // Checkpoints
    // -----------------------------------------------------------------------

    /// One JSON header line, then the flat parameters as little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            seed: self.seed,
            spatial_dim: self.spatial_dim,
            time_dependent: self.time_dependent,
            layers: self
                .layers
                .iter()
                .map(|l| [l.weight.nrows(), l.weight.ncols()])
                .collect(),
        };
        let line = serde_json::to_string(&header)
            .map_err(|e| RqaError::Checkpoint(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for v in self.to_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| RqaError::Checkpoint(e.to_string()))?;
        let layers = header
            .layers
            .iter()
            .map(|&[out, inp]| Layer::zeros(out, inp))
            .collect();
        let mut p = MlpParams::from_layers(layers, header.spatial_dim, header.time_dependent, header.seed)
            .map_err(|e| RqaError::Checkpoint(e.to_string()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * p.num_params() {
            return Err(RqaError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * p.num_params(),
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(RqaError::Checkpoint("non-finite parameter".into()));
        }
        p.set_flat(&flat)?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    seed: u64,
    spatial_dim: usize,
    time_dependent: bool,
    /// `[out, in]` per layer.
    layers: Vec<[usize; 2]>,
}

fn truncated_normal<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= bound {
            return z;
        }
    }
}

impl SmoothField for MlpParams {
    fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }
    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
    fn eval<R: Real>(&self, x: &[R], t: &R) -> R {
        self.eval_input(self.assemble_input(x, Some(t)))
    }
}

impl ScalarField for MlpParams {
    fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }
    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
    fn derivatives_at(&self, x: &[f64], t: f64) -> Result<DerivativeBundle> {
        let mut input = x.to_vec();
        if self.time_dependent {
            input.push(t);
        }
        let n_in = input.len();
        let inputs = Array2::from_shape_vec((1, n_in), input).unwrap();
        let tape = self.forward_jet(inputs.view(), Order::Second).map_err(|_| {
            RqaError::Evaluation {
                x: x.to_vec(),
                t,
                what: "network derivatives",
            }
        })?;
        Ok(tape.output.bundle(0))
    }

    fn value_at(&self, x: &[f64], t: f64) -> Result<f64> {
        self.forward(x, Some(t))
    }
}

/// Network outputs for a batch.
#[derive(Clone, Debug)]
pub struct JetBatch {
    pub value: Vec<f64>,
    /// Shape `(n, input_dim)`; spatial columns first, then time.
    pub grad: Option<Array2<f64>>,
    pub laplacian: Option<Vec<f64>>,
    pub n_spatial: usize,
}

impl JetBatch {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
            && self.grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
            && self
                .laplacian
                .as_ref()
                .is_none_or(|l| l.iter().all(|v| v.is_finite()))
    }

    /// Bundle of point `i`. Derivative entries are zero for a value-only batch.
    pub fn bundle(&self, i: usize) -> DerivativeBundle {
        let d = self.n_spatial;
        let (spatial_gradient, time_derivative) = match &self.grad {
            Some(g) => {
                let row = g.row(i);
                (
                    row.slice(s![0..d]).to_vec(),
                    row.get(d).copied().unwrap_or(0.0),
                )
            }
            None => (vec![0.0; d], 0.0),
        };
        DerivativeBundle {
            value: self.value[i],
            spatial_gradient,
            laplacian: self.laplacian.as_ref().map_or(0.0, |l| l[i]),
            time_derivative,
        }
    }
}

/// Sensitivities of a scalar loss to each [`JetBatch`] entry.
#[derive(Clone, Debug)]
pub struct JetAdjoint {
    pub value: Vec<f64>,
    pub grad: Option<Array2<f64>>,
    pub laplacian: Option<Vec<f64>>,
}

impl JetAdjoint {
    pub fn zeros(n: usize, n_in: usize, order: Order) -> Self {
        match order {
            Order::Value => JetAdjoint {
                value: vec![0.0; n],
                grad: None,
                laplacian: None,
            },
            Order::Second => JetAdjoint {
                value: vec![0.0; n],
                grad: Some(Array2::zeros((n, n_in))),
                laplacian: Some(vec![0.0; n]),
            },
        }
    }
}

/// Saved forward state for [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct JetTape {
    layout: Layout,
    /// Pre-activations of every layer (the last is the output).
    pre: Vec<Array2<f64>>,
    /// Input jet followed by each hidden layer's post-activation.
    post: Vec<Array2<f64>>,
    pub output: JetBatch,
}

/// Column layout of the jet matrices: block 0 holds values, blocks
/// `1..=n_in` the input-gradient components, the last block the Laplacian.
#[derive(Clone, Copy, Debug)]
struct Layout {
    n: usize,
    n_in: usize,
    n_spatial: usize,
    order: Order,
}

impl Layout {
    fn channels(&self) -> usize {
        match self.order {
            Order::Value => 1,
            Order::Second => self.n_in + 2,
        }
    }

    fn grad_cols(&self, j: usize) -> std::ops::Range<usize> {
        (1 + j) * self.n..(2 + j) * self.n
    }

    fn lap_cols(&self) -> std::ops::Range<usize> {
        (self.n_in + 1) * self.n..(self.n_in + 2) * self.n
    }

    fn activate(&self, a: &Array2<f64>) -> Array2<f64> {
        let mut h = Array2::zeros(a.raw_dim());
        let n = self.n;
        for (arow, mut hrow) in a.rows().into_iter().zip(h.rows_mut()) {
            let arow = arow.as_slice().unwrap();
            let hrow = hrow.as_slice_mut().unwrap();
            for p in 0..n {
                let (s0, s1, s2, _) = activation_derivs(arow[p]);
                hrow[p] = s0;
                if self.order == Order::Second {
                    let mut sum_sq = 0.0;
                    for j in 0..self.n_in {
                        let aj = arow[(1 + j) * n + p];
                        hrow[(1 + j) * n + p] = s1 * aj;
                        if j < self.n_spatial {
                            sum_sq += aj * aj;
                        }
                    }
                    let lap = (self.n_in + 1) * n + p;
                    hrow[lap] = s2 * sum_sq + s1 * arow[lap];
                }
            }
        }
        h
    }

    fn activate_backward(&self, a: &Array2<f64>, hbar: &Array2<f64>) -> Array2<f64> {
        let mut abar = Array2::zeros(a.raw_dim());
        let n = self.n;
        for ((arow, hrow), mut brow) in a.rows().into_iter().zip(hbar.rows()).zip(abar.rows_mut()) {
            let arow = arow.as_slice().unwrap();
            let hrow = hrow.as_slice().unwrap();
            let brow = brow.as_slice_mut().unwrap();
            for p in 0..n {
                let (_, s1, s2, s3) = activation_derivs(arow[p]);
                if s1 == 0.0 && s2 == 0.0 {
                    continue;
                }
                let mut val = hrow[p] * s1;
                if self.order == Order::Second {
                    let lap = (self.n_in + 1) * n + p;
                    let hb_lap = hrow[lap];
                    let mut sum_sq = 0.0;
                    for j in 0..self.n_in {
                        let c = (1 + j) * n + p;
                        let aj = arow[c];
                        val += hrow[c] * aj * s2;
                        let mut bj = hrow[c] * s1;
                        if j < self.n_spatial {
                            sum_sq += aj * aj;
                            bj += hb_lap * s2 * 2.0 * aj;
                        }
                        brow[c] = bj;
                    }
                    val += hb_lap * (s3 * sum_sq + s2 * arow[lap]);
                    brow[lap] = hb_lap * s1;
                }
                brow[p] = val;
            }
        }
        abar
    }
}
