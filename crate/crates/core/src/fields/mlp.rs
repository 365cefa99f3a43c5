//! Small dense multilayer perceptrons evaluated generically over [`Real`],
//! so the same code runs as plain `f64` or records onto a gradient tape.
//!
//! Weight vectors are flat: for each layer, the weight matrix in row-major
//! `(fan_out x fan_in)` order followed by the `fan_out` biases. Keeping
//! weights flat lets the optimizer treat a whole network as one parameter
//! group and lets a hypernetwork emit another network's weights directly.

use rand::Rng;

use crate::diffmath::Real;

use super::FieldError;

/// Per-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// Identity; used on output layers.
    Linear,
    /// `ln(1 + e^x)`: smooth everywhere, which keeps composed distance
    /// fields free of spurious gradient kinks.
    Softplus,
}

/// Architecture of a dense MLP: layer widths plus one activation per layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    /// `widths[0]` is the input width, `widths.last()` the output width.
    widths: Vec<usize>,
    /// One entry per layer, i.e. `widths.len() - 1` entries.
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert!(
            widths.iter().all(|&w| w >= 1),
            "layer widths must be positive"
        );
        assert_eq!(
            activations.len(),
            widths.len() - 1,
            "one activation per layer"
        );
        Self {
            widths,
            activations,
        }
    }

    /// Standard shape used throughout this crate: softplus on every hidden
    /// layer, linear output.
    pub fn softplus_net(widths: Vec<usize>) -> Self {
        let layers = widths.len().saturating_sub(1);
        let mut activations = vec![Activation::Softplus; layers];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Linear;
        }
        Self::new(widths, activations)
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    /// `(fan_in, fan_out)` per layer, in evaluation order.
    pub fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.widths.windows(2).map(|w| (w[0], w[1]))
    }

    /// Total number of scalar parameters (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .map(|(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }

    /// Flat range of the final layer's parameters inside a weight vector.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let total = self.param_count();
        let (fan_in, fan_out) = self.layer_dims().last().unwrap();
        total - (fan_in * fan_out + fan_out)..total
    }
}

/// Evaluate the network on `input`, checking shapes.
///
/// Works on both scalar backends: with tape variables each weighted sum is a
/// chain of fused multiply-adds seeded at the bias, so a layer costs
/// `fan_out * (fan_in + 1)` tape nodes.
pub fn mlp_forward<S: Real>(
    spec: &MlpSpec,
    weights: &[S],
    input: &[S],
) -> Result<Vec<S>, FieldError> {
    if input.len() != spec.input_width() {
        return Err(FieldError::ShapeMismatch {
            what: "MLP input",
            expected: spec.input_width(),
            got: input.len(),
        });
    }
    if weights.len() != spec.param_count() {
        return Err(FieldError::ShapeMismatch {
            what: "MLP weight vector",
            expected: spec.param_count(),
            got: weights.len(),
        });
    }
    Ok(mlp_forward_prechecked(spec, weights, input))
}

/// Forward pass without shape checks; callers validate once up front.
pub(crate) fn mlp_forward_prechecked<S: Real>(spec: &MlpSpec, weights: &[S], input: &[S]) -> Vec<S> {
    debug_assert_eq!(input.len(), spec.input_width());
    debug_assert_eq!(weights.len(), spec.param_count());
    let mut cur = input.to_vec();
    let mut next: Vec<S> = Vec::new();
    let mut offset = 0;
    for (layer, (fan_in, fan_out)) in spec.layer_dims().enumerate() {
        let w = &weights[offset..offset + fan_in * fan_out];
        let b = &weights[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        next.clear();
        next.reserve(fan_out);
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(cur.iter()) {
                acc = acc.fma(*wi, *xi);
            }
            if spec.activations[layer] == Activation::Softplus {
                acc = acc.softplus();
            }
            next.push(acc);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Draw an initial weight vector: weights uniform in
/// `[-sqrt(3/fan_in), +sqrt(3/fan_in)]` (unit-variance preserving for the
/// roughly-linear regime of softplus), biases zero.
///
/// With `zero_output_layer` the final layer's weights *and* biases are all
/// zero, so the network is the constant-zero function at initialization while
/// hidden features still start diverse. A hypernetwork initialized this way
/// emits all-zero target weights regardless of its input.
pub fn init_weights(spec: &MlpSpec, rng: &mut impl Rng, zero_output_layer: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.param_count());
    let layer_count = spec.widths.len() - 1;
    for (layer, (fan_in, fan_out)) in spec.layer_dims().enumerate() {
        let zero = zero_output_layer && layer == layer_count - 1;
        let bound = (3.0 / fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            out.push(if zero { 0.0 } else { rng.gen_range(-bound..bound) });
        }
        out.extend(std::iter::repeat(0.0).take(fan_out));
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::diffmath::scalar;

    use super::*;

    #[test]
    fn param_count_matches_flat_layout() {
        let spec = MlpSpec::softplus_net(vec![3, 16, 16, 1]);
        // (3*16+16) + (16*16+16) + (16*1+1)
        assert_eq!(spec.param_count(), 64 + 272 + 17);
        assert_eq!(spec.output_layer_range(), 64 + 272..64 + 272 + 17);
        assert_eq!(spec.input_width(), 3);
        assert_eq!(spec.output_width(), 1);
    }

    #[test]
    fn forward_matches_a_hand_computed_two_layer_net() {
        // widths [2, 2, 1]: layer 1 softplus, layer 2 linear.
        let spec = MlpSpec::softplus_net(vec![2, 2, 1]);
        // W1 = [[1, -2], [0.5, 0.25]], b1 = [0.1, -0.3]
        // W2 = [[2, -1]], b2 = [0.05]
        let weights = vec![1.0, -2.0, 0.5, 0.25, 0.1, -0.3, 2.0, -1.0, 0.05];
        let x = [0.7, -0.4];
        let h1 = scalar::softplus(1.0 * x[0] - 2.0 * x[1] + 0.1);
        let h2 = scalar::softplus(0.5 * x[0] + 0.25 * x[1] - 0.3);
        let expect = 2.0 * h1 - 1.0 * h2 + 0.05;
        let got = mlp_forward(&spec, &weights, &x).unwrap();
        assert_eq!(got.len(), 1);
        assert!((got[0] - expect).abs() < 1e-15, "{} vs {expect}", got[0]);
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let spec = MlpSpec::softplus_net(vec![3, 4, 2]);
        let w = vec![0.0; spec.param_count()];
        assert!(matches!(
            mlp_forward(&spec, &w, &[1.0, 2.0]),
            Err(FieldError::ShapeMismatch { what: "MLP input", .. })
        ));
        assert!(matches!(
            mlp_forward(&spec, &w[1..], &[1.0, 2.0, 3.0]),
            Err(FieldError::ShapeMismatch {
                what: "MLP weight vector",
                ..
            })
        ));
    }

    #[test]
    fn zeroed_output_layer_makes_the_net_constant_zero() {
        let spec = MlpSpec::softplus_net(vec![4, 8, 8, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = init_weights(&spec, &mut rng, true);
        assert!(w[spec.output_layer_range()].iter().all(|&v| v == 0.0));
        // Hidden layers must not be zero (they would stall learning).
        assert!(w[..spec.output_layer_range().start]
            .iter()
            .any(|&v| v != 0.0));
        for trial in 0..10 {
            let x: Vec<f64> = (0..4).map(|i| (trial * 4 + i) as f64 * 0.37 - 2.0).collect();
            let y = mlp_forward(&spec, &w, &x).unwrap();
            assert_eq!(y, vec![0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn initialization_is_deterministic_per_seed() {
        let spec = MlpSpec::softplus_net(vec![3, 8, 1]);
        let a = init_weights(&spec, &mut ChaCha8Rng::seed_from_u64(9), false);
        let b = init_weights(&spec, &mut ChaCha8Rng::seed_from_u64(9), false);
        let c = init_weights(&spec, &mut ChaCha8Rng::seed_from_u64(10), false);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Biases are zero at init.
        assert_eq!(a[24..32], [0.0; 8]);
    }
}
