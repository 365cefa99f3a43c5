//! Per-instance shape fields and their composition into a scene field.
//!
//! Each instance is an oriented box plus a learned nonnegative residual: the
//! signed distance reported for a point is `base + residual`, where `base` is
//! the exact box distance and `residual` is an MLP of the point's box-local
//! coordinates. Because the residual never goes negative, the composed shape
//! can only shrink relative to the box — the box stays a guaranteed outer
//! bound, which is what makes it usable as a 3D label for the object inside.
//!
//! Residual networks are not optimized directly. A shared hypernetwork maps
//! each instance's embedding vector to that instance's residual-net weights,
//! so shape information is pooled across instances while every instance still
//! gets its own decoder.

use rand::Rng;

use crate::diffmath::Real;
use crate::geometry::{cuboid_sdf_from_local, cuboid_sdf_posed, local_coords_posed, BoxParams, Vec3};

use super::mlp::{mlp_forward_prechecked, MlpSpec};
use super::FieldError;

/// Width of the per-instance embedding vectors.
pub const EMBED_DIM: usize = 256;

/// Residual magnitude (meters) a freshly initialized field reports
/// everywhere; roughly a centimeter so new fields start as near-exact boxes.
pub const INITIAL_RESIDUAL: f64 = 0.01;

/// Constant folded into the residual net's raw output before the softplus.
/// Chosen as `softplus^-1(INITIAL_RESIDUAL)` so that a zero-initialized
/// hypernetwork (which emits all-zero residual weights) yields
/// `INITIAL_RESIDUAL` rather than `softplus(0) ~ 0.69` meters.
pub(crate) fn residual_raw_offset() -> f64 {
    INITIAL_RESIDUAL.exp_m1().ln()
}

/// Per-instance shape code.
pub type InstanceEmbedding = Vec<f64>;

/// Architecture of the residual decoder and its hypernetwork.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RdfConfig {
    /// Embedding width; input width of the hypernetwork.
    pub embed_dim: usize,
    /// Residual decoder: 3 local coordinates in, 1 raw residual out.
    pub residual: MlpSpec,
    /// Hypernetwork: embedding in, flat residual-decoder weights out.
    pub hyper: MlpSpec,
}

impl RdfConfig {
    /// Full-scale configuration: a 4x256 residual decoder (198,657 weights)
    /// driven by a 4x16 hypernetwork.
    pub fn full() -> Self {
        let residual = MlpSpec::softplus_net(vec![3, 256, 256, 256, 256, 1]);
        let hyper =
            MlpSpec::softplus_net(vec![EMBED_DIM, 16, 16, 16, 16, residual.param_count()]);
        Self {
            embed_dim: EMBED_DIM,
            residual,
            hyper,
        }
    }

    /// Small configuration for tests and quick experiments: a 2x16 residual
    /// decoder (353 weights) behind a 2x16 hypernetwork. Same structure and
    /// code paths as [`RdfConfig::full`], a few hundred times cheaper.
    pub fn compact() -> Self {
        let residual = MlpSpec::softplus_net(vec![3, 16, 16, 1]);
        let hyper = MlpSpec::softplus_net(vec![EMBED_DIM, 16, 16, residual.param_count()]);
        Self {
            embed_dim: EMBED_DIM,
            residual,
            hyper,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.residual.input_width() != 3 {
            return Err(FieldError::ShapeMismatch {
                what: "residual decoder input",
                expected: 3,
                got: self.residual.input_width(),
            });
        }
        if self.residual.output_width() != 1 {
            return Err(FieldError::ShapeMismatch {
                what: "residual decoder output",
                expected: 1,
                got: self.residual.output_width(),
            });
        }
        if self.hyper.input_width() != self.embed_dim {
            return Err(FieldError::ShapeMismatch {
                what: "hypernetwork input",
                expected: self.embed_dim,
                got: self.hyper.input_width(),
            });
        }
        if self.hyper.output_width() != self.residual.param_count() {
            return Err(FieldError::ShapeMismatch {
                what: "hypernetwork output",
                expected: self.residual.param_count(),
                got: self.hyper.output_width(),
            });
        }
        Ok(())
    }
}

/// Run the hypernetwork: embedding `z` plus flat hypernetwork parameters
/// `psi` to a flat residual-decoder weight vector.
pub fn hypernet_generate<S: Real>(
    hyper: &MlpSpec,
    psi: &[S],
    z: &[S],
) -> Result<Vec<S>, FieldError> {
    if z.len() != hyper.input_width() {
        return Err(FieldError::ShapeMismatch {
            what: "instance embedding",
            expected: hyper.input_width(),
            got: z.len(),
        });
    }
    if psi.len() != hyper.param_count() {
        return Err(FieldError::ShapeMismatch {
            what: "hypernetwork parameters",
            expected: hyper.param_count(),
            got: psi.len(),
        });
    }
    Ok(mlp_forward_prechecked(hyper, psi, z))
}

/// Residual at box-local coordinates, without shape checks.
///
/// The decoder sees `(|x|, y, z)`: querying at the absolute lateral offset
/// bakes left/right mirror symmetry into every decoded shape, which matches
/// the objects being labeled and halves what the net has to learn.
#[inline]
pub(crate) fn residual_from_local<S: Real>(residual: &MlpSpec, phi: &[S], p_local: &[S; 3]) -> S {
    let query = [p_local[0].abs(), p_local[1], p_local[2]];
    let raw = mlp_forward_prechecked(residual, phi, &query)[0];
    raw.add_c(residual_raw_offset()).softplus()
}

/// Nonnegative residual distance at box-local point `p_local` under decoder
/// weights `phi`.
pub fn rdf_eval<S: Real>(
    residual: &MlpSpec,
    phi: &[S],
    p_local: [S; 3],
) -> Result<S, FieldError> {
    if phi.len() != residual.param_count() {
        return Err(FieldError::ShapeMismatch {
            what: "residual decoder weights",
            expected: residual.param_count(),
            got: phi.len(),
        });
    }
    if residual.input_width() != 3 || residual.output_width() != 1 {
        return Err(FieldError::ShapeMismatch {
            what: "residual decoder input",
            expected: 3,
            got: residual.input_width(),
        });
    }
    Ok(residual_from_local(residual, phi, &p_local))
}

/// Box pose and extent in evaluation-ready form: half extents plus the yaw
/// rotation as its cosine/sine pair. On the tape backend this is 5 nodes per
/// box per tape, shared by every sample that queries the box.
#[derive(Clone, Copy, Debug)]
pub struct BoundBox<S> {
    pub half: [S; 3],
    pub loc: [S; 3],
    pub cos_yaw: S,
    pub sin_yaw: S,
}

impl<S: Real> BoundBox<S> {
    pub fn new(dim: [S; 3], loc: [S; 3], yaw: S) -> Self {
        Self {
            half: [dim[0].mul_c(0.5), dim[1].mul_c(0.5), dim[2].mul_c(0.5)],
            loc,
            cos_yaw: yaw.cos(),
            sin_yaw: yaw.sin(),
        }
    }
}

impl BoundBox<f64> {
    pub fn from_params(b: &BoxParams) -> Self {
        Self::new(b.dim, b.loc, b.yaw)
    }
}

/// One instance ready for evaluation: pose plus (optionally) decoded residual
/// weights.
#[derive(Clone, Debug)]
pub struct BoundInstance<S> {
    pub geom: BoundBox<S>,
    /// Flat residual-decoder weights; `None` evaluates the bare box.
    pub phi: Option<Vec<S>>,
}

/// A set of instances ready for repeated point queries, with shapes validated
/// once so the per-sample path carries no checks.
#[derive(Clone, Debug)]
pub struct BoundScene<S> {
    instances: Vec<BoundInstance<S>>,
    residual_spec: Option<MlpSpec>,
}

impl<S: Real> BoundScene<S> {
    pub fn new(
        instances: Vec<BoundInstance<S>>,
        residual_spec: Option<MlpSpec>,
    ) -> Result<Self, FieldError> {
        if instances.is_empty() {
            return Err(FieldError::EmptyScene);
        }
        for inst in &instances {
            if let Some(phi) = &inst.phi {
                let spec = residual_spec.as_ref().ok_or(FieldError::MissingResidualSpec)?;
                if phi.len() != spec.param_count() {
                    return Err(FieldError::ShapeMismatch {
                        what: "residual decoder weights",
                        expected: spec.param_count(),
                        got: phi.len(),
                    });
                }
            }
        }
        Ok(Self {
            instances,
            residual_spec,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[BoundInstance<S>] {
        &self.instances
    }

    pub fn residual_spec(&self) -> Option<&MlpSpec> {
        self.residual_spec.as_ref()
    }

    /// Distance from world point `p` to instance `n`.
    #[inline]
    pub fn instance_sdf(&self, n: usize, p: [f64; 3]) -> S {
        let inst = &self.instances[n];
        instance_sdf_impl(p, &inst.geom, inst.phi.as_deref(), self.residual_spec.as_ref())
    }

    /// Distance from world point `p` to the nearest instance (ties keep the
    /// lowest index, so evaluation order never changes results).
    pub fn scene_sdf(&self, p: [f64; 3]) -> S {
        let mut best = self.instance_sdf(0, p);
        for n in 1..self.instances.len() {
            best = best.min(self.instance_sdf(n, p));
        }
        best
    }
}

/// Shared evaluation core for both backends: bare box when no weights are
/// present, box plus decoded residual otherwise.
#[inline]
fn instance_sdf_impl<S: Real>(
    p: [f64; 3],
    geom: &BoundBox<S>,
    phi: Option<&[S]>,
    residual_spec: Option<&MlpSpec>,
) -> S {
    match (phi, residual_spec) {
        (Some(phi), Some(spec)) => {
            let p_local = local_coords_posed(p, &geom.loc, geom.cos_yaw, geom.sin_yaw);
            let base = cuboid_sdf_from_local(&p_local, &geom.half);
            base + residual_from_local(spec, phi, &p_local)
        }
        _ => cuboid_sdf_posed(p, &geom.half, &geom.loc, geom.cos_yaw, geom.sin_yaw),
    }
}

/// An instance as the optimizer sees it: box parameters, embedding, and a
/// cache of the decoded residual weights.
///
/// The weight cache is private and every embedding update clears it, so stale
/// decoder weights cannot outlive the embedding they were generated from.
/// After the shared hypernetwork parameters change, callers re-decode with
/// [`InstanceField::refresh_weights`]; until then the cache keeps serving the
/// previous decode.
#[derive(Clone, Debug)]
pub struct InstanceField {
    pub box_params: BoxParams,
    embedding: InstanceEmbedding,
    phi: Option<Vec<f64>>,
}

impl InstanceField {
    pub fn new(box_params: BoxParams, embedding: InstanceEmbedding) -> Self {
        Self {
            box_params,
            embedding,
            phi: None,
        }
    }

    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    /// Replace the embedding, invalidating any decoded weights.
    pub fn set_embedding(&mut self, z: InstanceEmbedding) {
        self.embedding = z;
        self.phi = None;
    }

    /// Decoded residual weights, if present.
    pub fn weights(&self) -> Option<&[f64]> {
        self.phi.as_deref()
    }

    /// Decode residual weights from the current embedding under hypernetwork
    /// parameters `psi` and cache them. Call again whenever `psi` changes;
    /// embedding changes invalidate the cache automatically.
    pub fn refresh_weights(&mut self, cfg: &RdfConfig, psi: &[f64]) -> Result<(), FieldError> {
        cfg.validate()?;
        if self.embedding.len() != cfg.embed_dim {
            return Err(FieldError::ShapeMismatch {
                what: "instance embedding",
                expected: cfg.embed_dim,
                got: self.embedding.len(),
            });
        }
        self.phi = Some(hypernet_generate(&cfg.hyper, psi, &self.embedding)?);
        Ok(())
    }

    /// Drop decoded weights, reverting the field to the bare box.
    pub fn clear_weights(&mut self) {
        self.phi = None;
    }
}

/// Distance from world point `p` to one instance's composed field. The
/// residual participates only when decoded weights are cached; `residual_spec`
/// must then describe their layout.
pub fn instance_sdf(
    p: Vec3,
    field: &InstanceField,
    residual_spec: Option<&MlpSpec>,
) -> Result<f64, FieldError> {
    let geom = BoundBox::from_params(&field.box_params);
    match (field.weights(), residual_spec) {
        (Some(phi), Some(spec)) => {
            if phi.len() != spec.param_count() {
                return Err(FieldError::ShapeMismatch {
                    what: "residual decoder weights",
                    expected: spec.param_count(),
                    got: phi.len(),
                });
            }
            Ok(instance_sdf_impl(p.to_array(), &geom, Some(phi), Some(spec)))
        }
        (Some(_), None) => Err(FieldError::MissingResidualSpec),
        (None, _) => Ok(instance_sdf_impl(p.to_array(), &geom, None, None)),
    }
}

/// Distance from world point `p` to the nearest instance field; errors on an
/// empty scene. Ties keep the lowest instance index.
pub fn scene_sdf(
    p: Vec3,
    fields: &[InstanceField],
    residual_spec: Option<&MlpSpec>,
) -> Result<f64, FieldError> {
    let mut best: Option<f64> = None;
    for field in fields {
        let v = instance_sdf(p, field, residual_spec)?;
        best = Some(match best {
            None => v,
            Some(b) => b.min(v),
        });
    }
    best.ok_or(FieldError::EmptyScene)
}

/// Draw a fresh embedding, uniform in `[-0.1, 0.1]` per coordinate: small
/// enough that hypernetwork hidden units start in their near-linear range,
/// nonzero so instances are distinguishable from the first step.
pub fn init_embedding(dim: usize, rng: &mut impl Rng) -> InstanceEmbedding {
    (0..dim).map(|_| rng.gen_range(-0.1..0.1)).collect()
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::diffmath::Tape;
    use crate::fields::mlp::init_weights;
    use crate::geometry::cuboid_sdf_world;

    use super::*;

    fn tiny_cfg() -> RdfConfig {
        // Small enough for finite differencing, same structure as the real
        // configurations.
        RdfConfig {
            embed_dim: 4,
            residual: MlpSpec::softplus_net(vec![3, 6, 1]),
            hyper: MlpSpec::softplus_net(vec![4, 8, 6 * 3 + 6 + 6 + 1]),
        }
    }

    fn seeded_field(seed: u64, cfg: &RdfConfig) -> (InstanceField, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = BoxParams::new([1.6, 1.4, 3.8], [0.5, -0.2, 8.0], 0.35);
        let z = init_embedding(cfg.embed_dim, &mut rng);
        // Non-zero output layer so the residual actually varies in space.
        let psi = init_weights(&cfg.hyper, &mut rng, false);
        let mut field = InstanceField::new(b, z);
        field.refresh_weights(cfg, &psi).unwrap();
        (field, psi)
    }

    #[test]
    fn full_scale_shapes_are_locked_in() {
        let cfg = RdfConfig::full();
        cfg.validate().unwrap();
        assert_eq!(cfg.embed_dim, 256);
        assert_eq!(cfg.residual.widths(), &[3, 256, 256, 256, 256, 1]);
        assert_eq!(cfg.residual.param_count(), 198_657);
        assert_eq!(cfg.hyper.widths(), &[256, 16, 16, 16, 16, 198_657]);
        assert_eq!(cfg.hyper.param_count(), 3_382_097);
    }

    #[test]
    fn compact_config_is_valid_and_much_smaller() {
        let cfg = RdfConfig::compact();
        cfg.validate().unwrap();
        assert_eq!(cfg.residual.param_count(), 353);
        assert!(cfg.hyper.param_count() < 11_000);
        // Same embedding width as the full configuration so instance state is
        // interchangeable between the two.
        assert_eq!(cfg.embed_dim, EMBED_DIM);
    }

    #[test]
    fn hypernet_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let psi = init_weights(&cfg.hyper, &mut rng, false);
        let z: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Deterministic mixing coefficients turn the weight vector into one
        // scalar so a single backward sweep covers every output.
        let coeff: Vec<f64> = (0..cfg.hyper.output_width())
            .map(|j| ((j as f64) * 0.7).sin() + 0.2)
            .collect();
        let mix = |phi: &[f64]| -> f64 { phi.iter().zip(&coeff).map(|(p, c)| p * c).sum() };

        let tape = Tape::new();
        let psi_vars: Vec<_> = psi.iter().map(|&v| tape.leaf(v)).collect();
        let z_vars: Vec<_> = z.iter().map(|&v| tape.leaf(v)).collect();
        let phi_vars = hypernet_generate(&cfg.hyper, &psi_vars, &z_vars).unwrap();
        let mut root = phi_vars[0].mul_c(coeff[0]);
        for (v, c) in phi_vars.iter().zip(&coeff).skip(1) {
            root = root.fma_c(*c, *v);
        }
        let grads = tape.backward(root).unwrap();

        let h = 1e-5;
        for k in 0..psi.len() {
            let mut plus = psi.clone();
            let mut minus = psi.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (mix(&hypernet_generate(&cfg.hyper, &plus, &z).unwrap())
                - mix(&hypernet_generate(&cfg.hyper, &minus, &z).unwrap()))
                / (2.0 * h);
            let ad = grads[k];
            let scale = fd.abs().max(1e-3);
            assert!(
                (ad - fd).abs() / scale <= 1e-4,
                "psi[{k}]: ad {ad} vs fd {fd}"
            );
        }
        // The z gradients ride along on the same sweep; spot-check them too.
        for k in 0..z.len() {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (mix(&hypernet_generate(&cfg.hyper, &psi, &plus).unwrap())
                - mix(&hypernet_generate(&cfg.hyper, &psi, &minus).unwrap()))
                / (2.0 * h);
            let ad = grads[psi.len() + k];
            let scale = fd.abs().max(1e-3);
            assert!(
                (ad - fd).abs() / scale <= 1e-4,
                "z[{k}]: ad {ad} vs fd {fd}"
            );
        }
    }

    #[test]
    fn residual_is_nonnegative_everywhere() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            // Random decoder weights at several magnitudes, including ones
            // large enough to drive the raw output strongly negative.
            let scale = rng.gen_range(0.1..30.0);
            let phi: Vec<f64> = (0..cfg.residual.param_count())
                .map(|_| rng.gen_range(-scale..scale))
                .collect();
            for _ in 0..1000 {
                let p = [
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                ];
                let r = rdf_eval(&cfg.residual, &phi, p).unwrap();
                assert!(r >= 0.0, "residual {r} at {p:?}");
            }
        }
    }

    #[test]
    fn residual_is_mirror_symmetric_in_local_x() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi: Vec<f64> = (0..cfg.residual.param_count())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        for _ in 0..200 {
            let (x, y, z) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let a = rdf_eval(&cfg.residual, &phi, [x, y, z]).unwrap();
            let b = rdf_eval(&cfg.residual, &phi, [-x, y, z]).unwrap();
            // |x| == |-x| bitwise, so the whole evaluation matches bitwise.
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn composed_field_is_mirror_symmetric_through_world_poses() {
        let cfg = tiny_cfg();
        let (field, _) = seeded_field(7, &cfg);
        let b = &field.box_params;
        let r = b.rotation();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let local = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-3.0..3.0),
            );
            let mirrored = Vec3::new(-local.x, local.y, local.z);
            let pw = r.mul_vec(local) + b.center();
            let mw = r.mul_vec(mirrored) + b.center();
            let fa = instance_sdf(pw, &field, Some(&cfg.residual)).unwrap();
            let fb = instance_sdf(mw, &field, Some(&cfg.residual)).unwrap();
            // World-side round trips differ in rounding, so not bitwise.
            assert!((fa - fb).abs() < 1e-9, "{fa} vs {fb} at {local:?}");
        }
    }

    #[test]
    fn zero_initialized_hypernet_gives_centimeter_residual() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = init_weights(&cfg.hyper, &mut rng, true);
        let z = init_embedding(cfg.embed_dim, &mut rng);
        let phi = hypernet_generate(&cfg.hyper, &psi, &z).unwrap();
        assert!(phi.iter().all(|&w| w == 0.0));
        for _ in 0..100 {
            let p = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            ];
            let r = rdf_eval(&cfg.residual, &phi, p).unwrap();
            assert!((r - INITIAL_RESIDUAL).abs() < 1e-12, "residual {r}");
        }
    }

    #[test]
    fn composed_field_never_undershoots_the_box() {
        let cfg = tiny_cfg();
        let (field, _) = seeded_field(13, &cfg);
        let b = field.box_params;
        // Grid over a neighborhood of the box, in its local frame.
        let n = 11;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let f = |i: usize, h: f64| (i as f64 / (n - 1) as f64 * 2.0 - 1.0) * 1.5 * h;
                    let local = Vec3::new(
                        f(ix, b.dim[0] * 0.5),
                        f(iy, b.dim[1] * 0.5),
                        f(iz, b.dim[2] * 0.5),
                    );
                    let p = b.rotation().mul_vec(local) + b.center();
                    let base = cuboid_sdf_world(p, &b);
                    let full = instance_sdf(p, &field, Some(&cfg.residual)).unwrap();
                    assert!(full >= base - 1e-15, "composed {full} < base {base}");
                    if full <= 0.0 {
                        assert!(base <= 0.0, "inside composed but outside box at {p:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn composed_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let (field, _) = seeded_field(17, &cfg);
        let phi: Vec<f64> = field.weights().unwrap().to_vec();
        let b = field.box_params;
        let eval = |dim: [f64; 3], loc: [f64; 3], yaw: f64, p: [f64; 3]| -> f64 {
            let geom = BoundBox::new(dim, loc, yaw);
            instance_sdf_impl(p, &geom, Some(&phi), Some(&cfg.residual))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let h = 1e-6;
        for trial in 0..50 {
            let p = [
                b.loc[0] + rng.gen_range(-3.0..3.0),
                b.loc[1] + rng.gen_range(-3.0..3.0),
                b.loc[2] + rng.gen_range(-4.0..4.0),
            ];
            let tape = Tape::new();
            let dim_v = b.dim.map(|v| tape.leaf(v));
            let loc_v = b.loc.map(|v| tape.leaf(v));
            let yaw_v = tape.leaf(b.yaw);
            let phi_v: Vec<_> = phi.iter().map(|&w| tape.leaf(w)).collect();
            let geom = BoundBox::new(dim_v, loc_v, yaw_v);
            let root = instance_sdf_impl(p, &geom, Some(&phi_v), Some(&cfg.residual));
            let grads = tape.backward(root).unwrap();

            let mut params = [0.0; 7];
            params[..3].copy_from_slice(&b.dim);
            params[3..6].copy_from_slice(&b.loc);
            params[6] = b.yaw;
            for k in 0..7 {
                let mut plus = params;
                let mut minus = params;
                plus[k] += h;
                minus[k] -= h;
                let at = |q: [f64; 7]| {
                    eval([q[0], q[1], q[2]], [q[3], q[4], q[5]], q[6], p)
                };
                let fd = (at(plus) - at(minus)) / (2.0 * h);
                let ad = grads[k];
                let scale = fd.abs().max(1e-3);
                assert!(
                    (ad - fd).abs() / scale <= 1e-3,
                    "trial {trial}, param {k}: ad {ad} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn bound_scene_matches_plain_evaluation_bitwise() {
        let cfg = tiny_cfg();
        let (field_a, _) = seeded_field(23, &cfg);
        let mut field_b = InstanceField::new(
            BoxParams::new([2.0, 1.5, 4.5], [-3.0, 0.1, 11.0], -0.8),
            field_a.embedding().to_vec(),
        );
        field_b.clear_weights();
        let fields = vec![field_a.clone(), field_b.clone()];

        let bound = BoundScene::new(
            fields
                .iter()
                .map(|f| BoundInstance {
                    geom: BoundBox::from_params(&f.box_params),
                    phi: f.weights().map(<[f64]>::to_vec),
                })
                .collect(),
            Some(cfg.residual.clone()),
        )
        .unwrap();

        let tape = Tape::new();
        let bound_t = BoundScene::new(
            fields
                .iter()
                .map(|f| BoundInstance {
                    geom: BoundBox::new(
                        f.box_params.dim.map(|v| tape.leaf(v)),
                        f.box_params.loc.map(|v| tape.leaf(v)),
                        tape.leaf(f.box_params.yaw),
                    ),
                    phi: f
                        .weights()
                        .map(|w| w.iter().map(|&v| tape.leaf(v)).collect()),
                })
                .collect(),
            Some(cfg.residual.clone()),
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let p = [
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(4.0..14.0),
            ];
            let plain = bound.scene_sdf(p);
            let taped = bound_t.scene_sdf(p).value();
            assert_eq!(plain.to_bits(), taped.to_bits());
            let via_fields = scene_sdf(Vec3::from_array(p), &fields, Some(&cfg.residual)).unwrap();
            assert_eq!(plain.to_bits(), via_fields.to_bits());
        }
    }

    #[test]
    fn scene_takes_the_nearest_instance_and_rejects_empty_input() {
        let near = InstanceField::new(BoxParams::new([2.0, 2.0, 2.0], [0.0, 0.0, 5.0], 0.0), vec![]);
        let far = InstanceField::new(BoxParams::new([2.0, 2.0, 2.0], [0.0, 0.0, 25.0], 0.0), vec![]);
        let fields = vec![near.clone(), far];
        let p = Vec3::new(0.0, 0.0, 7.0);
        let s = scene_sdf(p, &fields, None).unwrap();
        assert_eq!(s, instance_sdf(p, &near, None).unwrap());
        assert_eq!(s, 1.0);
        assert!(matches!(
            scene_sdf(p, &[], None),
            Err(FieldError::EmptyScene)
        ));
        assert!(matches!(
            BoundScene::<f64>::new(vec![], None),
            Err(FieldError::EmptyScene)
        ));
    }

    #[test]
    fn weight_cache_clears_on_embedding_update() {
        let cfg = tiny_cfg();
        let (mut field, psi) = seeded_field(31, &cfg);
        assert!(field.weights().is_some());
        let mut z = field.embedding().to_vec();
        z[0] += 0.5;
        field.set_embedding(z);
        assert!(field.weights().is_none(), "stale weights survived a new embedding");
        field.refresh_weights(&cfg, &psi).unwrap();
        assert!(field.weights().is_some());
        field.clear_weights();
        assert!(field.weights().is_none());
    }

    #[test]
    fn equal_embeddings_decode_to_identical_weights() {
        let cfg = tiny_cfg();
        let (field_a, psi) = seeded_field(37, &cfg);
        let mut field_b = InstanceField::new(
            BoxParams::new([1.0, 1.0, 1.0], [9.0, 9.0, 9.0], 1.2),
            field_a.embedding().to_vec(),
        );
        field_b.refresh_weights(&cfg, &psi).unwrap();
        assert_eq!(field_a.weights().unwrap(), field_b.weights().unwrap());
        // And decoding is deterministic call to call.
        let again = hypernet_generate(&cfg.hyper, &psi, field_a.embedding()).unwrap();
        assert_eq!(field_a.weights().unwrap(), &again[..]);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let cfg = tiny_cfg();
        let (field, psi) = seeded_field(41, &cfg);
        assert!(matches!(
            hypernet_generate(&cfg.hyper, &psi, &[1.0, 2.0]),
            Err(FieldError::ShapeMismatch {
                what: "instance embedding",
                ..
            })
        ));
        assert!(matches!(
            hypernet_generate(&cfg.hyper, &psi[1..], &[0.0; 4]),
            Err(FieldError::ShapeMismatch {
                what: "hypernetwork parameters",
                ..
            })
        ));
        assert!(matches!(
            rdf_eval(&cfg.residual, &[1.0, 2.0], [0.0, 0.0, 0.0]),
            Err(FieldError::ShapeMismatch {
                what: "residual decoder weights",
                ..
            })
        ));
        // Cached weights present but no decoder layout supplied.
        assert!(matches!(
            instance_sdf(Vec3::ZERO, &field, None),
            Err(FieldError::MissingResidualSpec)
        ));
    }
}
