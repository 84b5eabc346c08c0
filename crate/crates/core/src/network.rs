//! The super-resolution network: a pyramid feature extractor with a
//! shrinking layer, two content-adaptive deconvolutional interpolators, a
//! boundary-context branch (intermediate HR image + boundary map), a
//! residue-context branch, and a learned 3x3 fusion filter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{bicubic_weight, BICUBIC_A};
use crate::ops::{conv2d, deconv2d, relu};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, DeconvSpec, Padding, Tensor};

pub const SHRUNK_CHANNELS: usize = 8;
pub const BRANCH_HIDDEN_CHANNELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// 4 extraction layers (16, 32, 128, shrink 8).
    Common,
    /// 18 extraction layers; same interpolators and branches.
    Deep,
}

impl Profile {
    pub fn as_byte(self) -> u8 {
        match self {
            Profile::Common => 0,
            Profile::Deep => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Profile::Common),
            1 => Ok(Profile::Deep),
            _ => Err(Error::CorruptModel(format!("unknown profile byte {b}"))),
        }
    }

    pub fn extraction_depth(self) -> usize {
        match self {
            Profile::Common => 4,
            Profile::Deep => 18,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NetworkConfig {
    pub scale: usize,
    pub profile: Profile,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(scale: usize, profile: Profile, seed: u64) -> Result<Self> {
        if !matches!(scale, 2 | 3 | 4) {
            return Err(Error::UnsupportedScale(scale as u8));
        }
        Ok(NetworkConfig { scale, profile, seed })
    }
}

/// Stable layer identifiers, in forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerId {
    Extract(usize),
    UpBoundary,
    UpResidual,
    BoundaryHidden,
    BoundaryOut,
    ResidualHidden,
    ResidualOut,
    Fusion,
}

impl LayerId {
    pub fn name(&self) -> String {
        match self {
            LayerId::Extract(i) => format!("extract{i}"),
            LayerId::UpBoundary => "up_boundary".into(),
            LayerId::UpResidual => "up_residual".into(),
            LayerId::BoundaryHidden => "boundary_hidden".into(),
            LayerId::BoundaryOut => "boundary_out".into(),
            LayerId::ResidualHidden => "residual_hidden".into(),
            LayerId::ResidualOut => "residual_out".into(),
            LayerId::Fusion => "fusion".into(),
        }
    }
}

/// All learnable weights. The boundary-branch output conv has two output
/// channels: channel 0 produces the intermediate HR image, channel 1 the
/// predicted boundary map.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub scale: usize,
    pub profile: Profile,
    pub extraction: Vec<ConvSpec<T>>,
    pub up_boundary: DeconvSpec<T>,
    pub up_residual: DeconvSpec<T>,
    pub boundary_hidden: ConvSpec<T>,
    pub boundary_out: ConvSpec<T>,
    pub residual_hidden: ConvSpec<T>,
    pub residual_out: ConvSpec<T>,
    /// 3x3, 1 -> 1, no bias (the bias slot stays zero and is never trained
    /// or serialized).
    pub fusion: ConvSpec<T>,
}

/// Everything the forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutputs<T> {
    /// Intermediate HR image from the boundary branch (channel 0).
    pub intermediate_hr: Tensor<T>,
    /// Predicted boundary map (channel 1).
    pub boundary_map: Tensor<T>,
    /// Residual map from the residue branch.
    pub residual: Tensor<T>,
    /// Final HR estimate: `fusion (*) intermediate_hr + residual`.
    pub fused: Tensor<T>,
}

/// Post-activation tensors kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub input: Tensor<T>,
    /// Post-ReLU output of every extraction conv; the last entry feeds both
    /// interpolators.
    pub extract_post: Vec<Tensor<T>>,
    pub up_boundary_post: Tensor<T>,
    pub boundary_hidden_post: Tensor<T>,
    /// Two-channel head output (no activation).
    pub boundary_head: Tensor<T>,
    pub intermediate_hr: Tensor<T>,
    pub boundary_map: Tensor<T>,
    pub up_residual_post: Option<Tensor<T>>,
    pub residual_hidden_post: Option<Tensor<T>>,
    pub residual: Option<Tensor<T>>,
    pub fused: Option<Tensor<T>>,
}

/// Which part of the graph a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardScope {
    /// Extraction, boundary-side interpolator and boundary branch only.
    BoundaryBranch,
    /// Everything, including residual branch and fusion.
    Full,
}

fn extraction_widths(profile: Profile) -> Vec<(usize, usize, usize)> {
    // (kernel, in, out) per layer; the last layer is the 1x1 shrink.
    match profile {
        Profile::Common => vec![
            (5, 1, 16),
            (3, 16, 32),
            (3, 32, 128),
            (1, 128, SHRUNK_CHANNELS),
        ],
        Profile::Deep => {
            let mut v = vec![(5, 1, 16), (3, 16, 32), (3, 32, 64)];
            for _ in 0..13 {
                v.push((3, 64, 64));
            }
            v.push((3, 64, 128));
            v.push((1, 128, SHRUNK_CHANNELS));
            v
        }
    }
}

/// Allocate a zero-filled network with the layer table of the requested
/// scale and profile.
pub fn build_network<T: Scalar>(config: &NetworkConfig) -> Result<NetworkParams<T>> {
    if !matches!(config.scale, 2 | 3 | 4) {
        return Err(Error::UnsupportedScale(config.scale as u8));
    }
    let n = DeconvSpec::<T>::default_kernel_size(config.scale)?;
    let extraction = extraction_widths(config.profile)
        .into_iter()
        .map(|(k, cin, cout)| ConvSpec::new(cin, cout, k, Padding::Same))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkParams {
        scale: config.scale,
        profile: config.profile,
        extraction,
        up_boundary: DeconvSpec::new(SHRUNK_CHANNELS, SHRUNK_CHANNELS, n, config.scale)?,
        up_residual: DeconvSpec::new(SHRUNK_CHANNELS, SHRUNK_CHANNELS, n, config.scale)?,
        boundary_hidden: ConvSpec::new(
            SHRUNK_CHANNELS,
            BRANCH_HIDDEN_CHANNELS,
            3,
            Padding::Same,
        )?,
        boundary_out: ConvSpec::new(BRANCH_HIDDEN_CHANNELS, 2, 3, Padding::Same)?,
        residual_hidden: ConvSpec::new(
            SHRUNK_CHANNELS,
            BRANCH_HIDDEN_CHANNELS,
            3,
            Padding::Same,
        )?,
        residual_out: ConvSpec::new(BRANCH_HIDDEN_CHANNELS, 1, 3, Padding::Same)?,
        fusion: ConvSpec::new(1, 1, 3, Padding::Same)?,
    })
}

impl<T: Scalar> NetworkParams<T> {
    pub fn layer_ids(&self) -> Vec<LayerId> {
        let mut ids: Vec<LayerId> = (0..self.extraction.len()).map(LayerId::Extract).collect();
        ids.extend([
            LayerId::UpBoundary,
            LayerId::UpResidual,
            LayerId::BoundaryHidden,
            LayerId::BoundaryOut,
            LayerId::ResidualHidden,
            LayerId::ResidualOut,
            LayerId::Fusion,
        ]);
        ids
    }

    pub fn layer(&self, id: LayerId) -> (&Tensor<T>, &[T]) {
        match id {
            LayerId::Extract(i) => (&self.extraction[i].kernels, &self.extraction[i].bias),
            LayerId::UpBoundary => (&self.up_boundary.kernels, &self.up_boundary.bias),
            LayerId::UpResidual => (&self.up_residual.kernels, &self.up_residual.bias),
            LayerId::BoundaryHidden => (&self.boundary_hidden.kernels, &self.boundary_hidden.bias),
            LayerId::BoundaryOut => (&self.boundary_out.kernels, &self.boundary_out.bias),
            LayerId::ResidualHidden => (&self.residual_hidden.kernels, &self.residual_hidden.bias),
            LayerId::ResidualOut => (&self.residual_out.kernels, &self.residual_out.bias),
            LayerId::Fusion => (&self.fusion.kernels, &self.fusion.bias),
        }
    }

    pub fn layer_mut(&mut self, id: LayerId) -> (&mut Tensor<T>, &mut Vec<T>) {
        match id {
            LayerId::Extract(i) => {
                let e = &mut self.extraction[i];
                (&mut e.kernels, &mut e.bias)
            }
            LayerId::UpBoundary => (&mut self.up_boundary.kernels, &mut self.up_boundary.bias),
            LayerId::UpResidual => (&mut self.up_residual.kernels, &mut self.up_residual.bias),
            LayerId::BoundaryHidden => {
                (&mut self.boundary_hidden.kernels, &mut self.boundary_hidden.bias)
            }
            LayerId::BoundaryOut => (&mut self.boundary_out.kernels, &mut self.boundary_out.bias),
            LayerId::ResidualHidden => {
                (&mut self.residual_hidden.kernels, &mut self.residual_hidden.bias)
            }
            LayerId::ResidualOut => (&mut self.residual_out.kernels, &mut self.residual_out.bias),
            LayerId::Fusion => (&mut self.fusion.kernels, &mut self.fusion.bias),
        }
    }

    /// Shared trunk: extraction, shrink and both interpolators.
    pub fn shared_layer_ids(&self) -> Vec<LayerId> {
        let mut ids: Vec<LayerId> = (0..self.extraction.len()).map(LayerId::Extract).collect();
        ids.extend([LayerId::UpBoundary, LayerId::UpResidual]);
        ids
    }

    /// Boundary-branch layers (both the HR-image and boundary-map heads).
    pub fn boundary_layer_ids(&self) -> Vec<LayerId> {
        vec![LayerId::BoundaryHidden, LayerId::BoundaryOut]
    }

    /// Residue-branch layers.
    pub fn residual_layer_ids(&self) -> Vec<LayerId> {
        vec![LayerId::ResidualHidden, LayerId::ResidualOut]
    }

    /// Minimum input side length the extraction stack is designed for
    /// (its receptive field on the LR grid).
    pub fn receptive_field(&self) -> usize {
        1 + self
            .extraction
            .iter()
            .map(|c| c.kernel_size - 1)
            .sum::<usize>()
    }

    /// Copy every learnable value as f32 pairs `(name, shape, values)` in a
    /// stable order. The fusion bias is not learnable and not included.
    pub fn records(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut recs = Vec::new();
        for id in self.layer_ids() {
            let (k, b) = self.layer(id);
            let name = id.name();
            recs.push((
                format!("{name}.kernel"),
                k.shape().to_vec(),
                k.data().iter().map(|v| v.as_f32()).collect(),
            ));
            if id != LayerId::Fusion {
                recs.push((
                    format!("{name}.bias"),
                    vec![b.len()],
                    b.iter().map(|v| v.as_f32()).collect(),
                ));
            }
        }
        recs
    }
}

/// Total learnable kernel coefficients (biases excluded, matching the layer
/// table's accounting). With `include_fusion = false` the common profile at
/// scale 3 counts exactly 60,436.
pub fn parameter_count<T: Scalar>(params: &NetworkParams<T>, include_fusion: bool) -> usize {
    let mut n = 0;
    for id in params.layer_ids() {
        if id == LayerId::Fusion && !include_fusion {
            continue;
        }
        n += params.layer(id).0.len();
    }
    n
}

/// Split a channel out of a rank-3 tensor as a 1-channel tensor.
fn take_channel<T: Scalar>(t: &Tensor<T>, c: usize) -> Tensor<T> {
    let (h, w) = t.hw();
    Tensor::from_vec(&[1, h, w], t.channel(c).to_vec()).unwrap()
}

fn ensure_finite<T: Scalar>(t: &Tensor<T>, layer_index: usize, name: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!(
            "non-finite activation after layer {layer_index} ({name})"
        )))
    }
}

/// Forward pass keeping the activations needed for backprop.
pub fn forward_cached<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    scope: ForwardScope,
) -> Result<ForwardCache<T>> {
    if input.rank() != 3 || input.dim0() != 1 {
        return Err(Error::invalid("network input must be 1 x H x W"));
    }
    let (h, w) = input.hw();
    let rf = params.receptive_field();
    if h < rf || w < rf {
        return Err(Error::invalid(format!(
            "input {h}x{w} is smaller than the receptive field ({rf})"
        )));
    }

    let mut layer_index = 0;
    let mut extract_post = Vec::with_capacity(params.extraction.len());
    let mut cur = input.clone();
    for (i, conv) in params.extraction.iter().enumerate() {
        let z = conv2d(&cur, conv)?;
        ensure_finite(&z, layer_index, &LayerId::Extract(i).name())?;
        layer_index += 1;
        cur = relu(&z);
        extract_post.push(cur.clone());
    }
    let feat = extract_post.last().unwrap();

    let up_b = deconv2d(feat, &params.up_boundary)?;
    ensure_finite(&up_b, layer_index, "up_boundary")?;
    layer_index += 1;
    let up_b_post = relu(&up_b);

    let bh = conv2d(&up_b_post, &params.boundary_hidden)?;
    ensure_finite(&bh, layer_index, "boundary_hidden")?;
    layer_index += 1;
    let bh_post = relu(&bh);

    let head = conv2d(&bh_post, &params.boundary_out)?;
    ensure_finite(&head, layer_index, "boundary_out")?;
    layer_index += 1;
    let intermediate_hr = take_channel(&head, 0);
    let boundary_map = take_channel(&head, 1);

    let mut cache = ForwardCache {
        input: input.clone(),
        extract_post,
        up_boundary_post: up_b_post,
        boundary_hidden_post: bh_post,
        boundary_head: head,
        intermediate_hr,
        boundary_map,
        up_residual_post: None,
        residual_hidden_post: None,
        residual: None,
        fused: None,
    };

    if scope == ForwardScope::Full {
        let feat = cache.extract_post.last().unwrap();
        let up_r = deconv2d(feat, &params.up_residual)?;
        ensure_finite(&up_r, layer_index, "up_residual")?;
        layer_index += 1;
        let up_r_post = relu(&up_r);

        let rh = conv2d(&up_r_post, &params.residual_hidden)?;
        ensure_finite(&rh, layer_index, "residual_hidden")?;
        layer_index += 1;
        let rh_post = relu(&rh);

        let residual = conv2d(&rh_post, &params.residual_out)?;
        ensure_finite(&residual, layer_index, "residual_out")?;
        layer_index += 1;

        let mut fused = conv2d(&cache.intermediate_hr, &params.fusion)?;
        ensure_finite(&fused, layer_index, "fusion")?;
        for (f, r) in fused.data_mut().iter_mut().zip(residual.data()) {
            *f += *r;
        }
        cache.up_residual_post = Some(up_r_post);
        cache.residual_hidden_post = Some(rh_post);
        cache.residual = Some(residual);
        cache.fused = Some(fused);
    }
    Ok(cache)
}

/// Full forward pass: intermediate HR image, boundary map, residual, and
/// the fused final HR estimate. All outputs are `1 x s*H x s*W`.
pub fn forward<T: Scalar>(
    params: &NetworkParams<T>,
    input: &Tensor<T>,
) -> Result<ForwardOutputs<T>> {
    let cache = forward_cached(params, input, ForwardScope::Full)?;
    Ok(ForwardOutputs {
        intermediate_hr: cache.intermediate_hr,
        boundary_map: cache.boundary_map,
        residual: cache.residual.unwrap(),
        fused: cache.fused.unwrap(),
    })
}

// ---------------------------------------------------------------------------
// Initialization

/// Fill every kernel with i.i.d. zero-mean Gaussian entries of the given
/// standard deviation and zero all biases. Deterministic for a given seed.
pub fn init_gaussian<T: Scalar>(params: &mut NetworkParams<T>, std: f64, seed: u64) -> Result<()> {
    if !(std > 0.0) {
        return Err(Error::invalid("init std must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = T::from_f64(std);
    for id in params.layer_ids() {
        let (k, b) = params.layer_mut(id);
        for v in k.data_mut() {
            *v = T::standard_normal(&mut rng) * s;
        }
        for v in b.iter_mut() {
            *v = T::zero();
        }
    }
    Ok(())
}

/// One-dimensional bicubic tap weights of a deconvolution kernel for the
/// given scale: `w((t - anchor) / s)` for taps `t = 0..n`, with the anchor
/// placed so that the cropped scatter reproduces the bicubic resampling
/// grid.
pub fn bicubic_tap_weights(scale: usize) -> Result<Vec<f64>> {
    let n = DeconvSpec::<f64>::default_kernel_size(scale)?;
    let spec = DeconvSpec::<f64>::new(1, 1, n, scale)?;
    let anchor = spec.anchor() as f64;
    Ok((0..n)
        .map(|t| bicubic_weight((t as f64 - anchor) / scale as f64, BICUBIC_A))
        .collect())
}

/// Deconvolution kernels that reproduce bicubic interpolation: each of the
/// 8 diagonal (in == out) slices holds the separable bicubic weights
/// centred at the anchor tap; off-diagonal slices are zero.
pub fn init_deconv_bicubic<T: Scalar>(scale: usize) -> Result<Tensor<T>> {
    let taps = bicubic_tap_weights(scale)?;
    let n = taps.len();
    let c = SHRUNK_CHANNELS;
    let mut k = Tensor::zeros(&[c, c, n, n]);
    for ch in 0..c {
        for p in 0..n {
            for q in 0..n {
                *k.at4_mut(ch, ch, p, q) = T::from_f64(taps[p] * taps[q]);
            }
        }
    }
    Ok(k)
}

/// Set the fusion kernel to the centre delta, so the fused output starts as
/// `intermediate_hr + residual`.
pub fn init_fusion_delta<T: Scalar>(params: &mut NetworkParams<T>) {
    params.fusion.kernels.fill(T::zero());
    *params.fusion.kernels.at4_mut(0, 0, 1, 1) = T::one();
    params.fusion.bias[0] = T::zero();
}

/// Identity-preserving initialization for desk-scale training runs.
///
/// The luminance input is threaded unchanged through channel 0 of the
/// extraction stack, replicated across the shrink outputs, upscaled by
/// bicubic-initialized interpolators and passed through delta taps in the
/// boundary branch, so the intermediate HR image starts out as the bicubic
/// upscale of the input. All remaining kernels get fan-in-scaled Gaussian
/// noise, except the residual output layer which starts at zero.
pub fn init_structured<T: Scalar>(params: &mut NetworkParams<T>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();

    let depth = params.extraction.len();
    for li in 0..depth {
        let conv = &mut params.extraction[li];
        let k = conv.kernel_size;
        let std = T::from_f64(he(k * k * conv.in_channels));
        for v in conv.kernels.data_mut() {
            *v = T::standard_normal(&mut rng) * std;
        }
        for v in conv.bias.iter_mut() {
            *v = T::zero();
        }
        if li + 1 == depth {
            // Shrink layer: every output copies the pass-through channel.
            conv.kernels.fill(T::zero());
            for o in 0..conv.out_channels {
                *conv.kernels.at4_mut(o, 0, 0, 0) = T::one();
            }
        } else {
            // Channel 0 is a clean delta tap on channel 0 of the input.
            let center = k / 2;
            for c in 0..conv.in_channels {
                for p in 0..k {
                    for q in 0..k {
                        *conv.kernels.at4_mut(0, c, p, q) = T::zero();
                    }
                }
            }
            *conv.kernels.at4_mut(0, 0, center, center) = T::one();
        }
    }

    let bicubic = init_deconv_bicubic::<T>(params.scale)?;
    params.up_boundary.kernels = bicubic.clone();
    params.up_boundary.bias.iter_mut().for_each(|v| *v = T::zero());
    params.up_residual.kernels = bicubic;
    params.up_residual.bias.iter_mut().for_each(|v| *v = T::zero());

    for hidden in [&mut params.boundary_hidden, &mut params.residual_hidden] {
        let k = hidden.kernel_size;
        let std = T::from_f64(he(k * k * hidden.in_channels));
        for v in hidden.kernels.data_mut() {
            *v = T::standard_normal(&mut rng) * std;
        }
        for v in hidden.bias.iter_mut() {
            *v = T::zero();
        }
    }
    // Boundary-branch hidden channel 0 passes the upscaled image through.
    {
        let hidden = &mut params.boundary_hidden;
        let k = hidden.kernel_size;
        for c in 0..hidden.in_channels {
            for p in 0..k {
                for q in 0..k {
                    *hidden.kernels.at4_mut(0, c, p, q) = T::zero();
                }
            }
        }
        *hidden.kernels.at4_mut(0, 0, k / 2, k / 2) = T::one();
    }

    // Head: HR channel is the delta on hidden channel 0; the boundary
    // channel reads the noisy hidden channels at trainable scale.
    {
        let head = &mut params.boundary_out;
        let k = head.kernel_size;
        let std = T::from_f64(he(k * k * head.in_channels));
        head.kernels.fill(T::zero());
        *head.kernels.at4_mut(0, 0, k / 2, k / 2) = T::one();
        for c in 1..head.in_channels {
            for p in 0..k {
                for q in 0..k {
                    *head.kernels.at4_mut(1, c, p, q) = T::standard_normal(&mut rng) * std;
                }
            }
        }
        for v in head.bias.iter_mut() {
            *v = T::zero();
        }
    }

    // Residual starts at exactly zero.
    params.residual_out.kernels.fill(T::zero());
    params.residual_out.bias.iter_mut().for_each(|v| *v = T::zero());

    init_fusion_delta(params);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn common(scale: usize) -> NetworkParams<f32> {
        build_network(&NetworkConfig::new(scale, Profile::Common, 0).unwrap()).unwrap()
    }

    #[test]
    fn parameter_accounting() {
        assert_eq!(parameter_count(&common(3), false), 60_436);
        assert_eq!(parameter_count(&common(3), true), 60_436 + 9);
        assert_eq!(parameter_count(&common(2), false), 53_140);
        assert_eq!(parameter_count(&common(4), false), 77_716);
        let deep = build_network::<f32>(&NetworkConfig::new(3, Profile::Deep, 0).unwrap()).unwrap();
        assert_eq!(deep.extraction.len(), 18);
        assert_eq!(parameter_count(&deep, false), 594_964);
    }

    #[test]
    fn deconv_kernel_sizes_and_counts() {
        for (s, n, count) in [(2, 8, 4096), (3, 11, 7744), (4, 16, 16384)] {
            let net = common(s);
            assert_eq!(net.up_boundary.kernel_size, n);
            assert_eq!(net.up_boundary.kernels.len(), count);
            assert_eq!(net.up_residual.kernels.len(), count);
        }
        assert!(build_network::<f32>(&NetworkConfig { scale: 5, profile: Profile::Common, seed: 0 })
            .is_err());
    }

    #[test]
    fn forward_shapes_and_zero_network() {
        let net = common(3);
        let input = Tensor::<f32>::zeros(&[1, 40, 40]);
        let mut input = input;
        input.fill(0.5);
        let out = forward(&net, &input).unwrap();
        for t in [&out.intermediate_hr, &out.boundary_map, &out.residual, &out.fused] {
            assert_eq!(t.shape(), &[1, 120, 120]);
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_rejects_small_input() {
        let net = common(3);
        assert_eq!(net.receptive_field(), 9);
        let input = Tensor::<f32>::zeros(&[1, 8, 8]);
        assert!(forward(&net, &input).is_err());
        assert!(forward(&net, &Tensor::<f32>::zeros(&[1, 9, 9])).is_ok());
    }

    #[test]
    fn fusion_identity_recomposition() {
        let mut net = common(2);
        init_structured(&mut net, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input =
            Tensor::from_vec(&[1, 12, 12], (0..144).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap();
        let out = forward(&net, &input).unwrap();
        // fused == conv(intermediate_hr, fusion) + residual, bitwise
        let mut recomputed = conv2d(&out.intermediate_hr, &net.fusion).unwrap();
        for (f, r) in recomputed.data_mut().iter_mut().zip(out.residual.data()) {
            *f += *r;
        }
        assert_eq!(recomputed.data(), out.fused.data());
        // residual starts at zero with structured init, so y == intermediate
        assert!(out.residual.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.fused.data(), out.intermediate_hr.data());
    }

    #[test]
    fn gaussian_init_statistics_and_determinism() {
        let mut a = common(3);
        let mut b = common(3);
        init_gaussian(&mut a, 1e-4, 42).unwrap();
        init_gaussian(&mut b, 1e-4, 42).unwrap();
        assert_eq!(a, b);

        let mut values = Vec::new();
        for id in a.layer_ids() {
            values.extend(a.layer(id).0.data().iter().map(|v| v.as_f64()));
            assert!(a.layer(id).1.iter().all(|&v| v == 0.0));
        }
        let n = values.len() as f64;
        assert!(n > 1e4);
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * 1e-4 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1e-4).abs() < 0.05 * 1e-4, "std {}", var.sqrt());
    }

    #[test]
    fn bicubic_tap_reference_values() {
        // scale 2: anchor tap weighs 1, integer offsets 0, half offsets 0.5625
        let taps = bicubic_tap_weights(2).unwrap();
        assert_eq!(taps.len(), 8);
        assert_eq!(taps[3], 1.0);
        assert_eq!(taps[1], 0.0);
        assert_eq!(taps[5], 0.0);
        assert_eq!(taps[7], 0.0);
        assert_eq!(taps[2], 0.5625);
        assert_eq!(taps[4], 0.5625);
        let k = init_deconv_bicubic::<f64>(2).unwrap();
        for (p, q) in [(2, 2), (2, 4), (4, 2), (4, 4)] {
            assert_eq!(k.at4(0, 0, p, q), 0.31640625);
        }
        // off-diagonal slices are zero
        assert!(k.kernel2d(0, 1).iter().all(|&v| v == 0.0));
        // every needed fractional offset is inside the kernel for all scales
        for s in [2usize, 3, 4] {
            let taps = bicubic_tap_weights(s).unwrap();
            let sum_all: f64 = taps.iter().sum();
            assert!((sum_all - s as f64).abs() < 1e-12, "scale {s}: {sum_all}");
        }
    }
}
