//! Toy trainable text and video encoders emitting unit-norm features.
//!
//! Text: lowercase surfaces hashed (FNV-1a 64-bit mod vocab) to bucket ids,
//! embeddings mean-pooled, affine projection, L2 normalization. Video:
//! equal-interval frame subsampling, mean pool, affine projection, L2
//! normalization. The backward pass applies the exact normalization
//! Jacobian `(I - f f^T) / |pre|`, so analytic gradients match central
//! finite differences to the precision of the arithmetic.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{fnv1a64, Description};
use crate::numerics;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Vocabulary buckets for feature hashing.
    pub vocab: usize,
    /// Token embedding dimension.
    pub d_embed: usize,
    /// Shared feature dimension.
    pub d: usize,
    /// Raw frame-feature dimension.
    pub d_in: usize,
    /// Frames used per video; longer inputs are subsampled at equal
    /// index intervals with the first frame always included.
    pub n_frames: usize,
}

impl EncoderConfig {
    pub fn with_d_in(d_in: usize) -> Self {
        Self {
            vocab: 4096,
            d_embed: 32,
            d: 64,
            d_in,
            n_frames: 8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab < 1 || self.d_embed < 1 || self.d < 1 || self.d_in < 1 || self.n_frames < 1 {
            return Err(Error::InvalidArgument(
                "all encoder dimensions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Parameter tensors for both towers. The same struct doubles as the
/// gradient container since shapes are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// vocab x d_embed, row-major.
    pub text_embed: Vec<f64>,
    /// d_embed x d, row-major.
    pub text_proj: Vec<f64>,
    /// d.
    pub text_bias: Vec<f64>,
    /// d_in x d, row-major.
    pub video_proj: Vec<f64>,
    /// d.
    pub video_bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type EncoderGrads = EncoderParams;

/// Tensor names in checkpoint manifest order.
pub const TENSOR_NAMES: [&str; 5] = [
    "text_embed",
    "text_proj",
    "text_bias",
    "video_proj",
    "video_bias",
];

impl EncoderParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        Self {
            text_embed: vec![0.0; cfg.vocab * cfg.d_embed],
            text_proj: vec![0.0; cfg.d_embed * cfg.d],
            text_bias: vec![0.0; cfg.d],
            video_proj: vec![0.0; cfg.d_in * cfg.d],
            video_bias: vec![0.0; cfg.d],
        }
    }

    /// Tensors in manifest order with their shapes and whether weight decay
    /// applies (bias vectors are excluded).
    pub fn tensors(&self) -> [(&'static str, &[f64], Vec<usize>, bool); 5] {
        [
            ("text_embed", &self.text_embed[..], vec![], true),
            ("text_proj", &self.text_proj[..], vec![], true),
            ("text_bias", &self.text_bias[..], vec![], false),
            ("video_proj", &self.video_proj[..], vec![], true),
            ("video_bias", &self.video_bias[..], vec![], false),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>, bool); 5] {
        [
            ("text_embed", &mut self.text_embed, true),
            ("text_proj", &mut self.text_proj, true),
            ("text_bias", &mut self.text_bias, false),
            ("video_proj", &mut self.video_proj, true),
            ("video_bias", &mut self.video_bias, false),
        ]
    }

    /// Shapes in manifest order for the given config.
    pub fn shapes(cfg: &EncoderConfig) -> [(&'static str, Vec<usize>); 5] {
        [
            ("text_embed", vec![cfg.vocab, cfg.d_embed]),
            ("text_proj", vec![cfg.d_embed, cfg.d]),
            ("text_bias", vec![cfg.d]),
            ("video_proj", vec![cfg.d_in, cfg.d]),
            ("video_bias", vec![cfg.d]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t, _, _)| t.len()).sum()
    }

    /// Check shape consistency against a config.
    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        let expect = [
            cfg.vocab * cfg.d_embed,
            cfg.d_embed * cfg.d,
            cfg.d,
            cfg.d_in * cfg.d,
            cfg.d,
        ];
        for ((name, t, _, _), want) in self.tensors().iter().zip(expect) {
            if t.len() != want {
                return Err(Error::DimensionMismatch {
                    context: "EncoderParams tensor",
                    expected: want,
                    got: t.len(),
                });
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("tensor {name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// Draw parameters i.i.d. uniform in [-0.05, 0.05] from a seeded generator.
/// Values are snapped to f32-representable numbers so that checkpoints
/// round-trip bit-exactly.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::zeros(cfg);
    for (_, tensor, _) in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = (rng.random_range(-0.05f64..0.05) as f32) as f64;
        }
    }
    Ok(params)
}

/// Activations recorded by a forward pass, consumed by the exact backward.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Text(TextCache),
    Video(VideoCache),
}

#[derive(Debug, Clone)]
pub struct TextCache {
    /// Bucket ids in canonical (sorted) accumulation order.
    pub bucket_ids: Vec<usize>,
    /// Mean-pooled embedding, d_embed.
    pub pooled: Vec<f64>,
    /// Pre-normalization projection output, d.
    pub pre: Vec<f64>,
    pub pre_norm: f64,
    /// Unit-norm output, d.
    pub feat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VideoCache {
    /// Mean of the selected frames, d_in.
    pub frame_mean: Vec<f64>,
    pub pre: Vec<f64>,
    pub pre_norm: f64,
    pub feat: Vec<f64>,
}

/// Bucket id for a token surface: FNV-1a 64 over the lowercased bytes,
/// mod the vocab size. Pure function of the bytes.
pub fn token_bucket(surface: &str, vocab: usize) -> usize {
    (fnv1a64(surface.to_lowercase().as_bytes()) % vocab as u64) as usize
}

/// Encode a description: hash, mean-pool embeddings, project, normalize.
pub fn encode_text(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    desc: &Description,
) -> Result<(Vec<f64>, TextCache)> {
    if desc.tokens.is_empty() {
        return Err(Error::EmptyInput("encode_text"));
    }
    let mut bucket_ids: Vec<usize> = desc
        .tokens
        .iter()
        .map(|t| token_bucket(&t.surface, cfg.vocab))
        .collect();
    // Canonical order makes mean pooling exactly permutation-invariant.
    bucket_ids.sort_unstable();

    let n = bucket_ids.len() as f64;
    let mut pooled = vec![0.0; cfg.d_embed];
    for &b in &bucket_ids {
        let row = &params.text_embed[b * cfg.d_embed..(b + 1) * cfg.d_embed];
        for (p, &e) in pooled.iter_mut().zip(row) {
            *p += e;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n;
    }

    let pre = affine(&pooled, &params.text_proj, &params.text_bias, cfg.d);
    let pre_norm = numerics::norm(&pre);
    let feat = numerics::l2_normalize(&pre)?;
    let cache = TextCache {
        bucket_ids,
        pooled,
        pre,
        pre_norm,
        feat: feat.clone(),
    };
    Ok((feat, cache))
}

/// Frame indices used for pooling: all frames when there are at most
/// `n_frames`, otherwise `n_frames` equal-interval indices starting at 0.
pub fn frame_indices(total: usize, n_frames: usize) -> Vec<usize> {
    if total <= n_frames {
        (0..total).collect()
    } else {
        (0..n_frames).map(|j| j * total / n_frames).collect()
    }
}

/// Encode a video: subsample frames, mean-pool, project, normalize.
pub fn encode_video(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    frames: &[Vec<f32>],
) -> Result<(Vec<f64>, VideoCache)> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("encode_video"));
    }
    for f in frames {
        if f.len() != cfg.d_in {
            return Err(Error::DimensionMismatch {
                context: "encode_video frame",
                expected: cfg.d_in,
                got: f.len(),
            });
        }
    }
    let indices = frame_indices(frames.len(), cfg.n_frames);
    let n = indices.len() as f64;
    let mut frame_mean = vec![0.0f64; cfg.d_in];
    for &i in &indices {
        for (m, &v) in frame_mean.iter_mut().zip(&frames[i]) {
            *m += v as f64;
        }
    }
    for m in frame_mean.iter_mut() {
        *m /= n;
    }

    let pre = affine(&frame_mean, &params.video_proj, &params.video_bias, cfg.d);
    let pre_norm = numerics::norm(&pre);
    let feat = numerics::l2_normalize(&pre)?;
    let cache = VideoCache {
        frame_mean,
        pre,
        pre_norm,
        feat: feat.clone(),
    };
    Ok((feat, cache))
}

fn affine(x: &[f64], w: &[f64], b: &[f64], d_out: usize) -> Vec<f64> {
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * d_out..(i + 1) * d_out];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

/// Gradient of the loss w.r.t. `pre` given the gradient w.r.t. the
/// normalized output: `(g - f (f . g)) / |pre|`.
fn normalize_backward(upstream: &[f64], feat: &[f64], pre_norm: f64) -> Vec<f64> {
    let radial = numerics::dot(feat, upstream);
    upstream
        .iter()
        .zip(feat)
        .map(|(&g, &f)| (g - f * radial) / pre_norm)
        .collect()
}

/// Accumulate text-tower gradients for one cached forward pass.
pub fn accumulate_text_backward(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    cache: &TextCache,
    upstream: &[f64],
    grads: &mut EncoderGrads,
) -> Result<()> {
    if upstream.len() != cfg.d {
        return Err(Error::DimensionMismatch {
            context: "accumulate_text_backward upstream",
            expected: cfg.d,
            got: upstream.len(),
        });
    }
    let g_pre = normalize_backward(upstream, &cache.feat, cache.pre_norm);
    // Affine: g_W[i][j] += pooled[i] g_pre[j]; g_b += g_pre; g_x = W g_pre.
    let mut g_pooled = vec![0.0; cfg.d_embed];
    for (i, gp) in g_pooled.iter_mut().enumerate() {
        let w_row = &params.text_proj[i * cfg.d..(i + 1) * cfg.d];
        let gw_row = &mut grads.text_proj[i * cfg.d..(i + 1) * cfg.d];
        let xi = cache.pooled[i];
        let mut acc = 0.0;
        for j in 0..cfg.d {
            gw_row[j] += xi * g_pre[j];
            acc += w_row[j] * g_pre[j];
        }
        *gp = acc;
    }
    for (gb, &g) in grads.text_bias.iter_mut().zip(&g_pre) {
        *gb += g;
    }
    // Mean pool over embeddings: each token bucket receives g_pooled / n.
    let inv_n = 1.0 / cache.bucket_ids.len() as f64;
    for &b in &cache.bucket_ids {
        let row = &mut grads.text_embed[b * cfg.d_embed..(b + 1) * cfg.d_embed];
        for (ge, &g) in row.iter_mut().zip(&g_pooled) {
            *ge += g * inv_n;
        }
    }
    Ok(())
}

/// Accumulate video-tower gradients for one cached forward pass.
pub fn accumulate_video_backward(
    cfg: &EncoderConfig,
    cache: &VideoCache,
    upstream: &[f64],
    grads: &mut EncoderGrads,
) -> Result<()> {
    if upstream.len() != cfg.d {
        return Err(Error::DimensionMismatch {
            context: "accumulate_video_backward upstream",
            expected: cfg.d,
            got: upstream.len(),
        });
    }
    let g_pre = normalize_backward(upstream, &cache.feat, cache.pre_norm);
    for i in 0..cfg.d_in {
        let gw_row = &mut grads.video_proj[i * cfg.d..(i + 1) * cfg.d];
        let xi = cache.frame_mean[i];
        for j in 0..cfg.d {
            gw_row[j] += xi * g_pre[j];
        }
    }
    for (gb, &g) in grads.video_bias.iter_mut().zip(&g_pre) {
        *gb += g;
    }
    Ok(())
}

/// Gradients for every parameter tensor from one forward cache and an
/// upstream d-dimensional gradient.
pub fn encoder_backward(
    params: &EncoderParams,
    cfg: &EncoderConfig,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<EncoderGrads> {
    let mut grads = EncoderGrads::zeros(cfg);
    match cache {
        ForwardCache::Text(c) => accumulate_text_backward(params, cfg, c, upstream, &mut grads)?,
        ForwardCache::Video(c) => accumulate_video_backward(cfg, c, upstream, &mut grads)?,
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{TaggedToken, TokenCategory};
    use rand_chacha::ChaCha8Rng;

    fn desc_of(words: &[&str]) -> Description {
        Description::from_sentences(vec![words
            .iter()
            .map(|w| TaggedToken::new(*w, TokenCategory::Other))
            .collect()])
    }

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            vocab: 32,
            d_embed: 4,
            d: 8,
            d_in: 6,
            n_frames: 4,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let a = init_params(&cfg, 9).unwrap();
        let b = init_params(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(&cfg, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_follow_config() {
        let cfg = EncoderConfig::with_d_in(48);
        let p = init_params(&cfg, 0).unwrap();
        assert_eq!(p.text_proj.len(), 32 * 64);
        assert_eq!(p.video_proj.len(), 48 * 64);
        assert_eq!(p.text_bias.len(), 64);
        p.validate(&cfg).unwrap();
    }

    #[test]
    fn init_values_in_range() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 4).unwrap();
        for (_, t, _, _) in p.tensors() {
            assert!(t.iter().all(|v| (-0.05..=0.05).contains(v)));
        }
    }

    #[test]
    fn token_bucket_is_stable() {
        // FNV-1a("a") = 0xaf63dc4c8601ec8c; low 12 bits are 0xc8c.
        assert_eq!(token_bucket("a", 4096), 0xc8c);
        // Hashing lowercases first.
        assert_eq!(token_bucket("DoG", 4096), token_bucket("dog", 4096));
    }

    #[test]
    fn encode_text_unit_norm_and_deterministic() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 1).unwrap();
        let d = desc_of(&["three", "red", "dogs", "jump"]);
        let (f1, _) = encode_text(&p, &cfg, &d).unwrap();
        let (f2, _) = encode_text(&p, &cfg, &d).unwrap();
        assert_eq!(f1, f2);
        assert!((numerics::norm(&f1) - 1.0).abs() < 1e-9);
        assert_eq!(f1.len(), cfg.d);
    }

    #[test]
    fn encode_text_is_token_order_invariant() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 2).unwrap();
        let a = desc_of(&["three", "red", "dogs", "jump"]);
        let b = desc_of(&["jump", "dogs", "three", "red"]);
        let (fa, _) = encode_text(&p, &cfg, &a).unwrap();
        let (fb, _) = encode_text(&p, &cfg, &b).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn encode_text_rejects_empty() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 3).unwrap();
        let d = Description {
            text: String::new(),
            tokens: vec![],
            sentence_bounds: vec![],
        };
        assert!(matches!(encode_text(&p, &cfg, &d), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn encode_video_unit_norm() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 4).unwrap();
        let frames = vec![vec![0.5f32; cfg.d_in]; 3];
        let (f, _) = encode_video(&p, &cfg, &frames).unwrap();
        assert!((numerics::norm(&f) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn encode_video_repeated_frame_matches_single() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 5).unwrap();
        let frame = vec![0.25f32, -0.5, 1.0, 0.0, 2.0, -1.0];
        let (single, _) = encode_video(&p, &cfg, std::slice::from_ref(&frame)).unwrap();
        let (repeated, _) = encode_video(&p, &cfg, &vec![frame; 8]).unwrap();
        for (a, b) in single.iter().zip(&repeated) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_subsampling_equal_intervals() {
        assert_eq!(frame_indices(16, 8), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(frame_indices(3, 8), vec![0, 1, 2]);
        assert_eq!(frame_indices(8, 8), vec![0, 1, 2, 3, 4, 5, 6, 7]);
        // First frame always included.
        assert_eq!(frame_indices(100, 4)[0], 0);
    }

    #[test]
    fn encode_video_rejects_empty_and_bad_dims() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 6).unwrap();
        assert!(matches!(
            encode_video(&p, &cfg, &[]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            encode_video(&p, &cfg, &[vec![0.0f32; 3]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 7).unwrap();
        let d = desc_of(&["alpha", "beta"]);
        let (_, cache) = encode_text(&p, &cfg, &d).unwrap();
        let g = encoder_backward(&p, &cfg, &ForwardCache::Text(cache), &vec![0.0; cfg.d]).unwrap();
        for (_, t, _, _) in g.tensors() {
            assert!(t.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn radial_upstream_is_annihilated() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 8).unwrap();
        let d = desc_of(&["alpha", "beta", "gamma"]);
        let (feat, cache) = encode_text(&p, &cfg, &d).unwrap();
        let g = encoder_backward(&p, &cfg, &ForwardCache::Text(cache), &feat).unwrap();
        for (_, t, _, _) in g.tensors() {
            for &x in t {
                assert!(x.abs() < 1e-12, "radial gradient leaked: {x}");
            }
        }
    }

    // Finite-difference oracle: loss = w . f(theta) for a fixed random w,
    // checked against the analytic backward over every parameter entry.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let params = init_params(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w: Vec<f64> = (0..cfg.d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let desc = desc_of(&["one", "two", "three"]);
        let frames: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..cfg.d_in).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();

        let loss_of = |p: &EncoderParams| -> f64 {
            let (ft, _) = encode_text(p, &cfg, &desc).unwrap();
            let (fv, _) = encode_video(p, &cfg, &frames).unwrap();
            numerics::dot(&w, &ft) + numerics::dot(&w, &fv)
        };

        let (_, tc) = encode_text(&params, &cfg, &desc).unwrap();
        let (_, vc) = encode_video(&params, &cfg, &frames).unwrap();
        let mut analytic = EncoderGrads::zeros(&cfg);
        accumulate_text_backward(&params, &cfg, &tc, &w, &mut analytic).unwrap();
        accumulate_video_backward(&cfg, &vc, &w, &mut analytic).unwrap();

        let eps = 1e-4;
        let mut max_rel = 0.0f64;
        let mut probe = params.clone();
        let names = TENSOR_NAMES;
        for ti in 0..names.len() {
            let len = probe.tensors()[ti].1.len();
            // Probe a deterministic subset of entries in the big embedding
            // table; the rest stay exact zeros in both routes.
            let stride = (len / 50).max(1);
            for idx in (0..len).step_by(stride) {
                let orig = probe.tensors()[ti].1[idx];
                probe.tensors_mut()[ti].1[idx] = orig + eps;
                let plus = loss_of(&probe);
                probe.tensors_mut()[ti].1[idx] = orig - eps;
                let minus = loss_of(&probe);
                probe.tensors_mut()[ti].1[idx] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let an = analytic.tensors()[ti].1[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }
}
