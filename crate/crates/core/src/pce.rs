//! Primary component extraction over an importance-ordered orthonormal basis.
//!
//! Three pure steps: `decompose` projects a feature onto the basis,
//! `filtrate` keeps the top-k most important components, `reconstruct`
//! sums the retained ones back. `pce_fixed` composes them with a fixed k;
//! `tpcm` picks k dynamically as the smallest count whose reconstruction
//! reaches a target cosine similarity to the original feature.
//!
//! The basis is treated as a constant by all gradient paths: reconstruction
//! is linear in the coefficients, so gradients pass straight through the
//! retained projection.

use crate::numerics::{self, ComponentBasis};
use crate::{Error, Result};

/// Projection coefficients of one feature onto a basis, with a retention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub values: Vec<f64>,
    pub retained_mask: Vec<bool>,
}

impl Coefficients {
    /// Number of retained components.
    pub fn retained_count(&self) -> usize {
        self.retained_mask.iter().filter(|&&m| m).count()
    }
}

/// Project `f` onto every basis vector; all components start retained.
pub fn decompose(basis: &ComponentBasis, f: &[f64]) -> Result<Coefficients> {
    if f.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            context: "pce::decompose",
            expected: basis.dim(),
            got: f.len(),
        });
    }
    let values: Vec<f64> = basis.vectors().iter().map(|b| numerics::dot(f, b)).collect();
    let retained_mask = vec![true; values.len()];
    Ok(Coefficients { values, retained_mask })
}

/// Keep exactly the first `k` components (the basis is importance-ordered).
/// Coefficient values are untouched.
pub fn filtrate(coeffs: &Coefficients, k: usize) -> Result<Coefficients> {
    let r = coeffs.values.len();
    if k < 1 || k > r {
        return Err(Error::InvalidArgument(format!(
            "filtrate: k must be in [1, {r}], got {k}"
        )));
    }
    let retained_mask = (0..r).map(|i| i < k).collect();
    Ok(Coefficients {
        values: coeffs.values.clone(),
        retained_mask,
    })
}

/// Sum of retained components. NOT re-normalized; downstream similarity is
/// norm-invariant.
pub fn reconstruct(basis: &ComponentBasis, coeffs: &Coefficients) -> Result<Vec<f64>> {
    if coeffs.values.len() != basis.len() || coeffs.retained_mask.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            context: "pce::reconstruct",
            expected: basis.len(),
            got: coeffs.values.len(),
        });
    }
    let mut out = vec![0.0; basis.dim()];
    for (k, (&c, &keep)) in coeffs.values.iter().zip(&coeffs.retained_mask).enumerate() {
        if keep {
            for (o, &b) in out.iter_mut().zip(basis.vector(k)) {
                *o += c * b;
            }
        }
    }
    Ok(out)
}

/// Fixed-k extraction: reconstruct from the `min(k, r)` most important
/// components.
pub fn pce_fixed(basis: &ComponentBasis, f: &[f64], k: usize) -> Result<Vec<f64>> {
    let coeffs = decompose(basis, f)?;
    let k = k.min(basis.len()).max(1);
    reconstruct(basis, &filtrate(&coeffs, k)?)
}

/// Dynamic extraction: the smallest k in [1, r] whose reconstruction has
/// cosine similarity to `f_v` of at least `target_sim`; if no k reaches the
/// target, all r components are retained.
///
/// For an orthogonal projection the cosine equals `|f_hat| / |f_v|`, so the
/// search runs on prefix sums of squared coefficients and is monotone
/// non-decreasing in k by construction.
pub fn tpcm(basis: &ComponentBasis, f_v: &[f64], target_sim: f64) -> Result<(Vec<f64>, usize)> {
    if !target_sim.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tpcm: target_sim must be finite, got {target_sim}"
        )));
    }
    let coeffs = decompose(basis, f_v)?;
    let norm_f = numerics::norm(f_v);
    if norm_f == 0.0 {
        return Err(Error::ZeroNorm("tpcm"));
    }
    let r = basis.len();
    let mut prefix_sq = 0.0;
    let mut k = r;
    for (i, &c) in coeffs.values.iter().enumerate() {
        prefix_sq += c * c;
        let cos_at = prefix_sq.sqrt() / norm_f;
        if cos_at >= target_sim {
            k = i + 1;
            break;
        }
    }
    let f_hat = reconstruct(basis, &filtrate(&coeffs, k)?)?;
    Ok((f_hat, k))
}

/// Cosine of the k-component reconstruction against the original, via the
/// projection identity `|f_hat| / |f|`. Used by audit dumps.
pub fn cos_at_k(basis: &ComponentBasis, f: &[f64], k: usize) -> Result<f64> {
    let coeffs = decompose(basis, f)?;
    let norm_f = numerics::norm(f);
    if norm_f == 0.0 {
        return Err(Error::ZeroNorm("cos_at_k"));
    }
    let k = k.min(basis.len()).max(1);
    let prefix_sq: f64 = coeffs.values[..k].iter().map(|c| c * c).sum();
    Ok((prefix_sq.sqrt() / norm_f).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cosine_sim, norm, orthonormal_basis, Matrix};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity_basis_r3() -> ComponentBasis {
        ComponentBasis::from_parts(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            vec![3.0, 2.0, 1.0],
        )
        .unwrap()
    }

    fn random_basis(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ComponentBasis {
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthonormal_basis(&Matrix::new(n, d, data).unwrap()).unwrap()
    }

    #[test]
    fn decompose_identity_basis() {
        let b = identity_basis_r3();
        let c = decompose(&b, &[0.8, 0.6, 0.0]).unwrap();
        assert_eq!(c.values, vec![0.8, 0.6, 0.0]);
        assert!(c.retained_mask.iter().all(|&m| m));
    }

    #[test]
    fn decompose_orthogonal_feature_gives_zero_values() {
        // Rank-deficient basis spanning the xy-plane; f along z.
        let b = ComponentBasis::from_parts(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            vec![2.0, 1.0],
        )
        .unwrap();
        let c = decompose(&b, &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0]);
    }

    #[test]
    fn decompose_rejects_dim_mismatch() {
        let b = identity_basis_r3();
        assert!(decompose(&b, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn decompose_reconstruct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let b = random_basis(&mut rng, 6, 4);
            assert_eq!(b.len(), 4);
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c = decompose(&b, &f).unwrap();
            let r = reconstruct(&b, &c).unwrap();
            for (x, y) in f.iter().zip(&r) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn filtrate_all_and_one() {
        let b = identity_basis_r3();
        let c = decompose(&b, &[0.8, 0.6, 0.0]).unwrap();
        let all = filtrate(&c, 3).unwrap();
        assert!(all.retained_mask.iter().all(|&m| m));
        let one = filtrate(&c, 1).unwrap();
        assert_eq!(one.retained_mask, vec![true, false, false]);
        assert_eq!(one.values, c.values);
    }

    #[test]
    fn filtrate_rejects_out_of_range() {
        let b = identity_basis_r3();
        let c = decompose(&b, &[1.0, 0.0, 0.0]).unwrap();
        assert!(filtrate(&c, 0).is_err());
        assert!(filtrate(&c, 4).is_err());
    }

    #[test]
    fn filtrate_top_32_of_larger_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let b = random_basis(&mut rng, 48, 40);
        assert!(b.len() >= 32);
        let f: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = filtrate(&decompose(&b, &f).unwrap(), 32).unwrap();
        assert_eq!(c.retained_count(), 32);
    }

    #[test]
    fn reconstruct_none_retained_is_zero() {
        let b = identity_basis_r3();
        let mut c = decompose(&b, &[0.8, 0.6, 0.0]).unwrap();
        c.retained_mask = vec![false; 3];
        assert_eq!(reconstruct(&b, &c).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn reconstruct_axis_projection() {
        let b = identity_basis_r3();
        let c = filtrate(&decompose(&b, &[0.8, 0.6, 0.0]).unwrap(), 1).unwrap();
        let r = reconstruct(&b, &c).unwrap();
        assert_eq!(r, vec![0.8, 0.0, 0.0]);
    }

    #[test]
    fn pce_fixed_full_k_is_identity() {
        let b = identity_basis_r3();
        let f = [0.8, 0.6, 0.0];
        let r = pce_fixed(&b, &f, 2).unwrap();
        for (x, y) in f.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
        // k beyond the rank clamps to r.
        let r = pce_fixed(&b, &f, 99).unwrap();
        for (x, y) in f.iter().zip(&r) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn pce_fixed_cosine_matches_projection_norm_ratio() {
        // Two routes: direct cosine_sim against |f_hat|/|f|.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let b = random_basis(&mut rng, 8, 6);
            let f: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in 1..=b.len() {
                let f_hat = pce_fixed(&b, &f, k).unwrap();
                if norm(&f_hat) == 0.0 {
                    continue;
                }
                let direct = cosine_sim(&f_hat, &f).unwrap();
                let ratio = norm(&f_hat) / norm(&f);
                assert!((direct - ratio).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pce_fixed_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let b = random_basis(&mut rng, 7, 5);
            let f: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(1..=b.len());
            let once = pce_fixed(&b, &f, k).unwrap();
            let twice = pce_fixed(&b, &once, k).unwrap();
            for (x, y) in once.iter().zip(&twice) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tpcm_two_components_reach_target() {
        let b = identity_basis_r3();
        let (f_hat, k) = tpcm(&b, &[0.8, 0.6, 0.0], 0.9).unwrap();
        assert_eq!(k, 2);
        assert!((f_hat[0] - 0.8).abs() < 1e-12);
        assert!((f_hat[1] - 0.6).abs() < 1e-12);
        assert!(f_hat[2].abs() < 1e-12);
    }

    #[test]
    fn tpcm_non_positive_target_gives_k_one() {
        let b = identity_basis_r3();
        let (_, k) = tpcm(&b, &[0.8, 0.6, 0.0], 0.0).unwrap();
        assert_eq!(k, 1);
        let (_, k) = tpcm(&b, &[0.8, 0.6, 0.0], -3.0).unwrap();
        assert_eq!(k, 1);
    }

    #[test]
    fn tpcm_unreachable_target_retains_all() {
        let b = identity_basis_r3();
        let f = [0.8, 0.6, 0.0];
        let (f_hat, k) = tpcm(&b, &f, 1.0 + 1e-6).unwrap();
        assert_eq!(k, 3);
        for (x, y) in f.iter().zip(&f_hat) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tpcm_minimality_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..50 {
            let b = random_basis(&mut rng, 9, 6);
            let f: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = rng.random_range(0.0..1.05);
            let (_, k) = tpcm(&b, &f, target).unwrap();
            // Brute force: recompute the cosine at every k via full reconstruction.
            let mut expect = b.len();
            for kk in 1..=b.len() {
                let f_hat = pce_fixed(&b, &f, kk).unwrap();
                let cos = if norm(&f_hat) == 0.0 {
                    0.0
                } else {
                    cosine_sim(&f_hat, &f).unwrap()
                };
                if cos >= target {
                    expect = kk;
                    break;
                }
            }
            assert_eq!(k, expect);
        }
    }

    #[test]
    fn tpcm_cosine_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..30 {
            let b = random_basis(&mut rng, 8, 6);
            let f: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut prev = -1.0;
            for k in 1..=b.len() {
                let cos = cos_at_k(&b, &f, k).unwrap();
                assert!(cos >= prev - 1e-9);
                prev = cos;
            }
        }
    }

    #[test]
    fn reconstruct_is_linear_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let b = random_basis(&mut rng, 6, 5);
        let c1 = decompose(&b, &(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let c2 = decompose(&b, &(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let summed = Coefficients {
            values: c1.values.iter().zip(&c2.values).map(|(a, b)| a + 2.0 * b).collect(),
            retained_mask: c1.retained_mask.clone(),
        };
        let r1 = reconstruct(&b, &c1).unwrap();
        let r2 = reconstruct(&b, &c2).unwrap();
        let rs = reconstruct(&b, &summed).unwrap();
        for i in 0..rs.len() {
            assert!((rs[i] - (r1[i] + 2.0 * r2[i])).abs() < 1e-12);
        }
    }
}
