use alloc::vec::Vec;

use super::Tensor;
use crate::math;

/// Sinusoidal embedding of a timestep: `dim / 2` sines followed by the
/// matching cosines, with frequencies `10000^(-i / (dim / 2))`.
pub fn timestep_embedding(t: i64, dim: usize) -> Tensor {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding dimension must be even and positive");
    let half = dim / 2;
    let ln_base = math::ln(10000.0);
    let args: Vec<f64> = (0..half).map(|i| t as f64 * math::exp(-ln_base * i as f64 / half as f64)).collect();
    let mut out = Vec::with_capacity(dim);
    out.extend(args.iter().map(|&a| math::sin(a)));
    out.extend(args.iter().map(|&a| math::cos(a)));
    Tensor::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_timestep() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn distinct_and_bounded() {
        let embs: Vec<Tensor> = (1..=1000).map(|t| timestep_embedding(t, 64)).collect();
        for e in &embs {
            assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let mut min_dist = f64::INFINITY;
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                let d: f64 = embs[i].data().iter().zip(embs[j].data()).map(|(a, b)| (a - b) * (a - b)).sum();
                min_dist = min_dist.min(d);
            }
        }
        assert!(min_dist > 1e-6, "closest pair at squared distance {min_dist}");
    }
}
