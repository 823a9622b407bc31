//! Step-dependent weights: KL annealing and spherical noise decay.

use crate::config::NoiseDecay;

/// Fraction of training over which β ramps linearly from 0 to 1.
pub const KL_WARMUP_FRACTION: f64 = 0.2;

/// KL weight at step `t` of `total`: `min(1, t / (0.2·total))`.
pub fn kl_beta(t: u64, total: u64) -> f64 {
    let warm = KL_WARMUP_FRACTION * total as f64;
    if warm <= 0.0 {
        return 1.0;
    }
    (t as f64 / warm).min(1.0)
}

/// Noise scale at step `t`: `σ₀·2^(−t/half_life)` under exponential decay.
pub fn noise_sigma(sigma0: f64, decay: NoiseDecay, t: u64) -> f64 {
    match decay {
        NoiseDecay::None => sigma0,
        NoiseDecay::Exponential { half_life } => sigma0 * (-(t as f64) / half_life).exp2(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_ramp() {
        assert_eq!(kl_beta(0, 1000), 0.0);
        assert_eq!(kl_beta(100, 1000), 0.5);
        assert_eq!(kl_beta(200, 1000), 1.0);
        assert_eq!(kl_beta(999, 1000), 1.0);
        let mut prev = 0.0;
        for t in 0..1000 {
            let b = kl_beta(t, 1000);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn sigma_halves_per_half_life() {
        let d = NoiseDecay::Exponential { half_life: 250.0 };
        assert_eq!(noise_sigma(0.1, d, 0), 0.1);
        assert_eq!(noise_sigma(0.1, d, 250), 0.05);
        assert_eq!(noise_sigma(0.1, d, 500), 0.025);
        assert_eq!(noise_sigma(0.1, NoiseDecay::None, 10_000), 0.1);
    }
}
