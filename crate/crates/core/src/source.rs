//! Cavity-enhanced SPDC pair source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceParams {
    /// Pairs per second.
    pub pair_rate: f64,
    /// Single-photon linewidth in Hz.
    pub photon_bandwidth: f64,
    /// Uncorrelated broadband photons per second reaching the signal fibre.
    pub signal_noise_rate: f64,
    pub idler_noise_rate: f64,
    /// Pump coherence across one interferometer delay.
    pub pump_visibility: f64,
    /// Mean number of broadband signal photons emitted together with each pair.
    pub noise_photons_per_pair: f64,
    /// Rate of broadband pairs that herald a signal photon without time-bin coherence.
    pub noise_pair_rate: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            pair_rate: 1e4,
            photon_bandwidth: 1.8e6,
            signal_noise_rate: 0.0,
            idler_noise_rate: 0.0,
            pump_visibility: 1.0,
            noise_photons_per_pair: 0.0,
            noise_pair_rate: 0.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("pair_rate", self.pair_rate),
            ("signal_noise_rate", self.signal_noise_rate),
            ("idler_noise_rate", self.idler_noise_rate),
            ("noise_photons_per_pair", self.noise_photons_per_pair),
            ("noise_pair_rate", self.noise_pair_rate),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("source.{name}"),
                    "must be finite and >= 0",
                ));
            }
        }
        if !(self.photon_bandwidth > 0.0) || !self.photon_bandwidth.is_finite() {
            return Err(Error::config("source.photon_bandwidth", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.pump_visibility) {
            return Err(Error::config(
                "source.pump_visibility",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Correlation time `τ_c = 1/(2π·Δν)` of the two-photon wavepacket.
    pub fn coherence_time(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.photon_bandwidth)
    }

    /// Mean pair number per coherence window, `2·R·τ_c`.
    pub fn mu(&self) -> f64 {
        2.0 * self.pair_rate * self.coherence_time()
    }

    /// Sets the pair rate that yields mean pair number `mu`.
    pub fn with_mu(mut self, mu: f64) -> Self {
        self.pair_rate = mu / (2.0 * self.coherence_time());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEvent {
    pub idler_time: f64,
    pub signal_time: f64,
    pub pair_phase: f64,
}

/// Pairs emitted in `[0, duration)`.
pub fn sample_pairs(params: &SourceParams, duration: f64, seed: u64) -> Result<Vec<PairEvent>> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain("duration must be positive"));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_pairs_between(params, 0.0, duration, &mut rng))
}

/// Pairs whose idler is emitted in `[t0, t1)`.
pub fn sample_pairs_between<R: Rng + ?Sized>(
    params: &SourceParams,
    t0: f64,
    t1: f64,
    rng: &mut R,
) -> Vec<PairEvent> {
    let tau_c = params.coherence_time();
    let sigma = phase_sigma(params.pump_visibility);
    poisson_times(params.pair_rate, t0, t1, rng)
        .into_iter()
        .map(|t| {
            let d = laplace(tau_c, rng);
            PairEvent {
                idler_time: t,
                signal_time: t + d,
                pair_phase: pair_phase(sigma, rng),
            }
        })
        .collect()
}

/// Homogeneous Poisson arrival times in `[t0, t1)`.
pub fn poisson_times<R: Rng + ?Sized>(rate: f64, t0: f64, t1: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 || t1 <= t0 {
        return out;
    }
    out.reserve((rate * (t1 - t0) * 1.05) as usize + 8);
    let mut t = t0;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / rate;
        if t >= t1 {
            break;
        }
        out.push(t);
    }
    out
}

/// Double-sided exponential variate with scale `tau`.
pub fn laplace<R: Rng + ?Sized>(tau: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        tau * e
    } else {
        -tau * e
    }
}

pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|p| p.sample(rng) as u64)
        .unwrap_or(0)
}

/// Standard deviation of the wrapped normal whose mean phasor is `visibility`;
/// `None` means uniform phase.
fn phase_sigma(visibility: f64) -> Option<f64> {
    if visibility <= 0.0 {
        None
    } else {
        Some((-2.0 * visibility.ln()).max(0.0).sqrt())
    }
}

fn pair_phase<R: Rng + ?Sized>(sigma: Option<f64>, rng: &mut R) -> f64 {
    match sigma {
        None => rng.random_range(0.0..std::f64::consts::TAU),
        Some(0.0) => 0.0,
        Some(s) => {
            let z: f64 = StandardNormal.sample(rng);
            s * z
        }
    }
}

/// Peak cross-correlation `1 + 1/μ` of a single-mode thermal pair source.
pub fn analytic_cross_g2(mu: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::domain("mu must be positive"));
    }
    Ok(1.0 + 1.0 / mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_g2_examples() {
        assert_eq!(analytic_cross_g2(1.0).unwrap(), 2.0);
        assert!((analytic_cross_g2(0.05).unwrap() - 21.0).abs() < 1e-12);
        assert!((analytic_cross_g2(100.0).unwrap() - 1.01).abs() < 1e-12);
        assert!(analytic_cross_g2(0.0).is_err());
        assert!(analytic_cross_g2(-1.0).is_err());
    }

    #[test]
    fn pair_count_is_poisson() {
        let p = SourceParams::default();
        let pairs = sample_pairs(&p, 1.0, 7).unwrap();
        assert!((pairs.len() as f64 - 1e4).abs() < 500.0);
        assert!(pairs.windows(2).all(|w| w[0].idler_time <= w[1].idler_time));
    }

    #[test]
    fn delay_spread_matches_bandwidth() {
        let p = SourceParams {
            pair_rate: 1e6,
            ..SourceParams::default()
        };
        let pairs = sample_pairs(&p, 1.0, 3).unwrap();
        assert!(pairs.len() > 990_000);
        let n = pairs.len() as f64;
        let d: Vec<f64> = pairs.iter().map(|e| e.signal_time - e.idler_time).collect();
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = std::f64::consts::SQRT_2 / (2.0 * std::f64::consts::PI * 1.8e6);
        assert!((expect - 125.04e-9).abs() < 0.1e-9);
        assert!((var.sqrt() / expect - 1.0).abs() < 0.05);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SourceParams::default();
        assert_eq!(
            sample_pairs(&p, 0.2, 11).unwrap(),
            sample_pairs(&p, 0.2, 11).unwrap()
        );
        assert_ne!(
            sample_pairs(&p, 0.2, 11).unwrap(),
            sample_pairs(&p, 0.2, 12).unwrap()
        );
    }

    #[test]
    fn pair_phase_coherence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in [0.0, 0.3, 0.8, 1.0] {
            let s = phase_sigma(v);
            let n = 200_000;
            let mean: f64 = (0..n).map(|_| pair_phase(s, &mut rng).cos()).sum::<f64>() / n as f64;
            assert!((mean - v).abs() < 0.01, "visibility {v} gave {mean}");
        }
    }

    #[test]
    fn mu_round_trip() {
        let p = SourceParams::default().with_mu(0.05);
        assert!((p.mu() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid() {
        let p = SourceParams {
            pump_visibility: 1.5,
            ..SourceParams::default()
        };
        assert!(p.validate().is_err());
        assert!(sample_pairs(&SourceParams::default(), 0.0, 1).is_err());
    }
}
