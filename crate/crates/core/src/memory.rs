//! Atomic-frequency-comb memory channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{trace_out_second, ComplexMatrix};
use crate::state::DensityMatrix;
use crate::tags::{sort_tags, Tag, TagKind, TimeTagStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    /// Spectral transparency window: photons pass without delay.
    Transparency,
    Afc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfcParams {
    /// Comb tooth spacing Δ in Hz.
    pub comb_period_delta: f64,
    pub eta0: f64,
    pub t2_eff: f64,
    pub device_transmission: f64,
    pub extra_insertion_loss: f64,
    pub mode: MemoryMode,
    /// Depolarizing probability applied to the stored qubit (AFC mode only).
    pub depolarizing: f64,
}

impl Default for AfcParams {
    fn default() -> Self {
        Self {
            comb_period_delta: 1.0 / 3e-6,
            eta0: 0.2275,
            t2_eff: 27e-6,
            device_transmission: 0.25,
            extra_insertion_loss: 0.8,
            mode: MemoryMode::Transparency,
            depolarizing: 0.0,
        }
    }
}

impl AfcParams {
    pub fn validate(&self) -> Result<()> {
        if self.mode == MemoryMode::Afc
            && !(self.comb_period_delta > 0.0 && self.comb_period_delta.is_finite())
        {
            return Err(Error::config(
                "memory.comb_period_delta",
                "must be > 0 in afc mode",
            ));
        }
        if !(self.comb_period_delta >= 0.0) || !self.comb_period_delta.is_finite() {
            return Err(Error::config(
                "memory.comb_period_delta",
                "must be finite and >= 0",
            ));
        }
        for (name, v) in [
            ("eta0", self.eta0),
            ("device_transmission", self.device_transmission),
            ("extra_insertion_loss", self.extra_insertion_loss),
            ("depolarizing", self.depolarizing),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("memory.{name}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if !(self.t2_eff > 0.0) || !self.t2_eff.is_finite() {
            return Err(Error::config("memory.t2_eff", "must be > 0"));
        }
        Ok(())
    }

    /// Echo delay, or zero in transparency mode.
    pub fn delay(&self) -> f64 {
        match self.mode {
            MemoryMode::Afc => 1.0 / self.comb_period_delta,
            MemoryMode::Transparency => 0.0,
        }
    }

    /// Fibre-to-fibre transmission including the extra insertion loss.
    pub fn transmission(&self) -> f64 {
        self.device_transmission * self.extra_insertion_loss
    }

    /// Internal storage efficiency at the configured delay (1 in transparency).
    pub fn internal_efficiency(&self) -> f64 {
        match self.mode {
            MemoryMode::Afc => self.eta0 * (-4.0 * self.delay() / self.t2_eff).exp(),
            MemoryMode::Transparency => 1.0,
        }
    }

    /// Survival probability of a pair photon.
    pub fn pair_survival(&self) -> f64 {
        self.internal_efficiency() * self.transmission()
    }

    /// Survival probability of a broadband photon outside the comb.
    pub fn noise_survival(&self) -> f64 {
        self.transmission()
    }

    pub fn effective_depolarizing(&self) -> f64 {
        match self.mode {
            MemoryMode::Afc => self.depolarizing,
            MemoryMode::Transparency => 0.0,
        }
    }

    /// Passes one signal photon through the device; `None` if it is lost.
    pub fn transmit<R: Rng + ?Sized>(&self, mut tag: Tag, rng: &mut R) -> Option<Tag> {
        match tag.kind {
            TagKind::Pair => {
                if rng.random::<f64>() >= self.pair_survival() {
                    return None;
                }
                tag.time += self.delay();
                let p = self.effective_depolarizing();
                if p > 0.0 {
                    tag.qubit = tag.qubit.map(|q| q.scaled(1.0 - p));
                }
                Some(tag)
            }
            TagKind::Noise | TagKind::Dark => {
                (rng.random::<f64>() < self.noise_survival()).then_some(tag)
            }
        }
    }
}

/// Storage time `1/Δ`.
pub fn afc_delay(comb_period_delta: f64) -> Result<f64> {
    if !(comb_period_delta > 0.0) || !comb_period_delta.is_finite() {
        return Err(Error::domain("comb period must be positive"));
    }
    Ok(1.0 / comb_period_delta)
}

/// `eta0·exp(−4τ/T2)`.
pub fn afc_efficiency(tau: f64, eta0: f64, t2_eff: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::domain("storage time must be >= 0"));
    }
    if !(t2_eff > 0.0) {
        return Err(Error::domain("t2_eff must be positive"));
    }
    if !(0.0..=1.0).contains(&eta0) {
        return Err(Error::domain("eta0 must lie in [0, 1]"));
    }
    Ok(eta0 * (-4.0 * tau / t2_eff).exp())
}

pub fn end_to_end_efficiency(
    internal: f64,
    device_transmission: f64,
    extra_insertion_loss: f64,
) -> Result<f64> {
    for v in [internal, device_transmission, extra_insertion_loss] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!(
                "efficiency factor {v} outside [0, 1]"
            )));
        }
    }
    Ok(internal * device_transmission * extra_insertion_loss)
}

/// Post-selected two-qubit state after the signal passes the memory, and the
/// signal survival probability.
pub fn apply_memory_analytic(
    rho: &DensityMatrix,
    params: &AfcParams,
) -> Result<(DensityMatrix, f64)> {
    if rho.dim() != 4 {
        return Err(Error::domain(format!(
            "memory acts on a two-qubit state, got dimension {}",
            rho.dim()
        )));
    }
    params.validate()?;
    let p = params.effective_depolarizing();
    let out = if p > 0.0 {
        let idler = trace_out_second(rho.matrix());
        let mixed = idler.kron(&ComplexMatrix::identity(2).scale(0.5));
        DensityMatrix::new((&rho.matrix().scale(1.0 - p) + &mixed.scale(p)).hermitian_part())?
    } else {
        rho.clone()
    };
    Ok((out, params.pair_survival()))
}

pub fn apply_memory_events(
    tags: &TimeTagStream,
    params: &AfcParams,
    seed: u64,
) -> Result<TimeTagStream> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Tag> = tags
        .tags()
        .iter()
        .filter_map(|&t| params.transmit(t, &mut rng))
        .collect();
    sort_tags(&mut out);
    Ok(TimeTagStream::from_sorted(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{fidelity, ket_phi_plus, werner_state};
    use crate::tags::Channel;

    fn afc(delta: f64) -> AfcParams {
        AfcParams {
            comb_period_delta: delta,
            mode: MemoryMode::Afc,
            t2_eff: 23.68e-6,
            ..AfcParams::default()
        }
    }

    #[test]
    fn delay_examples() {
        assert_eq!(afc_delay(1e6).unwrap(), 1e-6);
        assert!((afc_delay(333.333e3).unwrap() - 3.0e-6).abs() < 1e-11);
        assert_eq!(afc_delay(100e3).unwrap(), 10e-6);
        assert!(afc_delay(0.0).is_err());
        assert!(afc_delay(-1.0).is_err());
        for tau in [1e-6, 3e-6, 10e-6, 28e-6] {
            let back = afc_delay(1.0 / tau).unwrap();
            assert!((back - tau).abs() <= f64::EPSILON * tau);
        }
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(afc_efficiency(0.0, 0.2275, 23.68e-6).unwrap(), 0.2275);
        assert!((afc_efficiency(3e-6, 0.2275, 23.68e-6).unwrap() - 0.137).abs() < 5e-4);
        assert!((afc_efficiency(10e-6, 0.2275, 23.68e-6).unwrap() - 0.042).abs() < 5e-4);
        assert!(afc_efficiency(-1e-6, 0.2, 1e-5).is_err());
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let e = afc_efficiency(k as f64 * 1e-6, 0.2, 27e-6).unwrap();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn end_to_end_examples() {
        assert_eq!(end_to_end_efficiency(0.18, 1.0, 1.0).unwrap(), 0.18);
        assert!((end_to_end_efficiency(0.18, 0.25, 0.8).unwrap() - 0.036).abs() < 1e-15);
        for x in [0.0, 0.5, 1.0] {
            assert_eq!(end_to_end_efficiency(x, 1.0, 1.0).unwrap(), x);
        }
        assert!(end_to_end_efficiency(1.2, 1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_memory_preserves_state() {
        let p = AfcParams {
            device_transmission: 1.0,
            extra_insertion_loss: 1.0,
            ..AfcParams::default()
        };
        let (out, eff) = apply_memory_analytic(&ket_phi_plus(), &p).unwrap();
        assert_eq!(eff, 1.0);
        assert!(out.matrix().max_abs_diff(ket_phi_plus().matrix()) < 1e-15);

        let p3 = afc(1.0 / 3e-6);
        let (out, eff) = apply_memory_analytic(&ket_phi_plus(), &p3).unwrap();
        let expect = afc_efficiency(3e-6, 0.2275, 23.68e-6).unwrap() * 0.25 * 0.8;
        assert!((eff - expect).abs() < 1e-15);
        assert!((fidelity(&out, &ket_phi_plus()).unwrap() - 1.0).abs() < 1e-12);
        assert!(apply_memory_analytic(&DensityMatrix::maximally_mixed(2), &p3).is_err());
    }

    #[test]
    fn depolarizing_matches_werner() {
        let p = AfcParams {
            depolarizing: 0.2,
            ..afc(1e6)
        };
        let (out, _) = apply_memory_analytic(&ket_phi_plus(), &p).unwrap();
        // one-sided depolarizing of a Bell state is a Werner state
        assert!(
            out.matrix()
                .max_abs_diff(werner_state(0.8).unwrap().matrix())
                < 1e-12
        );
    }

    #[test]
    fn event_memory_shifts_and_thins() {
        let n = 1_000_000;
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 1e-6).collect();
        let stream = TimeTagStream::from_times(&times, Channel::Signal).unwrap();
        let p = afc(1.0 / 3e-6);
        let out = apply_memory_events(&stream, &p, 9).unwrap();
        let eta = p.pair_survival();
        let sd = (n as f64 * eta * (1.0 - eta)).sqrt();
        assert!((out.len() as f64 - n as f64 * eta).abs() < 5.0 * sd);
        for t in out.tags() {
            let shifted = t.time - 3e-6;
            let k = (shifted / 1e-6).round();
            assert!((shifted - k * 1e-6).abs() < 1e-12);
        }

        let tp = AfcParams::default();
        let out = apply_memory_events(&stream, &tp, 9).unwrap();
        let t = tp.transmission();
        let sd = (n as f64 * t * (1.0 - t)).sqrt();
        assert!((out.len() as f64 - n as f64 * t).abs() < 5.0 * sd);
        assert_eq!(
            apply_memory_events(&stream, &tp, 4).unwrap(),
            apply_memory_events(&stream, &tp, 4).unwrap()
        );
    }

    #[test]
    fn noise_is_not_delayed() {
        let tags: Vec<Tag> = (0..1000)
            .map(|k| Tag::new(k as f64 * 1e-5, Channel::Signal).with_kind(TagKind::Noise))
            .collect();
        let stream = TimeTagStream::new(tags).unwrap();
        let out = apply_memory_events(&stream, &afc(1e5), 1).unwrap();
        assert!(!out.is_empty());
        for t in out.tags() {
            let k = (t.time / 1e-5).round();
            assert!((t.time - k * 1e-5).abs() < 1e-15);
        }
    }

    #[test]
    fn validation_names_field() {
        let p = AfcParams {
            comb_period_delta: 0.0,
            mode: MemoryMode::Afc,
            ..AfcParams::default()
        };
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("memory.comb_period_delta"));
    }
}
