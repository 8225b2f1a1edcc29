//! Unbalanced Mach-Zehnder analyzers and single-photon detectors.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};
use crate::povm::{PovmElement, PovmSet, Slot};
use crate::source::poisson_times;
use crate::state::{Bloch, DensityMatrix};
use crate::tags::{sort_tags, Channel, Tag, TagKind, TimeTagStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MzParams {
    /// Long-arm delay in seconds.
    pub delay: f64,
    /// Phase of the long arm in units of π.
    pub phase_pi: f64,
    pub t_short: f64,
    pub t_long: f64,
}

impl Default for MzParams {
    fn default() -> Self {
        Self {
            delay: 420e-9,
            phase_pi: 0.0,
            t_short: 1.0,
            t_long: 1.0,
        }
    }
}

impl MzParams {
    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase_pi = phase / PI;
        self
    }

    /// Analyzer whose long arm transmits `ratio` times the short arm.
    pub fn with_ratio(mut self, ratio: f64) -> Self {
        if ratio <= 1.0 {
            self.t_short = 1.0;
            self.t_long = ratio;
        } else {
            self.t_short = 1.0 / ratio;
            self.t_long = 1.0;
        }
        self
    }

    pub fn phase(&self) -> f64 {
        self.phase_pi * PI
    }

    pub fn ratio(&self) -> f64 {
        self.t_long / self.t_short
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(Error::config(format!("{path}.delay"), "must be > 0"));
        }
        if !self.phase_pi.is_finite() {
            return Err(Error::config(format!("{path}.phase_pi"), "must be finite"));
        }
        for (name, v) in [("t_short", self.t_short), ("t_long", self.t_long)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("{path}.{name}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if self.t_short + self.t_long == 0.0 {
            return Err(Error::config(
                format!("{path}.t_short"),
                "both arms are blocked",
            ));
        }
        Ok(())
    }

    /// Outcome probabilities `(early, central, late, none)` for a qubit.
    pub fn slot_probabilities(&self, q: Bloch) -> [f64; 4] {
        let (ts, tl) = (self.t_short, self.t_long);
        let phi = self.phase();
        let pe = 0.25 * ts * 0.5 * (1.0 + q.z);
        let pl = 0.25 * tl * 0.5 * (1.0 - q.z);
        let pc = 0.25
            * (tl * 0.5 * (1.0 + q.z)
                + ts * 0.5 * (1.0 - q.z)
                + (tl * ts).sqrt() * (q.x * phi.cos() - q.y * phi.sin()));
        let pc = pc.max(0.0);
        [pe, pc, pl, (1.0 - pe - pc - pl).max(0.0)]
    }

    fn sample_slot<R: Rng + ?Sized>(&self, q: Bloch, rng: &mut R) -> Option<Slot> {
        let p = self.slot_probabilities(q);
        let u: f64 = rng.random();
        if u < p[0] {
            Some(Slot::Early)
        } else if u < p[0] + p[1] {
            Some(Slot::Central)
        } else if u < p[0] + p[1] + p[2] {
            Some(Slot::Late)
        } else {
            None
        }
    }

    /// Routes one photon through the interferometer; `None` if it leaves by
    /// the unmonitored port or is lost in an arm.
    pub fn analyze<R: Rng + ?Sized>(&self, mut tag: Tag, rng: &mut R) -> Option<Tag> {
        let q = tag.qubit.unwrap_or(Bloch::MIXED);
        let slot = self.sample_slot(q, rng)?;
        tag.time += slot.shift() * self.delay;
        tag.slot = Some(slot);
        tag.qubit = None;
        Some(tag)
    }

    /// Measures the idler of the pair `(|ee⟩ + e^{iθ}|ll⟩)/√2`, returning its
    /// slot and the conditional signal qubit, or `None` with the signal left
    /// in the state conditioned on no click.
    pub fn herald<R: Rng + ?Sized>(&self, pair_phase: f64, rng: &mut R) -> (Option<Slot>, Bloch) {
        // the idler marginal of the pair state is maximally mixed
        let slot = self.sample_slot(Bloch::MIXED, rng);
        (slot, self.conditional_signal(slot, pair_phase))
    }

    /// Signal Bloch vector after the idler outcome `slot` on the pair state
    /// with phase `θ`.
    pub fn conditional_signal(&self, slot: Option<Slot>, pair_phase: f64) -> Bloch {
        let e = self.element_entries(slot);
        // ρ_s[b][b'] = Ψ[b][b] E[b'][b] conj(Ψ[b'][b']) with Ψ = diag(1, e^{iθ})/√2
        let r00 = 0.5 * e[0][0].re;
        let r11 = 0.5 * e[1][1].re;
        let r01 = 0.5 * e[1][0] * C64::from_polar(1.0, -pair_phase);
        let p = r00 + r11;
        if p <= 0.0 {
            return Bloch::MIXED;
        }
        Bloch::new(2.0 * r01.re / p, -2.0 * r01.im / p, (r00 - r11) / p).clipped()
    }

    fn element_entries(&self, slot: Option<Slot>) -> [[C64; 2]; 2] {
        let (ts, tl) = (self.t_short, self.t_long);
        let z = C64::new(0.0, 0.0);
        let r = |x: f64| C64::new(x, 0.0);
        let central = {
            let a = (tl * ts).sqrt() * 0.25;
            let ph = C64::from_polar(1.0, self.phase());
            [[r(tl * 0.25), ph * a], [ph.conj() * a, r(ts * 0.25)]]
        };
        match slot {
            Some(Slot::Early) => [[r(ts * 0.25), z], [z, z]],
            Some(Slot::Late) => [[z, z], [z, r(tl * 0.25)]],
            Some(Slot::Central) => central,
            None => [
                [r(1.0 - 0.25 * ts - 0.25 * tl), -central[0][1]],
                [-central[1][0], r(1.0 - 0.25 * ts - 0.25 * tl)],
            ],
        }
    }
}

/// Three-slot POVM of one monitored interferometer output.
pub fn mz_povm(params: &MzParams) -> Result<PovmSet> {
    params.validate("analyzer")?;
    let mut elements = Vec::with_capacity(3);
    for slot in Slot::ALL {
        let e = params.element_entries(Some(slot));
        let m = ComplexMatrix::new(2, &[e[0][0], e[0][1], e[1][0], e[1][1]])?;
        elements.push(PovmElement::new(m, Some(slot))?);
    }
    PovmSet::complete(elements)
}

/// Interference visibility `2√r/(1+r)` for arm transmission ratio `r`.
pub fn visibility_from_imbalance(ratio: f64) -> Result<f64> {
    if !(ratio >= 0.0) || ratio.is_nan() {
        return Err(Error::domain("transmission ratio must be >= 0"));
    }
    if ratio.is_infinite() {
        return Ok(0.0);
    }
    Ok(2.0 * ratio.sqrt() / (1.0 + ratio))
}

/// `p(a, b) = tr(ρ·E_a⊗E_b)`; rows index the idler outcome and columns the
/// signal outcome, both ordered `(early, central, late, none)`.
pub fn joint_franson_probability(
    rho: &DensityMatrix,
    idler_povm: &PovmSet,
    signal_povm: &PovmSet,
) -> Result<[[f64; 4]; 4]> {
    if rho.dim() != 4 || idler_povm.dim() != 2 || signal_povm.dim() != 2 {
        return Err(Error::domain(
            "joint probabilities need a two-qubit state and qubit POVMs",
        ));
    }
    let ops = |p: &PovmSet| -> Vec<ComplexMatrix> {
        let mut v: Vec<ComplexMatrix> = Slot::ALL
            .iter()
            .map(|&s| {
                p.element(s)
                    .map(|e| e.matrix().clone())
                    .unwrap_or_else(|| ComplexMatrix::zeros(2))
            })
            .collect();
        v.push(p.no_click().matrix().clone());
        v
    };
    let ei = ops(idler_povm);
    let es = ops(signal_povm);
    let mut out = [[0.0; 4]; 4];
    for (a, ea) in ei.iter().enumerate() {
        for (b, eb) in es.iter().enumerate() {
            out[a][b] = rho.matrix().trace_product(&ea.kron(eb)).re.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Least-squares fit of `A + B cos φ + C sin φ`; returns `(A, √(B²+C²))`.
pub fn fit_fringe(phases: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if phases.len() != values.len() || phases.len() < 3 {
        return Err(Error::Input(
            "fringe fit needs at least three points".into(),
        ));
    }
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (&p, &v) in phases.iter().zip(values) {
        let row = Vector3::new(1.0, p.cos(), p.sin());
        ata += row * row.transpose();
        atb += row * v;
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Reconstruction("degenerate phase sampling".into()))?;
    Ok((sol[0], sol[1].hypot(sol[2])))
}

pub fn fringe_visibility(phases: &[f64], values: &[f64]) -> Result<f64> {
    let (mean, amp) = fit_fringe(phases, values)?;
    if mean <= 0.0 {
        return Err(Error::Reconstruction("fringe has no mean signal".into()));
    }
    Ok(amp / mean)
}

pub fn apply_analyzer_events(
    tags: &TimeTagStream,
    params: &MzParams,
    seed: u64,
) -> Result<TimeTagStream> {
    params.validate("analyzer")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Tag> = tags
        .tags()
        .iter()
        .filter_map(|&t| params.analyze(t, &mut rng))
        .collect();
    sort_tags(&mut out);
    Ok(TimeTagStream::from_sorted(out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub jitter_sigma: f64,
    pub dead_time: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self::signal_default()
    }
}

impl DetectorParams {
    /// Silicon avalanche photodiode.
    pub fn signal_default() -> Self {
        Self {
            efficiency: 0.5,
            dark_rate: 100.0,
            jitter_sigma: 1e-9,
            dead_time: 50e-9,
        }
    }

    /// Superconducting nanowire detector.
    pub fn idler_default() -> Self {
        Self {
            efficiency: 0.8,
            dark_rate: 50.0,
            jitter_sigma: 1e-9,
            dead_time: 50e-9,
        }
    }

    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            jitter_sigma: 0.0,
            dead_time: 0.0,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config(
                format!("{path}.efficiency"),
                "must lie in [0, 1]",
            ));
        }
        for (name, v) in [
            ("dark_rate", self.dark_rate),
            ("jitter_sigma", self.jitter_sigma),
            ("dead_time", self.dead_time),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("{path}.{name}"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    /// Thinning and timing jitter for one photon.
    pub fn detect<R: Rng + ?Sized>(&self, mut tag: Tag, rng: &mut R) -> Option<Tag> {
        if self.efficiency < 1.0 && rng.random::<f64>() >= self.efficiency {
            return None;
        }
        if self.jitter_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            tag.time = (tag.time + self.jitter_sigma * z).max(0.0);
        }
        Some(tag)
    }

    /// Dark counts in `[t0, t1)`; `slotted` gives each a uniformly random slot.
    pub fn dark_tags<R: Rng + ?Sized>(
        &self,
        channel: Channel,
        t0: f64,
        t1: f64,
        slotted: bool,
        rng: &mut R,
    ) -> Vec<Tag> {
        poisson_times(self.dark_rate, t0, t1, rng)
            .into_iter()
            .map(|t| {
                let mut tag = Tag::new(t, channel).with_kind(TagKind::Dark);
                if slotted {
                    tag.slot = Slot::from_index(rng.random_range(0..3));
                }
                tag
            })
            .collect()
    }
}

/// Non-paralyzable dead time on time-sorted tags of one channel. `last` is
/// the most recent accepted time before the slice; returns the new value.
pub fn apply_dead_time(tags: &mut Vec<Tag>, dead_time: f64, last: Option<f64>) -> Option<f64> {
    let mut last = last;
    if dead_time <= 0.0 {
        return tags.last().map(|t| t.time).or(last);
    }
    tags.retain(|t| match last {
        Some(l) if t.time - l < dead_time => false,
        _ => {
            last = Some(t.time);
            true
        }
    });
    last
}

/// Detector response over `[0, duration)` for the tags of one channel.
pub fn apply_detector(
    tags: &TimeTagStream,
    channel: Channel,
    params: &DetectorParams,
    duration: f64,
    seed: u64,
) -> Result<TimeTagStream> {
    params.validate("detector")?;
    if !(duration > 0.0) {
        return Err(Error::domain("duration must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slotted = tags.tags().iter().any(|t| t.slot.is_some());
    let mut out: Vec<Tag> = tags
        .tags()
        .iter()
        .filter(|t| t.channel == channel)
        .filter_map(|&t| params.detect(t, &mut rng))
        .collect();
    out.extend(params.dark_tags(channel, 0.0, duration, slotted, &mut rng));
    sort_tags(&mut out);
    apply_dead_time(&mut out, params.dead_time, None);
    Ok(TimeTagStream::from_sorted(out))
}
