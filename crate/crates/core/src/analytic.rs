//! Closed-form expected counts for a scenario. The event engine should agree
//! with these up to shot noise; dead time is neglected.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::analyzer::{joint_franson_probability, mz_povm, MzParams};
use crate::correlate::SlotGrid;
use crate::error::Result;
use crate::memory::apply_memory_analytic;
use crate::pipeline::{CountSummary, StatsPlan};
use crate::scenario::{Layout, Scenario};
use crate::state::{dephased_pair_state, Bloch, DensityMatrix};

/// Scaled complementary error function `e^{x²} erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 20.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    let x2 = x * x;
    let s = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2)
        + 105.0 / (16.0 * x2 * x2 * x2 * x2);
    s / (x * PI.sqrt())
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// CDF of `D + J` with `D` Laplace of scale `tau` and `J` normal with
/// standard deviation `sigma`.
pub fn laplace_normal_cdf(x: f64, tau: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        if tau <= 0.0 {
            return if x >= 0.0 { 1.0 } else { 0.0 };
        }
        return if x < 0.0 {
            0.5 * (x / tau).exp()
        } else {
            1.0 - 0.5 * (-x / tau).exp()
        };
    }
    if tau <= 0.0 {
        return norm_cdf(x / sigma);
    }
    let a = sigma * sigma / (2.0 * tau * tau);
    let g = x * x / (2.0 * sigma * sigma);
    // e^{E} erfc(u) with E = u² − g, evaluated without overflow
    let term = |u: f64, e: f64| {
        if u >= 0.0 {
            erfcx(u) * (-g).exp()
        } else {
            e.exp() * libm::erfc(u)
        }
    };
    let u = (sigma / tau - x / sigma) * FRAC_1_SQRT_2;
    let v = (sigma / tau + x / sigma) * FRAC_1_SQRT_2;
    let out = norm_cdf(x / sigma) - 0.25 * term(u, a - x / tau) + 0.25 * term(v, a + x / tau);
    out.clamp(0.0, 1.0)
}

/// Probability that `D + J` falls in `[centre − width/2, centre + width/2)`.
pub fn window_fraction(centre: f64, width: f64, tau: f64, sigma: f64) -> f64 {
    let h = 0.5 * width;
    (laplace_normal_cdf(centre + h, tau, sigma) - laplace_normal_cdf(centre - h, tau, sigma))
        .max(0.0)
}

/// `E[max(0, w − |Δ + D₁ − D₂|)]` for independent Laplace delays of scale
/// `tau`: the mean time overlap of two photons with one window.
pub fn window_overlap(delta: f64, width: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (width - delta.abs()).max(0.0);
    }
    let f = |x: f64| {
        let a = x.abs() / tau;
        (1.0 + a) * (-a).exp() / (4.0 * tau) * (width - (delta + x).abs()).max(0.0)
    };
    let lo = -delta - width;
    let hi = -delta + width;
    let mut cuts = vec![lo, -delta, hi];
    // resolve the density peak at zero even when tau ≪ width
    for k in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
        for x in [-k * tau, k * tau] {
            if x > lo && x < hi {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).map(|c| simpson(&f, c[0], c[1], 400)).sum()
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Two-qubit state of the surviving pairs and the signal survival
/// probability through the memory.
pub fn pair_state(sc: &Scenario) -> Result<(DensityMatrix, f64)> {
    let rho = dephased_pair_state(sc.source.pump_visibility)?;
    apply_memory_analytic(&rho, &sc.memory)
}

fn mixed_slots(mz: &MzParams) -> [f64; 3] {
    let p = mz.slot_probabilities(Bloch::MIXED);
    [p[0], p[1], p[2]]
}

/// Rates that enter every expected count.
struct Rates {
    tau: f64,
    sigma: f64,
    delay: f64,
    echo: f64,
    /// Pair-photon survival through the memory and noise survival.
    s: f64,
    tn: f64,
    eta_i: f64,
    /// Effective signal efficiency of the first (and second) signal channel.
    eta_s: [f64; 2],
    /// Idler and signal rates by slot for the Franson layout, or in the last
    /// entry when there is no analyzer.
    idler: [f64; 3],
    signal: [f64; 3],
    /// Joint slot probabilities of a pair, and of a noise photon with an idler.
    pair_joint: [[f64; 3]; 3],
    noise_joint: [[f64; 3]; 3],
    franson: bool,
}

impl Rates {
    fn new(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let src = &sc.source;
        let det = &sc.detector;
        let (rho, s) = pair_state(sc)?;
        let tn = sc.memory.noise_survival();
        let franson = sc.run.layout == Layout::Franson;
        let split = sc.run.layout == Layout::Split;
        let eta_i = det.idler.efficiency;
        let eta_s = if split {
            [0.5 * det.signal.efficiency, 0.5 * det.signal_b.efficiency]
        } else {
            [det.signal.efficiency, 0.0]
        };
        let r = src.pair_rate;
        let idler_photons = r + src.noise_pair_rate + src.idler_noise_rate;
        let noise_photons =
            r * src.noise_photons_per_pair + src.noise_pair_rate + src.signal_noise_rate;
        let mut idler = [0.0; 3];
        let mut signal = [0.0; 3];
        let mut pair_joint = [[0.0; 3]; 3];
        let mut noise_joint = [[0.0; 3]; 3];
        if franson {
            let pi = mixed_slots(&sc.analyzer.idler);
            let ps = mixed_slots(&sc.analyzer.signal);
            let joint = joint_franson_probability(
                &rho,
                &mz_povm(&sc.analyzer.idler)?,
                &mz_povm(&sc.analyzer.signal)?,
            )?;
            for a in 0..3 {
                idler[a] = eta_i * idler_photons * pi[a] + det.idler.dark_rate / 3.0;
                signal[a] =
                    eta_s[0] * (r * s + noise_photons * tn) * ps[a] + det.signal.dark_rate / 3.0;
                for b in 0..3 {
                    pair_joint[a][b] = joint[a][b];
                    noise_joint[a][b] = pi[a] * ps[b];
                }
            }
        } else {
            idler[2] = eta_i * idler_photons + det.idler.dark_rate;
            signal[2] = eta_s[0] * (r * s + noise_photons * tn) + det.signal.dark_rate;
            pair_joint[0][0] = 1.0;
            noise_joint[0][0] = 1.0;
        }
        Ok(Self {
            tau: src.coherence_time(),
            sigma: det.idler.jitter_sigma.hypot(det.signal.jitter_sigma),
            delay: sc.analyzer.idler.delay,
            echo: sc.memory.delay(),
            s,
            tn,
            eta_i,
            eta_s,
            idler,
            signal,
            pair_joint,
            noise_joint,
            franson,
        })
    }

    fn idler_total(&self) -> f64 {
        self.idler.iter().sum()
    }

    fn signal_total(&self) -> f64 {
        self.signal.iter().sum()
    }

    fn frac(&self, centre: f64, width: f64) -> f64 {
        window_fraction(centre, width, self.tau, self.sigma)
    }

    /// Correlated idler→signal rate with slots `(a, b)` whose time difference,
    /// less the slot shifts, falls in a window at `offset`.
    fn cell_correlated(&self, sc: &Scenario, a: usize, b: usize, offset: f64, width: f64) -> f64 {
        let src = &sc.source;
        let k = self.eta_i * self.eta_s[0];
        let pair = src.pair_rate
            * k
            * self.s
            * self.pair_joint[a][b]
            * self.frac(offset - self.echo, width);
        let noise = (src.pair_rate * src.noise_photons_per_pair + src.noise_pair_rate)
            * k
            * self.tn
            * self.noise_joint[a][b]
            * self.frac(offset, width);
        pair + noise
    }

    /// Expected idler→signal coincidences per second in one plain window.
    fn cross_rate(&self, sc: &Scenario, offset: f64, width: f64) -> f64 {
        let n = if self.franson { 3 } else { 1 };
        let mut corr = 0.0;
        for a in 0..n {
            for b in 0..n {
                // the pair lands at its slot difference; the window does not move
                let d = (b as f64 - a as f64) * self.delay;
                corr += self.cell_correlated(sc, a, b, offset - d, width);
            }
        }
        corr + self.idler_total() * self.signal_total() * width
    }

    fn grid_rate(&self, sc: &Scenario, offset: f64, width: f64) -> SlotGrid {
        let mut g = SlotGrid::default();
        for a in 0..3 {
            for b in 0..3 {
                g.0[a][b] = self.cell_correlated(sc, a, b, offset, width)
                    + self.idler[a] * self.signal[b] * width;
            }
        }
        g
    }
}

/// Heralded rates per second `(heralds, h1, h2, h12)` for the split layout.
fn heralded_rates(sc: &Scenario, r: &Rates, offset: f64) -> [f64; 4] {
    let src = &sc.source;
    let det = &sc.detector;
    let w = sc.analysis.herald_window;
    let nu = src.noise_photons_per_pair;
    let rate = src.pair_rate;
    let lam = r.idler_total();
    let photons = rate * r.s + (rate * nu + src.noise_pair_rate + src.signal_noise_rate) * r.tn;
    let singles = [
        r.eta_s[0] * photons + det.signal.dark_rate,
        r.eta_s[1] * photons + det.signal_b.dark_rate,
    ];
    let sig = [
        det.idler.jitter_sigma.hypot(det.signal.jitter_sigma),
        det.idler.jitter_sigma.hypot(det.signal_b.jitter_sigma),
    ];
    let f = |k: usize, c: f64| window_fraction(c, w, r.tau, sig[k]);
    let own_signal = |k: usize| r.s * r.eta_s[k] * f(k, offset - r.echo);
    let own_noise = |k: usize| nu * r.tn * r.eta_s[k] * f(k, offset);
    let bg_noise = |k: usize| r.tn * r.eta_s[k] * f(k, offset);
    let (a1, a2) = (own_signal(0), own_signal(1));
    let (n1, n2) = (own_noise(0), own_noise(1));
    let (m1, m2) = (bg_noise(0), bg_noise(1));
    let (c1, c2) = (a1 + n1, a2 + n2);
    let (s1, s2) = (singles[0] * w, singles[1] * w);
    let hp = rate * r.eta_i;
    let hb = src.noise_pair_rate * r.eta_i;
    let ee = r.eta_s[0] * r.eta_s[1];
    let cluster_pairs = rate
        * ee
        * (r.s * nu * r.tn * 2.0 * window_overlap(r.echo, w, r.tau)
            + nu * nu * r.tn * r.tn * window_overlap(0.0, w, r.tau));
    let h1 = hp * c1 + hb * m1 + lam * s1;
    let h2 = hp * c2 + hb * m2 + lam * s2;
    let h12 = hp * (a1 * n2 + a2 * n1 + n1 * n2 + c1 * s2 + c2 * s1)
        + hb * (m1 * s2 + m2 * s1)
        + lam * (s1 * s2 + cluster_pairs);
    [lam, h1, h2, h12]
}

/// Expected values of every estimator the engine accumulates.
pub fn expected_counts(sc: &Scenario, plan: &StatsPlan) -> Result<CountSummary> {
    let r = Rates::new(sc)?;
    let t = sc.run.duration;
    let mut singles = [[0.0; 4]; 3];
    if r.franson {
        for a in 0..3 {
            singles[0][a] = r.idler[a] * t;
            singles[1][a] = r.signal[a] * t;
        }
    } else {
        singles[0][3] = r.idler[2] * t;
        singles[1][3] = r.signal[2] * t;
    }
    let w = plan.coincidence_window;
    let cross = r.cross_rate(sc, plan.echo_offset, w) * t;
    let cross_accidental: Vec<f64> = plan
        .accidental_offsets
        .iter()
        .map(|&o| r.cross_rate(sc, o, w) * t)
        .collect();
    let prompt = r.cross_rate(sc, 0.0, w) * t;
    let mut out = CountSummary {
        duration: t,
        pairs: sc.source.pair_rate * t,
        singles,
        cross,
        cross_accidental,
        prompt,
        heralds: 0.0,
        h1: 0.0,
        h2: 0.0,
        h12: 0.0,
        franson: SlotGrid::default(),
        franson_accidental: SlotGrid::default(),
        franson_prompt: SlotGrid::default(),
    };
    if sc.run.layout == Layout::Split {
        let det = &sc.detector;
        let photons = sc.source.pair_rate * r.s
            + (sc.source.pair_rate * sc.source.noise_photons_per_pair
                + sc.source.noise_pair_rate
                + sc.source.signal_noise_rate)
                * r.tn;
        out.singles[2][3] = (r.eta_s[1] * photons + det.signal_b.dark_rate) * t;
        let h = heralded_rates(sc, &r, plan.echo_offset);
        out.heralds = h[0] * t;
        out.h1 = h[1] * t;
        out.h2 = h[2] * t;
        out.h12 = h[3] * t;
    }
    if r.franson {
        let sw = plan.slot_window;
        out.franson = r.grid_rate(sc, plan.echo_offset, sw).scaled(t);
        let mut acc = SlotGrid::default();
        for &o in &plan.accidental_offsets {
            acc.add(&r.grid_rate(sc, o, sw).scaled(t));
        }
        out.franson_accidental = acc.scaled(1.0 / plan.accidental_offsets.len().max(1) as f64);
        if plan.echo_offset != 0.0 {
            out.franson_prompt = r.grid_rate(sc, 0.0, sw).scaled(t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn erfcx_matches_direct_form() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.3, 2.0, 10.0, 19.9] {
            let direct = (x * x).exp() * libm::erfc(x);
            assert!((erfcx(x) - direct).abs() <= 1e-12 * direct, "{x}");
        }
        // continuity at the switch to the asymptotic series
        let a = erfcx(20.0 - 1e-9);
        let b = erfcx(20.0);
        assert!((a - b).abs() / b < 1e-9);
    }

    #[test]
    fn laplace_normal_cdf_limits_and_monte_carlo() {
        let (tau, sigma) = (88e-9, 20e-9);
        assert!(laplace_normal_cdf(-1e-5, tau, sigma) < 1e-20);
        assert!((laplace_normal_cdf(1e-5, tau, sigma) - 1.0).abs() < 1e-15);
        assert!((laplace_normal_cdf(0.0, tau, sigma) - 0.5).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400_000;
        let normal = Normal::new(0.0, sigma).unwrap();
        let xs: Vec<f64> = (0..n)
            .map(|_| crate::source::laplace(tau, &mut rng) + normal.sample(&mut rng))
            .collect();
        for &x in &[-200e-9, -50e-9, 10e-9, 150e-9] {
            let emp = xs.iter().filter(|&&v| v < x).count() as f64 / n as f64;
            let p = laplace_normal_cdf(x, tau, sigma);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() < 5.0 * se, "{x}: {emp} vs {p}");
        }
    }

    #[test]
    fn zero_jitter_window_is_laplace_mass() {
        let tau = 1.0;
        let f = window_fraction(0.0, 2.0, tau, 0.0);
        assert!((f - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let small = window_fraction(0.0, 2.0, tau, 1e-9);
        assert!((small - f).abs() < 1e-8);
    }

    #[test]
    fn overlap_limits() {
        // narrow delays: full window
        let v = window_overlap(0.0, 1.0, 1e-9);
        assert!((v - 1.0).abs() < 1e-6, "{v}");
        // ∫ Ov dΔ over all shifts equals w²
        let w = 0.7;
        let tau = 0.3;
        let total = simpson(&|d| window_overlap(d, w, tau), -6.0, 6.0, 2000);
        assert!((total - w * w).abs() < 1e-6, "{total}");
    }

    #[test]
    fn pair_state_respects_memory_mode() {
        let mut sc = Scenario::bundled("ideal").unwrap();
        sc.memory.depolarizing = 0.2;
        sc.memory.mode = crate::memory::MemoryMode::Transparency;
        let (rho, s) = pair_state(&sc).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!((s - sc.memory.pair_survival()).abs() < 1e-15);
    }
}
