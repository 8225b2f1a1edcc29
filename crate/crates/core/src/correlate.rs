//! Coincidence counting and correlation estimators on time-tag streams.
//!
//! The slice-level functions take a reference slice and a partner slice and
//! only count pairs whose reference lies in the first slice, so counts over
//! consecutive reference blocks add up exactly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::povm::Slot;
use crate::tags::{Tag, TimeTagStream};

#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceHistogram {
    pub bin_width: f64,
    /// Bin centres.
    pub offsets: Vec<f64>,
    pub counts: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn new(bin_width: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(bin_width > 0.0) || !bin_width.is_finite() {
            return Err(Error::domain("bin width must be positive"));
        }
        if !(hi > lo) {
            return Err(Error::domain("histogram range is empty"));
        }
        let n = ((hi - lo) / bin_width).ceil() as usize;
        let offsets = (0..n).map(|k| lo + (k as f64 + 0.5) * bin_width).collect();
        Ok(Self {
            bin_width,
            offsets,
            counts: vec![0; n],
        })
    }

    pub fn lo(&self) -> f64 {
        self.offsets
            .first()
            .map_or(0.0, |c| c - 0.5 * self.bin_width)
    }

    pub fn hi(&self) -> f64 {
        self.lo() + self.offsets.len() as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds the pairs with a reference in `refs`.
    pub fn accumulate(&mut self, refs: &[Tag], partners: &[Tag]) {
        let (lo, hi) = (self.lo(), self.hi());
        let n = self.counts.len();
        let mut start = 0;
        for r in refs {
            let t_lo = r.time + lo;
            let t_hi = r.time + hi;
            while start < partners.len() && partners[start].time < t_lo {
                start += 1;
            }
            let mut k = start;
            while k < partners.len() && partners[k].time < t_hi {
                let bin = ((partners[k].time - r.time - lo) / self.bin_width) as usize;
                self.counts[bin.min(n - 1)] += 1;
                k += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CoincidenceHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset_s,count\n");
        for (o, c) in self.offsets.iter().zip(&self.counts) {
            let _ = writeln!(out, "{o:.11e},{c}");
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (o, c) in self.offsets.iter().zip(&self.counts) {
            let _ = writeln!(out, "{{\"offset_s\":{o:.11e},\"count\":{c}}}");
        }
        out
    }

    /// Centre of the most populated bin beyond `min_offset` whose count
    /// exceeds the median by `sigmas` Poisson deviations.
    pub fn significant_peak(&self, min_offset: f64, sigmas: f64) -> Option<f64> {
        let mut sorted = self.counts.clone();
        sorted.sort_unstable();
        let median = sorted[sorted.len() / 2] as f64;
        let threshold = median + sigmas * median.max(1.0).sqrt();
        self.offsets
            .iter()
            .zip(&self.counts)
            .filter(|(o, &c)| **o > min_offset && c as f64 > threshold)
            .max_by_key(|(_, &c)| c)
            .map(|(o, _)| *o)
    }
}

/// Pairs with `t_b − t_a` in each bin of `[lo, hi)`.
pub fn coincidence_histogram(
    a: &TimeTagStream,
    b: &TimeTagStream,
    bin_width: f64,
    range: (f64, f64),
) -> Result<CoincidenceHistogram> {
    let mut h = CoincidenceHistogram::new(bin_width, range.0, range.1)?;
    h.accumulate(a.tags(), b.tags());
    Ok(h)
}

/// Number of partners in `[t + lo, t + hi)` summed over references.
pub fn window_count(refs: &[Tag], partners: &[Tag], lo: f64, hi: f64) -> u64 {
    let mut start = 0;
    let mut end = 0;
    let mut total = 0u64;
    for r in refs {
        let t_lo = r.time + lo;
        let t_hi = r.time + hi;
        while start < partners.len() && partners[start].time < t_lo {
            start += 1;
        }
        end = end.max(start);
        while end < partners.len() && partners[end].time < t_hi {
            end += 1;
        }
        total += (end - start) as u64;
    }
    total
}

/// Ratio estimate with a propagated Poisson standard error. `bounded` is
/// false when the normalization was zero and `value` is infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub bounded: bool,
}

impl Estimate {
    fn unbounded() -> Self {
        Self {
            value: f64::INFINITY,
            std_error: f64::INFINITY,
            bounded: false,
        }
    }

    /// Distance of `value` from `reference` in standard errors.
    pub fn sigmas_from(&self, reference: f64) -> f64 {
        (self.value - reference) / self.std_error
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CrossCounts {
    pub signal: u64,
    pub accidental: Vec<u64>,
}

impl CrossCounts {
    pub fn accumulate(
        &mut self,
        refs: &[Tag],
        partners: &[Tag],
        window: f64,
        offset: f64,
        accidental_offsets: &[f64],
    ) {
        let h = 0.5 * window;
        self.signal += window_count(refs, partners, offset - h, offset + h);
        self.accidental.resize(accidental_offsets.len(), 0);
        for (acc, &o) in self.accidental.iter_mut().zip(accidental_offsets) {
            *acc += window_count(refs, partners, o - h, o + h);
        }
    }

    pub fn merge(&mut self, other: &CrossCounts) {
        self.signal += other.signal;
        self.accidental
            .resize(other.accidental.len().max(self.accidental.len()), 0);
        for (a, b) in self.accidental.iter_mut().zip(&other.accidental) {
            *a += b;
        }
    }

    pub fn accidental_mean(&self) -> f64 {
        if self.accidental.is_empty() {
            return 0.0;
        }
        self.accidental.iter().sum::<u64>() as f64 / self.accidental.len() as f64
    }

    pub fn estimate(&self) -> Estimate {
        let acc: Vec<f64> = self.accidental.iter().map(|&x| x as f64).collect();
        cross_estimate(self.signal as f64, &acc)
    }
}

/// `signal / mean(accidental)` with Poisson error propagation.
pub fn cross_estimate(signal: f64, accidental: &[f64]) -> Estimate {
    let k = accidental.len() as f64;
    let acc_total: f64 = accidental.iter().sum();
    if !(acc_total > 0.0) {
        return Estimate::unbounded();
    }
    let mean = acc_total / k;
    let value = signal / mean;
    let std_error = if signal > 0.0 {
        value * (1.0 / signal + 1.0 / acc_total).sqrt()
    } else {
        1.0 / mean
    };
    Estimate {
        value,
        std_error,
        bounded: true,
    }
}

/// Default displaced windows: ten offsets from 6 µs past `peak` in 2 µs steps.
pub fn default_accidental_offsets(peak: f64) -> Vec<f64> {
    (0..10).map(|k| peak + 6e-6 + k as f64 * 2e-6).collect()
}

/// Normalized cross-correlation in a window centred at `window_offset`.
pub fn g2_cross(
    a: &TimeTagStream,
    b: &TimeTagStream,
    coincidence_window: f64,
    window_offset: f64,
    accidental_offsets: &[f64],
) -> Result<Estimate> {
    if !(coincidence_window > 0.0) {
        return Err(Error::domain("coincidence window must be positive"));
    }
    if accidental_offsets.is_empty() {
        return Err(Error::domain("at least one accidental offset is required"));
    }
    let mut c = CrossCounts::default();
    c.accumulate(
        a.tags(),
        b.tags(),
        coincidence_window,
        window_offset,
        accidental_offsets,
    );
    Ok(c.estimate())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeraldedCounts {
    pub heralds: u64,
    pub h1: u64,
    pub h2: u64,
    pub h12: u64,
}

impl HeraldedCounts {
    pub fn accumulate(
        &mut self,
        heralds: &[Tag],
        s1: &[Tag],
        s2: &[Tag],
        window: f64,
        offset: f64,
    ) {
        let lo = offset - 0.5 * window;
        let hi = offset + 0.5 * window;
        let (mut a1, mut b1, mut a2, mut b2) = (0, 0, 0, 0);
        for h in heralds {
            let n1 = advance(s1, &mut a1, &mut b1, h.time + lo, h.time + hi);
            let n2 = advance(s2, &mut a2, &mut b2, h.time + lo, h.time + hi);
            self.heralds += 1;
            self.h1 += n1;
            self.h2 += n2;
            self.h12 += n1 * n2;
        }
    }

    pub fn merge(&mut self, o: &HeraldedCounts) {
        self.heralds += o.heralds;
        self.h1 += o.h1;
        self.h2 += o.h2;
        self.h12 += o.h12;
    }

    pub fn estimate(&self) -> Estimate {
        heralded_estimate(
            self.heralds as f64,
            self.h1 as f64,
            self.h2 as f64,
            self.h12 as f64,
        )
    }
}

/// `N_h12·N_h / (N_h1·N_h2)` with Poisson error propagation.
pub fn heralded_estimate(heralds: f64, h1: f64, h2: f64, h12: f64) -> Estimate {
    if !(h1 > 0.0 && h2 > 0.0) {
        return Estimate::unbounded();
    }
    let norm = heralds / (h1 * h2);
    let value = h12 * norm;
    let std_error = if h12 > 0.0 {
        value * (1.0 / h12 + 1.0 / h1 + 1.0 / h2).sqrt()
    } else {
        norm
    };
    Estimate {
        value,
        std_error,
        bounded: true,
    }
}

fn advance(p: &[Tag], start: &mut usize, end: &mut usize, lo: f64, hi: f64) -> u64 {
    while *start < p.len() && p[*start].time < lo {
        *start += 1;
    }
    *end = (*end).max(*start);
    while *end < p.len() && p[*end].time < hi {
        *end += 1;
    }
    (*end - *start) as u64
}

/// Heralded autocorrelation with the detection window centred on the herald.
pub fn heralded_g2(
    herald: &TimeTagStream,
    s1: &TimeTagStream,
    s2: &TimeTagStream,
    window: f64,
) -> Result<Estimate> {
    heralded_g2_at(herald, s1, s2, window, 0.0)
}

/// Heralded autocorrelation with the window centred at `offset` after the herald.
pub fn heralded_g2_at(
    herald: &TimeTagStream,
    s1: &TimeTagStream,
    s2: &TimeTagStream,
    window: f64,
    offset: f64,
) -> Result<Estimate> {
    if !(window > 0.0) {
        return Err(Error::domain("window must be positive"));
    }
    let mut c = HeraldedCounts::default();
    c.accumulate(herald.tags(), s1.tags(), s2.tags(), window, offset);
    Ok(c.estimate())
}

/// Coincidence counts indexed by (idler slot, signal slot).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlotGrid(pub [[f64; 3]; 3]);

impl SlotGrid {
    pub fn get(&self, i: Slot, s: Slot) -> f64 {
        self.0[i.index()][s.index()]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().flatten().sum()
    }

    pub fn add(&mut self, o: &SlotGrid) {
        for a in 0..3 {
            for b in 0..3 {
                self.0[a][b] += o.0[a][b];
            }
        }
    }

    pub fn scaled(&self, s: f64) -> SlotGrid {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn accumulate(
        &mut self,
        refs: &[Tag],
        partners: &[Tag],
        delay: f64,
        window: f64,
        offset: f64,
    ) {
        let h = 0.5 * window;
        let lo = offset - 2.0 * delay - h;
        let hi = offset + 2.0 * delay + h;
        let mut start = 0;
        for r in refs {
            let Some(a) = r.slot else { continue };
            while start < partners.len() && partners[start].time < r.time + lo {
                start += 1;
            }
            let mut k = start;
            while k < partners.len() && partners[k].time < r.time + hi {
                let p = &partners[k];
                k += 1;
                let Some(b) = p.slot else { continue };
                let centre = offset + (b.shift() - a.shift()) * delay;
                let dt = p.time - r.time;
                if dt >= centre - h && dt < centre + h {
                    self.0[a.index()][b.index()] += 1.0;
                }
            }
        }
    }
}

/// Franson slot grid for coincidences at zero offset.
pub fn franson_postselect(
    idler: &TimeTagStream,
    signal: &TimeTagStream,
    delay: f64,
    window: f64,
) -> Result<SlotGrid> {
    franson_postselect_at(idler, signal, delay, window, 0.0)
}

/// Franson slot grid with every cell displaced by `offset`.
pub fn franson_postselect_at(
    idler: &TimeTagStream,
    signal: &TimeTagStream,
    delay: f64,
    window: f64,
    offset: f64,
) -> Result<SlotGrid> {
    check_slot_window(delay, window)?;
    let mut g = SlotGrid::default();
    g.accumulate(idler.tags(), signal.tags(), delay, window, offset);
    Ok(g)
}

pub fn check_slot_window(delay: f64, window: f64) -> Result<()> {
    if !(window > 0.0) {
        return Err(Error::config("analysis.slot_window", "must be > 0"));
    }
    if window >= delay {
        return Err(Error::config(
            "analysis.slot_window",
            format!(
                "window {window:e} s must be shorter than the interferometer delay {delay:e} s"
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::Channel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(times: &[f64], ch: Channel) -> TimeTagStream {
        TimeTagStream::from_times(times, ch).unwrap()
    }

    fn naive(a: &[f64], b: &[f64], lo: f64, hi: f64) -> u64 {
        let mut n = 0;
        for x in a {
            for y in b {
                let d = y - x;
                if d >= lo && d < hi {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn histogram_matches_naive_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 1e-3).collect();
            let b: Vec<f64> = (0..700).map(|_| rng.random::<f64>() * 1e-3).collect();
            let (sa, sb) = (stream(&a, Channel::Idler), stream(&b, Channel::Signal));
            let h = coincidence_histogram(&sa, &sb, 1e-6, (-2e-5, 3e-5)).unwrap();
            assert_eq!(h.total(), naive(&a, &b, h.lo(), h.hi()));
            assert_eq!(
                window_count(sa.tags(), sb.tags(), -1e-5, 1e-5),
                naive(&a, &b, -1e-5, 1e-5)
            );
        }
    }

    #[test]
    fn single_pair_lands_in_its_bin() {
        let h = coincidence_histogram(
            &stream(&[1.0], Channel::Idler),
            &stream(&[1.0 + 3e-6], Channel::Signal),
            1e-7,
            (0.0, 1e-5),
        )
        .unwrap();
        assert_eq!(h.total(), 1);
        let k = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!((h.offsets[k] - 3e-6).abs() <= 0.5e-7 + 1e-15);
        assert!(h.to_csv().starts_with("offset_s,count\n"));
    }

    #[test]
    fn cross_g2_of_independent_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = crate::source::poisson_times(2e4, 0.0, 5.0, &mut rng);
        let b = crate::source::poisson_times(3e4, 0.0, 5.0, &mut rng);
        let (sa, sb) = (stream(&a, Channel::Idler), stream(&b, Channel::Signal));
        let g = g2_cross(&sa, &sb, 400e-9, 0.0, &default_accidental_offsets(0.0)).unwrap();
        assert!(g.bounded);
        assert!(g.sigmas_from(1.0).abs() < 5.0, "{g:?}");
        let h = coincidence_histogram(&sa, &sb, 1e-6, (10e-6, 60e-6)).unwrap();
        let expect = 2e4 * 3e4 * 5.0 * 1e-6;
        let mean = h.total() as f64 / h.counts.len() as f64;
        assert!((mean - expect).abs() < 5.0 * (expect / h.counts.len() as f64).sqrt());
    }

    #[test]
    fn zero_accidentals_are_flagged() {
        let g = g2_cross(
            &stream(&[1.0], Channel::Idler),
            &stream(&[1.0], Channel::Signal),
            1e-9,
            0.0,
            &[1e-3],
        )
        .unwrap();
        assert!(!g.bounded);
        assert!(g.value.is_infinite());
    }

    #[test]
    fn heralded_single_photons_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let heralds: Vec<f64> = (0..20_000).map(|k| k as f64 * 1e-5).collect();
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        for &h in &heralds {
            if rng.random::<bool>() {
                s1.push(h + 1e-8);
            } else {
                s2.push(h + 1e-8);
            }
        }
        let g = heralded_g2(
            &stream(&heralds, Channel::Idler),
            &stream(&s1, Channel::Signal),
            &stream(&s2, Channel::SignalB),
            400e-9,
        )
        .unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn heralded_poisson_gives_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = crate::source::poisson_times(5e4, 0.0, 4.0, &mut rng);
        let s1 = crate::source::poisson_times(2e5, 0.0, 4.0, &mut rng);
        let s2 = crate::source::poisson_times(2e5, 0.0, 4.0, &mut rng);
        let g = heralded_g2(
            &stream(&h, Channel::Idler),
            &stream(&s1, Channel::Signal),
            &stream(&s2, Channel::SignalB),
            400e-9,
        )
        .unwrap();
        assert!(g.sigmas_from(1.0).abs() < 5.0, "{g:?}");
    }

    #[test]
    fn franson_cells_follow_offsets() {
        let d = 420e-9;
        let i = TimeTagStream::new(vec![
            Tag::new(1e-3, Channel::Idler).with_slot(Slot::Early),
            Tag::new(2e-3 + d, Channel::Idler).with_slot(Slot::Central),
        ])
        .unwrap();
        let s = TimeTagStream::new(vec![
            Tag::new(1e-3 + 2.0 * d + 5e-9, Channel::Signal).with_slot(Slot::Late),
            Tag::new(2e-3 + d, Channel::Signal).with_slot(Slot::Central),
        ])
        .unwrap();
        let g = franson_postselect(&i, &s, d, 200e-9).unwrap();
        assert_eq!(g.get(Slot::Early, Slot::Late), 1.0);
        assert_eq!(g.get(Slot::Central, Slot::Central), 1.0);
        assert_eq!(g.total(), 2.0);
        assert!(franson_postselect(&i, &s, d, 500e-9).is_err());
    }
}
