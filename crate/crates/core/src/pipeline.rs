//! Block-structured Monte-Carlo engine: source → memory → analyzers → detectors.
//!
//! Time is cut into fixed blocks. Every block is simulated from its own RNG
//! stream `(seed, block)`, so the result does not depend on how blocks are
//! spread over worker threads. Tags are then regrouped by detection time,
//! dead time is applied in time order, and estimators visit each block with
//! its two neighbours as partner context.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analyzer::{apply_dead_time, DetectorParams, MzParams};
use crate::correlate::{CoincidenceHistogram, CrossCounts, HeraldedCounts, SlotGrid};
use crate::error::{Error, Result};
use crate::memory::AfcParams;
use crate::povm::Slot;
use crate::scenario::{Layout, Scenario};
use crate::source::{laplace, poisson_count, poisson_times, sample_pairs_between};
use crate::state::Bloch;
use crate::tags::{sort_tags, Channel, Tag, TagKind, TimeTagStream};

pub const THREADS_ENV: &str = "QNODE_SIM_THREADS";

/// Tags of one block, per channel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partition {
    pub idler: Vec<Tag>,
    pub signal: Vec<Tag>,
    pub signal_b: Vec<Tag>,
    /// Pairs emitted in this block.
    pub pairs: u64,
}

impl Partition {
    fn channel_mut(&mut self, ch: Channel) -> &mut Vec<Tag> {
        match ch {
            Channel::Idler => &mut self.idler,
            Channel::Signal => &mut self.signal,
            Channel::SignalB => &mut self.signal_b,
        }
    }

    fn extend_from(&mut self, o: &Partition) {
        self.idler.extend_from_slice(&o.idler);
        self.signal.extend_from_slice(&o.signal);
        self.signal_b.extend_from_slice(&o.signal_b);
    }

    fn clear(&mut self) {
        self.idler.clear();
        self.signal.clear();
        self.signal_b.clear();
    }
}

struct Chain<'a> {
    memory: &'a AfcParams,
    mz_idler: Option<&'a MzParams>,
    mz_signal: Option<&'a MzParams>,
    det_idler: &'a DetectorParams,
    det_signal: &'a DetectorParams,
    det_signal_b: Option<&'a DetectorParams>,
    tau_c: f64,
}

impl<'a> Chain<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let franson = sc.run.layout == Layout::Franson;
        Self {
            memory: &sc.memory,
            mz_idler: franson.then_some(&sc.analyzer.idler),
            mz_signal: franson.then_some(&sc.analyzer.signal),
            det_idler: &sc.detector.idler,
            det_signal: &sc.detector.signal,
            det_signal_b: (sc.run.layout == Layout::Split).then_some(&sc.detector.signal_b),
            tau_c: sc.source.coherence_time(),
        }
    }

    fn push(out: &mut Partition, tag: Tag) {
        if tag.time >= 0.0 {
            out.channel_mut(tag.channel).push(tag);
        }
    }

    fn idler<R: Rng>(&self, tag: Tag, rng: &mut R, out: &mut Partition) {
        let tag = match self.mz_idler {
            Some(mz) => match mz.analyze(tag, rng) {
                Some(t) => t,
                None => return,
            },
            None => tag,
        };
        if let Some(t) = self.det_idler.detect(tag, rng) {
            Self::push(out, t);
        }
    }

    fn signal<R: Rng>(&self, tag: Tag, rng: &mut R, out: &mut Partition) {
        let Some(tag) = self.memory.transmit(tag, rng) else {
            return;
        };
        let mut tag = match self.mz_signal {
            Some(mz) => match mz.analyze(tag, rng) {
                Some(t) => t,
                None => return,
            },
            None => tag,
        };
        let det = match self.det_signal_b {
            Some(b) if rng.random::<bool>() => {
                tag.channel = Channel::SignalB;
                b
            }
            _ => self.det_signal,
        };
        if let Some(t) = det.detect(tag, rng) {
            Self::push(out, t);
        }
    }

    fn pair<R: Rng>(
        &self,
        idler_time: f64,
        signal_time: f64,
        phase: f64,
        rng: &mut R,
        out: &mut Partition,
    ) {
        let idler_tag = Tag::new(idler_time, Channel::Idler);
        let signal_qubit = match self.mz_idler {
            Some(mz) => {
                let (slot, cond) = mz.herald(phase, rng);
                if let Some(s) = slot {
                    let mut t = idler_tag.with_slot(s);
                    t.time += s.shift() * mz.delay;
                    if let Some(t) = self.det_idler.detect(t, rng) {
                        Self::push(out, t);
                    }
                }
                cond
            }
            None => {
                if let Some(t) = self.det_idler.detect(idler_tag, rng) {
                    Self::push(out, t);
                }
                Bloch::MIXED
            }
        };
        self.signal(
            Tag::new(signal_time, Channel::Signal).with_qubit(signal_qubit),
            rng,
            out,
        );
    }
}

/// Raw tags originating from block `b` (idler emission in `[t0, t1)`).
fn simulate_block(sc: &Scenario, seed: u64, b: usize, t0: f64, t1: f64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let chain = Chain::new(sc);
    let src = &sc.source;
    let mut out = Partition::default();

    let pairs = sample_pairs_between(src, t0, t1, &mut rng);
    out.pairs = pairs.len() as u64;
    for p in &pairs {
        chain.pair(
            p.idler_time,
            p.signal_time,
            p.pair_phase,
            &mut rng,
            &mut out,
        );
        for _ in 0..poisson_count(src.noise_photons_per_pair, &mut rng) {
            let t = p.idler_time + laplace(chain.tau_c, &mut rng);
            chain.signal(
                Tag::new(t, Channel::Signal).with_kind(TagKind::Noise),
                &mut rng,
                &mut out,
            );
        }
    }
    for t in poisson_times(src.noise_pair_rate, t0, t1, &mut rng) {
        chain.idler(
            Tag::new(t, Channel::Idler).with_kind(TagKind::Noise),
            &mut rng,
            &mut out,
        );
        let ts = t + laplace(chain.tau_c, &mut rng);
        chain.signal(
            Tag::new(ts, Channel::Signal).with_kind(TagKind::Noise),
            &mut rng,
            &mut out,
        );
    }
    for t in poisson_times(src.idler_noise_rate, t0, t1, &mut rng) {
        chain.idler(
            Tag::new(t, Channel::Idler).with_kind(TagKind::Noise),
            &mut rng,
            &mut out,
        );
    }
    for t in poisson_times(src.signal_noise_rate, t0, t1, &mut rng) {
        chain.signal(
            Tag::new(t, Channel::Signal).with_kind(TagKind::Noise),
            &mut rng,
            &mut out,
        );
    }
    let slotted = sc.run.layout == Layout::Franson;
    out.idler.extend(
        sc.detector
            .idler
            .dark_tags(Channel::Idler, t0, t1, slotted, &mut rng),
    );
    out.signal.extend(
        sc.detector
            .signal
            .dark_tags(Channel::Signal, t0, t1, slotted, &mut rng),
    );
    if sc.run.layout == Layout::Split {
        out.signal_b.extend(sc.detector.signal_b.dark_tags(
            Channel::SignalB,
            t0,
            t1,
            false,
            &mut rng,
        ));
    }
    out
}

/// Worker threads for `shards`, capped by the environment.
pub fn thread_count(shards: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(usize::MAX);
    shards.max(1).min(cap)
}

/// Runs the engine and calls `visit(block, context)` for every block in time
/// order, where `context` holds the tags of the block and both neighbours.
pub fn for_each_block(
    sc: &Scenario,
    seed: u64,
    shards: usize,
    mut visit: impl FnMut(&Partition, &Partition),
) -> Result<()> {
    sc.validate()?;
    let l = sc.run.block_length;
    let duration = sc.run.duration;
    let n = (duration / l).ceil().max(1.0) as usize;
    let threads = thread_count(shards);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))?;
    let dead = [
        sc.detector.idler.dead_time,
        sc.detector.signal.dead_time,
        sc.detector.signal_b.dead_time,
    ];
    let mut carry: [Option<f64>; 3] = [None; 3];
    let finalize = |mut p: Partition, carry: &mut [Option<f64>; 3]| -> Partition {
        for (k, v) in [&mut p.idler, &mut p.signal, &mut p.signal_b]
            .into_iter()
            .enumerate()
        {
            sort_tags(v);
            carry[k] = apply_dead_time(v, dead[k], carry[k]);
        }
        p
    };

    // partitions pending[j] has index pending_base + j
    let mut pending: VecDeque<Partition> = VecDeque::new();
    let mut pending_base = 0usize;
    let mut finals: VecDeque<Partition> = VecDeque::new();
    let mut finals_base = 0usize;
    let mut next_visit = 0usize;
    let mut ctx = Partition::default();

    let mut visit_ready = |finals: &mut VecDeque<Partition>,
                           finals_base: &mut usize,
                           next_visit: &mut usize,
                           done: bool| {
        loop {
            let have = *finals_base + finals.len();
            if *next_visit >= have || (!done && *next_visit + 1 >= have) {
                break;
            }
            let k = *next_visit;
            ctx.clear();
            for j in k.saturating_sub(1)..=(k + 1).min(have - 1) {
                ctx.extend_from(&finals[j - *finals_base]);
            }
            visit(&finals[k - *finals_base], &ctx);
            *next_visit += 1;
            while *finals_base + 1 < *next_visit {
                finals.pop_front();
                *finals_base += 1;
            }
        }
    };

    let chunk = (threads * 4).max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let raws: Vec<Partition> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|b| {
                    simulate_block(
                        sc,
                        seed,
                        b,
                        b as f64 * l,
                        ((b + 1) as f64 * l).min(duration),
                    )
                })
                .collect()
        });
        for (b, raw) in (start..end).zip(raws) {
            while pending_base + pending.len() <= (b + 1).min(n - 1) {
                pending.push_back(Partition::default());
            }
            pending[b - pending_base].pairs += raw.pairs;
            for (ch, tags) in [
                (Channel::Idler, raw.idler),
                (Channel::Signal, raw.signal),
                (Channel::SignalB, raw.signal_b),
            ] {
                for t in tags {
                    let idx = ((t.time / l) as usize).min(n - 1);
                    debug_assert!(idx + 1 >= b && idx <= b + 1);
                    let idx = idx.clamp(pending_base, pending_base + pending.len() - 1);
                    pending[idx - pending_base].channel_mut(ch).push(t);
                }
            }
            // nothing generated later can land before block b
            while pending_base < b && !pending.is_empty() {
                let p = pending.pop_front().unwrap();
                pending_base += 1;
                finals.push_back(finalize(p, &mut carry));
            }
            visit_ready(&mut finals, &mut finals_base, &mut next_visit, false);
        }
        start = end;
    }
    while let Some(p) = pending.pop_front() {
        finals.push_back(finalize(p, &mut carry));
    }
    visit_ready(&mut finals, &mut finals_base, &mut next_visit, true);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub idler: TimeTagStream,
    pub signal: TimeTagStream,
    /// Second signal detector in the split layout.
    pub signal_b: Option<TimeTagStream>,
    pub pairs: u64,
}

/// Full detector streams for the scenario.
pub fn run_pipeline(sc: &Scenario, seed: u64) -> Result<PipelineOutput> {
    run_pipeline_sharded(sc, seed, sc.run.shards)
}

pub fn run_pipeline_sharded(sc: &Scenario, seed: u64, shards: usize) -> Result<PipelineOutput> {
    let mut all = Partition::default();
    for_each_block(sc, seed, shards, |cur, _| {
        all.extend_from(cur);
        all.pairs += cur.pairs;
    })?;
    Ok(PipelineOutput {
        idler: TimeTagStream::from_sorted(all.idler),
        signal: TimeTagStream::from_sorted(all.signal),
        signal_b: (sc.run.layout == Layout::Split)
            .then(|| TimeTagStream::from_sorted(all.signal_b)),
        pairs: all.pairs,
    })
}

/// Which correlations to accumulate while the engine runs.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsPlan {
    pub coincidence_window: f64,
    pub herald_window: f64,
    pub slot_window: f64,
    pub delay: f64,
    pub echo_offset: f64,
    pub accidental_offsets: Vec<f64>,
    pub histogram_bin: f64,
    pub histogram_range: (f64, f64),
}

impl StatsPlan {
    pub fn for_scenario(sc: &Scenario) -> Self {
        let echo = sc.echo_offset();
        let offs = sc.accidental_offsets();
        let far = offs.iter().copied().fold(echo, f64::max);
        Self {
            coincidence_window: sc.analysis.coincidence_window,
            herald_window: sc.analysis.herald_window,
            slot_window: sc.analysis.slot_window,
            delay: sc.analyzer.idler.delay,
            echo_offset: echo,
            accidental_offsets: offs,
            histogram_bin: 20e-9,
            histogram_range: (-5e-6, far + 5e-6),
        }
    }
}

/// Additive counts gathered over a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub duration: f64,
    pub pairs: u64,
    /// Per channel (idler, signal, signal_b): counts in slots early, central,
    /// late, then tags without a slot.
    pub singles: [[u64; 4]; 3],
    /// Idler→signal coincidences at the echo offset and displaced windows.
    pub cross: CrossCounts,
    /// Idler→signal coincidences in a window centred at zero offset.
    pub prompt: u64,
    pub heralded: HeraldedCounts,
    pub franson: SlotGrid,
    pub franson_accidental: Vec<SlotGrid>,
    /// Franson grid at zero offset (meaningful when the echo is delayed).
    pub franson_prompt: SlotGrid,
    pub histogram: CoincidenceHistogram,
}

impl RunStats {
    fn new(plan: &StatsPlan, duration: f64) -> Result<Self> {
        Ok(Self {
            duration,
            pairs: 0,
            singles: [[0; 4]; 3],
            cross: CrossCounts::default(),
            prompt: 0,
            heralded: HeraldedCounts::default(),
            franson: SlotGrid::default(),
            franson_accidental: vec![SlotGrid::default(); plan.accidental_offsets.len()],
            franson_prompt: SlotGrid::default(),
            histogram: CoincidenceHistogram::new(
                plan.histogram_bin,
                plan.histogram_range.0,
                plan.histogram_range.1,
            )?,
        })
    }

    pub fn singles_total(&self, ch: Channel) -> u64 {
        self.singles[ch as usize].iter().sum()
    }

    /// Mean accidental Franson grid over the displaced offsets.
    pub fn franson_accidental_mean(&self) -> SlotGrid {
        let mut g = SlotGrid::default();
        for a in &self.franson_accidental {
            g.add(a);
        }
        g.scaled(1.0 / self.franson_accidental.len().max(1) as f64)
    }

    pub fn merge(&mut self, o: &RunStats) {
        self.duration += o.duration;
        self.pairs += o.pairs;
        for c in 0..3 {
            for k in 0..4 {
                self.singles[c][k] += o.singles[c][k];
            }
        }
        self.cross.merge(&o.cross);
        self.prompt += o.prompt;
        self.heralded.merge(&o.heralded);
        self.franson.add(&o.franson);
        for (a, b) in self
            .franson_accidental
            .iter_mut()
            .zip(&o.franson_accidental)
        {
            a.add(b);
        }
        self.franson_prompt.add(&o.franson_prompt);
        self.histogram.merge(&o.histogram);
    }
}

/// Expected or observed counts of one run in real-valued form, shared by the
/// event tier and the analytic tier.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSummary {
    pub duration: f64,
    pub pairs: f64,
    pub singles: [[f64; 4]; 3],
    pub cross: f64,
    pub cross_accidental: Vec<f64>,
    pub prompt: f64,
    pub heralds: f64,
    pub h1: f64,
    pub h2: f64,
    pub h12: f64,
    pub franson: SlotGrid,
    /// Mean over the displaced offsets.
    pub franson_accidental: SlotGrid,
    pub franson_prompt: SlotGrid,
}

impl CountSummary {
    pub fn singles_total(&self, ch: Channel) -> f64 {
        self.singles[ch as usize].iter().sum()
    }

    pub fn accidental_mean(&self) -> f64 {
        self.cross_accidental.iter().sum::<f64>() / self.cross_accidental.len().max(1) as f64
    }

    pub fn g2_cross(&self) -> f64 {
        self.cross / self.accidental_mean()
    }

    pub fn heralded_g2(&self) -> f64 {
        self.h12 * self.heralds / (self.h1 * self.h2)
    }
}

impl RunStats {
    pub fn summary(&self) -> CountSummary {
        let f = |x: u64| x as f64;
        let mut singles = [[0.0; 4]; 3];
        for c in 0..3 {
            for k in 0..4 {
                singles[c][k] = f(self.singles[c][k]);
            }
        }
        CountSummary {
            duration: self.duration,
            pairs: f(self.pairs),
            singles,
            cross: f(self.cross.signal),
            cross_accidental: self.cross.accidental.iter().map(|&x| f(x)).collect(),
            prompt: f(self.prompt),
            heralds: f(self.heralded.heralds),
            h1: f(self.heralded.h1),
            h2: f(self.heralded.h2),
            h12: f(self.heralded.h12),
            franson: self.franson,
            franson_accidental: self.franson_accidental_mean(),
            franson_prompt: self.franson_prompt,
        }
    }
}

fn slot_column(t: &Tag) -> usize {
    t.slot.map_or(3, Slot::index)
}

/// Runs the engine and accumulates the estimators of `plan`.
pub fn run_statistics(
    sc: &Scenario,
    seed: u64,
    shards: usize,
    plan: &StatsPlan,
) -> Result<RunStats> {
    let mut st = RunStats::new(plan, sc.run.duration)?;
    let franson = sc.run.layout == Layout::Franson;
    let split = sc.run.layout == Layout::Split;
    let h = 0.5 * plan.coincidence_window;
    for_each_block(sc, seed, shards, |cur, ctx| {
        st.pairs += cur.pairs;
        for (c, v) in [&cur.idler, &cur.signal, &cur.signal_b]
            .into_iter()
            .enumerate()
        {
            for t in v {
                st.singles[c][slot_column(t)] += 1;
            }
        }
        st.cross.accumulate(
            &cur.idler,
            &ctx.signal,
            plan.coincidence_window,
            plan.echo_offset,
            &plan.accidental_offsets,
        );
        st.prompt += crate::correlate::window_count(&cur.idler, &ctx.signal, -h, h);
        st.histogram.accumulate(&cur.idler, &ctx.signal);
        if split {
            st.heralded.accumulate(
                &cur.idler,
                &ctx.signal,
                &ctx.signal_b,
                plan.herald_window,
                plan.echo_offset,
            );
        }
        if franson {
            st.franson.accumulate(
                &cur.idler,
                &ctx.signal,
                plan.delay,
                plan.slot_window,
                plan.echo_offset,
            );
            for (g, &o) in st
                .franson_accidental
                .iter_mut()
                .zip(&plan.accidental_offsets)
            {
                g.accumulate(&cur.idler, &ctx.signal, plan.delay, plan.slot_window, o);
            }
            if plan.echo_offset != 0.0 {
                st.franson_prompt.accumulate(
                    &cur.idler,
                    &ctx.signal,
                    plan.delay,
                    plan.slot_window,
                    0.0,
                );
            }
        }
    })?;
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlate::coincidence_histogram;
    use crate::memory::MemoryMode;

    fn small() -> Scenario {
        let mut sc = Scenario::default();
        sc.source.pair_rate = 2e4;
        sc.source.signal_noise_rate = 5e3;
        sc.source.idler_noise_rate = 1e3;
        sc.run.duration = 0.2;
        sc
    }

    #[test]
    fn deterministic_and_shard_independent() {
        let mut sc = small();
        sc.run.layout = Layout::Franson;
        sc.memory.mode = MemoryMode::Afc;
        let a = run_pipeline_sharded(&sc, 5, 1).unwrap();
        let b = run_pipeline_sharded(&sc, 5, 1).unwrap();
        let c = run_pipeline_sharded(&sc, 5, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_ne!(a, run_pipeline_sharded(&sc, 6, 1).unwrap());
    }

    #[test]
    fn ideal_direct_peak_at_zero() {
        let mut sc = Scenario::default();
        sc.source.pair_rate = 1e4;
        sc.memory.device_transmission = 1.0;
        sc.memory.extra_insertion_loss = 1.0;
        sc.detector.idler = DetectorParams::ideal();
        sc.detector.signal = DetectorParams::ideal();
        sc.run.duration = 0.1;
        let out = run_pipeline(&sc, 1).unwrap();
        assert_eq!(out.idler.len() as u64, out.pairs);
        let h = coincidence_histogram(&out.idler, &out.signal, 100e-9, (-5e-6, 5e-6)).unwrap();
        let peak = h
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .unwrap()
            .0;
        assert!(h.offsets[peak].abs() < 100e-9);
    }

    #[test]
    fn echo_peak_at_storage_time() {
        let mut sc = small();
        sc.memory.mode = MemoryMode::Afc;
        sc.memory.comb_period_delta = 1.0 / 3e-6;
        sc.run.duration = 1.0;
        let out = run_pipeline(&sc, 2).unwrap();
        let h = coincidence_histogram(&out.idler, &out.signal, 100e-9, (1e-6, 10e-6)).unwrap();
        let peak = h
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .unwrap()
            .0;
        assert!((h.offsets[peak] - 3e-6).abs() < 100e-9);
    }

    #[test]
    fn streaming_stats_match_full_streams() {
        let mut sc = small();
        sc.run.layout = Layout::Split;
        sc.run.block_length = 1e-3;
        sc.memory.mode = MemoryMode::Afc;
        let plan = StatsPlan::for_scenario(&sc);
        let st = run_statistics(&sc, 3, 1, &plan).unwrap();
        let out = run_pipeline(&sc, 3).unwrap();
        let g = crate::correlate::g2_cross(
            &out.idler,
            &out.signal,
            plan.coincidence_window,
            plan.echo_offset,
            &plan.accidental_offsets,
        )
        .unwrap();
        assert_eq!(g, st.cross.estimate());
        let hh = crate::correlate::heralded_g2_at(
            &out.idler,
            &out.signal,
            out.signal_b.as_ref().unwrap(),
            plan.herald_window,
            plan.echo_offset,
        )
        .unwrap();
        assert_eq!(hh, st.heralded.estimate());
        assert_eq!(st.singles_total(Channel::Signal), out.signal.len() as u64);
    }
}
