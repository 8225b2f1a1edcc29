//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one line, and exits non-zero if any of them fails.

use std::f64::consts::TAU;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use qnode_core::analytic::expected_counts;
use qnode_core::analyzer::{fit_fringe, visibility_from_imbalance};
use qnode_core::correlate::{default_accidental_offsets, g2_cross};
use qnode_core::experiment::{
    io_fidelity, measure, run_report, run_tomography, setting_scenario, sub_seed,
};
use qnode_core::fit::{decay_model, fit_exponential_decay, two_point_decay};
use qnode_core::memory::afc_delay;
use qnode_core::pipeline::{run_pipeline_sharded, run_statistics, StatsPlan};
use qnode_core::source::poisson_times;
use qnode_core::state::{ket_phi_plus, trace_distance, werner_state};
use qnode_core::tomography::{counts_to_csv, default_settings, reconstruct_two_qubit, sample_counts};
use qnode_core::{
    Channel, CountSummary, DensityMatrix, Layout, MemoryMode, MzParams, Scenario, Slot,
    TimeTagStream, Tier,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn afc_delay_is_exact() -> Outcome {
    let mut worst = 0.0f64;
    for tau in [3e-6, 10e-6, 28e-6] {
        let d = afc_delay(1.0 / tau).unwrap();
        worst = worst.max((d - tau).abs() / (f64::EPSILON * tau));
    }
    outcome(worst <= 1.0, format!("worst deviation {worst:.2} ulp"))
}

fn efficiency_law() -> Outcome {
    let (eta0, t2) = two_point_decay(3e-6, 0.137, 10e-6, 0.042).unwrap();
    let closed = 7e-6 * 4.0 / (0.137f64 / 0.042).ln();
    // reported efficiencies 13.7(4) % and 4.2(2) %
    let rel = (0.004f64 / 0.137).hypot(0.002 / 0.042);
    let sigma_two_point = t2 / (0.137f64 / 0.042).ln() * rel;
    let joint = sigma_two_point.hypot(3e-6);
    let pulls = (27e-6 - t2).abs() / joint;

    let taus: Vec<f64> = (0..8).map(|k| 2e-6 + k as f64 * 26e-6 / 7.0).collect();
    let mut hits = 0;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let (etas, sigmas): (Vec<f64>, Vec<f64>) = taus
            .iter()
            .map(|&t| {
                let e = decay_model(t, 0.2275, 27e-6);
                (e * (1.0 + 0.05 * noise.sample(&mut rng)), 0.05 * e)
            })
            .unzip();
        let fit = fit_exponential_decay(&taus, &etas, &sigmas).unwrap();
        if (fit.t2_eff - 27e-6).abs() <= 3e-6 {
            hits += 1;
        }
    }
    let pass = (t2 - 23.7e-6).abs() < 0.05e-6
        && (t2 - closed).abs() < 1e-12
        && pulls < 2.0
        && hits >= 190;
    outcome(
        pass,
        format!(
            "two-point T2 = {:.2} us (eta0 {eta0:.4}), {pulls:.2} sigma from 27(3) us; fit within 3 us in {hits}/200 seeds",
            t2 * 1e6
        ),
    )
}

/// Visibility of `A + B cos φ + C sin φ` over evenly spaced phases, with its
/// standard error from the per-point variances.
fn fringe_with_error(phases: &[f64], y: &[f64], var: &[f64]) -> (f64, f64) {
    let n = phases.len() as f64;
    let (a, amp) = fit_fringe(phases, y).unwrap();
    let b = 2.0 / n * phases.iter().zip(y).map(|(p, v)| v * p.cos()).sum::<f64>();
    let c = 2.0 / n * phases.iter().zip(y).map(|(p, v)| v * p.sin()).sum::<f64>();
    let v = amp / a;
    let var_v: f64 = phases
        .iter()
        .zip(var)
        .map(|(p, s)| {
            let g = 2.0 / n * (b * p.cos() + c * p.sin()) / (amp * a) - v / (n * a);
            g * g * s
        })
        .sum();
    (v, var_v.sqrt())
}

fn visibility_ceiling() -> Outcome {
    let v_closed = visibility_from_imbalance(0.5).unwrap();
    let mut sc = Scenario::bundled("ideal").unwrap();
    sc.analyzer.signal = MzParams::default().with_ratio(0.5);
    sc.source.pair_rate = 5e4;
    sc.run.duration = 90.0;
    let phases: Vec<f64> = (0..8).map(|k| k as f64 * TAU / 8.0).collect();
    let (mut y, mut var) = (Vec::new(), Vec::new());
    for (k, &phi) in phases.iter().enumerate() {
        let s = setting_scenario(&sc, phi, 0.0);
        let c = measure(&s, Tier::Events, sub_seed(3, k as u64), 1).unwrap();
        let n = c.franson.get(Slot::Central, Slot::Central);
        let acc = c.franson_accidental.get(Slot::Central, Slot::Central);
        y.push(n - acc);
        var.push(n + acc / 10.0);
    }
    let total: f64 = y.iter().sum();
    let (v, err) = fringe_with_error(&phases, &y, &var);
    let pulls = (v - v_closed).abs() / err;
    outcome(
        (v_closed - 0.9428).abs() < 1e-4 && total >= 1e6 && pulls < 3.0,
        format!(
            "closed form {v_closed:.5}; event scan {v:.4} ± {err:.4} ({pulls:.1} sigma) over {total:.0} coincidences"
        ),
    )
}

fn nonclassical_at_28us() -> Outcome {
    let sc = Scenario::bundled("decay_scan").unwrap();
    let tau = afc_delay(sc.memory.comb_period_delta).unwrap();
    let (r, _) = run_report(&sc, Tier::Events, 4, 1).unwrap();
    let g = r.g2_cross;
    let sigmas = (g.value - 2.0) / g.std_error;
    outcome(
        (tau - 28e-6).abs() < 1e-12 && g.bounded && sigmas >= 5.0,
        format!(
            "g2 = {:.3} ± {:.3} at {:.1} us, {sigmas:.1} sigma above 2",
            g.value,
            g.std_error,
            tau * 1e6
        ),
    )
}

fn heralded_autocorrelation() -> Outcome {
    let tr = Scenario::bundled("calibrated_input").unwrap();
    let afc = Scenario::bundled("calibrated_afc_3us").unwrap();
    let mut pooled = [[0.0; 4]; 2];
    let mut ordered = 0;
    for seed in 0..20u64 {
        let mut g = [0.0; 2];
        for (k, sc) in [&tr, &afc].into_iter().enumerate() {
            let c = measure(sc, Tier::Events, sub_seed(500 + seed, k as u64), 1).unwrap();
            g[k] = c.heralded_estimate().value;
            for (p, v) in pooled[k].iter_mut().zip([c.heralds, c.h1, c.h2, c.h12]) {
                *p += v;
            }
        }
        if g[1] < g[0] {
            ordered += 1;
        }
    }
    let est = |p: [f64; 4]| qnode_core::correlate::heralded_estimate(p[0], p[1], p[2], p[3]);
    let (gt, ga) = (est(pooled[0]), est(pooled[1]));
    let pass = (gt.value - 0.10).abs() <= 0.03 && (ga.value - 0.05).abs() <= 0.02 && ordered == 20;
    outcome(
        pass,
        format!(
            "transparency {:.4} ± {:.4}, afc {:.4} ± {:.4}; afc lower in {ordered}/20 seeds",
            gt.value, gt.std_error, ga.value, ga.std_error
        ),
    )
}

fn tomography_table() -> Outcome {
    // (fixture, F2 raw, F2 corrected, F1 raw, F1 corrected, F_io)
    let targets = [
        ("calibrated_input", 0.75, 0.81, 0.878, 0.911, None),
        ("calibrated_afc_3us", 0.79, 0.86, 0.897, 0.938, Some(0.98)),
        ("calibrated_afc_10us", 0.77, 0.86, 0.88, 0.94, Some(0.97)),
    ];
    let input_sc = Scenario::bundled("calibrated_input").unwrap();
    let input = run_tomography(&input_sc, Tier::Events, 600, 1).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (name, f2r, f2c, f1r, f1c, fio)) in targets.into_iter().enumerate() {
        let rep = if k == 0 {
            input.clone()
        } else {
            let sc = Scenario::bundled(name).unwrap();
            run_tomography(&sc, Tier::Events, 600 + k as u64, 1).unwrap()
        };
        let cells = [
            (rep.f2_raw, f2r),
            (rep.f2_corrected, f2c),
            (rep.f1_raw, f1r),
            (rep.f1_corrected, f1c),
        ];
        let mut text = format!(
            "{name}: 2Q {:.3}/{:.3} 1Q {:.3}/{:.3}",
            rep.f2_raw, rep.f2_corrected, rep.f1_raw, rep.f1_corrected
        );
        let mut ok = cells.iter().all(|(s, p)| (s - p).abs() <= 0.03);
        if let Some(target) = fio {
            let f = io_fidelity(&input_sc, &input, &rep).unwrap();
            text += &format!(" io {f:.3}");
            ok &= (f - target).abs() <= 0.02;
        }
        if !ok {
            text += " (outside tolerance)";
        }
        pass &= ok;
        parts.push(text);
    }
    outcome(pass, parts.join("; "))
}

fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let mut sc = Scenario::default();
    sc.source.pair_rate = rng.random_range(2e4..2e5);
    sc.source.pump_visibility = rng.random_range(0.5..1.0);
    sc.source.noise_photons_per_pair = rng.random_range(0.0..0.1);
    sc.source.noise_pair_rate = rng.random_range(0.0..5e3);
    sc.source.signal_noise_rate = rng.random_range(0.0..5e3);
    sc.source.idler_noise_rate = rng.random_range(0.0..2e3);
    sc.memory.mode = if rng.random_bool(0.5) {
        MemoryMode::Afc
    } else {
        MemoryMode::Transparency
    };
    sc.memory.comb_period_delta = 1.0 / rng.random_range(2e-6..15e-6);
    sc.memory.depolarizing = rng.random_range(0.0..0.2);
    sc.memory.device_transmission = rng.random_range(0.3..1.0);
    sc.analyzer.idler = MzParams::default()
        .with_ratio(rng.random_range(0.3..1.0))
        .with_phase(rng.random_range(0.0..TAU));
    sc.analyzer.signal = MzParams::default()
        .with_ratio(rng.random_range(0.3..1.0))
        .with_phase(rng.random_range(0.0..TAU));
    for d in [
        &mut sc.detector.idler,
        &mut sc.detector.signal,
        &mut sc.detector.signal_b,
    ] {
        d.efficiency = rng.random_range(0.3..1.0);
        d.dark_rate = rng.random_range(0.0..500.0);
        d.jitter_sigma = rng.random_range(0.0..2e-9);
        // the analytic tier has no dead time
        d.dead_time = 0.0;
    }
    sc.run.layout = [Layout::Direct, Layout::Split, Layout::Franson][rng.random_range(0..3)];
    sc.run.duration = 3.0;
    sc
}

fn count_pulls(obs: &CountSummary, exp: &CountSummary) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut push = |name: String, o: f64, e: f64, widen: f64| {
        out.push((name, (o - e).abs() / (widen * e.max(1.0).sqrt())));
    };
    for c in 0..3 {
        for k in 0..4 {
            push(format!("singles[{c}][{k}]"), obs.singles[c][k], exp.singles[c][k], 1.0);
        }
    }
    push("pairs".into(), obs.pairs, exp.pairs, 1.0);
    push("cross".into(), obs.cross, exp.cross, 1.0);
    push("prompt".into(), obs.prompt, exp.prompt, 1.0);
    for (k, (o, e)) in obs.cross_accidental.iter().zip(&exp.cross_accidental).enumerate() {
        push(format!("accidental {k}"), *o, *e, 1.0);
    }
    for a in 0..3 {
        for b in 0..3 {
            push(format!("franson[{a}][{b}]"), obs.franson.0[a][b], exp.franson.0[a][b], 1.0);
            push(
                format!("franson_prompt[{a}][{b}]"),
                obs.franson_prompt.0[a][b],
                exp.franson_prompt.0[a][b],
                1.0,
            );
            push(
                format!("franson_accidental[{a}][{b}]"),
                obs.franson_accidental.0[a][b],
                exp.franson_accidental.0[a][b],
                0.4,
            );
        }
    }
    push("heralds".into(), obs.heralds, exp.heralds, 1.0);
    push("h1".into(), obs.h1, exp.h1, 1.0);
    push("h2".into(), obs.h2, exp.h2, 1.0);
    push("h12".into(), obs.h12, exp.h12, 1.5);
    for (name, o, e) in [
        ("g2_cross", obs.cross_estimate(), exp.cross_estimate()),
        ("g2_heralded", obs.heralded_estimate(), exp.heralded_estimate()),
    ] {
        if o.bounded && e.bounded && o.std_error > 0.0 {
            out.push((name.into(), (o.value - e.value).abs() / o.std_error));
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (String::new(), 0.0f64);
    for k in 0..20 {
        let sc = random_scenario(&mut rng);
        let plan = StatsPlan::for_scenario(&sc);
        let obs = run_statistics(&sc, sub_seed(70, k), 1, &plan).unwrap().summary();
        let exp = expected_counts(&sc, &plan).unwrap();
        for (name, pull) in count_pulls(&obs, &exp) {
            if pull > worst.1 {
                worst = (format!("scenario {k} {name}"), pull);
            }
        }
    }

    let states = [
        ket_phi_plus(),
        werner_state(0.5).unwrap(),
        DensityMatrix::maximally_mixed(4),
    ];
    let mut worst_td = 0.0f64;
    for (k, rho) in states.iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(80 + k as u64);
        let mz = MzParams::default();
        let counts =
            sample_counts(rho, &default_settings(), &mz, &mz, 1_000_000, &mut r).unwrap();
        let td = trace_distance(&reconstruct_two_qubit(&counts).unwrap(), rho).unwrap();
        worst_td = worst_td.max(td);
    }

    let mut worst_poisson = 0.0f64;
    for k in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(90 + k);
        let rate_a = r.random_range(2e4..2e5);
        let rate_b = r.random_range(2e4..2e5);
        let a = TimeTagStream::from_times(&poisson_times(rate_a, 0.0, 2.0, &mut r), Channel::Idler)
            .unwrap();
        let b = TimeTagStream::from_times(&poisson_times(rate_b, 0.0, 2.0, &mut r), Channel::Signal)
            .unwrap();
        let g = g2_cross(&a, &b, 400e-9, 0.0, &default_accidental_offsets(0.0)).unwrap();
        worst_poisson = worst_poisson.max((g.value - 1.0).abs() / g.std_error);
    }

    outcome(
        worst.1 < 5.0 && worst_td < 0.02 && worst_poisson < 5.0,
        format!(
            "largest event/analytic pull {:.2} ({}); tomography trace distance {worst_td:.4}; Poisson g2 pull {worst_poisson:.2}",
            worst.1, worst.0
        ),
    )
}

fn exports(sc: &Scenario, shards: usize) -> Vec<String> {
    let p = run_pipeline_sharded(sc, 21, shards).unwrap();
    let (rep, stats) = run_report(sc, Tier::Events, 21, shards).unwrap();
    let tomo = run_tomography(sc, Tier::Events, 21, shards).unwrap();
    vec![
        p.idler.to_text(),
        p.signal.to_text(),
        p.signal_b.map(|s| s.to_text()).unwrap_or_default(),
        stats.unwrap().histogram.to_csv(),
        format!("{:?}", rep.counts),
        counts_to_csv(&tomo.counts).unwrap(),
        tomo.rho_corrected.to_text(),
    ]
}

fn determinism() -> Outcome {
    let mut sc = Scenario::bundled("calibrated_afc_3us").unwrap();
    sc.run.duration = 2.0;
    sc.analysis.setting_duration = Some(2.0);
    let a = exports(&sc, 1);
    let b = exports(&sc, 1);
    let c = exports(&sc, 4);
    let bytes: usize = a.iter().map(String::len).sum();
    outcome(
        a == b && a == c,
        format!("{bytes} bytes of exports compared across two runs and shard counts 1 and 4"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("afc delay", afc_delay_is_exact),
        ("efficiency law", efficiency_law),
        ("visibility ceiling", visibility_ceiling),
        ("nonclassicality", nonclassical_at_28us),
        ("heralded autocorrelation", heralded_autocorrelation),
        ("tomography table", tomography_table),
        ("oracle equivalence", oracle_equivalence),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.into_iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} | {} [{:.1} s]",
            k + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
