use std::fmt::Write;

use qnode_core::experiment::{DecayScanReport, RunReport, TomographyReport};
use qnode_core::{Channel, Estimate, MemoryMode, Scenario};

fn est(e: &Estimate) -> String {
    if e.bounded {
        format!("{:.4} ± {:.4}", e.value, e.std_error)
    } else {
        "unbounded".to_string()
    }
}

fn us(t: f64) -> String {
    format!("{:.3} us", t * 1e6)
}

pub fn run_table(sc: &Scenario, r: &RunReport) -> String {
    let c = &r.counts;
    let mut rows: Vec<(&str, String)> = vec![
        ("mode", format!("{:?}", sc.memory.mode).to_lowercase()),
        ("duration", format!("{} s", c.duration)),
        ("pairs", format!("{:.0}", c.pairs)),
        (
            "idler singles",
            format!("{:.0}", c.singles_total(Channel::Idler)),
        ),
        (
            "signal singles",
            format!("{:.0}", c.singles_total(Channel::Signal)),
        ),
    ];
    if c.singles_total(Channel::SignalB) > 0.0 {
        rows.push((
            "signal_b singles",
            format!("{:.0}", c.singles_total(Channel::SignalB)),
        ));
    }
    rows.push(("echo offset", us(r.echo_offset)));
    if let Some(p) = r.measured_peak {
        rows.push(("histogram peak", us(p)));
    }
    rows.push(("coincidences", format!("{:.0}", c.cross)));
    rows.push(("accidentals", format!("{:.1}", c.accidental_mean())));
    rows.push(("g2 cross", est(&r.g2_cross)));
    if let Some(h) = &r.g2_heralded {
        rows.push(("g2 heralded", est(h)));
    }
    if let Some(e) = &r.echo_efficiency {
        rows.push(("echo efficiency", est(e)));
    } else if sc.memory.mode == MemoryMode::Afc {
        rows.push(("echo efficiency", "n/a".into()));
    }
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<w$}  {v}");
    }
    out
}

pub fn run_record(sc: &Scenario, r: &RunReport) -> String {
    let c = &r.counts;
    let mut out = String::new();
    let _ = writeln!(out, "mode = {:?}", sc.memory.mode);
    let _ = writeln!(out, "duration_s = {}", c.duration);
    let _ = writeln!(out, "pairs = {}", c.pairs);
    for ch in [Channel::Idler, Channel::Signal, Channel::SignalB] {
        let _ = writeln!(out, "singles_{} = {}", ch.name(), c.singles_total(ch));
    }
    let _ = writeln!(out, "echo_offset_s = {}", r.echo_offset);
    if let Some(p) = r.measured_peak {
        let _ = writeln!(out, "histogram_peak_s = {p}");
    }
    let _ = writeln!(out, "coincidences = {}", c.cross);
    let _ = writeln!(out, "accidentals = {}", c.accidental_mean());
    let mut estimate = |name: &str, e: &Estimate| {
        let _ = writeln!(out, "{name} = {}", e.value);
        let _ = writeln!(out, "{name}_error = {}", e.std_error);
        let _ = writeln!(out, "{name}_bounded = {}", e.bounded);
    };
    estimate("g2_cross", &r.g2_cross);
    if let Some(h) = &r.g2_heralded {
        estimate("g2_heralded", h);
    }
    if let Some(e) = &r.echo_efficiency {
        estimate("echo_efficiency", e);
    }
    out
}

pub fn fidelity_record(r: &TomographyReport, f_io: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "f2_raw = {:.6}", r.f2_raw);
    let _ = writeln!(out, "f2_corrected = {:.6}", r.f2_corrected);
    let _ = writeln!(out, "f1_raw = {:.6}", r.f1_raw);
    let _ = writeln!(out, "f1_corrected = {:.6}", r.f1_corrected);
    for (tag, v) in [
        ("raw", r.heralded_raw.visibilities()),
        ("corrected", r.heralded_corrected.visibilities()),
    ] {
        let _ = writeln!(out, "visibility_z_{tag} = {:.6}", v.z);
        let _ = writeln!(out, "visibility_x_{tag} = {:.6}", v.x);
        let _ = writeln!(out, "visibility_y_{tag} = {:.6}", v.y);
    }
    if let Some(f) = f_io {
        let _ = writeln!(out, "f_io = {f:.6}");
    }
    let _ = writeln!(out, "floored = {}", r.floored);
    out
}

pub fn decay_tables(r: &DecayScanReport) -> (String, String) {
    let mut csv = String::from("tau_s,efficiency,efficiency_error,g2_cross,g2_cross_error\n");
    let mut jsonl = String::new();
    for p in &r.points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p.tau,
            p.efficiency.value,
            p.efficiency.std_error,
            p.g2_cross.value,
            p.g2_cross.std_error
        );
        let _ = writeln!(
            jsonl,
            "{{\"tau_s\":{},\"efficiency\":{},\"efficiency_error\":{},\"g2_cross\":{},\"g2_cross_error\":{}}}",
            p.tau, p.efficiency.value, p.efficiency.std_error, p.g2_cross.value, p.g2_cross.std_error
        );
    }
    (csv, jsonl)
}

pub fn decay_table(r: &DecayScanReport) -> String {
    let mut out = format!("{:>10}  {:>20}  {:>20}\n", "tau", "efficiency", "g2 cross");
    for p in &r.points {
        let _ = writeln!(
            out,
            "{:>10}  {:>20}  {:>20}",
            us(p.tau),
            est(&p.efficiency),
            est(&p.g2_cross)
        );
    }
    let f = &r.fit;
    let _ = writeln!(
        out,
        "fit: eta0 = {:.4} ± {:.4}, T2 = {:.2} ± {:.2} us{}",
        f.eta0,
        f.eta0_error(),
        f.t2_eff * 1e6,
        f.t2_error() * 1e6,
        if f.converged { "" } else { " (not converged)" }
    );
    out
}
