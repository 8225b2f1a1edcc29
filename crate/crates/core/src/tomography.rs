//! State reconstruction from Franson slot counts.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::analyzer::{mz_povm, visibility_from_imbalance, MzParams};
use crate::correlate::SlotGrid;
use crate::error::{Error, Result};
use crate::linalg::{two_qubit_paulis, ComplexMatrix};
use crate::pipeline::CountSummary;
use crate::povm::Slot;
use crate::state::{project_to_physical, trace_distance, uhlmann_fidelity, Bloch, DensityMatrix};

/// Analyzer phases for one acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographySetting {
    pub idler_phase: f64,
    pub signal_phase: f64,
    pub label: String,
}

impl TomographySetting {
    /// Phases are wrapped into `[0, 2π)`.
    pub fn new(idler_phase: f64, signal_phase: f64) -> Self {
        let idler_phase = wrap_phase(idler_phase);
        let signal_phase = wrap_phase(signal_phase);
        let name = |p: f64| {
            if same_phase(p, 0.0) {
                "0".to_string()
            } else if same_phase(p, FRAC_PI_2) {
                "pi/2".to_string()
            } else {
                format!("{p:.4}")
            }
        };
        Self {
            idler_phase,
            signal_phase,
            label: format!("{},{}", name(idler_phase), name(signal_phase)),
        }
    }
}

/// The four settings `{0, π/2} × {0, π/2}`.
pub fn default_settings() -> Vec<TomographySetting> {
    let mut out = Vec::with_capacity(4);
    for pi in [0.0, FRAC_PI_2] {
        for ps in [0.0, FRAC_PI_2] {
            out.push(TomographySetting::new(pi, ps));
        }
    }
    out
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn same_phase(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(2.0 * PI);
    d < 1e-9 || 2.0 * PI - d < 1e-9
}

/// Counts of one setting: the 3×3 slot grid and the estimated background
/// per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyCounts {
    pub setting: TomographySetting,
    pub cells: SlotGrid,
    pub accidental: SlotGrid,
    pub idler_singles: [f64; 3],
    pub signal_singles: [f64; 3],
    pub duration: f64,
}

impl TomographyCounts {
    pub fn from_summary(setting: TomographySetting, s: &CountSummary) -> Self {
        Self {
            setting,
            cells: s.franson,
            accidental: s.franson_accidental,
            idler_singles: [s.singles[0][0], s.singles[0][1], s.singles[0][2]],
            signal_singles: [s.singles[1][0], s.singles[1][1], s.singles[1][2]],
            duration: s.duration,
        }
    }
}

fn nominal(phase: f64) -> MzParams {
    MzParams {
        phase_pi: phase / PI,
        t_short: 1.0,
        t_long: 1.0,
        ..MzParams::default()
    }
}

fn slot_operators(mz: &MzParams) -> Result<[ComplexMatrix; 3]> {
    let povm = mz_povm(mz)?;
    let get = |s: Slot| {
        povm.element(s)
            .map(|e| e.matrix().clone())
            .unwrap_or_else(|| ComplexMatrix::zeros(2))
    };
    Ok([get(Slot::Early), get(Slot::Central), get(Slot::Late)])
}

/// Cell operators `E_a ⊗ E_b` of the balanced analyzers at the setting.
fn cell_operators(setting: &TomographySetting) -> Result<Vec<ComplexMatrix>> {
    let ei = slot_operators(&nominal(setting.idler_phase))?;
    let es = slot_operators(&nominal(setting.signal_phase))?;
    let mut out = Vec::with_capacity(9);
    for a in &ei {
        for b in &es {
            out.push(a.kron(b));
        }
    }
    Ok(out)
}

fn check_settings(counts: &[TomographyCounts]) -> Result<()> {
    for want in default_settings() {
        let found = counts.iter().find(|c| {
            same_phase(c.setting.idler_phase, want.idler_phase)
                && same_phase(c.setting.signal_phase, want.signal_phase)
        });
        match found {
            None => {
                return Err(Error::Input(format!(
                    "missing tomography setting {}",
                    want.label
                )))
            }
            Some(c)
                if (0..3)
                    .map(|k| c.cells.0[1][k] + c.cells.0[k][1])
                    .sum::<f64>()
                    <= 0.0 =>
            {
                return Err(Error::Input(format!(
                    "setting {} has no central-slot coincidences",
                    want.label
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Weighted least-squares estimate of `ρ` from all cells, before projection.
pub fn linear_estimate(counts: &[TomographyCounts]) -> Result<ComplexMatrix> {
    check_settings(counts)?;
    let paulis = two_qubit_paulis();
    let rows = counts.len() * 9;
    let mut a = DMatrix::<f64>::zeros(rows, 16);
    let mut y = DVector::<f64>::zeros(rows);
    let mut w = DVector::<f64>::zeros(rows);
    for (k, c) in counts.iter().enumerate() {
        for (j, op) in cell_operators(&c.setting)?.iter().enumerate() {
            let r = 9 * k + j;
            for (m, p) in paulis.iter().enumerate() {
                a[(r, m)] = 0.25 * op.trace_product(p).re;
            }
            let n = c.cells.0[j / 3][j % 3];
            if !n.is_finite() || n < 0.0 {
                return Err(Error::Input(format!(
                    "invalid count {n} in setting {}",
                    c.setting.label
                )));
            }
            y[r] = n;
            w[r] = 1.0 / n.max(1.0);
        }
    }
    let mut ata = DMatrix::<f64>::zeros(16, 16);
    let mut aty = DVector::<f64>::zeros(16);
    for r in 0..rows {
        for i in 0..16 {
            aty[i] += w[r] * a[(r, i)] * y[r];
            for j in 0..16 {
                ata[(i, j)] += w[r] * a[(r, i)] * a[(r, j)];
            }
        }
    }
    let chol = ata
        .cholesky()
        .ok_or_else(|| Error::Reconstruction("settings do not determine the state".into()))?;
    let coef = chol.solve(&aty);
    if !(coef[0] > 0.0) {
        return Err(Error::Reconstruction(
            "fitted count scale is not positive".into(),
        ));
    }
    let mut m = ComplexMatrix::zeros(4);
    for (c, p) in coef.iter().zip(&paulis) {
        m = &m + &p.scale(0.25 * c / coef[0]);
    }
    Ok(m.hermitian_part())
}

/// Linear inversion followed by projection onto physical states.
pub fn reconstruct_two_qubit(counts: &[TomographyCounts]) -> Result<DensityMatrix> {
    project_to_physical(&linear_estimate(counts)?)
}

fn inverse_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (vals, vecs) = m.hermitian_eigen();
    if vals[0] <= 1e-12 * vals[vals.len() - 1] {
        return Err(Error::Reconstruction(
            "measurement operators do not span the space".into(),
        ));
    }
    let inv: Vec<f64> = vals.iter().map(|v| 1.0 / v).collect();
    Ok(ComplexMatrix::from_eigen(&inv, &vecs))
}

/// Maximum-likelihood refinement by the `RρR` iteration for post-selected
/// counts. Stops after `max_iter` steps or when a step moves less than
/// `1e-8` in trace distance.
pub fn refine_mle(
    counts: &[TomographyCounts],
    initial: &DensityMatrix,
    max_iter: usize,
) -> Result<DensityMatrix> {
    check_settings(counts)?;
    let mut ops = Vec::new();
    let mut n = Vec::new();
    for c in counts {
        for (j, op) in cell_operators(&c.setting)?.into_iter().enumerate() {
            ops.push(op);
            n.push(c.cells.0[j / 3][j % 3].max(0.0));
        }
    }
    let total: f64 = n.iter().sum();
    let g = ops.iter().fold(ComplexMatrix::zeros(4), |acc, o| &acc + o);
    let g_inv = inverse_psd(&g)?;
    // start from a slightly mixed state so that no outcome has zero probability
    let mut rho = initial.depolarize(1e-3);
    for _ in 0..max_iter {
        let norm = rho.matrix().trace_product(&g).re;
        let mut r = ComplexMatrix::zeros(4);
        for (op, &k) in ops.iter().zip(&n) {
            if k > 0.0 {
                let p = rho.matrix().trace_product(op).re.max(1e-300);
                r = &r + &op.scale(k * norm / (total * p));
            }
        }
        let step = &(&g_inv * &r) * rho.matrix();
        let next = &step * &(&r * &g_inv);
        let tr = next.trace().re;
        if !(tr > 0.0) {
            return Err(Error::Reconstruction(
                "likelihood iteration lost normalization".into(),
            ));
        }
        let next = DensityMatrix::new(next.scale(1.0 / tr).hermitian_part())?;
        let moved = trace_distance(&next, &rho)?;
        rho = next;
        if moved < 1e-8 {
            break;
        }
    }
    Ok(rho)
}

/// Qubit state from slot counts `(early, central, late)` recorded at several
/// analyzer phases, assuming a balanced analyzer.
pub fn reconstruct_one_qubit(data: &[(f64, [f64; 3])]) -> Result<DensityMatrix> {
    let (mut e, mut l) = (0.0, 0.0);
    let mut ata = [[0.0; 2]; 2];
    let mut aty = [0.0; 2];
    for &(phase, n) in data {
        if n.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input(format!("invalid slot counts {n:?}")));
        }
        let side = n[0] + n[2];
        if side <= 0.0 {
            return Err(Error::Input(
                "no side-peak counts to normalize the central peak".into(),
            ));
        }
        e += n[0];
        l += n[2];
        // central/(early + late) − 1 = x cos φ − y sin φ
        let m = n[1] / side - 1.0;
        let row = [phase.cos(), -phase.sin()];
        for i in 0..2 {
            aty[i] += row[i] * m;
            for j in 0..2 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
    if det.abs() < 1e-9 {
        return Err(Error::Input(
            "need two analyzer phases that are not equal modulo π".into(),
        ));
    }
    let x = (ata[1][1] * aty[0] - ata[0][1] * aty[1]) / det;
    let y = (ata[0][0] * aty[1] - ata[1][0] * aty[0]) / det;
    let z = (e - l) / (e + l);
    project_to_physical(&Bloch::new(x, y, z).matrix())
}

/// Signal states conditioned on the idler outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct HeraldedStates {
    pub early: DensityMatrix,
    pub late: DensityMatrix,
    /// Idler central slot at phase 0.
    pub x: DensityMatrix,
    /// Idler central slot at phase π/2.
    pub y: DensityMatrix,
}

pub fn heralded_signal_states(counts: &[TomographyCounts]) -> Result<HeraldedStates> {
    check_settings(counts)?;
    let rows = |slot: Slot, filter: &dyn Fn(&TomographyCounts) -> bool| -> Vec<(f64, [f64; 3])> {
        counts
            .iter()
            .filter(|c| filter(c))
            .map(|c| (c.setting.signal_phase, c.cells.0[slot.index()]))
            .collect()
    };
    let all = |_: &TomographyCounts| true;
    Ok(HeraldedStates {
        early: reconstruct_one_qubit(&rows(Slot::Early, &all))?,
        late: reconstruct_one_qubit(&rows(Slot::Late, &all))?,
        x: reconstruct_one_qubit(&rows(Slot::Central, &|c| {
            same_phase(c.setting.idler_phase, 0.0)
        }))?,
        y: reconstruct_one_qubit(&rows(Slot::Central, &|c| {
            same_phase(c.setting.idler_phase, FRAC_PI_2)
        }))?,
    })
}

/// Visibility `2F − 1` of the heralded states in each basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisVisibilities {
    pub z: f64,
    pub x: f64,
    pub y: f64,
}

impl HeraldedStates {
    pub fn visibilities(&self) -> BasisVisibilities {
        let b = |r: &DensityMatrix| Bloch::from_matrix(r.matrix());
        BasisVisibilities {
            z: 0.5 * (b(&self.early).z - b(&self.late).z),
            x: b(&self.x).x,
            y: b(&self.y).y,
        }
    }
}

/// Mean over the three bases of the fidelity `(1 + V)/2` between heralded
/// and ideal signal states.
pub fn average_one_qubit_fidelity(states: &HeraldedStates) -> f64 {
    let v = states.visibilities();
    (3.0 + v.z + v.x + v.y) / 6.0
}

/// Uhlmann fidelity between the input and output two-qubit states.
pub fn input_output_fidelity(input: &DensityMatrix, output: &DensityMatrix) -> Result<f64> {
    uhlmann_fidelity(input, output)
}

fn unit_mean_arms(mz: &MzParams) -> Result<(f64, f64)> {
    mz.validate("analyzer")?;
    let mean = 0.5 * (mz.t_short + mz.t_long);
    let (ts, tl) = (mz.t_short / mean, mz.t_long / mean);
    if ts <= 0.0 || tl <= 0.0 {
        return Err(Error::domain(
            "imbalance correction needs both arms transmitting",
        ));
    }
    Ok((ts, tl))
}

/// Slot map that normalizes side peaks by the arm transmissions (rescaled
/// to unit mean) and removes the matching population term from the central
/// slot. The interference term keeps the reduced visibility `2√r/(1+r)`.
pub fn population_map(mz: &MzParams) -> Result<[[f64; 3]; 3]> {
    let (ts, tl) = unit_mean_arms(mz)?;
    Ok([
        [1.0 / ts, 0.0, 0.0],
        [-(tl - 1.0) / ts, 1.0, -(ts - 1.0) / tl],
        [0.0, 0.0, 1.0 / tl],
    ])
}

/// Slot map that rescales the interference term of the central slot by
/// `1/V` for counts already normalized by [`population_map`].
pub fn interference_map(mz: &MzParams) -> Result<[[f64; 3]; 3]> {
    let v = visibility_from_imbalance(mz.ratio())?;
    if !(v > 0.0) {
        return Err(Error::domain("analyzer shows no interference"));
    }
    let k = (1.0 - v) / v;
    Ok([[1.0, 0.0, 0.0], [-k, 1.0 / v, -k], [0.0, 0.0, 1.0]])
}

/// Full inverse of the map from balanced to imbalanced slot operators.
pub fn imbalance_inverse(mz: &MzParams) -> Result<[[f64; 3]; 3]> {
    Ok(mat3_mul(&interference_map(mz)?, &population_map(mz)?))
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Transformed counts and whether any cell went negative and was set to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrected {
    pub counts: TomographyCounts,
    pub floored: bool,
}

fn transform(
    counts: &TomographyCounts,
    background: &SlotGrid,
    li: &[[f64; 3]; 3],
    ls: &[[f64; 3]; 3],
) -> Corrected {
    let mut floored = false;
    let mut n = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let v = counts.cells.0[a][b] - background.0[a][b];
            if v < 0.0 {
                floored = true;
            }
            n[a][b] = v.max(0.0);
        }
    }
    let mut out = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += li[a][i] * n[i][j] * ls[b][j];
                }
            }
            if acc < 0.0 {
                floored = true;
            }
            out[a][b] = acc.max(0.0);
        }
    }
    Corrected {
        counts: TomographyCounts {
            cells: SlotGrid(out),
            accidental: SlotGrid::default(),
            ..counts.clone()
        },
        floored,
    }
}

/// Raw counts with side peaks normalized by the arm transmissions; nothing
/// is subtracted and the interference visibility is left as measured.
pub fn normalize_populations(
    counts: &TomographyCounts,
    idler: &MzParams,
    signal: &MzParams,
) -> Result<Corrected> {
    let mut out = transform(
        counts,
        &SlotGrid::default(),
        &population_map(idler)?,
        &population_map(signal)?,
    );
    out.counts.accidental = counts.accidental;
    Ok(out)
}

/// Subtracts `background` from every cell, normalizes populations and
/// rescales the interference terms by `1/V` of each analyzer.
pub fn correct_counts(
    counts: &TomographyCounts,
    background: &SlotGrid,
    idler: &MzParams,
    signal: &MzParams,
) -> Result<Corrected> {
    Ok(transform(
        counts,
        background,
        &imbalance_inverse(idler)?,
        &imbalance_inverse(signal)?,
    ))
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    idler_phase: f64,
    signal_phase: f64,
    duration_s: f64,
    idler_slot: Slot,
    signal_slot: Slot,
    count: f64,
    accidental: f64,
    idler_singles: f64,
    signal_singles: f64,
}

fn count_rows(counts: &[TomographyCounts]) -> impl Iterator<Item = CountRow> + '_ {
    counts.iter().flat_map(|c| {
        Slot::ALL.into_iter().flat_map(move |a| {
            Slot::ALL.into_iter().map(move |b| CountRow {
                idler_phase: c.setting.idler_phase,
                signal_phase: c.setting.signal_phase,
                duration_s: c.duration,
                idler_slot: a,
                signal_slot: b,
                count: c.cells.get(a, b),
                accidental: c.accidental.get(a, b),
                idler_singles: c.idler_singles[a.index()],
                signal_singles: c.signal_singles[b.index()],
            })
        })
    })
}

fn from_rows(rows: impl IntoIterator<Item = Result<CountRow>>) -> Result<Vec<TomographyCounts>> {
    let mut out: Vec<(TomographyCounts, [[bool; 3]; 3])> = Vec::new();
    for row in rows {
        let r = row?;
        let k = match out.iter().position(|(c, _)| {
            same_phase(c.setting.idler_phase, r.idler_phase)
                && same_phase(c.setting.signal_phase, r.signal_phase)
        }) {
            Some(k) => k,
            None => {
                out.push((
                    TomographyCounts {
                        setting: TomographySetting::new(r.idler_phase, r.signal_phase),
                        cells: SlotGrid::default(),
                        accidental: SlotGrid::default(),
                        idler_singles: [0.0; 3],
                        signal_singles: [0.0; 3],
                        duration: r.duration_s,
                    },
                    [[false; 3]; 3],
                ));
                out.len() - 1
            }
        };
        let (c, seen) = &mut out[k];
        let (a, b) = (r.idler_slot.index(), r.signal_slot.index());
        if seen[a][b] {
            return Err(Error::Input(format!(
                "cell {a},{b} of setting {} given twice",
                c.setting.label
            )));
        }
        seen[a][b] = true;
        c.cells.0[a][b] = r.count;
        c.accidental.0[a][b] = r.accidental;
        c.idler_singles[a] = r.idler_singles;
        c.signal_singles[b] = r.signal_singles;
    }
    out.into_iter()
        .map(|(c, seen)| {
            if seen.iter().flatten().all(|x| *x) {
                Ok(c)
            } else {
                Err(Error::Input(format!(
                    "setting {} is missing cells",
                    c.setting.label
                )))
            }
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Parse {
            line: p.line() as usize,
            column: 1,
            message: e.to_string(),
        },
        None => Error::Input(e.to_string()),
    }
}

/// One CSV row per setting and cell.
pub fn counts_to_csv(counts: &[TomographyCounts]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in count_rows(counts) {
        w.serialize(row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

pub fn counts_from_csv(text: &str) -> Result<Vec<TomographyCounts>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    from_rows(r.deserialize().map(|row| row.map_err(csv_error)))
}

pub fn counts_to_json_lines(counts: &[TomographyCounts]) -> Result<String> {
    let mut out = String::new();
    for row in count_rows(counts) {
        out.push_str(&serde_json::to_string(&row).map_err(|e| Error::Input(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn counts_from_json_lines(text: &str) -> Result<Vec<TomographyCounts>> {
    from_rows(
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: k + 1,
                    column: e.column(),
                    message: e.to_string(),
                })
            }),
    )
}

/// Expected cell counts for `shots` pairs reaching both analyzers.
pub fn expected_cells(
    rho: &DensityMatrix,
    idler: &MzParams,
    signal: &MzParams,
    shots: f64,
) -> Result<SlotGrid> {
    if rho.dim() != 4 {
        return Err(Error::Dimension {
            expected: 4,
            found: rho.dim(),
        });
    }
    let ei = slot_operators(idler)?;
    let es = slot_operators(signal)?;
    let mut g = SlotGrid::default();
    for a in 0..3 {
        for b in 0..3 {
            g.0[a][b] = shots * rho.matrix().trace_product(&ei[a].kron(&es[b])).re.max(0.0);
        }
    }
    Ok(g)
}

/// Noise-free counts for every setting with analyzers `idler`, `signal`
/// whose phases are replaced by those of the setting.
pub fn synthetic_counts(
    rho: &DensityMatrix,
    settings: &[TomographySetting],
    idler: &MzParams,
    signal: &MzParams,
    shots: f64,
) -> Result<Vec<TomographyCounts>> {
    settings
        .iter()
        .map(|s| {
            let cells = expected_cells(
                rho,
                &idler.clone().with_phase(s.idler_phase),
                &signal.clone().with_phase(s.signal_phase),
                shots,
            )?;
            Ok(TomographyCounts {
                setting: s.clone(),
                cells,
                accidental: SlotGrid::default(),
                idler_singles: [0.0; 3],
                signal_singles: [0.0; 3],
                duration: 0.0,
            })
        })
        .collect()
}

/// Multinomial sample of `shots` pairs per setting; pairs lost at either
/// analyzer are dropped.
pub fn sample_counts<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    settings: &[TomographySetting],
    idler: &MzParams,
    signal: &MzParams,
    shots: u64,
    rng: &mut R,
) -> Result<Vec<TomographyCounts>> {
    let mut out = synthetic_counts(rho, settings, idler, signal, 1.0)?;
    for c in &mut out {
        let mut left = shots;
        let mut mass = 1.0;
        for a in 0..3 {
            for b in 0..3 {
                let p = c.cells.0[a][b];
                let k = if left == 0 || mass <= 0.0 {
                    0
                } else {
                    let q = (p / mass).clamp(0.0, 1.0);
                    Binomial::new(left, q)
                        .map_err(|e| Error::domain(e.to_string()))?
                        .sample(rng)
                };
                c.cells.0[a][b] = k as f64;
                left -= k;
                mass -= p;
            }
        }
    }
    Ok(out)
}
