//! Fit of the memory efficiency decay `η(τ) = η₀ exp(−4τ/T₂)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub eta0: f64,
    pub t2_eff: f64,
    /// Covariance of `(eta0, t2_eff)`.
    pub covariance: [[f64; 2]; 2],
    /// `√Σ r²` with residuals weighted by `1/σ`.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn eta0_error(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn t2_error(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    /// Flat `key = value` record.
    pub fn to_text(&self) -> String {
        format!(
            "eta0 = {}\neta0_error = {}\nt2_eff_s = {}\nt2_eff_error_s = {}\ncovariance = [{}, {}, {}, {}]\nresidual_norm = {}\nconverged = {}\niterations = {}\n",
            self.eta0,
            self.eta0_error(),
            self.t2_eff,
            self.t2_error(),
            self.covariance[0][0],
            self.covariance[0][1],
            self.covariance[1][0],
            self.covariance[1][1],
            self.residual_norm,
            self.converged,
            self.iterations
        )
    }
}

fn model(tau: f64, eta0: f64, t2: f64) -> f64 {
    eta0 * (-4.0 * tau / t2).exp()
}

fn invert2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 0.0) || !det.is_finite() {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Weighted least-squares fit; `sigmas` are the standard errors of `etas`.
/// Starts from a log-linear fit, then runs Gauss–Newton.
pub fn fit_exponential_decay(taus: &[f64], etas: &[f64], sigmas: &[f64]) -> Result<FitResult> {
    let n = taus.len();
    if etas.len() != n || sigmas.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: etas.len().min(sigmas.len()),
        });
    }
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 points, got {n}")));
    }
    let mut sorted = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Input("delays must be distinct".into()));
    }
    if taus.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::domain("delays must be finite and >= 0"));
    }
    if sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::domain("uncertainties must be finite and > 0"));
    }
    if etas.iter().any(|e| !e.is_finite()) {
        return Err(Error::domain("efficiencies must be finite"));
    }

    // log-linear start on the positive points, weighted by (η/σ)²
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        if etas[k] > 0.0 {
            let w = (etas[k] / sigmas[k]).powi(2);
            let y = etas[k].ln();
            sw += w;
            sx += w * taus[k];
            sy += w * y;
            sxx += w * taus[k] * taus[k];
            sxy += w * taus[k] * y;
        }
    }
    let den = sw * sxx - sx * sx;
    if !(den > 0.0) {
        return Err(Error::Input(
            "need positive efficiencies at two distinct delays".into(),
        ));
    }
    let slope = (sw * sxy - sx * sy) / den;
    let intercept = (sy - slope * sx) / sw;
    if !(slope < 0.0) {
        return Err(Error::Input("efficiency does not decay with delay".into()));
    }
    let mut eta0 = intercept.exp();
    let mut t2 = -4.0 / slope;

    let normal = |eta0: f64, t2: f64| {
        let mut jtj = [[0.0; 2]; 2];
        let mut jtr = [0.0; 2];
        let mut chi2 = 0.0;
        for k in 0..n {
            let e = (-4.0 * taus[k] / t2).exp();
            let w = 1.0 / (sigmas[k] * sigmas[k]);
            let r = etas[k] - eta0 * e;
            let j = [e, eta0 * e * 4.0 * taus[k] / (t2 * t2)];
            for a in 0..2 {
                jtr[a] += w * j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += w * j[a] * j[b];
                }
            }
            chi2 += w * r * r;
        }
        (jtj, jtr, chi2)
    };

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        let (jtj, jtr, chi2) = normal(eta0, t2);
        let inv = invert2(jtj)
            .ok_or_else(|| Error::Reconstruction("singular fit normal matrix".into()))?;
        let d0 = inv[0][0] * jtr[0] + inv[0][1] * jtr[1];
        let d1 = inv[1][0] * jtr[0] + inv[1][1] * jtr[1];
        // halve the step until χ² does not increase and T₂ stays positive
        let mut lambda = 1.0;
        let (mut ne, mut nt) = (eta0 + d0, t2 + d1);
        while (nt <= 0.0 || normal(ne, nt).2 > chi2 * (1.0 + 1e-12)) && lambda > 1e-6 {
            lambda *= 0.5;
            ne = eta0 + lambda * d0;
            nt = t2 + lambda * d1;
        }
        let rel = ((ne - eta0) / eta0).abs().max(((nt - t2) / t2).abs());
        eta0 = ne;
        t2 = nt;
        if rel < 1e-10 {
            converged = true;
            break;
        }
    }
    let (jtj, _, chi2) = normal(eta0, t2);
    let covariance =
        invert2(jtj).ok_or_else(|| Error::Reconstruction("singular fit normal matrix".into()))?;
    Ok(FitResult {
        eta0,
        t2_eff: t2,
        covariance,
        residual_norm: chi2.sqrt(),
        converged,
        iterations,
    })
}

/// Exact `(η₀, T₂)` through two points.
pub fn two_point_decay(tau1: f64, eta1: f64, tau2: f64, eta2: f64) -> Result<(f64, f64)> {
    if !(eta1 > 0.0 && eta2 > 0.0) {
        return Err(Error::domain("efficiencies must be > 0"));
    }
    if tau1 == tau2 {
        return Err(Error::Input("delays must differ".into()));
    }
    let rate = (eta1 / eta2).ln() / (tau2 - tau1);
    if !(rate > 0.0) {
        return Err(Error::Input("efficiency does not decay with delay".into()));
    }
    let t2 = 4.0 / rate;
    Ok((eta1 * (4.0 * tau1 / t2).exp(), t2))
}

/// Model value at `tau`.
pub fn decay_model(tau: f64, eta0: f64, t2_eff: f64) -> f64 {
    model(tau, eta0, t2_eff)
}
