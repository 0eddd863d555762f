//! Summary metrics computed from a trace.

use std::fmt::Write as _;

use super::trace::{Trace, TraceError};

/// Ordered `key: value` summary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub entries: Vec<(String, f64)>,
}

impl Metrics {
    pub fn set(&mut self, key: &str, value: f64) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == key).map(|e| e.1)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}: {v:.11e}");
        }
        s
    }

    pub fn parse(text: &str) -> Metrics {
        let mut m = Metrics::default();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once(':') {
                if let Ok(x) = v.trim().parse::<f64>() {
                    m.set(k.trim(), x);
                }
            }
        }
        m
    }
}

/// Damping ratio and frequency [Hz] of the dominant oscillation in `y`
/// over `[t0, t1]`, from the decay of successive half-cycle swings.
pub fn log_decrement(t: &[f64], y: &[f64], t0: f64, t1: f64) -> Option<(f64, f64)> {
    let idx: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= t0 && t[k] <= t1).collect();
    if idx.len() < 5 {
        return None;
    }
    // Extremes, refined by a parabola through the neighbouring samples.
    let mut ext: Vec<(f64, f64)> = Vec::new();
    for w in idx.windows(3) {
        let (a, b, c) = (y[w[0]], y[w[1]], y[w[2]]);
        let is_max = b > a && b >= c;
        let is_min = b < a && b <= c;
        if !(is_max || is_min) {
            continue;
        }
        let denom = a - 2.0 * b + c;
        let (shift, value) = if denom.abs() > 0.0 {
            let s = 0.5 * (a - c) / denom;
            (s, b - 0.25 * (a - c) * s)
        } else {
            (0.0, b)
        };
        let h = t[w[1]] - t[w[0]];
        ext.push((t[w[1]] + shift * h, value));
    }
    let swings: Vec<(f64, f64)> =
        ext.windows(2).map(|p| (0.5 * (p[0].0 + p[1].0), (p[1].1 - p[0].1).abs())).collect();
    let first = swings.first()?.1;
    let swings: Vec<(f64, f64)> = swings.into_iter().take_while(|s| s.1 > 0.02 * first).take(20).collect();
    if swings.len() < 3 {
        return None;
    }
    // Least-squares slope of ln(swing) per half cycle.
    let n = swings.len() as f64;
    let xs: Vec<f64> = (0..swings.len()).map(|k| k as f64).collect();
    let ls: Vec<f64> = swings.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let ml = ls.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxl: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - mx) * (l - ml)).sum();
    let per_cycle = -2.0 * sxl / sxx;
    let zeta = per_cycle / (4.0 * std::f64::consts::PI.powi(2) + per_cycle * per_cycle).sqrt();
    let half = (swings.last()?.0 - swings[0].0) / (n - 1.0);
    Some((zeta, 1.0 / (2.0 * half)))
}

/// Samples by which `est` trails `truth`, by least squares over shifts
/// `0..=max_shift`.
pub fn estimate_lag(truth: &[f64], est: &[f64], max_shift: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for k in 0..=max_shift.min(truth.len().saturating_sub(1)) {
        let e: f64 = (k..truth.len()).map(|i| (est[i] - truth[i - k]).powi(2)).sum::<f64>() / (truth.len() - k) as f64;
        if e < best.0 {
            best = (e, k);
        }
    }
    best.1
}

/// Time after `t_event` until `|y - y_final|` stays within `band` up to
/// `t_end`, where `y_final` is the value at `t_end`.
pub fn settling_time(t: &[f64], y: &[f64], t_event: f64, t_end: f64, band: f64) -> Option<f64> {
    let idx: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= t_event && t[k] <= t_end).collect();
    let last = *idx.last()?;
    let fin = y[last];
    let mut settle = t[idx[0]];
    for &k in &idx {
        if (y[k] - fin).abs() > band {
            settle = t[k];
        }
    }
    Some(settle - t_event)
}

fn extreme(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m })
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Standard summary. `events` are the event times of the scenario.
pub fn summarize(trace: &Trace, events: &[f64]) -> Result<Metrics, TraceError> {
    let mut m = Metrics::default();
    let t = trace.column("t")?;
    let df = trace.column("df")?;
    m.set("steps", t.len() as f64);
    m.set("freq_nadir_df", extreme(&df));
    m.set("max_abs_df", extreme(&df).abs());
    for (name, col) in [("omega", "omega"), ("h", "h"), ("h_st", "h_st"), ("q", "q"), ("p_g", "p_g"), ("g", "g")] {
        let c = trace.column(col)?;
        m.set(&format!("{name}_min"), min(&c));
        m.set(&format!("{name}_max"), max(&c));
    }
    let t_end = t.last().copied().unwrap_or(0.0);
    for (k, &te) in events.iter().enumerate() {
        let until = events.get(k + 1).copied().unwrap_or(t_end);
        if let Some(s) = settling_time(&t, &df, te, until, 1e-4) {
            m.set(&format!("df_settling_time_event_{}", k + 1), s);
        }
    }
    for s in ["slack_q", "slack_h_st", "slack_h", "slack_omega"] {
        if trace.has(s) {
            m.set(&format!("{s}_max"), max(&trace.column(s)?));
        }
    }
    if trace.has("mpc_fallback") {
        m.set("mpc_fallbacks", trace.column("mpc_fallback")?.iter().sum());
    }
    if trace.has("mhe_open_loop") {
        m.set("mhe_open_loop_steps", trace.column("mhe_open_loop")?.iter().sum());
    }
    if trace.has("est_h_st") {
        let est = trace.column("est_h_st")?;
        if est.iter().all(|v| v.is_finite()) {
            m.set("h_st_estimate_lag_samples", estimate_lag(&trace.column("h_st")?, &est, 8) as f64);
            let om = trace.column("omega")?;
            let eo = trace.column("est_omega")?;
            let rms = (om.iter().zip(&eo).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / om.len() as f64).sqrt();
            m.set("omega_estimate_rms_error", rms);
        }
    }
    if trace.has("p_tie") {
        let p_tie = trace.column("p_tie")?;
        m.set("p_tie_max_abs", extreme(&p_tie).abs());
        let t0 = events.first().copied().unwrap_or(0.0);
        if let Some((zeta, f)) = log_decrement(&t, &p_tie, t0, t_end) {
            m.set("tie_damping_ratio", zeta);
            m.set("tie_mode_frequency_hz", f);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_decrement_recovers_a_damped_sine() {
        let (zeta, f): (f64, f64) = (0.03, 0.6);
        let wn = 2.0 * std::f64::consts::PI * f;
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let t: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|t| 0.2 + (-zeta * wn * t).exp() * (wd * t).sin()).collect();
        let (z, fr) = log_decrement(&t, &y, 0.0, 20.0).unwrap();
        assert!((z - zeta).abs() < 2e-3, "{z}");
        assert!((fr - wd / (2.0 * std::f64::consts::PI)).abs() < 0.01, "{fr}");
    }

    #[test]
    fn lag_of_a_shifted_ramp() {
        let truth: Vec<f64> = (0..50).map(|k| (k as f64 * 0.2).sin()).collect();
        let est: Vec<f64> = (0..50).map(|k| if k >= 2 { truth[k - 2] } else { truth[0] }).collect();
        assert_eq!(estimate_lag(&truth, &est, 5), 2);
        assert_eq!(estimate_lag(&truth, &truth, 5), 0);
    }

    #[test]
    fn settling_of_a_decay() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        let s = settling_time(&t, &y, 0.0, 9.9, 1e-2).unwrap();
        assert!((s - 4.5).abs() < 0.11, "{s}");
    }

    #[test]
    fn metrics_text_round_trip() {
        let mut m = Metrics::default();
        m.set("a", 1.5);
        m.set("b", -2e-9);
        m.set("a", 2.5);
        let back = Metrics::parse(&m.to_text());
        assert_eq!(back.get("a"), Some(2.5));
        assert_eq!(back.get("b"), Some(-2e-9));
        assert_eq!(back.entries.len(), 2);
    }
}
