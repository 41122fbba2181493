use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regulation demand `R(t)` sampled on the tick grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationSignal {
    /// Sample spacing in minutes.
    pub dt_min: f64,
    /// `(t_min, kW)` pairs on a uniform grid.
    pub samples: Vec<(f64, f64)>,
    pub r_r: f64,
    pub r_b: f64,
    /// Samples clipped to `[-r_r, r_r]` during construction.
    pub clipped: usize,
}

impl RegulationSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn value(&self, k: usize) -> f64 {
        self.samples[k].1
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }

    fn from_values(values: Vec<f64>, t0: f64, dt_min: f64, r_r: f64, r_b: f64) -> Self {
        let mut clipped = 0;
        let samples = values
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let c = v.clamp(-r_r, r_r);
                if c != v {
                    clipped += 1;
                }
                (t0 + k as f64 * dt_min, c)
            })
            .collect();
        RegulationSignal { dt_min, samples, r_r, r_b, clipped }
    }
}

/// Reads a `t_s,reg_kw` CSV and resamples it onto a `dt_s` grid by linear interpolation.
pub fn ingest_signal(path: &Path, dt_s: f64, r_r: f64, r_b: f64) -> Result<RegulationSignal> {
    if !(dt_s > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt_s}")));
    }
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 columns, found {}", record.len())));
        }
        let field = |i: usize, name: &str| {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("{name} {:?} is not a number", &record[i])))
        };
        let t = field(0, "time")?;
        let v = field(1, "value")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(parse_err(line, format!("time {t} does not increase (previous {prev})")));
            }
        }
        times.push(t);
        values.push(v);
    }
    if times.is_empty() {
        return Err(parse_err(1, "signal file has no samples".into()));
    }

    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n = (span / dt_s + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut j = 0;
    for k in 0..=n {
        let t = t0 + k as f64 * dt_s;
        while j + 1 < times.len() && times[j + 1] <= t + 1e-9 * dt_s {
            j += 1;
        }
        let v = if j + 1 == times.len() || (t - times[j]).abs() <= 1e-9 * dt_s {
            values[j]
        } else {
            let w = (t - times[j]) / (times[j + 1] - times[j]);
            values[j] + w * (values[j + 1] - values[j])
        };
        out.push(v);
    }
    let signal = RegulationSignal::from_values(out, t0 / 60.0, dt_s / 60.0, r_r, r_b);
    if signal.clipped > 0 {
        warn!("{}: clipped {} samples to +-{r_r} kW", path.display(), signal.clipped);
    }
    Ok(signal)
}

/// Seeded random walk reflected at `+-r_r`, with increments of standard deviation `volatility * dt`.
pub fn generate_synthetic(seed: u64, r_r: f64, duration_min: f64, dt_min: f64, volatility: f64) -> Result<RegulationSignal> {
    if !(volatility >= 0.0 && volatility.is_finite()) {
        return Err(Error::Config(format!("volatility must be >= 0, got {volatility}")));
    }
    if !(dt_min > 0.0) || !(duration_min >= 0.0) {
        return Err(Error::Config("synthetic signal needs dt > 0 and duration >= 0".into()));
    }
    let ticks = (duration_min / dt_min).round() as usize;
    let mut values = Vec::with_capacity(ticks + 1);
    values.push(0.0);
    if volatility == 0.0 || r_r == 0.0 {
        values.resize(ticks + 1, 0.0);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, volatility * dt_min).map_err(|e| Error::Config(e.to_string()))?;
        let mut v: f64 = 0.0;
        for _ in 0..ticks {
            v += normal.sample(&mut rng);
            // reflect until inside; a single step can overshoot by more than the band only for huge volatility
            loop {
                if v > r_r {
                    v = 2.0 * r_r - v;
                } else if v < -r_r {
                    v = -2.0 * r_r - v;
                } else {
                    break;
                }
            }
            values.push(v);
        }
    }
    Ok(RegulationSignal::from_values(values, 0.0, dt_min, r_r, 0.0))
}

/// Piecewise-linear T-50 waveform over `[0, 50]` minutes in units of `R_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T50Profile {
    pub knots: Vec<(f64, f64)>,
}

pub const T50_DURATION_MIN: f64 = 50.0;

impl Default for T50Profile {
    /// Up to `+R_r` in 5 minutes, hold 5, back to zero, rest, then the mirror image.
    fn default() -> Self {
        T50Profile {
            knots: vec![
                (0.0, 0.0),
                (5.0, 1.0),
                (10.0, 1.0),
                (15.0, 0.0),
                (30.0, 0.0),
                (35.0, -1.0),
                (40.0, -1.0),
                (45.0, 0.0),
                (50.0, 0.0),
            ],
        }
    }
}

impl T50Profile {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        let p = T50Profile { knots };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.knots;
        if k.len() < 2 || k[0].0 != 0.0 || k[k.len() - 1].0 != T50_DURATION_MIN {
            return Err(Error::Config("T-50 profile must start at minute 0 and end at minute 50".into()));
        }
        if k.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("T-50 profile knot times must increase".into()));
        }
        if let Some(&(t, f)) = k.iter().find(|(_, f)| !(f.abs() <= 1.0)) {
            return Err(Error::Config(format!("T-50 profile exceeds R_r at minute {t} (fraction {f})")));
        }
        Ok(())
    }

    /// Fraction of `R_r` at minute `t`.
    pub fn fraction(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, f0), (t1, f1)) = (w[0], w[1]);
            if t <= t1 {
                return f0 + (t - t0) / (t1 - t0) * (f1 - f0);
            }
        }
        k[k.len() - 1].1
    }

    /// Whether minute `t` lies on a sloped segment (where rate of response is judged).
    pub fn is_ramping(&self, t: f64) -> bool {
        self.knots.windows(2).any(|w| w[0].0 <= t && t <= w[1].0 && w[0].1 != w[1].1)
    }
}

pub fn generate_t50(r_r: f64, profile: &T50Profile, dt_min: f64) -> Result<RegulationSignal> {
    profile.validate()?;
    if !(r_r >= 0.0) {
        return Err(Error::Config(format!("R_r must be >= 0, got {r_r}")));
    }
    let ticks = (T50_DURATION_MIN / dt_min).round() as usize;
    let values = (0..=ticks).map(|k| r_r * profile.fraction(k as f64 * dt_min)).collect();
    Ok(RegulationSignal::from_values(values, 0.0, dt_min, r_r, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn identity_ingestion() {
        let f = csv_file("t_s,reg_kw\n0,1.5\n4,-2\n8,0.25\n");
        let s = ingest_signal(f.path(), 4.0, 10.0, 0.0).unwrap();
        assert_eq!(s.values(), vec![1.5, -2.0, 0.25]);
        assert_eq!(s.clipped, 0);
    }

    #[test]
    fn exact_subsampling() {
        let body: String = std::iter::once("t_s,reg_kw\n".to_string())
            .chain((0..21).map(|k| format!("{},{}\n", 2 * k, (k as f64 * 0.37).sin())))
            .collect();
        let s = ingest_signal(csv_file(&body).path(), 4.0, 10.0, 0.0).unwrap();
        let want: Vec<f64> = (0..21).step_by(2).map(|k| (k as f64 * 0.37).sin()).collect();
        assert_eq!(s.values(), want);
    }

    #[test]
    fn interpolates_between_samples() {
        let f = csv_file("t_s,reg_kw\n0,0\n10,10\n");
        let s = ingest_signal(f.path(), 4.0, 100.0, 0.0).unwrap();
        assert_eq!(s.values(), vec![0.0, 4.0, 8.0]);
    }

    #[test]
    fn malformed_rows_report_line() {
        let f = csv_file("t_s,reg_kw\n8,1\n12,abc\n");
        match ingest_signal(f.path(), 4.0, 10.0, 0.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = csv_file("t_s,reg_kw\n0,1\n4,1\n4,2\n");
        assert!(matches!(ingest_signal(f.path(), 4.0, 10.0, 0.0), Err(Error::Parse { line: 4, .. })));
        let f = csv_file("t_s,reg_kw\n");
        assert!(matches!(ingest_signal(f.path(), 4.0, 10.0, 0.0), Err(Error::Parse { .. })));
    }

    #[test]
    fn clipping_is_counted() {
        let f = csv_file("t_s,reg_kw\n0,5\n4,-50\n8,50\n");
        let s = ingest_signal(f.path(), 4.0, 10.0, 0.0).unwrap();
        assert_eq!(s.values(), vec![5.0, -10.0, 10.0]);
        assert_eq!(s.clipped, 2);
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = generate_synthetic(42, 3.0, 10_000.0 / 15.0, 1.0 / 15.0, 20.0).unwrap();
        let b = generate_synthetic(42, 3.0, 10_000.0 / 15.0, 1.0 / 15.0, 20.0).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 10_000);
        assert!(a.values().iter().all(|v| v.abs() <= 3.0));
        let c = generate_synthetic(43, 3.0, 100.0, 1.0 / 15.0, 20.0).unwrap();
        assert_ne!(a.values()[..100], c.values()[..100]);
        let z = generate_synthetic(1, 3.0, 10.0, 1.0 / 15.0, 0.0).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn t50_default_shape() {
        let p = T50Profile::default();
        let s = generate_t50(200.0, &p, 1.0 / 15.0).unwrap();
        assert_eq!(s.len(), 751);
        assert_eq!(s.value(75), 200.0);
        assert_eq!(s.value(150), 200.0);
        assert_eq!(s.value(37 * 15), -200.0);
        // accumulated regulation peaks at 10 R_r minutes
        let mut acc: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for k in 0..750 {
            acc += 0.5 * (s.value(k) + s.value(k + 1)) / 15.0;
            peak = peak.max(acc);
        }
        assert!((peak - 10.0 * 200.0).abs() < 1e-6);
        let zero = generate_t50(0.0, &p, 1.0 / 15.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        assert!(T50Profile::new(vec![(0.0, 0.0), (50.0, 1.5)]).is_err());
    }
}
