//! Synthetic hand-motion recordings at 30 Hz and their slicing into
//! supervised windows.
//!
//! A recording is a chain of motion primitives: rests with slow drift,
//! minimum-jerk reaches, minimum-jerk circular arcs, and rapid vertical
//! up-down bursts with a trapezoidal speed profile. Additive Gaussian sensor
//! noise is applied last.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Sample, TrajectoryWindow, SAMPLE_DT};
use crate::error::{Error, Result};

/// Rest-to-rest motion along a line with bounded acceleration and speed.
/// Falls back to a triangular profile when the distance is too short to
/// reach the requested peak speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidProfile {
    pub distance: f64,
    pub peak_speed: f64,
    pub accel: f64,
}

impl TrapezoidProfile {
    pub fn new(distance: f64, peak_speed: f64, accel: f64) -> Self {
        let peak_speed = peak_speed.min((distance * accel).sqrt());
        Self { distance, peak_speed, accel }
    }

    fn ramp_time(&self) -> f64 {
        self.peak_speed / self.accel
    }

    pub fn duration(&self) -> f64 {
        let ta = self.ramp_time();
        let cruise = (self.distance - self.peak_speed * ta) / self.peak_speed;
        2.0 * ta + cruise.max(0.0)
    }

    /// Distance travelled after `t` seconds, clamped to `[0, distance]`.
    pub fn position(&self, t: f64) -> f64 {
        let (v, a) = (self.peak_speed, self.accel);
        let ta = self.ramp_time();
        let total = self.duration();
        if t <= 0.0 {
            0.0
        } else if t < ta {
            0.5 * a * t * t
        } else if t < total - ta {
            0.5 * a * ta * ta + v * (t - ta)
        } else if t < total {
            let r = total - t;
            self.distance - 0.5 * a * r * r
        } else {
            self.distance
        }
    }

    pub fn speed(&self, t: f64) -> f64 {
        let ta = self.ramp_time();
        let total = self.duration();
        if t <= 0.0 || t >= total {
            0.0
        } else if t < ta {
            self.accel * t
        } else if t < total - ta {
            self.peak_speed
        } else {
            self.accel * (total - t)
        }
    }
}

/// Minimum-jerk progress `10s³ − 15s⁴ + 6s⁵` for `s ∈ [0, 1]`.
pub fn minimum_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Peak of `d/ds minimum_jerk`.
const MIN_JERK_PEAK_RATE: f64 = 1.875;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionMix {
    pub rest: f64,
    pub reach: f64,
    pub arc: f64,
    pub burst: f64,
}

impl Default for MotionMix {
    fn default() -> Self {
        Self { rest: 0.35, reach: 0.35, arc: 0.15, burst: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of supervised windows to emit.
    pub sequences: usize,
    pub t_in: usize,
    pub t_out: usize,
    /// Additive sensor noise per axis (m).
    pub noise_std: f64,
    /// Windows containing a faster finite-difference speed are discarded.
    pub max_speed: f64,
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    pub mix: MotionMix,
    pub recording_seconds: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 5000,
            t_in: 15,
            t_out: 30,
            noise_std: 0.0005,
            max_speed: 7.5,
            center: [0.45, 0.0, 0.25],
            half_extent: [0.2, 0.3, 0.15],
            mix: MotionMix::default(),
            recording_seconds: 60.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mix;
        let weights = [m.rest, m.reach, m.arc, m.burst];
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("motion mix weights must be nonnegative with a positive sum".into()));
        }
        if self.t_in < 2 || self.t_out < 1 {
            return Err(Error::Config("need t_in ≥ 2 and t_out ≥ 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.max_speed > 0.0) || self.half_extent.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("noise, speed limit and workspace extent must be valid".into()));
        }
        let span = (self.t_in + self.t_out) as f64 * SAMPLE_DT;
        if !(self.recording_seconds >= span) {
            return Err(Error::Config("recordings must be at least one window long".into()));
        }
        Ok(())
    }
}

/// Uniformly sampled positions starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub times: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl Recording {
    pub fn dt(&self) -> f64 {
        let n = self.times.len();
        if n < 2 {
            return SAMPLE_DT;
        }
        (self.times[n - 1] - self.times[0]) / (n - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub recordings: Vec<Recording>,
    pub samples: Vec<Sample>,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    center: Vector3<f64>,
    extent: Vector3<f64>,
}

impl Generator<'_> {
    fn random_unit(&mut self) -> Vector3<f64> {
        loop {
            let v = Vector3::from_fn(|_, _| self.rng.sample::<f64, _>(StandardNormal));
            let n = v.norm();
            if n > 1e-9 {
                return v / n;
            }
        }
    }

    fn clamp_to_box(&self, p: Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.center[i] - self.extent[i], self.center[i] + self.extent[i]))
    }

    fn steps(duration: f64) -> usize {
        (duration / SAMPLE_DT).ceil().max(1.0) as usize
    }

    fn rest(&mut self, p: Vector3<f64>, out: &mut Vec<Vector3<f64>>) {
        let dur = self.rng.random_range(0.3..1.5);
        let v = self.random_unit() * self.rng.random_range(0.0..0.01);
        for k in 1..=Self::steps(dur) {
            out.push(p + v * (k as f64 * SAMPLE_DT));
        }
    }

    fn reach(&mut self, p: Vector3<f64>, out: &mut Vec<Vector3<f64>>) {
        let dist = self.rng.random_range(0.10..0.35);
        let dir = self.random_unit();
        let mut target = self.clamp_to_box(p + dir * dist);
        if (target - p).norm() < 0.05 {
            let inward = (self.center - p).try_normalize(1e-9).unwrap_or(-dir);
            target = self.clamp_to_box(p + inward * dist);
        }
        let d = (target - p).norm();
        let peak = self.rng.random_range(0.2..0.9);
        let dur = (MIN_JERK_PEAK_RATE * d / peak).max(SAMPLE_DT);
        for k in 1..=Self::steps(dur) {
            out.push(p + (target - p) * minimum_jerk(k as f64 * SAMPLE_DT / dur));
        }
    }

    fn arc(&mut self, p: Vector3<f64>, out: &mut Vec<Vector3<f64>>) {
        let radius = self.rng.random_range(0.05..0.15);
        let e1 = self.random_unit();
        let e2 = {
            let r = self.random_unit();
            let o = r - e1 * e1.dot(&r);
            if o.norm() < 1e-6 {
                e1.cross(&Vector3::z()).normalize()
            } else {
                o.normalize()
            }
        };
        let span = self.rng.random_range(0.5 * std::f64::consts::PI..1.5 * std::f64::consts::PI);
        let peak = self.rng.random_range(0.2..0.7);
        let dur = MIN_JERK_PEAK_RATE * radius * span / peak;
        let c = p - e1 * radius;
        for k in 1..=Self::steps(dur) {
            let th = span * minimum_jerk(k as f64 * SAMPLE_DT / dur);
            out.push(c + (e1 * th.cos() + e2 * th.sin()) * radius);
        }
    }

    fn burst(&mut self, p: Vector3<f64>, out: &mut Vec<Vector3<f64>>) {
        let up = self.rng.random_range(0.15..0.30);
        let prof = TrapezoidProfile::new(up, self.rng.random_range(0.5..1.0), 3.5);
        let hold = self.rng.random_range(0.05..0.3);
        let t_up = prof.duration();
        let total = 2.0 * t_up + hold;
        for k in 1..=Self::steps(total) {
            let t = k as f64 * SAMPLE_DT;
            let h = if t <= t_up {
                prof.position(t)
            } else if t <= t_up + hold {
                up
            } else {
                up - prof.position(t - t_up - hold)
            };
            out.push(p + Vector3::z() * h);
        }
    }

    fn recording(&mut self) -> Recording {
        let n = (self.cfg.recording_seconds / SAMPLE_DT).round() as usize;
        let start = Vector3::from_fn(|i, _| self.center[i] + self.rng.random_range(-0.5..0.5) * self.extent[i]);
        let mut clean = vec![start];
        let m = &self.cfg.mix;
        let total = m.rest + m.reach + m.arc + m.burst;
        while clean.len() < n {
            let p = *clean.last().unwrap();
            let pick = self.rng.random::<f64>() * total;
            if pick < m.rest {
                self.rest(p, &mut clean);
            } else if pick < m.rest + m.reach {
                self.reach(p, &mut clean);
            } else if pick < m.rest + m.reach + m.arc {
                self.arc(p, &mut clean);
            } else {
                self.burst(p, &mut clean);
            }
        }
        clean.truncate(n);
        let sd = self.cfg.noise_std;
        let noise = Normal::new(0.0, sd).expect("validated noise");
        let rng = &mut self.rng;
        let positions = clean
            .into_iter()
            .map(|p| if sd > 0.0 { p + Vector3::from_fn(|_, _| noise.sample(rng)) } else { p })
            .collect();
        Recording { times: (0..n).map(|i| i as f64 * SAMPLE_DT).collect(), positions }
    }
}

/// Largest finite-difference speed along `positions`.
pub fn max_speed(positions: &[Vector3<f64>], dt: f64) -> f64 {
    positions.windows(2).map(|w| (w[1] - w[0]).norm() / dt).fold(0.0, f64::max)
}

/// Mean finite-difference speed along `positions`.
pub fn mean_speed(positions: &[Vector3<f64>], dt: f64) -> f64 {
    if positions.len() < 2 {
        return 0.0;
    }
    positions.windows(2).map(|w| (w[1] - w[0]).norm() / dt).sum::<f64>() / (positions.len() - 1) as f64
}

/// Non-overlapping `(t_in, t_out)` windows of a recording.
pub fn windows(rec: &Recording, t_in: usize, t_out: usize) -> Vec<Sample> {
    let span = t_in + t_out;
    let dt = rec.dt();
    (0..rec.positions.len() / span)
        .map(|w| {
            let s = w * span;
            let window = TrajectoryWindow {
                positions: rec.positions[s..s + t_in].to_vec(),
                t_last: rec.times[s + t_in - 1],
                dt,
            };
            Sample { window, truth: rec.positions[s + t_in..s + span].to_vec() }
        })
        .collect()
}

/// Full positions (history then future) of a sample.
pub fn sample_path(s: &Sample) -> Vec<Vector3<f64>> {
    s.window.positions.iter().chain(s.truth.iter()).copied().collect()
}

pub fn synth_dataset(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut gen = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        center: Vector3::from(cfg.center),
        extent: Vector3::from(cfg.half_extent),
    };
    let mut recordings = Vec::new();
    let mut samples = Vec::with_capacity(cfg.sequences);
    while samples.len() < cfg.sequences {
        let rec = gen.recording();
        for s in windows(&rec, cfg.t_in, cfg.t_out) {
            if samples.len() < cfg.sequences && max_speed(&sample_path(&s), s.window.dt) <= cfg.max_speed {
                samples.push(s);
            }
        }
        recordings.push(rec);
    }
    Ok(SynthCorpus { recordings, samples })
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
}

pub fn write_recording_csv(path: &Path, rec: &Recording) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for (t, p) in rec.times.iter().zip(&rec.positions) {
        w.serialize(CsvRow { t: *t, x: p.x, y: p.y, z: p.z }).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_recording_csv(path: &Path) -> Result<Recording> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?;
    if header != vec!["t", "x", "y", "z"] {
        return Err(Error::InvalidInput(format!("{}: expected header t,x,y,z", path.display())));
    }
    let mut rec = Recording { times: Vec::new(), positions: Vec::new() };
    for row in r.deserialize() {
        let row: CsvRow = row.map_err(|e| Error::csv(path, e))?;
        if let Some(&prev) = rec.times.last() {
            if !(row.t > prev) {
                return Err(Error::InvalidInput(format!("{}: timestamps must increase", path.display())));
            }
        }
        rec.times.push(row.t);
        rec.positions.push(Vector3::new(row.x, row.y, row.z));
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_limits() {
        let p = TrapezoidProfile::new(0.30, 1.0, 3.5);
        assert!((p.position(p.duration()) - 0.30).abs() < 1e-12);
        let dt = 1e-4;
        let mut vmax: f64 = 0.0;
        let mut t = 0.0;
        while t < p.duration() {
            let v = (p.position(t + dt) - p.position(t)) / dt;
            vmax = vmax.max(v);
            t += dt;
        }
        assert!((vmax - 1.0).abs() < 0.01);
        let short = TrapezoidProfile::new(0.01, 1.0, 3.5);
        assert!(short.peak_speed < 1.0);
        assert!((short.position(short.duration()) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn minimum_jerk_endpoints() {
        assert_eq!(minimum_jerk(0.0), 0.0);
        assert_eq!(minimum_jerk(1.0), 1.0);
        assert!((minimum_jerk(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn windows_slice_contiguously() {
        let rec = Recording {
            times: (0..100).map(|i| i as f64 * SAMPLE_DT).collect(),
            positions: (0..100).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
        };
        let w = windows(&rec, 15, 30);
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].window.positions[0].x, 45.0);
        assert_eq!(w[1].truth[0].x, 60.0);
        assert!((w[0].window.t_last - 14.0 * SAMPLE_DT).abs() < 1e-12);
    }

    #[test]
    fn small_corpus_is_deterministic() {
        let cfg = SynthConfig { sequences: 40, recording_seconds: 10.0, ..Default::default() };
        let a = synth_dataset(&cfg, 9).unwrap();
        let b = synth_dataset(&cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 40);
        assert_ne!(a.samples, synth_dataset(&cfg, 10).unwrap().samples);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SynthConfig { sequences: 5, recording_seconds: 5.0, ..Default::default() };
        let rec = synth_dataset(&cfg, 1).unwrap().recordings.remove(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.csv");
        write_recording_csv(&path, &rec).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("t,x,y,z\n"));
        assert_eq!(read_recording_csv(&path).unwrap(), rec);
    }
}
