//! Bandwidth traces, the Gaussian throughput model, and synthetic trace
//! generation.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A timestamped throughput trace, piecewise constant between samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    /// (timestamp_s, throughput_kbps), timestamps strictly increasing.
    pub samples: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Trace("trace has no samples".into()));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Trace(format!(
                    "timestamps must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, thr)) = samples.iter().find(|(_, thr)| !(*thr > 0.0)) {
            return Err(Error::Trace(format!(
                "throughput must be > 0 (got {thr} at t={t})"
            )));
        }
        Ok(Self { samples })
    }

    /// Throughput at time `t`, holding the last sample value. Before the
    /// first sample the first value applies; past the end the trace loops.
    pub fn throughput_at(&self, t: f64) -> f64 {
        let span = self.samples.last().unwrap().0 - self.samples[0].0;
        let t = if span > 0.0 && t > self.samples.last().unwrap().0 {
            self.samples[0].0 + (t - self.samples[0].0) % span
        } else {
            t
        };
        match self
            .samples
            .binary_search_by(|(ts, _)| ts.partial_cmp(&t).unwrap())
        {
            Ok(i) => self.samples[i].1,
            Err(0) => self.samples[0].1,
            Err(i) => self.samples[i - 1].1,
        }
    }

    /// Read the `timestamp_s,throughput_kbps` CSV format.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())
            .map_err(|e| Error::Parse(format!("trace csv: {e}")))?;
        let mut samples = Vec::new();
        for row in reader.deserialize::<(f64, f64)>() {
            let (t, thr) = row.map_err(|e| Error::Parse(format!("trace csv row: {e}")))?;
            samples.push((t, thr));
        }
        Self::new(samples)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer =
            csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Parse(e.to_string()))?;
        writer
            .write_record(["timestamp_s", "throughput_kbps"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (t, thr) in &self.samples {
            writer
                .write_record([t.to_string(), thr.to_string()])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Normal throughput model fitted over a trailing window of observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthModel {
    pub mean_kbps: f64,
    pub stddev_kbps: f64,
    /// Number of samples the fit actually used.
    pub window: usize,
}

impl BandwidthModel {
    /// Draw one throughput value, truncated below at 1 kbps. The sampling
    /// stddev is floored at 1 kbps so the draw is never degenerate.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let sigma = self.stddev_kbps.max(1.0);
        let draw = self.mean_kbps + sigma * standard_normal(rng);
        draw.max(1.0)
    }
}

use crate::rng::gauss as standard_normal;

/// Fit mean and sample standard deviation (n-1 denominator) over the last
/// `window` samples.
pub fn fit_bandwidth_model(samples: &[f64], window: usize) -> Result<BandwidthModel> {
    let start = samples.len().saturating_sub(window);
    let tail = &samples[start..];
    if tail.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: tail.len(),
        });
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BandwidthModel {
        mean_kbps: mean,
        stddev_kbps: var.sqrt(),
        window: tail.len(),
    })
}

/// Families of synthetic traces shipped with the harness configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFamily {
    /// Comfortably above the top ladder rung.
    SteadyHigh,
    /// Hovers around the middle rungs.
    SteadyMid,
    /// Mid-band baseline with short deep dips.
    Dippy,
    /// Near or below the lowest rung.
    LowBand,
    /// Good baseline with sustained crash windows.
    Crashy,
}

/// Spec for one synthetic trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceSpec {
    pub family: TraceFamily,
    pub duration_s: f64,
    pub step_s: f64,
}

/// Generate a synthetic trace; deterministic per (root_seed, trace_id).
pub fn generate_trace(spec: &TraceSpec, root_seed: u64, trace_id: u64) -> BandwidthTrace {
    let mut r = rng::substream(root_seed, &[rng::tags::TRACE, trace_id]);
    let steps = (spec.duration_s / spec.step_s).ceil() as usize;
    let mut samples = Vec::with_capacity(steps);

    let (base, jitter) = match spec.family {
        TraceFamily::SteadyHigh => (r.gen_range(8_000.0..12_000.0), 600.0),
        TraceFamily::SteadyMid => (r.gen_range(2_400.0..4_200.0), 450.0),
        TraceFamily::Dippy => (r.gen_range(2_800.0..5_000.0), 400.0),
        TraceFamily::LowBand => (r.gen_range(700.0..1_400.0), 200.0),
        TraceFamily::Crashy => (r.gen_range(3_500.0..6_000.0), 400.0),
    };

    // Event windows that override the baseline.
    let mut dips: Vec<(f64, f64, f64)> = Vec::new(); // (start, end, level)
    match spec.family {
        TraceFamily::Dippy => {
            let mut t = r.gen_range(6.0..16.0);
            while t < spec.duration_s {
                let len = r.gen_range(2.0..5.0);
                let depth = r.gen_range(400.0..900.0);
                dips.push((t, t + len, depth));
                t += len + r.gen_range(9.0..22.0);
            }
        }
        TraceFamily::Crashy => {
            let mut t = r.gen_range(8.0..20.0);
            while t < spec.duration_s {
                let len = r.gen_range(5.0..10.0);
                let depth = r.gen_range(300.0..700.0);
                dips.push((t, t + len, depth));
                t += len + r.gen_range(18.0..36.0);
            }
        }
        _ => {}
    }

    for i in 0..steps {
        let t = i as f64 * spec.step_s;
        let mut v = base + jitter * standard_normal(&mut r);
        for &(s, e, depth) in &dips {
            if t >= s && t < e {
                v = depth + 60.0 * standard_normal(&mut r).abs();
            }
        }
        samples.push((t, v.max(50.0)));
    }
    BandwidthTrace::new(samples).expect("generated trace is valid")
}

/// The default 20-trace corpus layout used by the shipped experiment configs.
pub fn default_corpus(root_seed: u64, count: usize, duration_s: f64) -> Vec<BandwidthTrace> {
    let families = [
        TraceFamily::Dippy,
        TraceFamily::Dippy,
        TraceFamily::SteadyMid,
        TraceFamily::Dippy,
        TraceFamily::Crashy,
        TraceFamily::Dippy,
        TraceFamily::LowBand,
        TraceFamily::SteadyHigh,
        TraceFamily::Dippy,
        TraceFamily::Crashy,
    ];
    (0..count)
        .map(|i| {
            let spec = TraceSpec {
                family: families[i % families.len()],
                duration_s,
                step_s: 1.0,
            };
            generate_trace(&spec, root_seed, i as u64)
        })
        .collect()
}
