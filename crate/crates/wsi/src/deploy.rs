//! Deployment arithmetic: overlap-gated triggering, real-time-factor
//! benchmarking, and the energy story (per-device reduction factors and the
//! fleet-scale projection).
//!
//! The scenario defaults are the measured deployment figures this arithmetic
//! was calibrated against; every field can be overridden from a key=value
//! file. Power is modeled as average watts times active time, with the
//! reported model watts already net of the machine's idle baseline.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use crate::model::{infer, ClassScores, ClipInput, Model};
use crate::{Error, Result};

/// Per-channel speech-activity intervals on a shared meeting timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityTrace {
    channels: BTreeMap<usize, Vec<(f64, f64)>>,
}

impl ActivityTrace {
    /// Build from (channel, start_s, end_s) rows in any order. Intervals are
    /// sorted per channel; overlap inside one channel is an error.
    pub fn from_intervals(rows: &[(usize, f64, f64)]) -> Result<Self> {
        let mut channels: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for &(ch, start, end) in rows {
            if !start.is_finite() || !end.is_finite() || start < 0.0 {
                return Err(Error::InvalidTrace(format!(
                    "channel {ch}: bad interval [{start}, {end}]"
                )));
            }
            if end <= start {
                return Err(Error::InvalidTrace(format!(
                    "channel {ch}: interval [{start}, {end}] must end after it starts"
                )));
            }
            channels.entry(ch).or_default().push((start, end));
        }
        for (ch, spans) in &mut channels {
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in spans.windows(2) {
                if w[1].0 < w[0].1 {
                    return Err(Error::InvalidTrace(format!(
                        "channel {ch}: intervals [{}, {}] and [{}, {}] overlap",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    )));
                }
            }
        }
        Ok(Self { channels })
    }

    #[must_use]
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Latest interval end, i.e. the covered meeting length.
    #[must_use]
    pub fn span_s(&self) -> f64 {
        self.channels
            .values()
            .flat_map(|v| v.iter().map(|(_, e)| *e))
            .fold(0.0, f64::max)
    }

    pub fn intervals(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.channels
            .iter()
            .flat_map(|(ch, spans)| spans.iter().map(move |&(s, e)| (*ch, s, e)))
    }
}

/// Parse the trace file format: one `channel start_s end_s` row per line,
/// `#` comments and blank lines ignored.
pub fn parse_trace(text: &str) -> Result<ActivityTrace> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                file_kind: "trace",
                line: line_no,
                msg: format!("{} fields, expected `channel start end`", fields.len()),
            });
        }
        let ch: usize = fields[0].parse().map_err(|_| Error::Parse {
            file_kind: "trace",
            line: line_no,
            msg: format!("bad channel index {:?}", fields[0]),
        })?;
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                file_kind: "trace",
                line: line_no,
                msg: format!("bad time {s:?}"),
            })
        };
        rows.push((ch, num(fields[1])?, num(fields[2])?));
    }
    ActivityTrace::from_intervals(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapEvent {
    pub onset_s: f64,
    pub duration_s: f64,
}

/// Maximal intervals where at least two channels speak at once, filtered to
/// `min_overlap_s`. Interval ends are exclusive: a channel handing off to
/// another at the same instant does not create an overlap, while one channel
/// continuing through another's start/stop boundary does not split one.
pub fn detect_overlaps(trace: &ActivityTrace, min_overlap_s: f64) -> Result<Vec<OverlapEvent>> {
    if trace.channel_count() < 2 {
        return Err(Error::InvalidTrace(format!(
            "overlap detection needs at least 2 channels, trace has {}",
            trace.channel_count()
        )));
    }
    // (time, is_end); starts sort before ends at equal time so that a
    // channel whose adjacent intervals touch stays continuously active.
    let mut events: Vec<(f64, bool)> = Vec::new();
    for (_, start, end) in trace.intervals() {
        events.push((start, false));
        events.push((end, true));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = Vec::new();
    let mut active = 0usize;
    let mut overlap_from: Option<f64> = None;
    for (t, is_end) in events {
        if is_end {
            active -= 1;
            if active == 1 {
                let from = overlap_from.take().expect("overlap must have opened");
                let duration = t - from;
                if duration >= min_overlap_s && duration > 0.0 {
                    out.push(OverlapEvent {
                        onset_s: from,
                        duration_s: duration,
                    });
                }
            }
        } else {
            active += 1;
            if active == 2 {
                overlap_from = Some(t);
            }
        }
    }
    Ok(out)
}

/// Average seconds of audio per detected overlap: the cadence an
/// overlap-gated system triggers at.
pub fn trigger_interval(total_audio_s: f64, n_overlaps: usize) -> Result<f64> {
    if n_overlaps == 0 {
        return Err(Error::MetricUndefined(
            "trigger interval is undefined with zero overlaps".into(),
        ));
    }
    Ok(total_audio_s / n_overlaps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReduction {
    /// Fewer triggers: gated interval over naive interval.
    pub gating_factor: f64,
    /// Faster inference: old seconds over new seconds.
    pub speedup_factor: f64,
    pub combined: f64,
}

pub fn energy_reduction(
    naive_interval_s: f64,
    gated_interval_s: f64,
    t_infer_old_s: f64,
    t_infer_new_s: f64,
) -> Result<EnergyReduction> {
    for (name, v) in [
        ("naive_interval_s", naive_interval_s),
        ("gated_interval_s", gated_interval_s),
        ("t_infer_old_s", t_infer_old_s),
        ("t_infer_new_s", t_infer_new_s),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    let gating_factor = gated_interval_s / naive_interval_s;
    let speedup_factor = t_infer_old_s / t_infer_new_s;
    Ok(EnergyReduction {
        gating_factor,
        speedup_factor,
        combined: gating_factor * speedup_factor,
    })
}

/// Inputs for the fleet projection. Defaults are the measured deployment:
/// 7.16 W idle baseline, 4.84 W for the original model and 0.19 W for the
/// compressed one (both net of baseline), overlap gating at one trigger per
/// 17 s versus a naive 5 s cadence, inference at 1.6 s versus 0.22 s,
/// 300M users, 208.8 active hours per user-year, and a 3,128 kWh yearly
/// per-capita electricity consumption for the people-equivalent conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyScenario {
    pub baseline_watts: f64,
    pub model_watts_old: f64,
    pub model_watts_new: f64,
    pub trigger_interval_s: f64,
    pub naive_interval_s: f64,
    pub inference_seconds_old: f64,
    pub inference_seconds_new: f64,
    pub users: u64,
    pub active_hours_per_year: f64,
    pub per_capita_kwh: f64,
}

impl Default for EnergyScenario {
    fn default() -> Self {
        Self {
            baseline_watts: 7.16,
            model_watts_old: 4.84,
            model_watts_new: 0.19,
            trigger_interval_s: 17.0,
            naive_interval_s: 5.0,
            inference_seconds_old: 1.6,
            inference_seconds_new: 0.22,
            users: 300_000_000,
            active_hours_per_year: 208.8,
            per_capita_kwh: 3128.0,
        }
    }
}

impl EnergyScenario {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("baseline_watts", self.baseline_watts),
            ("model_watts_old", self.model_watts_old),
            ("model_watts_new", self.model_watts_new),
            ("trigger_interval_s", self.trigger_interval_s),
            ("naive_interval_s", self.naive_interval_s),
            ("inference_seconds_old", self.inference_seconds_old),
            ("inference_seconds_new", self.inference_seconds_new),
            ("active_hours_per_year", self.active_hours_per_year),
            ("per_capita_kwh", self.per_capita_kwh),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "scenario {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        format!(
            "baseline_watts={}\nmodel_watts_old={}\nmodel_watts_new={}\n\
             trigger_interval_s={}\nnaive_interval_s={}\ninference_seconds_old={}\n\
             inference_seconds_new={}\nusers={}\nactive_hours_per_year={}\nper_capita_kwh={}\n",
            self.baseline_watts,
            self.model_watts_old,
            self.model_watts_new,
            self.trigger_interval_s,
            self.naive_interval_s,
            self.inference_seconds_old,
            self.inference_seconds_new,
            self.users,
            self.active_hours_per_year,
            self.per_capita_kwh,
        )
    }

    /// Parse key=value lines; unlisted fields keep their defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                file_kind: "scenario",
                line: line_no,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse().map_err(|_| Error::Parse {
                    file_kind: "scenario",
                    line: line_no,
                    msg: format!("bad number {v:?}"),
                })
            };
            match key {
                "baseline_watts" => s.baseline_watts = num(value)?,
                "model_watts_old" => s.model_watts_old = num(value)?,
                "model_watts_new" => s.model_watts_new = num(value)?,
                "trigger_interval_s" => s.trigger_interval_s = num(value)?,
                "naive_interval_s" => s.naive_interval_s = num(value)?,
                "inference_seconds_old" => s.inference_seconds_old = num(value)?,
                "inference_seconds_new" => s.inference_seconds_new = num(value)?,
                "users" => {
                    s.users = value.parse().map_err(|_| Error::Parse {
                        file_kind: "scenario",
                        line: line_no,
                        msg: format!("bad user count {value:?}"),
                    })?;
                }
                "active_hours_per_year" => s.active_hours_per_year = num(value)?,
                "per_capita_kwh" => s.per_capita_kwh = num(value)?,
                _ => {
                    return Err(Error::Parse {
                        file_kind: "scenario",
                        line: line_no,
                        msg: format!("unknown key {key:?}"),
                    });
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetProjection {
    pub per_user_kwh_old: f64,
    pub per_user_kwh_new: f64,
    pub fleet_gwh_old: f64,
    pub fleet_gwh_new: f64,
    pub savings_gwh: f64,
    /// Yearly per-capita electricity consumptions worth of savings.
    pub people_equivalent: f64,
}

pub fn fleet_projection(s: &EnergyScenario) -> Result<FleetProjection> {
    s.validate()?;
    let hours = s.active_hours_per_year;
    let per_user_kwh_old = s.model_watts_old * hours / 1000.0;
    let per_user_kwh_new = s.model_watts_new * hours / 1000.0;
    let users = s.users as f64;
    let fleet_gwh_old = per_user_kwh_old * users / 1e6;
    let fleet_gwh_new = per_user_kwh_new * users / 1e6;
    let savings_gwh = fleet_gwh_old - fleet_gwh_new;
    Ok(FleetProjection {
        per_user_kwh_old,
        per_user_kwh_new,
        fleet_gwh_old,
        fleet_gwh_new,
        savings_gwh,
        people_equivalent: savings_gwh * 1e6 / s.per_capita_kwh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtfReport {
    pub mean_infer_s: f64,
    /// Mean inference seconds per second of audio; < 1 is realtime-capable.
    pub rtf: f64,
    pub reps_timed: usize,
}

/// Time `reps` inferences (first discarded as warm-up) and report the mean
/// against the clip length. Run this with nothing else on the machine; it
/// measures wall clock.
pub fn bench_rtf(m: &Model, clip: &ClipInput, reps: usize) -> Result<RtfReport> {
    if reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 repetitions for a stable mean, got {reps}"
        )));
    }
    let mut total = 0.0f64;
    for i in 0..reps {
        let t0 = Instant::now();
        let out = infer(m, clip)?;
        let dt = t0.elapsed().as_secs_f64();
        std::hint::black_box(&out);
        if i > 0 {
            total += dt;
        }
    }
    let mean = total / (reps - 1) as f64;
    Ok(RtfReport {
        mean_infer_s: mean,
        rtf: mean / m.config().clip_seconds,
        reps_timed: reps - 1,
    })
}

#[derive(Debug, Clone)]
pub struct TriggerRecord {
    pub onset_s: f64,
    pub duration_s: f64,
    pub scores: ClassScores,
}

#[derive(Debug, Clone)]
pub struct TriggerLog {
    pub records: Vec<TriggerRecord>,
    pub total_audio_s: f64,
    /// Triggers a fixed-cadence system would have fired over the same audio.
    pub naive_triggers: u64,
    pub naive_interval_s: f64,
}

impl TriggerLog {
    #[must_use]
    pub fn trigger_count(&self) -> usize {
        self.records.len()
    }

    /// How many times fewer inferences than fixed-cadence triggering.
    #[must_use]
    pub fn gating_ratio(&self) -> Option<f64> {
        if self.records.is_empty() {
            None
        } else {
            Some(self.naive_triggers as f64 / self.records.len() as f64)
        }
    }
}

/// Run the gated pipeline over a meeting trace: one inference per detected
/// overlap (>= 0.3 s), each on a deterministic synthetic clip standing in
/// for the audio window at the overlap onset. The naive comparison point is
/// one trigger per clip-length of audio.
pub fn simulate_meeting(trace: &ActivityTrace, m: &Model, seed: u64) -> Result<TriggerLog> {
    let events = detect_overlaps(trace, 0.3)?;
    let cfg = m.config();
    let samples = cfg.clip_samples();
    let mut records = Vec::with_capacity(events.len());
    for (i, ev) in events.iter().enumerate() {
        let clip = ClipInput::synthetic(seed.wrapping_add(i as u64), samples);
        let out = infer(m, &clip)?;
        records.push(TriggerRecord {
            onset_s: ev.onset_s,
            duration_s: ev.duration_s,
            scores: out.scores,
        });
    }
    let total_audio_s = trace.span_s();
    Ok(TriggerLog {
        records,
        total_audio_s,
        naive_triggers: (total_audio_s / cfg.clip_seconds).floor() as u64,
        naive_interval_s: cfg.clip_seconds,
    })
}

/// Crude energy-gate VAD for raw clips: a channel is active in any 10 ms
/// frame whose RMS clears the threshold; consecutive active frames merge
/// into intervals. Only a convenience for feeding real audio into the
/// simulator; the deployment assumes the client's own VAD.
pub fn trace_from_clip(
    clip: &ClipInput,
    sample_rate_hz: u32,
    rms_threshold: f32,
) -> Result<ActivityTrace> {
    let frame = (sample_rate_hz as usize / 100).max(1);
    let mut rows = Vec::new();
    for (ch, samples) in [clip.left(), clip.right()].into_iter().enumerate() {
        let mut open: Option<usize> = None;
        let frames = samples.len() / frame;
        for f in 0..frames {
            let window = &samples[f * frame..(f + 1) * frame];
            let energy: f32 = window.iter().map(|v| v * v).sum::<f32>() / frame as f32;
            let active = energy.sqrt() >= rms_threshold;
            match (active, open) {
                (true, None) => open = Some(f),
                (false, Some(from)) => {
                    rows.push((ch, from, f));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(from) = open {
            rows.push((ch, from, frames));
        }
    }
    let secs = frame as f64 / f64::from(sample_rate_hz);
    let rows: Vec<(usize, f64, f64)> = rows
        .into_iter()
        .map(|(ch, a, b)| (ch, a as f64 * secs, b as f64 * secs))
        .collect();
    ActivityTrace::from_intervals(&rows)
}
