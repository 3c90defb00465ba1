//! Deterministic synthetic series for tests, sanity runs and benchmarks.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RawSeries;
use crate::error::{Error, Result};

fn timestamps(len: usize, start: &str, step_minutes: i64) -> Vec<NaiveDateTime> {
    let start = NaiveDateTime::parse_from_str(start, "%Y-%m-%d %H:%M:%S").expect("valid start");
    (0..len)
        .map(|i| start + Duration::minutes(step_minutes * i as i64))
        .collect()
}

fn render(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%d %H:%M:%S").to_string()
}

/// Smooth sinusoid-plus-trend channels sampled hourly. Useful for overfit
/// sanity checks: the signal is noiseless and low-frequency.
pub fn sinusoid_trend_series(channels: usize, len: usize, seed: u64) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stamps = timestamps(len, "2021-01-04 00:00:00", 60);
    let mut values = Vec::with_capacity(channels);
    for _ in 0..channels {
        let amp = 1.0 + rng.random::<f64>() * 2.0;
        let period = 16.0 + rng.random::<f64>() * 24.0;
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let slope = (rng.random::<f64>() - 0.5) * 0.05;
        let offset = (rng.random::<f64>() - 0.5) * 4.0;
        values.push(
            (0..len)
                .map(|i| {
                    let x = i as f64;
                    offset + slope * x + amp * (std::f64::consts::TAU * x / period + phase).sin()
                })
                .collect(),
        );
    }
    RawSeries {
        timestamps: stamps.iter().map(render).collect(),
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        values,
    }
}

/// A 7-channel, 15-minute series shaped like a transformer-load benchmark:
/// six load channels plus a correlated temperature channel, with daily
/// harmonics, a weekday-dependent level, a slow trend, and mild noise.
///
/// The weekday offsets follow an ambiguous pattern (Mon/Wed/Fri share one
/// level but are followed by different levels), so a lookback shorter than a
/// week cannot identify the weekday; calendar inputs can.
pub fn ettm2_like(len: usize, seed: u64) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stamps = timestamps(len, "2016-07-01 00:00:00", 15);
    let names = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"];
    // Mon Tue Wed Thu Fri Sat Sun: a, b, a, b, a, c, c
    let dow_offset = [0.0, 0.9, 0.0, 0.9, 0.0, -1.1, -1.1];
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(7);
    let common_phase = rng.random::<f64>() * std::f64::consts::TAU;
    let mut load_params = Vec::new();
    for c in 0..6 {
        let base = 8.0 + c as f64 * 3.0;
        let scale = 2.0 + rng.random::<f64>() * 2.0;
        // loads share one driver, so phases cluster
        let phase = common_phase + (rng.random::<f64>() - 0.5) * 0.6;
        let trend = (rng.random::<f64>() - 0.5) * 2.0;
        // slow drift: two incommensurate multi-week waves
        let p1 = 800.0 + rng.random::<f64>() * 1200.0;
        let p2 = 2500.0 + rng.random::<f64>() * 1500.0;
        let (d1, d2) = (
            rng.random::<f64>() * std::f64::consts::TAU,
            rng.random::<f64>() * std::f64::consts::TAU,
        );
        load_params.push((base, scale, phase, trend, p1, p2, d1, d2));
    }
    for &(base, scale, phase, trend, p1, p2, d1, d2) in &load_params {
        let mut channel = Vec::with_capacity(len);
        for (i, ts) in stamps.iter().enumerate() {
            let tod = (ts.hour() as f64 * 60.0 + ts.minute() as f64) / 1440.0;
            let dow = ts.weekday().num_days_from_monday() as usize;
            let daily = (std::f64::consts::TAU * tod + phase).sin()
                + 0.4 * (2.0 * std::f64::consts::TAU * tod + 0.7 * phase).sin();
            let x = i as f64;
            let drift = 1.2 * (std::f64::consts::TAU * x / p1 + d1).sin()
                + 0.7 * (std::f64::consts::TAU * x / p2 + d2).sin();
            let v = base
                + scale * (daily + dow_offset[dow] + drift)
                + trend * x / len as f64
                + 0.12 * scale * rng.random::<f64>();
            channel.push(v);
        }
        values.push(channel);
    }
    // oil temperature: smoothed combination of the loads plus its own cycle
    let mut ot = Vec::with_capacity(len);
    for (i, ts) in stamps.iter().enumerate() {
        let tod = (ts.hour() as f64 * 60.0 + ts.minute() as f64) / 1440.0;
        let mix = 0.25 * values[0][i] + 0.15 * values[2][i] + 0.1 * values[4][i];
        let v = 12.0
            + 0.3 * mix
            + 1.5 * (std::f64::consts::TAU * (tod - 0.2)).sin()
            + 0.05 * rng.random::<f64>();
        ot.push(v);
    }
    values.push(ot);
    RawSeries {
        timestamps: stamps.iter().map(render).collect(),
        channel_names: names.iter().map(|s| s.to_string()).collect(),
        values,
    }
}

/// Hourly channels sharing a 24-hour base period (plus a second harmonic and
/// per-channel trend). Phase-aligned windows from this series overfit fast,
/// which keeps optimizer sanity checks quick.
pub fn daily_sinusoid_trend_series(channels: usize, len: usize, seed: u64) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stamps = timestamps(len, "2021-01-04 00:00:00", 60);
    let mut values = Vec::with_capacity(channels);
    for _ in 0..channels {
        let amp = 1.0 + rng.random::<f64>() * 2.0;
        let amp2 = 0.3 * rng.random::<f64>();
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let slope = (rng.random::<f64>() - 0.5) * 0.04;
        let offset = (rng.random::<f64>() - 0.5) * 4.0;
        values.push(
            (0..len)
                .map(|i| {
                    let x = i as f64;
                    let tod = std::f64::consts::TAU * x / 24.0;
                    offset
                        + amp * (slope * x / 24.0 + (tod + phase).sin())
                        + amp2 * (2.0 * tod + 0.5 * phase).sin()
                })
                .collect(),
        );
    }
    RawSeries {
        timestamps: stamps.iter().map(render).collect(),
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        values,
    }
}

/// Writes a series in the wide CSV layout the loader reads.
pub fn write_csv(series: &RawSeries, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("date");
    for name in &series.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, ts) in series.timestamps.iter().enumerate() {
        out.push_str(ts);
        for channel in &series.values {
            write!(out, ",{:.6}", channel[i]).expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_csv;

    #[test]
    fn generators_are_deterministic() {
        let a = ettm2_like(200, 7);
        let b = ettm2_like(200, 7);
        assert_eq!(a.values, b.values);
        let c = ettm2_like(200, 8);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn ettm2_like_round_trips_through_csv() {
        let series = ettm2_like(64, 3);
        assert_eq!(series.channels(), 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ettm2.csv");
        write_csv(&series, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded.channels(), 7);
        assert_eq!(loaded.len(), 64);
        assert_eq!(loaded.channel_names, series.channel_names);
        for (a, b) in loaded.values.iter().zip(&series.values) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn sinusoid_series_has_requested_extent() {
        let s = sinusoid_trend_series(3, 55, 11);
        assert_eq!(s.channels(), 3);
        assert_eq!(s.len(), 55);
    }
}
