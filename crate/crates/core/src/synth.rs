//! Deterministic synthetic data generators for tests and the bundled demo
//! dataset. Everything is seeded; the same arguments always produce the
//! same bytes.

use chrono::NaiveDate;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::panel::{ReturnLabels, StockPanel};

/// V shape: linear descent to `-depth` at the midpoint, then back up.
pub fn vee(len: usize, depth: f64) -> Vec<f64> {
    let mid = (len - 1) as f64 / 2.0;
    (0..len)
        .map(|i| {
            let d = (i as f64 - mid).abs() / mid.max(1.0);
            -depth * (1.0 - d)
        })
        .collect()
}

/// Straight line from 0 up to `rise`.
pub fn ramp(len: usize, rise: f64) -> Vec<f64> {
    (0..len)
        .map(|i| rise * i as f64 / (len - 1).max(1) as f64)
        .collect()
}

/// Which template a generated motif instance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    Vee,
    Ramp,
}

/// A series stitched from motif instances, with its ground-truth layout.
#[derive(Debug, Clone)]
pub struct MotifSeries {
    pub values: Vec<f64>,
    /// Start index of each motif instance.
    pub boundaries: Vec<usize>,
    pub lengths: Vec<usize>,
    pub kinds: Vec<MotifKind>,
}

/// Concatenates `count` motifs, alternating vee and ramp, with instance
/// lengths cycling through `lengths`. Uniform noise of half-width `noise`
/// is added pointwise.
pub fn motif_series(seed: u64, count: usize, lengths: &[usize], noise: f64) -> MotifSeries {
    assert!(!lengths.is_empty() && lengths.iter().all(|&l| l >= 2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut boundaries = Vec::new();
    let mut lens = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..count {
        let len = lengths[i % lengths.len()];
        let kind = if i % 2 == 0 { MotifKind::Vee } else { MotifKind::Ramp };
        let shape = match kind {
            MotifKind::Vee => vee(len, 1.0),
            MotifKind::Ramp => ramp(len, 1.0),
        };
        boundaries.push(values.len());
        lens.push(len);
        kinds.push(kind);
        for v in shape {
            let eps = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            values.push(v + eps);
        }
    }
    MotifSeries { values, boundaries, lengths: lens, kinds }
}

/// A series of variable-length pulse motifs, with its ground-truth layout.
#[derive(Debug, Clone)]
pub struct PulseSeries {
    pub values: Vec<f64>,
    /// Start index of each motif instance.
    pub boundaries: Vec<usize>,
    pub lengths: Vec<usize>,
}

/// Concatenates `count` pulse motifs: a fixed 16-sample head (a spike at
/// index 3 whose sign alternates per instance, fixed bumps at 8 and 12), a
/// flat tail closed by a constant end marker, and a length drawn uniformly
/// from {17, 18}. The random lengths keep motif starts drifting against any
/// fixed sampling grid, while the head itself never changes, so a patch cut
/// exactly at a boundary has the same content every time. Uniform noise of
/// half-width `noise` is added pointwise.
pub fn pulse_series(seed: u64, count: usize, noise: f64) -> PulseSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut boundaries = Vec::new();
    let mut lengths = Vec::new();
    for i in 0..count {
        let len = if rng.random_range(0..2) == 0 { 17 } else { 18 };
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        boundaries.push(values.len());
        lengths.push(len);
        for t in 0..len {
            let base = match t {
                3 => sign * 2.5,
                8 => 1.5,
                12 => -1.5,
                _ if t == len - 1 => 1.2,
                _ => 0.0,
            };
            values.push(base + rng.random_range(-noise..=noise));
        }
    }
    PulseSeries { values, boundaries, lengths }
}

fn calendar(days: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    (0..days).map(|i| start + chrono::Days::new(i as u64)).collect()
}

/// Panel with a planted cross-sectional signal.
///
/// Each stock's single feature is a smooth nuisance (quadratic ramp plus a
/// slow oscillation with per-stock amplitude, period, and phase, all at
/// scale `trend_scale`) plus a period-8 spike pair whose signed amplitude
/// is spread evenly over `[-spike_scale, spike_scale]` across stocks and
/// changes by 64-day block: no spikes in the first block, `-amplitude` in
/// the second, `+amplitude` afterwards. Labels track the block in effect on
/// the label's day, so time-constant features of a stock explain none of
/// them; a model scores well exactly when it reads the current spike
/// amplitude out of the smooth background. Returns the panel, the labels,
/// and the final-block amplitudes.
pub fn spike_label_panel(
    seed: u64,
    stocks: usize,
    days: usize,
    trend_scale: f64,
    spike_scale: f64,
) -> Result<(StockPanel, ReturnLabels, Vec<f64>)> {
    assert!(stocks >= 2 && days >= 160);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amplitudes: Vec<f64> = (0..stocks)
        .map(|s| spike_scale * (2.0 * s as f64 / (stocks - 1) as f64 - 1.0))
        .collect();
    // block 0 has no spikes; block 1 flips the sign so per-stock label means
    // stay near zero and constant features cannot shortcut the labels
    let block_sign = |t: usize| -> f64 {
        match t / 64 {
            0 => 0.0,
            1 => -1.0,
            _ => 1.0,
        }
    };
    let mut values = Array3::zeros((stocks, 1, days));
    for s in 0..stocks {
        let c1: f64 = rng.random_range(-trend_scale..=trend_scale);
        let c2: f64 = rng.random_range(-trend_scale..=trend_scale);
        // wideband smooth nuisance: several tones with per-stock amplitudes,
        // periods, and phases, all slower than the period-8 spikes, so no
        // single narrowband projection can remove them
        let tones: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    trend_scale * rng.random_range(0.25..=0.5),
                    rng.random_range(12.0..=56.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        for t in 0..days {
            let u = t as f64 / (days - 1) as f64;
            let mut trend = c1 * u + c2 * u * u;
            for &(amp, period, phase) in &tones {
                trend += amp * (std::f64::consts::TAU * t as f64 / period + phase).sin();
            }
            let amp = block_sign(t) * amplitudes[s];
            let spike = match t % 8 {
                3 => amp,
                4 => -amp,
                _ => 0.0,
            };
            values[(s, 0, t)] = trend + spike;
        }
    }
    // label day for index t is day t + 1
    let labels = Array2::from_shape_fn((stocks, days - 1), |(s, t)| {
        0.1 * block_sign(t + 1) * amplitudes[s]
    });
    let symbols = (0..stocks).map(|s| format!("S{s:02}")).collect();
    let panel = StockPanel::new(symbols, calendar(days), values, vec!["signal".into()])?;
    Ok((panel, ReturnLabels { values: labels }, amplitudes))
}

/// Small positive-price market panel used for the bundled demo dataset and
/// end-to-end pipeline tests. Close prices follow multiplicative paths
/// whose returns carry a motif texture; volume is a positive second feature.
pub fn demo_panel(seed: u64, stocks: usize, days: usize) -> Result<StockPanel> {
    assert!(stocks >= 1 && days >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array3::zeros((stocks, 2, days));
    for s in 0..stocks {
        let motifs = motif_series(seed.wrapping_add(1000 + s as u64), days / 8 + 2, &[12, 16, 20], 0.05);
        let mut price = 100.0 * (1.0 + s as f64 / 10.0);
        for t in 0..days {
            let texture = motifs.values[t % motifs.values.len()];
            let r = 0.0002 + 0.004 * texture + rng.random_range(-0.003..=0.003);
            price *= 1.0 + r;
            values[(s, 0, t)] = price;
            let vol = 1.0e6 * (1.0 + 0.3 * texture.abs() + rng.random_range(0.0..=0.2));
            values[(s, 1, t)] = vol;
        }
    }
    let symbols = (0..stocks).map(|s| format!("S{s:02}")).collect();
    StockPanel::new(symbols, calendar(days), values, vec!["close".into(), "volume".into()])
}
