//! Stationary wavelet transform with trainable filters.
//!
//! The forward transform is the undecimated (a-trous) cascade
//! `c^(s+1)_t = sum_i h_i c^(s)_{t+i*2^s}`, `d^(s+1)_t = sum_i g_i c^(s)_{t+i*2^s}`,
//! a correlation with the filter dilated by `2^s`; every level keeps the
//! original length. Because the map is linear in the signal and polynomial in
//! the taps, gradients are exact adjoints rather than autodiff approximations:
//! [`swt_backward`] recomputes the cascade and pushes an upstream coefficient
//! gradient back to the signal and to every tap.
//!
//! Boundaries use zero padding by default; periodic padding exists because
//! shift-equivariance and energy identities only hold exactly on a circle,
//! which makes them testable.

use ndarray::{Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Daubechies 8-tap low-pass filter (four vanishing moments), in the
/// conventional h_0..h_7 order. Sums to sqrt(2) and has unit energy.
pub const DB4_H: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

pub const HAAR_H: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

/// Filter initialization family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Haar,
    Db4,
}

impl Basis {
    /// Tap count of the basis's standard filters.
    pub fn taps(self) -> usize {
        match self {
            Basis::Haar => 2,
            Basis::Db4 => 8,
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(Basis::Haar),
            "db4" => Ok(Basis::Db4),
            other => Err(Error::Argument(format!("unknown wavelet basis '{other}'"))),
        }
    }
}

/// Boundary rule for the correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Out-of-range samples read as zero. Default everywhere.
    Zero,
    /// Indices wrap modulo the length. Test mode: exact shift and energy
    /// identities hold only on the circle.
    Periodic,
}

/// One low/high-pass tap pair. Taps are free parameters after initialization;
/// the QMF relations hold at init only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPair {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
}

impl FilterPair {
    pub fn new(h: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if h.len() != g.len() {
            return Err(Error::Argument(format!(
                "low-pass has {} taps but high-pass has {}",
                h.len(),
                g.len()
            )));
        }
        if h.len() < 2 || h.len() % 2 != 0 {
            return Err(Error::Argument(format!(
                "tap count {} must be even and at least 2",
                h.len()
            )));
        }
        if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("filter taps must be finite".into()));
        }
        Ok(FilterPair { h, g })
    }

    pub fn taps(&self) -> usize {
        self.h.len()
    }
}

/// High-pass from low-pass by quadrature-mirror alternation:
/// `g_i = (-1)^i h_{k-1-i}`.
pub fn quadrature_mirror(h: &[f64]) -> Vec<f64> {
    let k = h.len();
    (0..k).map(|i| if i % 2 == 0 { h[k - 1 - i] } else { -h[k - 1 - i] }).collect()
}

/// Standard orthonormal taps for a basis. `k` must match the basis (haar: 2,
/// db4: 8).
pub fn init_filters(basis: Basis, k: usize) -> Result<FilterPair> {
    let h: Vec<f64> = match (basis, k) {
        (Basis::Haar, 2) => HAAR_H.to_vec(),
        (Basis::Db4, 8) => DB4_H.to_vec(),
        (b, k) => {
            return Err(Error::Argument(format!(
                "basis {b:?} does not support tap count {k} (haar: 2, db4: 8)"
            )))
        }
    };
    let g = quadrature_mirror(&h);
    FilterPair::new(h, g)
}

/// Inserts `2^level - 1` zeros between consecutive taps.
pub fn upsample_filter(taps: &[f64], level: u32) -> Vec<f64> {
    let gap = 1usize << level;
    if taps.is_empty() || gap == 1 {
        return taps.to_vec();
    }
    let mut out = vec![0.0; (taps.len() - 1) * gap + 1];
    for (i, &t) in taps.iter().enumerate() {
        out[i * gap] = t;
    }
    out
}

/// Coefficients of one series: `detail[s]` is level `s+1`, plus the final
/// approximation. Every row has the original length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwtCoefficients {
    pub detail: Vec<Vec<f64>>,
    pub approx_final: Vec<f64>,
}

impl SwtCoefficients {
    pub fn levels(&self) -> usize {
        self.detail.len()
    }

    pub fn len(&self) -> usize {
        self.approx_final.len()
    }

    pub fn is_empty(&self) -> bool {
        self.approx_final.is_empty()
    }

    /// All-zero coefficients with the same shape; the natural container for
    /// upstream gradients.
    pub fn zeros_like(&self) -> SwtCoefficients {
        SwtCoefficients {
            detail: self.detail.iter().map(|d| vec![0.0; d.len()]).collect(),
            approx_final: vec![0.0; self.approx_final.len()],
        }
    }

    fn validate(&self, taps: usize) -> Result<()> {
        let l = self.approx_final.len();
        if l == 0 || self.detail.is_empty() {
            return Err(Error::Argument("coefficients are empty".into()));
        }
        if self.detail.iter().any(|d| d.len() != l) {
            return Err(Error::Argument(
                "coefficient levels must all have the original length".into(),
            ));
        }
        feasible_levels(l, taps, self.levels())?;
        Ok(())
    }
}

/// Largest level count S with dilated support `(k-1)*2^(S-1) + 1 <= L`.
pub fn max_feasible_levels(len: usize, taps: usize) -> usize {
    let mut s = 0usize;
    while (taps - 1) * (1usize << s) + 1 <= len {
        s += 1;
        if s > 60 {
            break;
        }
    }
    s
}

fn feasible_levels(len: usize, taps: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Argument("level count must be at least 1".into()));
    }
    let max = max_feasible_levels(len, taps);
    if levels > max {
        return Err(Error::Argument(format!(
            "{levels} levels infeasible for length {len} with {taps} taps; maximum is {max}"
        )));
    }
    Ok(())
}

/// `out_t = sum_i taps_i x_{t + i*dilation}` under the boundary rule.
fn correlate(x: &[f64], taps: &[f64], dilation: usize, padding: Padding) -> Vec<f64> {
    let l = x.len();
    let mut out = vec![0.0; l];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &tap) in taps.iter().enumerate() {
            let idx = t + i * dilation;
            match padding {
                Padding::Zero => {
                    if idx < l {
                        acc += tap * x[idx];
                    }
                }
                Padding::Periodic => acc += tap * x[idx % l],
            }
        }
        *o = acc;
    }
    out
}

/// Transpose of [`correlate`]: scatters `y_t` onto index `t + i*dilation`.
fn adjoint_correlate(y: &[f64], taps: &[f64], dilation: usize, padding: Padding) -> Vec<f64> {
    let l = y.len();
    let mut out = vec![0.0; l];
    for (t, &yt) in y.iter().enumerate() {
        for (i, &tap) in taps.iter().enumerate() {
            let idx = t + i * dilation;
            match padding {
                Padding::Zero => {
                    if idx < l {
                        out[idx] += tap * yt;
                    }
                }
                Padding::Periodic => out[idx % l] += tap * yt,
            }
        }
    }
    out
}

fn check_signal(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::Argument("signal is empty".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("signal contains non-finite values".into()));
    }
    Ok(())
}

/// Runs the cascade, returning every approximation level `c^(0) .. c^(S)`.
fn cascade(x: &[f64], filters: &FilterPair, levels: usize, padding: Padding) -> Vec<Vec<f64>> {
    let mut approx = Vec::with_capacity(levels + 1);
    approx.push(x.to_vec());
    for s in 0..levels {
        let next = correlate(&approx[s], &filters.h, 1usize << s, padding);
        approx.push(next);
    }
    approx
}

/// Multi-level forward transform.
pub fn swt_forward(
    x: &[f64],
    filters: &FilterPair,
    levels: usize,
    padding: Padding,
) -> Result<SwtCoefficients> {
    check_signal(x)?;
    feasible_levels(x.len(), filters.taps(), levels)?;
    let approx = cascade(x, filters, levels, padding);
    let detail = (0..levels)
        .map(|s| correlate(&approx[s], &filters.g, 1usize << s, padding))
        .collect();
    Ok(SwtCoefficients { detail, approx_final: approx[levels].clone() })
}

/// Adjoint-based reconstruction: per level,
/// `c^(s) = (H^T c^(s+1) + G^T d^(s+1)) / 2`.
///
/// For an orthonormal quadrature-mirror pair this reconstructs the signal
/// exactly under periodic padding, and away from the boundary (a margin of
/// `k * 2^S` points each end) under zero padding.
pub fn swt_inverse(
    coeffs: &SwtCoefficients,
    filters: &FilterPair,
    padding: Padding,
) -> Result<Vec<f64>> {
    coeffs.validate(filters.taps())?;
    let mut c = coeffs.approx_final.clone();
    for s in (0..coeffs.levels()).rev() {
        let dilation = 1usize << s;
        let from_approx = adjoint_correlate(&c, &filters.h, dilation, padding);
        let from_detail = adjoint_correlate(&coeffs.detail[s], &filters.g, dilation, padding);
        c = from_approx
            .iter()
            .zip(&from_detail)
            .map(|(a, d)| 0.5 * (a + d))
            .collect();
    }
    Ok(c)
}

/// Pushes an upstream coefficient gradient back through the transform.
///
/// Returns `(grad_x, grad_h, grad_g)`. The signal gradient is the exact
/// adjoint of the forward map; tap gradients accumulate over every level the
/// tap participates in, chained through the intermediate approximations.
pub fn swt_backward(
    x: &[f64],
    filters: &FilterPair,
    levels: usize,
    padding: Padding,
    upstream: &SwtCoefficients,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_signal(x)?;
    feasible_levels(x.len(), filters.taps(), levels)?;
    if upstream.levels() != levels || upstream.approx_final.len() != x.len() {
        return Err(Error::Argument(format!(
            "upstream shape {}x{} does not match {} levels over length {}",
            upstream.levels(),
            upstream.approx_final.len(),
            levels,
            x.len()
        )));
    }
    if upstream.detail.iter().any(|d| d.len() != x.len()) {
        return Err(Error::Argument("upstream level length mismatch".into()));
    }

    let l = x.len();
    let k = filters.taps();
    let approx = cascade(x, filters, levels, padding);
    let mut grad_h = vec![0.0; k];
    let mut grad_g = vec![0.0; k];

    // gradient w.r.t. c^(s+1), starting at the top of the cascade
    let mut u_c = upstream.approx_final.clone();
    for s in (0..levels).rev() {
        let dilation = 1usize << s;
        let u_d = &upstream.detail[s];
        let c_prev = &approx[s];
        for i in 0..k {
            let (mut gh, mut gg) = (0.0, 0.0);
            for t in 0..l {
                let idx = t + i * dilation;
                let src = match padding {
                    Padding::Zero => {
                        if idx < l {
                            c_prev[idx]
                        } else {
                            continue;
                        }
                    }
                    Padding::Periodic => c_prev[idx % l],
                };
                gh += u_c[t] * src;
                gg += u_d[t] * src;
            }
            grad_h[i] += gh;
            grad_g[i] += gg;
        }
        let mut down = adjoint_correlate(&u_c, &filters.h, dilation, padding);
        let from_detail = adjoint_correlate(u_d, &filters.g, dilation, padding);
        for (a, b) in down.iter_mut().zip(&from_detail) {
            *a += b;
        }
        u_c = down;
    }
    Ok((u_c, grad_h, grad_g))
}

/// Per-channel filter parameters. In shared mode one pair serves every
/// channel (and accumulates every channel's gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pairs: Vec<FilterPair>,
    shared: bool,
}

impl FilterBank {
    pub fn shared(pair: FilterPair) -> Self {
        FilterBank { pairs: vec![pair], shared: true }
    }

    pub fn per_channel(pair: FilterPair, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Argument("filter bank needs at least one channel".into()));
        }
        Ok(FilterBank { pairs: vec![pair; channels], shared: false })
    }

    pub fn from_pairs(pairs: Vec<FilterPair>, shared: bool) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Argument("filter bank needs at least one pair".into()));
        }
        if shared && pairs.len() != 1 {
            return Err(Error::Argument("shared bank must hold exactly one pair".into()));
        }
        let k = pairs[0].taps();
        if pairs.iter().any(|p| p.taps() != k) {
            return Err(Error::Argument("all channels must share one tap count".into()));
        }
        Ok(FilterBank { pairs, shared })
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn taps(&self) -> usize {
        self.pairs[0].taps()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_for(&self, channel: usize) -> &FilterPair {
        if self.shared {
            &self.pairs[0]
        } else {
            &self.pairs[channel]
        }
    }

    pub fn pair_index(&self, channel: usize) -> usize {
        if self.shared {
            0
        } else {
            channel
        }
    }

    pub fn pairs(&self) -> &[FilterPair] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [FilterPair] {
        &mut self.pairs
    }
}

/// Current on-disk format for [`FilterCheckpoint`].
pub const FILTER_FORMAT_VERSION: u32 = 1;

/// Lossless JSON checkpoint of a filter bank, carrying the level count the
/// bank was trained with so a transform on another market reproduces the
/// tokenizer exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCheckpoint {
    pub format_version: u32,
    pub k: usize,
    pub levels: usize,
    pub shared: bool,
    pub channels: Vec<FilterPair>,
}

impl FilterCheckpoint {
    pub fn new(bank: &FilterBank, levels: usize) -> Self {
        FilterCheckpoint {
            format_version: FILTER_FORMAT_VERSION,
            k: bank.taps(),
            levels,
            shared: bank.is_shared(),
            channels: bank.pairs().to_vec(),
        }
    }

    pub fn into_bank(self) -> Result<(FilterBank, usize)> {
        if self.format_version != FILTER_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported filter checkpoint version {} (expected {})",
                self.format_version, FILTER_FORMAT_VERSION
            )));
        }
        if self.channels.iter().any(|p| p.taps() != self.k) {
            return Err(Error::Data("checkpoint tap count disagrees with channels".into()));
        }
        let bank = FilterBank::from_pairs(self.channels, self.shared)
            .map_err(|e| Error::Data(e.to_string()))?;
        Ok((bank, self.levels))
    }

    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Data(format!("cannot open filter checkpoint '{}': {e}", path.as_ref().display()))
        })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Tokenizes a B x M x L window into B x M x L x (S+1) coefficients.
///
/// Channels are independent; the last axis stacks `[d^(1), .., d^(S), c^(S)]`.
pub fn tokenize_window(
    window: ArrayView3<'_, f64>,
    bank: &FilterBank,
    levels: usize,
    padding: Padding,
) -> Result<Array4<f64>> {
    let (b, m, l) = window.dim();
    if !bank.is_shared() && bank.num_pairs() != m {
        return Err(Error::Argument(format!(
            "filter bank has {} channels but window has {m} features",
            bank.num_pairs()
        )));
    }
    let mut out = Array4::<f64>::zeros((b, m, l, levels + 1));
    let mut series = vec![0.0; l];
    for s in 0..b {
        for f in 0..m {
            for t in 0..l {
                series[t] = window[(s, f, t)];
            }
            let coeffs = swt_forward(&series, bank.pair_for(f), levels, padding)?;
            for (lev, d) in coeffs.detail.iter().enumerate() {
                for t in 0..l {
                    out[(s, f, t, lev)] = d[t];
                }
            }
            for t in 0..l {
                out[(s, f, t, levels)] = coeffs.approx_final[t];
            }
        }
    }
    Ok(out)
}
