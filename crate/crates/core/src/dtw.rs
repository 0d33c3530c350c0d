//! Dynamic time warping with optional band constraint and volatility weights.
//!
//! Distances drive segment clustering and greedy segmentation, so the hot path
//! is a two-row dynamic program; the full-table variant exists only where the
//! warping path itself is needed (centroid averaging, diagnostics).

use ndarray::Array2;

use crate::error::{Error, Result};

/// Numerical floor added to rolling volatility before weight normalization.
pub const VOL_EPS: f64 = 1e-8;

/// Default trailing window (in samples) for rolling volatility.
pub const DEFAULT_VOL_WINDOW: usize = 5;

/// Pointwise cost between two aligned samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMetric {
    /// `|a - b|`
    Absolute,
    /// `(a - b)^2`
    Squared,
}

impl LocalMetric {
    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            LocalMetric::Absolute => (a - b).abs(),
            LocalMetric::Squared => (a - b) * (a - b),
        }
    }
}

/// Options shared by all DTW entry points.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DtwOptions {
    pub metric: LocalMetric,
    /// Sakoe-Chiba band radius. `None` means unconstrained. The effective
    /// radius is widened to at least `|n - m|` so an alignment always exists.
    pub band_radius: Option<usize>,
}

impl Default for DtwOptions {
    fn default() -> Self {
        DtwOptions { metric: LocalMetric::Absolute, band_radius: None }
    }
}

/// Alignment between two series.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    /// Accumulated cost along the optimal path.
    pub distance: f64,
    /// Monotone warping path from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
}

impl DtwResult {
    /// Distance divided by the number of path steps. Comparable across
    /// candidate segment lengths.
    pub fn normalized(&self) -> f64 {
        self.distance / self.path.len() as f64
    }
}

#[derive(Clone, Copy)]
enum Weighting<'a> {
    Unweighted,
    /// Cost `wx[i] * d(x[i], y[j])`.
    Query(&'a [f64]),
    /// Cost `(wx[i] + wy[j]) / 2 * d(x[i], y[j])`. Symmetric in its arguments.
    Symmetric(&'a [f64], &'a [f64]),
}

impl Weighting<'_> {
    #[inline]
    fn scale(&self, i: usize, j: usize) -> f64 {
        match self {
            Weighting::Unweighted => 1.0,
            Weighting::Query(wx) => wx[i],
            Weighting::Symmetric(wx, wy) => 0.5 * (wx[i] + wy[j]),
        }
    }
}

fn check_series(name: &str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Argument(format!("{name} series is empty")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("{name} series contains non-finite values")));
    }
    Ok(())
}

fn check_weights(name: &str, w: &[f64], len: usize) -> Result<()> {
    if w.len() != len {
        return Err(Error::Argument(format!(
            "{name} weights length {} does not match series length {len}",
            w.len()
        )));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Argument(format!("{name} weights must be finite and non-negative")));
    }
    Ok(())
}

#[inline]
fn effective_band(n: usize, m: usize, radius: Option<usize>) -> usize {
    match radius {
        Some(r) => r.max(n.abs_diff(m)),
        None => n.max(m),
    }
}

/// Two-row DP over the banded cost table.
fn dtw_cost(x: &[f64], y: &[f64], w: Weighting, opts: &DtwOptions) -> f64 {
    let (n, m) = (x.len(), y.len());
    let band = effective_band(n, m, opts.band_radius);
    let mut prev = vec![f64::INFINITY; m];
    let mut curr = vec![f64::INFINITY; m];
    for i in 0..n {
        curr.fill(f64::INFINITY);
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(m - 1);
        for j in lo..=hi {
            let cost = w.scale(i, j) * opts.metric.eval(x[i], y[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 {
                    b = b.min(prev[j]); // vertical
                    if j > 0 {
                        b = b.min(prev[j - 1]); // diagonal
                    }
                }
                if j > 0 {
                    b = b.min(curr[j - 1]); // horizontal
                }
                b
            };
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1]
}

/// Full-table DP with backtracking. Ties prefer the diagonal, then the
/// vertical, then the horizontal predecessor.
fn dtw_path(x: &[f64], y: &[f64], w: Weighting, opts: &DtwOptions) -> DtwResult {
    let (n, m) = (x.len(), y.len());
    let band = effective_band(n, m, opts.band_radius);
    let mut table = Array2::<f64>::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        let lo = i.saturating_sub(band);
        let hi = (i + band).min(m - 1);
        for j in lo..=hi {
            let cost = w.scale(i, j) * opts.metric.eval(x[i], y[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = b.min(table[(i - 1, j - 1)]);
                }
                if i > 0 {
                    b = b.min(table[(i - 1, j)]);
                }
                if j > 0 {
                    b = b.min(table[(i, j - 1)]);
                }
                b
            };
            table[(i, j)] = cost + best;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { table[(i - 1, j - 1)] } else { f64::INFINITY };
        let vert = if i > 0 { table[(i - 1, j)] } else { f64::INFINITY };
        let horz = if j > 0 { table[(i, j - 1)] } else { f64::INFINITY };
        let best = diag.min(vert).min(horz);
        if diag == best {
            i -= 1;
            j -= 1;
        } else if vert == best {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    DtwResult { distance: table[(n - 1, m - 1)], path }
}

/// Unweighted DTW distance between two series.
pub fn dtw_distance(x: &[f64], y: &[f64], opts: &DtwOptions) -> Result<f64> {
    check_series("first", x)?;
    check_series("second", y)?;
    Ok(dtw_cost(x, y, Weighting::Unweighted, opts))
}

/// DTW distance with per-sample weights on the first series, and optionally
/// symmetric averaging with weights on the second.
///
/// With only `wx`, the local cost is `wx[i] * d(x[i], y[j])`; passing `wy`
/// switches to `(wx[i] + wy[j]) / 2 * d(x[i], y[j])`, which keeps the
/// distance symmetric under swapping the weighted pairs.
pub fn weighted_dtw_distance(
    x: &[f64],
    y: &[f64],
    wx: &[f64],
    wy: Option<&[f64]>,
    opts: &DtwOptions,
) -> Result<f64> {
    check_series("first", x)?;
    check_series("second", y)?;
    check_weights("first", wx, x.len())?;
    let weighting = match wy {
        Some(wy) => {
            check_weights("second", wy, y.len())?;
            Weighting::Symmetric(wx, wy)
        }
        None => Weighting::Query(wx),
    };
    Ok(dtw_cost(x, y, weighting, opts))
}

/// Unweighted DTW distance plus the optimal warping path.
pub fn dtw_alignment(x: &[f64], y: &[f64], opts: &DtwOptions) -> Result<DtwResult> {
    check_series("first", x)?;
    check_series("second", y)?;
    Ok(dtw_path(x, y, Weighting::Unweighted, opts))
}

/// Weighted variant of [`dtw_alignment`]; weight semantics match
/// [`weighted_dtw_distance`].
pub fn weighted_dtw_alignment(
    x: &[f64],
    y: &[f64],
    wx: &[f64],
    wy: Option<&[f64]>,
    opts: &DtwOptions,
) -> Result<DtwResult> {
    check_series("first", x)?;
    check_series("second", y)?;
    check_weights("first", wx, x.len())?;
    let weighting = match wy {
        Some(wy) => {
            check_weights("second", wy, y.len())?;
            Weighting::Symmetric(wx, wy)
        }
        None => Weighting::Query(wx),
    };
    Ok(dtw_path(x, y, weighting, opts))
}

/// Normalized trailing-volatility weights.
///
/// `sigma[i]` is the population standard deviation of the most recent
/// `window` samples ending at `i` (fewer near the start). Weights are
/// `(sigma[i] + eps) / mean(sigma + eps)`, so they are strictly positive and
/// average exactly one; a constant series yields all-ones.
pub fn volatility_weights(x: &[f64], window: usize, eps: f64) -> Result<Vec<f64>> {
    check_series("input", x)?;
    if window == 0 {
        return Err(Error::Argument("volatility window must be at least 1".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Argument("volatility eps must be finite and positive".into()));
    }
    let n = x.len();
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let start = (i + 1).saturating_sub(window);
        let seg = &x[start..=i];
        let len = seg.len() as f64;
        let mean = seg.iter().sum::<f64>() / len;
        let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
        raw.push(var.sqrt() + eps);
    }
    let mean_raw = raw.iter().sum::<f64>() / n as f64;
    Ok(raw.into_iter().map(|w| w / mean_raw).collect())
}

/// Symmetric pairwise distance matrix over a set of series.
///
/// With `weights` present (one vector per series, aligned by index), each
/// pair uses the symmetric weighting, keeping the matrix symmetric. The
/// diagonal is exactly zero.
pub fn pairwise_distances(
    series: &[Vec<f64>],
    weights: Option<&[Vec<f64>]>,
    opts: &DtwOptions,
) -> Result<Array2<f64>> {
    if let Some(w) = weights {
        if w.len() != series.len() {
            return Err(Error::Argument(format!(
                "weights count {} does not match series count {}",
                w.len(),
                series.len()
            )));
        }
    }
    let n = series.len();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = match weights {
                Some(w) => {
                    weighted_dtw_distance(&series[i], &series[j], &w[i], Some(&w[j]), opts)?
                }
                None => dtw_distance(&series[i], &series[j], opts)?,
            };
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive minimum over every monotone warping path. Exponential, so
    /// only for tiny inputs; this is the ground truth the DP must match.
    fn brute_force(
        x: &[f64],
        y: &[f64],
        wx: Option<&[f64]>,
        wy: Option<&[f64]>,
        opts: &DtwOptions,
    ) -> f64 {
        let (n, m) = (x.len(), y.len());
        let band = match opts.band_radius {
            Some(r) => r.max(n.abs_diff(m)),
            None => n.max(m),
        };
        fn cell(
            i: usize,
            j: usize,
            x: &[f64],
            y: &[f64],
            wx: Option<&[f64]>,
            wy: Option<&[f64]>,
            metric: LocalMetric,
        ) -> f64 {
            let scale = match (wx, wy) {
                (None, _) => 1.0,
                (Some(wx), None) => wx[i],
                (Some(wx), Some(wy)) => 0.5 * (wx[i] + wy[j]),
            };
            scale * metric.eval(x[i], y[j])
        }
        fn go(
            i: usize,
            j: usize,
            x: &[f64],
            y: &[f64],
            wx: Option<&[f64]>,
            wy: Option<&[f64]>,
            opts: &DtwOptions,
            band: usize,
        ) -> f64 {
            if i.abs_diff(j) > band {
                return f64::INFINITY;
            }
            let here = cell(i, j, x, y, wx, wy, opts.metric);
            if i == x.len() - 1 && j == y.len() - 1 {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < x.len() {
                best = best.min(go(i + 1, j, x, y, wx, wy, opts, band));
            }
            if j + 1 < y.len() {
                best = best.min(go(i, j + 1, x, y, wx, wy, opts, band));
            }
            if i + 1 < x.len() && j + 1 < y.len() {
                best = best.min(go(i + 1, j + 1, x, y, wx, wy, opts, band));
            }
            here + best
        }
        go(0, 0, x, y, wx, wy, opts, band)
    }

    #[test]
    fn hand_computed_absolute() {
        let opts = DtwOptions::default();
        let d = dtw_distance(&[0.0, 1.0, 2.0], &[0.0, 2.0], &opts).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn hand_computed_squared() {
        let opts = DtwOptions { metric: LocalMetric::Squared, ..Default::default() };
        // best path matches 1 against 0 or 2 exactly once
        let d = dtw_distance(&[0.0, 1.0, 2.0], &[0.0, 2.0], &opts).unwrap();
        assert_eq!(d, 1.0);
        let d = dtw_distance(&[0.0, 3.0], &[0.0, 0.0, 3.0], &opts).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn band_constraint_raises_distance() {
        let x = [0.0, 1.0, 0.0];
        let y = [0.0, 0.0, 1.0];
        let full = dtw_distance(&x, &y, &DtwOptions::default()).unwrap();
        let banded = dtw_distance(
            &x,
            &y,
            &DtwOptions { band_radius: Some(0), ..Default::default() },
        )
        .unwrap();
        assert_eq!(full, 1.0);
        assert_eq!(banded, 2.0); // diagonal-only alignment
    }

    #[test]
    fn band_widens_to_length_gap() {
        // radius 0 would make (n-1, m-1) unreachable without widening
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 5.0];
        let opts = DtwOptions { band_radius: Some(0), ..Default::default() };
        let d = dtw_distance(&x, &y, &opts).unwrap();
        assert!(d.is_finite());
    }

    #[test]
    fn weighted_hand_computed() {
        let opts = DtwOptions::default();
        let d =
            weighted_dtw_distance(&[0.0, 1.0], &[1.0, 0.0], &[2.0, 1.0], None, &opts).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn symmetric_weighting_is_symmetric() {
        let opts = DtwOptions::default();
        let x = [0.0, 1.0, 0.5];
        let y = [1.0, 0.0];
        let wx = [2.0, 1.0, 0.5];
        let wy = [1.5, 3.0];
        let dxy = weighted_dtw_distance(&x, &y, &wx, Some(&wy), &opts).unwrap();
        let dyx = weighted_dtw_distance(&y, &x, &wy, Some(&wx), &opts).unwrap();
        assert_eq!(dxy, dyx);
    }

    #[test]
    fn alignment_path_shape() {
        let res = dtw_alignment(&[0.0, 1.0, 2.0], &[0.0, 2.0], &DtwOptions::default()).unwrap();
        assert_eq!(res.path.first(), Some(&(0, 0)));
        assert_eq!(res.path.last(), Some(&(2, 1)));
        assert_eq!(res.distance, 1.0);
        assert_eq!(res.path, vec![(0, 0), (1, 0), (2, 1)]);
        assert!((res.normalized() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn volatility_weights_hand_computed() {
        let w = volatility_weights(&[0.0, 0.0, 2.0, 2.0], 2, VOL_EPS).unwrap();
        // trailing sigma: [0, 0, 1, 0]
        let eps = VOL_EPS;
        let mean = (3.0 * eps + 1.0 + eps) / 4.0;
        assert!((w[2] - (1.0 + eps) / mean).abs() < 1e-12);
        assert!((w[0] - eps / mean).abs() < 1e-12);
        let avg = w.iter().sum::<f64>() / 4.0;
        assert!((avg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn volatility_weights_constant_series() {
        let w = volatility_weights(&[5.0; 8], DEFAULT_VOL_WINDOW, VOL_EPS).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pairwise_matrix_properties() {
        let series = vec![
            vec![0.0, 1.0, 2.0],
            vec![0.0, 2.0],
            vec![1.0, 1.0, 1.0, 1.0],
        ];
        let m = pairwise_distances(&series, None, &DtwOptions::default()).unwrap();
        for i in 0..3 {
            assert_eq!(m[(i, i)], 0.0);
            for j in 0..3 {
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
        assert_eq!(m[(0, 1)], 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let opts = DtwOptions::default();
        assert!(dtw_distance(&[], &[1.0], &opts).is_err());
        assert!(dtw_distance(&[f64::NAN], &[1.0], &opts).is_err());
        assert!(weighted_dtw_distance(&[1.0, 2.0], &[1.0], &[1.0], None, &opts).is_err());
        assert!(volatility_weights(&[1.0, 2.0], 0, VOL_EPS).is_err());
    }

    fn short_series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..=5)
    }

    fn metric_strategy() -> impl Strategy<Value = LocalMetric> {
        prop_oneof![Just(LocalMetric::Absolute), Just(LocalMetric::Squared)]
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(
            x in short_series(),
            y in short_series(),
            metric in metric_strategy(),
            radius in prop::option::of(0usize..4),
        ) {
            let opts = DtwOptions { metric, band_radius: radius };
            let dp = dtw_distance(&x, &y, &opts).unwrap();
            let bf = brute_force(&x, &y, None, None, &opts);
            prop_assert!((dp - bf).abs() <= 1e-9 * (1.0 + bf.abs()));
        }

        #[test]
        fn weighted_dp_matches_brute_force(
            x in short_series(),
            y in short_series(),
            metric in metric_strategy(),
        ) {
            let wx: Vec<f64> = (0..x.len()).map(|i| 0.5 + i as f64 * 0.25).collect();
            let wy: Vec<f64> = (0..y.len()).map(|i| 2.0 - i as f64 * 0.25).collect();
            let opts = DtwOptions { metric, band_radius: None };
            let dp = weighted_dtw_distance(&x, &y, &wx, Some(&wy), &opts).unwrap();
            let bf = brute_force(&x, &y, Some(&wx), Some(&wy), &opts);
            prop_assert!((dp - bf).abs() <= 1e-9 * (1.0 + bf.abs()));
        }

        #[test]
        fn self_distance_is_zero(x in short_series(), metric in metric_strategy()) {
            let opts = DtwOptions { metric, band_radius: None };
            prop_assert_eq!(dtw_distance(&x, &x, &opts).unwrap(), 0.0);
        }

        #[test]
        fn unweighted_is_symmetric(x in short_series(), y in short_series()) {
            let opts = DtwOptions::default();
            let dxy = dtw_distance(&x, &y, &opts).unwrap();
            let dyx = dtw_distance(&y, &x, &opts).unwrap();
            prop_assert_eq!(dxy, dyx);
        }

        #[test]
        fn distance_is_non_negative(
            x in short_series(),
            y in short_series(),
            metric in metric_strategy(),
        ) {
            let opts = DtwOptions { metric, band_radius: None };
            prop_assert!(dtw_distance(&x, &y, &opts).unwrap() >= 0.0);
        }

        #[test]
        fn path_cost_equals_distance(
            x in short_series(),
            y in short_series(),
            metric in metric_strategy(),
            radius in prop::option::of(0usize..4),
        ) {
            let opts = DtwOptions { metric, band_radius: radius };
            let res = dtw_alignment(&x, &y, &opts).unwrap();
            // path starts and ends at the corners and moves monotonically
            prop_assert_eq!(res.path[0], (0, 0));
            prop_assert_eq!(*res.path.last().unwrap(), (x.len() - 1, y.len() - 1));
            for w in res.path.windows(2) {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                prop_assert!(di <= 1 && dj <= 1 && di + dj >= 1);
            }
            let cost: f64 = res
                .path
                .iter()
                .map(|&(i, j)| metric.eval(x[i], y[j]))
                .sum();
            prop_assert!((cost - res.distance).abs() <= 1e-9 * (1.0 + cost.abs()));
        }

        #[test]
        fn no_band_equals_wide_band(x in short_series(), y in short_series()) {
            let free = dtw_distance(&x, &y, &DtwOptions::default()).unwrap();
            let wide = dtw_distance(
                &x,
                &y,
                &DtwOptions { band_radius: Some(x.len().max(y.len())), ..Default::default() },
            )
            .unwrap();
            prop_assert_eq!(free, wide);
        }

        #[test]
        fn volatility_weights_average_one(
            x in prop::collection::vec(-5.0f64..5.0, 2..40),
            window in 1usize..8,
        ) {
            let w = volatility_weights(&x, window, VOL_EPS).unwrap();
            prop_assert_eq!(w.len(), x.len());
            prop_assert!(w.iter().all(|&v| v > 0.0));
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-9);
        }
    }
}
