//! Overlapping fixed-length patches over flattened channels.
//!
//! Patch starts merge two sources: segment boundaries (shifted into the
//! window) and a regular stride grid. The final position `L - P` is always
//! included so the most recent observations are never cut off.

use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sipr::Segmentation;

/// Where a patch start came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchOrigin {
    /// A segmentation boundary shifted into the window.
    Segment,
    /// The regular stride grid (includes the forced final position).
    Stride,
}

/// A patch start position with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractionPoint {
    pub position: usize,
    pub origin: PatchOrigin,
}

/// Patches of one channel: rows of `patches` are verbatim copies of
/// `source[position .. position + P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// N_p x P patch values.
    pub patches: Array2<f64>,
    /// Ascending, duplicate-free start positions in `[0, L - P]`.
    pub positions: Vec<usize>,
    pub origins: Vec<PatchOrigin>,
    /// Flattened channel index this set was cut from.
    pub channel: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn patch_len(&self) -> usize {
        self.patches.ncols()
    }
}

/// Patching configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
    /// Drop stride-grid patches that straddle a segment boundary. Segment
    /// patches and the forced final patch are always kept.
    pub drop_crossing: bool,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig { patch_len: 16, stride: 8, drop_crossing: false }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_len == 0 {
            return Err(Error::Config("patch length must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("patch stride must be at least 1".into()));
        }
        if self.stride > self.patch_len {
            return Err(Error::Config(format!(
                "stride {} exceeds patch length {}; windows would leave gaps",
                self.stride, self.patch_len
            )));
        }
        Ok(())
    }
}

/// Splits a B x M x L window into B*M univariate sequences, stock-major:
/// channel `s * M + f` holds stock `s`, feature `f`.
pub fn flatten_channels(window: ArrayView3<'_, f64>) -> Vec<Vec<f64>> {
    let (b, m, _l) = window.dim();
    let mut out = Vec::with_capacity(b * m);
    for s in 0..b {
        for f in 0..m {
            out.push(window.index_axis(ndarray::Axis(0), s).row(f).to_vec());
        }
    }
    out
}

/// Merges shifted segment boundaries with the stride grid.
///
/// Boundaries are shifted by `-window_start` and kept only when they fall in
/// `[0, L - P]`. The final position `L - P` is always present. When a
/// position is claimed by both sources, the segment origin wins. With
/// `drop_crossing`, stride positions whose patch strictly straddles a shifted
/// boundary are removed (the forced final position is exempt).
pub fn extraction_points(
    segmentation: Option<&Segmentation>,
    window_start: usize,
    window_len: usize,
    patch_len: usize,
    stride: usize,
    drop_crossing: bool,
) -> Result<Vec<ExtractionPoint>> {
    if patch_len > window_len {
        return Err(Error::Argument(format!(
            "patch length {patch_len} exceeds window length {window_len}"
        )));
    }
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let last = window_len - patch_len;

    let shifted: Vec<usize> = segmentation
        .map(|seg| {
            seg.boundaries
                .iter()
                .filter_map(|&b| b.checked_sub(window_start))
                .filter(|&p| p <= last)
                .collect()
        })
        .unwrap_or_default();

    let mut points = std::collections::BTreeMap::<usize, PatchOrigin>::new();
    let mut grid = 0usize;
    while grid <= last {
        let keep = !drop_crossing
            || grid == last
            || !shifted.iter().any(|&b| grid < b && b < grid + patch_len);
        if keep {
            points.insert(grid, PatchOrigin::Stride);
        }
        grid += stride;
    }
    points.insert(last, PatchOrigin::Stride);
    for b in shifted {
        points.insert(b, PatchOrigin::Segment); // segment origin wins ties
    }

    Ok(points
        .into_iter()
        .map(|(position, origin)| ExtractionPoint { position, origin })
        .collect())
}

/// Copies the patch at every extraction point.
pub fn extract_patches(
    sequence: &[f64],
    points: &[ExtractionPoint],
    patch_len: usize,
    channel: usize,
) -> Result<PatchSet> {
    if points.is_empty() {
        return Err(Error::Argument("no extraction points".into()));
    }
    for w in points.windows(2) {
        if w[0].position >= w[1].position {
            return Err(Error::Argument("extraction points must be strictly ascending".into()));
        }
    }
    if points.last().unwrap().position + patch_len > sequence.len() {
        return Err(Error::Argument(format!(
            "position {} with patch length {patch_len} overruns sequence length {}",
            points.last().unwrap().position,
            sequence.len()
        )));
    }
    let mut patches = Array2::<f64>::zeros((points.len(), patch_len));
    for (row, pt) in points.iter().enumerate() {
        for (col, &v) in sequence[pt.position..pt.position + patch_len].iter().enumerate() {
            patches[(row, col)] = v;
        }
    }
    Ok(PatchSet {
        patches,
        positions: points.iter().map(|p| p.position).collect(),
        origins: points.iter().map(|p| p.origin).collect(),
        channel,
    })
}

/// Pairs each patch with its successor: `N_p - 1` (input, target) rows.
pub fn next_patch_targets(set: &PatchSet) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "next-patch pairing needs at least 2 patches, got {n}"
        )));
    }
    let p = set.patch_len();
    let inputs = set.patches.slice(ndarray::s![..n - 1, ..]).to_owned();
    let targets = set.patches.slice(ndarray::s![1.., ..]).to_owned();
    debug_assert_eq!(inputs.dim(), (n - 1, p));
    Ok((inputs, targets))
}
