//! Scale-invariant pattern recognition: harvesting variable-length segments,
//! clustering them under volatility-weighted DTW, and re-segmenting series
//! against the learned pattern library.
//!
//! Segments are z-normalized at harvest so clustering sees shape, not level.
//! DTW absorbs time stretching, so one pattern can match occurrences of
//! different lengths; the segmenter compares candidates through the
//! length-normalized distance (path cost / path steps) to stay comparable
//! across lengths.

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dtw::{
    self, volatility_weights, DtwOptions, DtwResult, DEFAULT_VOL_WINDOW, VOL_EPS,
};
use crate::error::{Error, Result};
use crate::panel::STD_FLOOR;

/// How per-sample weights enter the local DTW cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Plain DTW.
    None,
    /// Weights from trailing rolling volatility of each segment.
    Volatility,
}

/// Distance policy used for clustering and segmentation. Stored in the
/// library so a saved library reproduces the exact metric it was built with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub dtw: DtwOptions,
    pub weight_mode: WeightMode,
    /// Trailing window for rolling volatility.
    pub vol_window: usize,
    /// Average both sides' weights instead of weighting the query only.
    /// Symmetric weighting makes the distance symmetric in its arguments.
    pub symmetric: bool,
}

impl Default for DistanceSpec {
    fn default() -> Self {
        DistanceSpec {
            dtw: DtwOptions::default(),
            weight_mode: WeightMode::Volatility,
            vol_window: DEFAULT_VOL_WINDOW,
            symmetric: false,
        }
    }
}

impl DistanceSpec {
    /// Weights for one series under this policy.
    pub fn weights_for(&self, values: &[f64]) -> Result<Option<Vec<f64>>> {
        match self.weight_mode {
            WeightMode::None => Ok(None),
            WeightMode::Volatility => {
                Ok(Some(volatility_weights(values, self.vol_window, VOL_EPS)?))
            }
        }
    }

    /// Distance from query `x` (weights `wx`) to target `y` (weights `wy`).
    /// `wy` is only consulted in symmetric mode.
    pub fn distance(
        &self,
        x: &[f64],
        wx: Option<&[f64]>,
        y: &[f64],
        wy: Option<&[f64]>,
    ) -> Result<f64> {
        match (wx, self.symmetric) {
            (None, _) => dtw::dtw_distance(x, y, &self.dtw),
            (Some(wx), false) => dtw::weighted_dtw_distance(x, y, wx, None, &self.dtw),
            (Some(wx), true) => dtw::weighted_dtw_distance(x, y, wx, wy, &self.dtw),
        }
    }

    /// Like [`DistanceSpec::distance`] but with the warping path, for
    /// length-normalized comparisons.
    pub fn alignment(
        &self,
        x: &[f64],
        wx: Option<&[f64]>,
        y: &[f64],
        wy: Option<&[f64]>,
    ) -> Result<DtwResult> {
        match (wx, self.symmetric) {
            (None, _) => dtw::dtw_alignment(x, y, &self.dtw),
            (Some(wx), false) => dtw::weighted_dtw_alignment(x, y, wx, None, &self.dtw),
            (Some(wx), true) => dtw::weighted_dtw_alignment(x, y, wx, wy, &self.dtw),
        }
    }
}

/// One harvested, z-normalized window with provenance into its source series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub values: Vec<f64>,
    pub source_start: usize,
    pub source_len: usize,
}

/// Learned pattern library: DBA centroids plus the distance policy and
/// clustering trace needed to reuse or audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternLibrary {
    pub format_version: u32,
    pub k: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub distance: DistanceSpec,
    pub centroids: Vec<Vec<f64>>,
    /// Final clustering objective: sum of member-to-centroid distances.
    pub inertia: f64,
    /// Objective after each assignment pass; non-increasing.
    pub inertia_trace: Vec<f64>,
}

/// Current on-disk format for [`PatternLibrary`].
pub const LIBRARY_FORMAT_VERSION: u32 = 1;

impl PatternLibrary {
    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Data(format!("cannot open library '{}': {e}", path.as_ref().display()))
        })?;
        let lib: PatternLibrary = serde_json::from_reader(std::io::BufReader::new(file))?;
        if lib.format_version != LIBRARY_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported library format version {} (expected {})",
                lib.format_version, LIBRARY_FORMAT_VERSION
            )));
        }
        Ok(lib)
    }
}

/// Pattern-based split of one series into contiguous segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Start index of each segment; first is always 0, strictly increasing.
    pub boundaries: Vec<usize>,
    /// Segment lengths; they sum to the series length.
    pub lengths: Vec<usize>,
    /// Library centroid matched by each segment.
    pub assignments: Vec<usize>,
    /// Length-normalized distance of each segment to its centroid.
    pub distances: Vec<f64>,
    /// True when a tail shorter than `l_min` was folded into the last segment.
    pub merged_tail: bool,
}

/// Clustering configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub l_min: usize,
    pub l_max: usize,
    /// Harvest stride between window starts.
    pub stride: usize,
    pub max_iter: usize,
    /// Relative inertia improvement below which clustering stops.
    pub tol: f64,
    /// Centroid-averaging refinement passes per update phase.
    pub dba_iterations: usize,
    pub seed: u64,
    pub distance: DistanceSpec,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 8,
            l_min: 8,
            l_max: 24,
            stride: 4,
            max_iter: 20,
            tol: 1e-4,
            dba_iterations: 5,
            seed: 7,
            distance: DistanceSpec::default(),
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("cluster count k must be at least 1".into()));
        }
        if self.l_min < 2 {
            return Err(Error::Config("l_min must be at least 2".into()));
        }
        if self.l_max < self.l_min {
            return Err(Error::Config(format!(
                "l_max {} must be >= l_min {}",
                self.l_max, self.l_min
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("harvest stride must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.tol < 0.0 || !self.tol.is_finite() {
            return Err(Error::Config("tol must be finite and non-negative".into()));
        }
        if self.dba_iterations == 0 {
            return Err(Error::Config("dba_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Z-score a window against its own statistics (population std, floored).
pub fn z_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Harvests every window of length `l_min..=l_max` at the given stride,
/// z-normalizing each. Windows are ordered by length, then start.
pub fn harvest_segments(
    series: &[f64],
    l_min: usize,
    l_max: usize,
    stride: usize,
) -> Result<Vec<Segment>> {
    if l_min < 2 || l_max < l_min || stride == 0 {
        return Err(Error::Argument(format!(
            "invalid harvest parameters l_min={l_min}, l_max={l_max}, stride={stride}"
        )));
    }
    if series.len() < l_min {
        return Err(Error::Argument(format!(
            "series length {} is shorter than l_min {l_min}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("series contains non-finite values".into()));
    }
    let mut segments = Vec::new();
    for l in l_min..=l_max.min(series.len()) {
        let mut start = 0;
        while start + l <= series.len() {
            segments.push(Segment {
                values: z_normalize(&series[start..start + l]),
                source_start: start,
                source_len: l,
            });
            start += stride;
        }
    }
    Ok(segments)
}

/// Picks `k` diverse initial centroids.
///
/// The first pick is drawn (seeded) from the segments of the modal harvested
/// length; each later pick maximizes the minimum distance to the picks so
/// far. Returns indices into `segments`.
pub fn farthest_first_init(
    segments: &[Segment],
    k: usize,
    spec: &DistanceSpec,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 || k > segments.len() {
        return Err(Error::Config(format!(
            "k={k} must be in 1..={} (number of segments)",
            segments.len()
        )));
    }
    let weights: Vec<Option<Vec<f64>>> =
        segments.iter().map(|s| spec.weights_for(&s.values)).collect::<Result<_>>()?;

    // modal length; ties resolved toward the shorter length
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for s in segments {
        *counts.entry(s.values.len()).or_insert(0) += 1;
    }
    let modal_len = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(l, _)| *l)
        .expect("segments non-empty");
    let modal_ids: Vec<usize> =
        (0..segments.len()).filter(|&i| segments[i].values.len() == modal_len).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = modal_ids[rng.random_range(0..modal_ids.len())];

    let mut chosen = vec![first];
    let mut min_dist = vec![f64::INFINITY; segments.len()];
    while chosen.len() < k {
        let last = *chosen.last().unwrap();
        for i in 0..segments.len() {
            let d = spec.distance(
                &segments[i].values,
                weights[i].as_deref(),
                &segments[last].values,
                weights[last].as_deref(),
            )?;
            if d < min_dist[i] {
                min_dist[i] = d;
            }
        }
        let mut best = None;
        for i in 0..segments.len() {
            if chosen.contains(&i) {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if min_dist[i] > min_dist[b] {
                        best = Some(i);
                    }
                }
            }
        }
        chosen.push(best.expect("k <= segments.len() leaves a candidate"));
    }
    Ok(chosen)
}

/// One DTW barycenter-averaging refinement of `init` against `members`.
///
/// Each pass aligns every member to the current centroid and replaces each
/// centroid sample with the mean of the member samples warped onto it. A
/// candidate is kept only if it strictly lowers the summed member distance,
/// so the returned centroid is never worse than `init`.
pub fn dba_centroid(
    members: &[&[f64]],
    member_weights: Option<&[Option<Vec<f64>>]>,
    init: &[f64],
    iterations: usize,
    spec: &DistanceSpec,
) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::Argument("centroid averaging requires at least one member".into()));
    }
    if init.is_empty() {
        return Err(Error::Argument("initial centroid is empty".into()));
    }
    let weight_of = |i: usize| -> Option<&[f64]> {
        member_weights.and_then(|w| w[i].as_deref())
    };

    let total_cost = |centroid: &[f64]| -> Result<f64> {
        let wc = spec.weights_for(centroid)?;
        let mut sum = 0.0;
        for (i, m) in members.iter().enumerate() {
            sum += spec.distance(m, weight_of(i), centroid, wc.as_deref())?;
        }
        Ok(sum)
    };

    let mut centroid = init.to_vec();
    let mut best_cost = total_cost(&centroid)?;
    for _ in 0..iterations {
        let wc = spec.weights_for(&centroid)?;
        let mut sums = vec![0.0; centroid.len()];
        let mut hits = vec![0usize; centroid.len()];
        for (i, m) in members.iter().enumerate() {
            let res = spec.alignment(m, weight_of(i), &centroid, wc.as_deref())?;
            for &(mi, ci) in &res.path {
                sums[ci] += m[mi];
                hits[ci] += 1;
            }
        }
        // every centroid index lies on at least one path endpoint-to-endpoint
        let candidate: Vec<f64> =
            sums.iter().zip(&hits).map(|(s, &h)| s / h as f64).collect();
        let cost = total_cost(&candidate)?;
        if cost < best_cost {
            centroid = candidate;
            best_cost = cost;
        } else {
            break;
        }
    }
    Ok(centroid)
}

/// K-means over harvested segments with DTW assignment and DBA updates.
///
/// The inertia trace it records is non-increasing: assignments only re-pick
/// minima, centroid updates are guarded, and empty clusters are reseeded to
/// an existing segment, which never worsens any current assignment.
pub fn kmeans_cluster(segments: &[Segment], cfg: &ClusterConfig) -> Result<PatternLibrary> {
    cfg.validate()?;
    if segments.is_empty() {
        return Err(Error::Data("no segments to cluster".into()));
    }
    if cfg.k > segments.len() {
        return Err(Error::Config(format!(
            "k={} exceeds the {} harvested segments",
            cfg.k,
            segments.len()
        )));
    }
    let spec = &cfg.distance;
    let seg_weights: Vec<Option<Vec<f64>>> =
        segments.iter().map(|s| spec.weights_for(&s.values)).collect::<Result<_>>()?;

    let init_ids = farthest_first_init(segments, cfg.k, spec, cfg.seed)?;
    let mut centroids: Vec<Vec<f64>> =
        init_ids.iter().map(|&i| segments[i].values.clone()).collect();

    let mut assignments = vec![usize::MAX; segments.len()];
    let mut distances = vec![f64::INFINITY; segments.len()];
    let mut trace = Vec::new();

    for _ in 0..cfg.max_iter {
        // assignment phase
        let centroid_weights: Vec<Option<Vec<f64>>> =
            centroids.iter().map(|c| spec.weights_for(c)).collect::<Result<_>>()?;
        let mut changed = false;
        for (i, seg) in segments.iter().enumerate() {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = spec.distance(
                    &seg.values,
                    seg_weights[i].as_deref(),
                    centroid,
                    centroid_weights[c].as_deref(),
                )?;
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if assignments[i] != best_c {
                changed = true;
            }
            assignments[i] = best_c;
            distances[i] = best_d;
        }
        let inertia: f64 = distances.iter().sum();
        let prev = trace.last().copied();
        trace.push(inertia);
        if let Some(prev) = prev {
            let denom = prev.abs().max(f64::MIN_POSITIVE);
            if !changed || (prev - inertia) / denom <= cfg.tol {
                break;
            }
        }

        // update phase
        for c in 0..cfg.k {
            let member_ids: Vec<usize> =
                (0..segments.len()).filter(|&i| assignments[i] == c).collect();
            if member_ids.is_empty() {
                // reseed to the segment that fits its own cluster worst
                let far = (0..segments.len())
                    .max_by(|&a, &b| distances[a].total_cmp(&distances[b]))
                    .expect("segments non-empty");
                centroids[c] = segments[far].values.clone();
                continue;
            }
            let members: Vec<&[f64]> =
                member_ids.iter().map(|&i| segments[i].values.as_slice()).collect();
            let weights: Vec<Option<Vec<f64>>> =
                member_ids.iter().map(|&i| seg_weights[i].clone()).collect();
            centroids[c] = dba_centroid(
                &members,
                Some(&weights),
                &centroids[c],
                cfg.dba_iterations,
                spec,
            )?;
        }
    }

    Ok(PatternLibrary {
        format_version: LIBRARY_FORMAT_VERSION,
        k: cfg.k,
        l_min: cfg.l_min,
        l_max: cfg.l_max,
        distance: *spec,
        centroids,
        inertia: *trace.last().expect("at least one assignment pass"),
        inertia_trace: trace,
    })
}

/// Greedy left-to-right segmentation of `series` against a library.
///
/// At each position every candidate length in `[l_min, l_max]` is z-scored
/// and matched to every centroid by length-normalized DTW; the cheapest
/// `(length, centroid)` wins, with ties broken toward the shorter length and
/// then the lower centroid index. A final stub shorter than `l_min` is merged
/// into the last segment, which is then re-matched at its full length.
pub fn segment_series(series: &[f64], library: &PatternLibrary) -> Result<Segmentation> {
    if library.centroids.is_empty() {
        return Err(Error::Data("pattern library has no centroids".into()));
    }
    if series.len() < library.l_min {
        return Err(Error::Argument(format!(
            "series length {} is shorter than l_min {}",
            series.len(),
            library.l_min
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("series contains non-finite values".into()));
    }
    let spec = &library.distance;
    let centroid_weights: Vec<Option<Vec<f64>>> =
        library.centroids.iter().map(|c| spec.weights_for(c)).collect::<Result<_>>()?;

    let match_window = |window: &[f64]| -> Result<(usize, f64)> {
        let z = z_normalize(window);
        let wz = spec.weights_for(&z)?;
        let mut best = (0usize, f64::INFINITY);
        for (c, centroid) in library.centroids.iter().enumerate() {
            let res =
                spec.alignment(&z, wz.as_deref(), centroid, centroid_weights[c].as_deref())?;
            let d = res.normalized();
            if d < best.1 {
                best = (c, d);
            }
        }
        Ok(best)
    };

    let mut boundaries = Vec::new();
    let mut lengths = Vec::new();
    let mut assignments = Vec::new();
    let mut distances = Vec::new();
    let mut pos = 0usize;
    while series.len() - pos >= library.l_min {
        let mut best: Option<(f64, usize, usize)> = None; // (dist, len, centroid)
        let l_hi = library.l_max.min(series.len() - pos);
        for l in library.l_min..=l_hi {
            let (c, d) = match_window(&series[pos..pos + l])?;
            if best.map_or(true, |b| d < b.0) {
                best = Some((d, l, c));
            }
        }
        let (d, l, c) = best.expect("at least one candidate length");
        boundaries.push(pos);
        lengths.push(l);
        assignments.push(c);
        distances.push(d);
        pos += l;
    }

    let tail = series.len() - pos;
    let merged_tail = tail > 0;
    if merged_tail {
        let last = lengths.len() - 1;
        lengths[last] += tail;
        let start = boundaries[last];
        let (c, d) = match_window(&series[start..start + lengths[last]])?;
        assignments[last] = c;
        distances[last] = d;
    }

    Ok(Segmentation { boundaries, lengths, assignments, distances, merged_tail })
}
