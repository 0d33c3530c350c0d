//! Next-patch predictor and cross-sectional scorer.
//!
//! A deliberately small autoregressive model: patch tokens are embedded,
//! mixed by one causal single-head self-attention layer with a residual
//! connection, then read out by two linear heads (next-patch values and a
//! scalar return score). Small enough that every gradient is hand-derived
//! and checkable against finite differences, including the chain through the
//! wavelet taps: tokens are recomputed from the raw series each step, so
//! filter updates flow into the next forward pass.
//!
//! Training is plain gradient descent over a fixed sample order; the only
//! randomness is the seeded parameter init, which makes runs bit-reproducible
//! and resume-from-checkpoint exact.

use ndarray::{Array1, Array2, ArrayView3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{extraction_points, PatchConfig};
use crate::sipr::Segmentation;
use crate::swt::{swt_backward, swt_forward, FilterBank, Padding, SwtCoefficients};

/// Which objective the fine-tuning stage optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    NextPatch,
    Score,
    /// Equal-weight sum of both losses.
    Joint,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "next_patch" => Ok(LossMode::NextPatch),
            "score" => Ok(LossMode::Score),
            "joint" => Ok(LossMode::Joint),
            other => Err(Error::Argument(format!("unknown loss mode '{other}'"))),
        }
    }
}

/// Model and schedule settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Stage-1 epochs (next-patch objective).
    pub pretrain_epochs: usize,
    /// Stage-2 epochs (loss_mode objective, filters trainable).
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Let stage 1 update the wavelet taps too (stage 2 always does,
    /// unless `filters_frozen`).
    pub wavelet_trainable: bool,
    /// Ablation switch: keep the wavelet taps fixed in every stage.
    pub filters_frozen: bool,
    pub loss_mode: LossMode,
    pub window_len: usize,
    pub window_stride: usize,
    /// Model width D.
    pub dim: usize,
    /// Wavelet decomposition depth S.
    pub levels: usize,
    pub padding: Padding,
    pub patch: PatchConfig,
    /// Weight of the soft filter-stability penalty
    /// `(sum h - sqrt 2)^2 + (sum g)^2`; zero disables it.
    pub ortho_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            pretrain_epochs: 20,
            finetune_epochs: 20,
            batch_size: 16,
            seed: 7,
            wavelet_trainable: false,
            filters_frozen: false,
            loss_mode: LossMode::Score,
            window_len: 64,
            window_stride: 8,
            dim: 16,
            levels: 3,
            padding: Padding::Zero,
            patch: PatchConfig::default(),
            ortho_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) && self.learning_rate != 0.0 {
            return Err(Error::Config("learning rate must be non-negative and finite".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be non-negative and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("model width must be at least 1".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("wavelet levels must be at least 1".into()));
        }
        if self.window_len < self.patch.patch_len {
            return Err(Error::Config(format!(
                "window length {} is shorter than patch length {}",
                self.window_len, self.patch.patch_len
            )));
        }
        if self.window_stride == 0 {
            return Err(Error::Config("window stride must be at least 1".into()));
        }
        if self.ortho_penalty < 0.0 || !self.ortho_penalty.is_finite() {
            return Err(Error::Config("ortho penalty must be finite and non-negative".into()));
        }
        self.patch.validate()
    }

    /// Flattened token width P*(S+1).
    pub fn token_dim(&self) -> usize {
        self.patch.patch_len * (self.levels + 1)
    }
}

/// All trainable weights apart from the wavelet taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub patch_len: usize,
    pub dim: usize,
    pub levels: usize,
    pub embed_w: Array2<f64>,
    pub embed_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub score_w: Array1<f64>,
    pub score_b: f64,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * a)
}

impl PredictorParams {
    /// Seeded initialization: Xavier-uniform weights, zero biases.
    pub fn init(patch_len: usize, dim: usize, levels: usize, seed: u64) -> Self {
        let token = patch_len * (levels + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PredictorParams {
            patch_len,
            dim,
            levels,
            embed_w: xavier(&mut rng, dim, token),
            embed_b: Array1::zeros(dim),
            wq: xavier(&mut rng, dim, dim),
            wk: xavier(&mut rng, dim, dim),
            wv: xavier(&mut rng, dim, dim),
            wo: xavier(&mut rng, dim, dim),
            head_w: xavier(&mut rng, patch_len, dim),
            head_b: Array1::zeros(patch_len),
            score_w: Array1::from_shape_fn(dim, |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * (1.0 / (dim as f64).sqrt())
            }),
            score_b: 0.0,
        }
    }

    pub fn token_dim(&self) -> usize {
        self.patch_len * (self.levels + 1)
    }

    fn check_finite(&self) -> Result<()> {
        let all_finite = self.embed_w.iter().all(|v| v.is_finite())
            && self.embed_b.iter().all(|v| v.is_finite())
            && self.wq.iter().all(|v| v.is_finite())
            && self.wk.iter().all(|v| v.is_finite())
            && self.wv.iter().all(|v| v.is_finite())
            && self.wo.iter().all(|v| v.is_finite())
            && self.head_w.iter().all(|v| v.is_finite())
            && self.head_b.iter().all(|v| v.is_finite())
            && self.score_w.iter().all(|v| v.is_finite())
            && self.score_b.is_finite();
        if all_finite {
            Ok(())
        } else {
            Err(Error::Numeric("model parameters are no longer finite".into()))
        }
    }
}

/// Gradients with the same shapes as [`PredictorParams`].
#[derive(Debug, Clone)]
struct ParamGrads {
    embed_w: Array2<f64>,
    embed_b: Array1<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    head_w: Array2<f64>,
    head_b: Array1<f64>,
    score_w: Array1<f64>,
    score_b: f64,
}

impl ParamGrads {
    fn zeros(p: &PredictorParams) -> Self {
        ParamGrads {
            embed_w: Array2::zeros(p.embed_w.dim()),
            embed_b: Array1::zeros(p.embed_b.len()),
            wq: Array2::zeros(p.wq.dim()),
            wk: Array2::zeros(p.wk.dim()),
            wv: Array2::zeros(p.wv.dim()),
            wo: Array2::zeros(p.wo.dim()),
            head_w: Array2::zeros(p.head_w.dim()),
            head_b: Array1::zeros(p.head_b.len()),
            score_w: Array1::zeros(p.score_w.len()),
            score_b: 0.0,
        }
    }
}

/// Everything the backward pass needs from a forward pass.
struct ForwardCache {
    tokens: Array2<f64>,
    embedded: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    ctx: Array2<f64>,
    out: Array2<f64>,
    preds: Array2<f64>,
    scores: Array1<f64>,
}

/// `rows(out)[i] = m * rows(x)[i]` for row-major sequences.
fn seq_linear(x: &Array2<f64>, m: &Array2<f64>) -> Array2<f64> {
    x.dot(&m.t())
}

fn forward_cached(params: &PredictorParams, tokens: &Array2<f64>) -> Result<ForwardCache> {
    let n = tokens.nrows();
    if n == 0 {
        return Err(Error::Argument("forward pass needs at least one patch".into()));
    }
    if tokens.ncols() != params.token_dim() {
        return Err(Error::Argument(format!(
            "token width {} does not match model token width {}",
            tokens.ncols(),
            params.token_dim()
        )));
    }
    let d = params.dim;
    let mut embedded = seq_linear(tokens, &params.embed_w);
    for mut row in embedded.rows_mut() {
        row += &params.embed_b;
    }
    let q = seq_linear(&embedded, &params.wq);
    let k = seq_linear(&embedded, &params.wk);
    let v = seq_linear(&embedded, &params.wv);

    // causal softmax attention; row i attends to positions <= i
    let scale = 1.0 / (d as f64).sqrt();
    let mut attn = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut max_logit = f64::NEG_INFINITY;
        let mut logits = vec![0.0; i + 1];
        for (j, logit) in logits.iter_mut().enumerate() {
            *logit = q.row(i).dot(&k.row(j)) * scale;
            if *logit > max_logit {
                max_logit = *logit;
            }
        }
        let mut denom = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max_logit).exp();
            denom += *l;
        }
        for (j, l) in logits.iter().enumerate() {
            attn[(i, j)] = l / denom;
        }
    }
    let ctx = attn.dot(&v);
    let out = &embedded + &seq_linear(&ctx, &params.wo);

    let mut preds = seq_linear(&out, &params.head_w);
    for mut row in preds.rows_mut() {
        row += &params.head_b;
    }
    let scores = out.dot(&params.score_w) + params.score_b;

    Ok(ForwardCache { tokens: tokens.clone(), embedded, q, k, v, attn, ctx, out, preds, scores })
}

/// Runs the model over a patch-token sequence.
///
/// `tokens` is N_p x P x (S+1); returns per-position next-patch predictions
/// (N_p x P) and scalar scores (N_p). Position `i` only sees tokens `<= i`.
pub fn forward(
    params: &PredictorParams,
    tokens: ArrayView3<'_, f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (n, p, s1) = tokens.dim();
    if p != params.patch_len || s1 != params.levels + 1 {
        return Err(Error::Argument(format!(
            "token shape {p}x{s1} does not match model P={} S+1={}",
            params.patch_len,
            params.levels + 1
        )));
    }
    let flat = flatten_tokens(&tokens);
    let cache = forward_cached(params, &flat)?;
    let _ = n;
    Ok((cache.preds, cache.scores))
}

fn flatten_tokens(tokens: &ArrayView3<'_, f64>) -> Array2<f64> {
    let (n, p, s1) = tokens.dim();
    let mut flat = Array2::<f64>::zeros((n, p * s1));
    for i in 0..n {
        for t in 0..p {
            for lev in 0..s1 {
                flat[(i, t * s1 + lev)] = tokens[(i, t, lev)];
            }
        }
    }
    flat
}

/// Backward through heads, attention, and embedding.
///
/// `d_preds` / `d_scores` are upstream loss gradients; returns the gradient
/// w.r.t. the flat token matrix and accumulates parameter gradients.
fn backward_cached(
    params: &PredictorParams,
    cache: &ForwardCache,
    d_preds: &Array2<f64>,
    d_scores: &Array1<f64>,
    grads: &mut ParamGrads,
) -> Array2<f64> {
    let n = cache.tokens.nrows();
    let d = params.dim;
    let scale = 1.0 / (d as f64).sqrt();

    // heads
    let mut d_out = d_preds.dot(&params.head_w);
    grads.head_w += &d_preds.t().dot(&cache.out);
    for row in d_preds.rows() {
        grads.head_b += &row;
    }
    for i in 0..n {
        let ds = d_scores[i];
        if ds != 0.0 {
            for j in 0..d {
                d_out[(i, j)] += ds * params.score_w[j];
                grads.score_w[j] += ds * cache.out[(i, j)];
            }
            grads.score_b += ds;
        }
    }

    // residual: out = embedded + ctx * Wo^T
    let mut d_embedded = d_out.clone();
    let d_ctx = d_out.dot(&params.wo);
    grads.wo += &d_out.t().dot(&cache.ctx);

    // ctx = attn * v
    let mut d_attn = d_ctx.dot(&cache.v.t());
    let d_v = cache.attn.t().dot(&d_ctx);

    // softmax rows (causal: entries beyond the diagonal are identically zero)
    let mut d_logits = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..=i {
            dot += cache.attn[(i, j)] * d_attn[(i, j)];
        }
        for j in 0..=i {
            d_logits[(i, j)] = cache.attn[(i, j)] * (d_attn[(i, j)] - dot);
        }
        for j in i + 1..n {
            d_attn[(i, j)] = 0.0;
        }
    }

    // logits_{ij} = scale * q_i . k_j
    let mut d_q = Array2::<f64>::zeros((n, d));
    let mut d_k = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in 0..=i {
            let g = d_logits[(i, j)] * scale;
            if g != 0.0 {
                for c in 0..d {
                    d_q[(i, c)] += g * cache.k[(j, c)];
                    d_k[(j, c)] += g * cache.q[(i, c)];
                }
            }
        }
    }

    // projections q/k/v from embedded
    grads.wq += &d_q.t().dot(&cache.embedded);
    grads.wk += &d_k.t().dot(&cache.embedded);
    grads.wv += &d_v.t().dot(&cache.embedded);
    d_embedded += &d_q.dot(&params.wq);
    d_embedded += &d_k.dot(&params.wk);
    d_embedded += &d_v.dot(&params.wv);

    // embedding
    grads.embed_w += &d_embedded.t().dot(&cache.tokens);
    for row in d_embedded.rows() {
        grads.embed_b += &row;
    }
    d_embedded.dot(&params.embed_w)
}

/// Mean squared error over all patch elements; zero iff exact.
pub fn next_patch_loss(preds: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if preds.dim() != targets.dim() {
        return Err(Error::Argument(format!(
            "prediction shape {:?} does not match target shape {:?}",
            preds.dim(),
            targets.dim()
        )));
    }
    let n = preds.len();
    if n == 0 {
        return Err(Error::Argument("empty prediction".into()));
    }
    let sum: f64 = preds.iter().zip(targets.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / n as f64)
}

/// One training sample: a channel window with its patch layout.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Raw (normalized) channel values over the window.
    pub series: Vec<f64>,
    /// Patch start positions within the window.
    pub positions: Vec<usize>,
    /// Filter-bank pair index this channel uses.
    pub filter_idx: usize,
    /// Next-day return realized after the window's final day, when known.
    pub label: Option<f64>,
}

/// Prepared training set.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub samples: Vec<Sample>,
}

/// Cuts a panel window grid into per-channel samples.
///
/// Windows of `cfg.window_len` slide by `cfg.window_stride` over the panel.
/// Patch positions merge each stock's segmentation boundaries (when given)
/// with the stride grid; all features of a stock share the positions derived
/// from its price-series segmentation. Labels come from `labels` at the
/// window's final day when that return is inside the panel.
pub fn build_train_data(
    panel: &crate::panel::StockPanel,
    labels: &crate::panel::ReturnLabels,
    segmentations: Option<&[Segmentation]>,
    cfg: &TrainConfig,
    bank: &FilterBank,
) -> Result<TrainData> {
    cfg.validate()?;
    let b = panel.num_stocks();
    let m = panel.num_features();
    let t = panel.num_days();
    if let Some(segs) = segmentations {
        if segs.len() != b {
            return Err(Error::Argument(format!(
                "{} segmentations for {b} stocks",
                segs.len()
            )));
        }
    }
    if labels.values.dim() != (b, t - 1) {
        return Err(Error::Argument("labels do not align with the panel".into()));
    }
    if cfg.window_len > t {
        return Err(Error::Data(format!(
            "window length {} exceeds the {} available days",
            cfg.window_len, t
        )));
    }
    if !bank.is_shared() && bank.num_pairs() != m {
        return Err(Error::Argument(format!(
            "filter bank has {} channels but panel has {m} features",
            bank.num_pairs()
        )));
    }

    let mut samples = Vec::new();
    let mut start = 0usize;
    while start + cfg.window_len <= t {
        let end = start + cfg.window_len; // exclusive
        for s in 0..b {
            let seg = segmentations.map(|segs| &segs[s]);
            let points = extraction_points(
                seg,
                start,
                cfg.window_len,
                cfg.patch.patch_len,
                cfg.patch.stride,
                cfg.patch.drop_crossing,
            )?;
            let positions: Vec<usize> = points.iter().map(|p| p.position).collect();
            let label = if end - 1 < t - 1 { Some(labels.values[(s, end - 1)]) } else { None };
            for f in 0..m {
                let series: Vec<f64> =
                    (start..end).map(|ti| panel.values[(s, f, ti)]).collect();
                samples.push(Sample {
                    series,
                    positions: positions.clone(),
                    filter_idx: bank.pair_index(f),
                    label,
                });
            }
        }
        start += cfg.window_stride;
    }
    if samples.is_empty() {
        return Err(Error::Data("no training windows could be formed".into()));
    }
    if samples.iter().all(|s| {
        let first = s.series[0];
        s.series.iter().all(|&v| v == first)
    }) {
        log::warn!("training data is constant; losses will be degenerate");
    }
    Ok(TrainData { samples })
}

/// Tokens for one sample under the current filters: rows are patches, columns
/// flatten (time within patch) x (level), stacking [d1..dS, cS].
fn sample_tokens(
    sample: &Sample,
    bank: &FilterBank,
    cfg: &TrainConfig,
) -> Result<(SwtCoefficients, Array2<f64>)> {
    let pair = &bank.pairs()[sample.filter_idx];
    let coeffs = swt_forward(&sample.series, pair, cfg.levels, cfg.padding)?;
    let p = cfg.patch.patch_len;
    let s1 = cfg.levels + 1;
    let mut tokens = Array2::<f64>::zeros((sample.positions.len(), p * s1));
    for (row, &pos) in sample.positions.iter().enumerate() {
        for t in 0..p {
            for lev in 0..cfg.levels {
                tokens[(row, t * s1 + lev)] = coeffs.detail[lev][pos + t];
            }
            tokens[(row, t * s1 + cfg.levels)] = coeffs.approx_final[pos + t];
        }
    }
    Ok((coeffs, tokens))
}

/// Raw next-patch targets: row k holds the series values of patch k+1.
fn sample_targets(sample: &Sample, p: usize) -> Array2<f64> {
    let n = sample.positions.len();
    let rows = n.saturating_sub(1);
    let mut targets = Array2::<f64>::zeros((rows, p));
    for k in 0..rows {
        let pos = sample.positions[k + 1];
        for t in 0..p {
            targets[(k, t)] = sample.series[pos + t];
        }
    }
    targets
}

/// Per-pair tap gradients.
struct FilterGrads {
    h: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
}

impl FilterGrads {
    fn zeros(bank: &FilterBank) -> Self {
        let k = bank.taps();
        FilterGrads {
            h: vec![vec![0.0; k]; bank.num_pairs()],
            g: vec![vec![0.0; k]; bank.num_pairs()],
        }
    }
}

/// Loss and gradient of one sample under a stage's objective.
///
/// Gradients are accumulated (scaled by `weight`) into `grads`, and into
/// `filter_grads` when present.
fn sample_loss_and_grads(
    sample: &Sample,
    params: &PredictorParams,
    bank: &FilterBank,
    cfg: &TrainConfig,
    mode: LossMode,
    weight: f64,
    grads: &mut ParamGrads,
    filter_grads: Option<&mut FilterGrads>,
) -> Result<f64> {
    let (coeffs, tokens) = sample_tokens(sample, bank, cfg)?;
    let cache = forward_cached(params, &tokens)?;
    let n = tokens.nrows();
    let p = cfg.patch.patch_len;

    let mut d_preds = Array2::<f64>::zeros((n, p));
    let mut d_scores = Array1::<f64>::zeros(n);
    let mut loss = 0.0;

    let np_weight = match mode {
        LossMode::NextPatch => 1.0,
        LossMode::Score => 0.0,
        LossMode::Joint => 0.5,
    };
    let sc_weight = match mode {
        LossMode::NextPatch => 0.0,
        LossMode::Score => 1.0,
        LossMode::Joint => 0.5,
    };

    if np_weight > 0.0 && n >= 2 {
        let targets = sample_targets(sample, p);
        let preds = cache.preds.slice(ndarray::s![..n - 1, ..]);
        let count = ((n - 1) * p) as f64;
        let mut np_loss = 0.0;
        for k in 0..n - 1 {
            for t in 0..p {
                let diff = preds[(k, t)] - targets[(k, t)];
                np_loss += diff * diff;
                d_preds[(k, t)] = np_weight * 2.0 * diff / count;
            }
        }
        loss += np_weight * np_loss / count;
    }

    if sc_weight > 0.0 {
        let label = sample.label.ok_or_else(|| {
            Error::Argument("score objective requires a labeled sample".into())
        })?;
        let score = cache.scores[n - 1];
        let diff = score - label;
        loss += sc_weight * diff * diff;
        d_scores[n - 1] = sc_weight * 2.0 * diff;
    }

    // scale upstream by the batch weight, then backpropagate
    d_preds.mapv_inplace(|v| v * weight);
    d_scores.mapv_inplace(|v| v * weight);
    let d_tokens = backward_cached(params, &cache, &d_preds, &d_scores, grads);

    if let Some(fg) = filter_grads {
        // scatter token gradients back onto the window's coefficient grid
        let s1 = cfg.levels + 1;
        let mut upstream = coeffs.zeros_like();
        for (row, &pos) in sample.positions.iter().enumerate() {
            for t in 0..p {
                for lev in 0..cfg.levels {
                    upstream.detail[lev][pos + t] += d_tokens[(row, t * s1 + lev)];
                }
                upstream.approx_final[pos + t] += d_tokens[(row, t * s1 + cfg.levels)];
            }
        }
        let pair = &bank.pairs()[sample.filter_idx];
        let (_, gh, gg) =
            swt_backward(&sample.series, pair, cfg.levels, cfg.padding, &upstream)?;
        for (acc, g) in fg.h[sample.filter_idx].iter_mut().zip(&gh) {
            *acc += g;
        }
        for (acc, g) in fg.g[sample.filter_idx].iter_mut().zip(&gg) {
            *acc += g;
        }
    }
    Ok(loss)
}

fn apply_grads(params: &mut PredictorParams, grads: &ParamGrads, lr: f64) {
    params.embed_w.scaled_add(-lr, &grads.embed_w);
    params.embed_b.scaled_add(-lr, &grads.embed_b);
    params.wq.scaled_add(-lr, &grads.wq);
    params.wk.scaled_add(-lr, &grads.wk);
    params.wv.scaled_add(-lr, &grads.wv);
    params.wo.scaled_add(-lr, &grads.wo);
    params.head_w.scaled_add(-lr, &grads.head_w);
    params.head_b.scaled_add(-lr, &grads.head_b);
    params.score_w.scaled_add(-lr, &grads.score_w);
    params.score_b -= lr * grads.score_b;
}

/// Adds the soft stability penalty `(sum h - sqrt2)^2 + (sum g)^2` for every
/// pair into the filter gradients; returns the penalty value.
fn ortho_penalty(bank: &FilterBank, weight: f64, fg: &mut FilterGrads) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    for (idx, pair) in bank.pairs().iter().enumerate() {
        let sh: f64 = pair.h.iter().sum::<f64>() - std::f64::consts::SQRT_2;
        let sg: f64 = pair.g.iter().sum();
        penalty += weight * (sh * sh + sg * sg);
        for t in fg.h[idx].iter_mut() {
            *t += weight * 2.0 * sh;
        }
        for t in fg.g[idx].iter_mut() {
            *t += weight * 2.0 * sg;
        }
    }
    penalty
}

fn apply_filter_grads(bank: &mut FilterBank, fg: &FilterGrads, lr: f64) {
    for (idx, pair) in bank.pairs_mut().iter_mut().enumerate() {
        for (tap, g) in pair.h.iter_mut().zip(&fg.h[idx]) {
            *tap -= lr * g;
        }
        for (tap, g) in pair.g.iter_mut().zip(&fg.g[idx]) {
            *tap -= lr * g;
        }
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based epoch within its stage.
    pub epoch: usize,
    /// 1 = next-patch pre-training, 2 = fine-tuning.
    pub stage: u8,
    pub loss: f64,
}

/// How many epochs of each stage a checkpoint has completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainProgress {
    pub stage1_done: usize,
    pub stage2_done: usize,
}

fn run_epoch(
    data: &[&Sample],
    params: &mut PredictorParams,
    bank: &mut FilterBank,
    cfg: &TrainConfig,
    mode: LossMode,
    filters_trainable: bool,
) -> Result<f64> {
    let mut epoch_loss = 0.0;
    for batch in data.chunks(cfg.batch_size) {
        let weight = 1.0 / batch.len() as f64;
        let mut grads = ParamGrads::zeros(params);
        let mut fgrads = FilterGrads::zeros(bank);
        for sample in batch {
            let loss = sample_loss_and_grads(
                sample,
                params,
                bank,
                cfg,
                mode,
                weight,
                &mut grads,
                filters_trainable.then_some(&mut fgrads),
            )?;
            epoch_loss += loss;
        }
        if filters_trainable {
            epoch_loss += ortho_penalty(bank, cfg.ortho_penalty, &mut fgrads) * batch.len() as f64
                / data.len() as f64;
            // penalty gradients enter each batch step at full strength
        }
        apply_grads(params, &grads, cfg.learning_rate);
        if filters_trainable {
            apply_filter_grads(bank, &fgrads, cfg.learning_rate);
        }
    }
    let mean = epoch_loss / data.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("training loss became non-finite ({mean})")));
    }
    params.check_finite()?;
    Ok(mean)
}

/// Two-stage training: next-patch pre-training, then fine-tuning under
/// `cfg.loss_mode` with trainable filters. Mutates `params` and `bank` in
/// place and returns the trace rows produced by this call.
///
/// `progress` carries completed epoch counts so a reloaded checkpoint
/// continues exactly where it stopped; run to completion it matches an
/// uninterrupted run bit for bit (fixed sample order, no training-time RNG).
pub fn train(
    data: &TrainData,
    params: &mut PredictorParams,
    bank: &mut FilterBank,
    cfg: &TrainConfig,
    progress: &mut TrainProgress,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if params.patch_len != cfg.patch.patch_len
        || params.dim != cfg.dim
        || params.levels != cfg.levels
    {
        return Err(Error::Config(
            "model dimensions disagree with the training configuration".into(),
        ));
    }
    let mut trace = Vec::new();

    let all: Vec<&Sample> = data.samples.iter().collect();
    let labeled: Vec<&Sample> = data.samples.iter().filter(|s| s.label.is_some()).collect();

    let stage1_filters = cfg.wavelet_trainable && !cfg.filters_frozen;
    for epoch in progress.stage1_done..cfg.pretrain_epochs {
        let loss = run_epoch(&all, params, bank, cfg, LossMode::NextPatch, stage1_filters)?;
        progress.stage1_done = epoch + 1;
        trace.push(TraceRow { epoch: epoch + 1, stage: 1, loss });
    }

    let stage2_data: &[&Sample] =
        if cfg.loss_mode == LossMode::NextPatch { &all } else { &labeled };
    if cfg.finetune_epochs > progress.stage2_done && stage2_data.is_empty() {
        return Err(Error::Data("no labeled samples available for fine-tuning".into()));
    }
    for epoch in progress.stage2_done..cfg.finetune_epochs {
        let loss =
            run_epoch(stage2_data, params, bank, cfg, cfg.loss_mode, !cfg.filters_frozen)?;
        progress.stage2_done = epoch + 1;
        trace.push(TraceRow { epoch: epoch + 1, stage: 2, loss });
    }
    Ok(trace)
}

/// Mean per-sample loss over `data` under `mode`, with no parameter updates.
/// Score-bearing objectives evaluate only labeled samples.
pub fn evaluate(
    data: &TrainData,
    params: &PredictorParams,
    bank: &FilterBank,
    cfg: &TrainConfig,
    mode: LossMode,
) -> Result<f64> {
    let usable: Vec<&Sample> = match mode {
        LossMode::NextPatch => data.samples.iter().collect(),
        _ => data.samples.iter().filter(|s| s.label.is_some()).collect(),
    };
    if usable.is_empty() {
        return Err(Error::Argument("no samples to evaluate".into()));
    }
    let mut scratch = ParamGrads::zeros(params);
    let mut total = 0.0;
    for sample in &usable {
        total += sample_loss_and_grads(sample, params, bank, cfg, mode, 0.0, &mut scratch, None)?;
    }
    Ok(total / usable.len() as f64)
}

/// Scores every stock of a window: the score-head output at the final patch
/// position, averaged over the stock's feature channels.
///
/// `window` is B x M x W of normalized values; `window_start` locates it in
/// the series the segmentations were computed on.
pub fn predict_scores(
    window: ArrayView3<'_, f64>,
    segmentations: Option<&[Segmentation]>,
    window_start: usize,
    params: &PredictorParams,
    bank: &FilterBank,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let (b, m, w) = window.dim();
    if w < cfg.patch.patch_len {
        return Err(Error::Argument(format!(
            "window length {w} is shorter than patch length {}",
            cfg.patch.patch_len
        )));
    }
    if let Some(segs) = segmentations {
        if segs.len() != b {
            return Err(Error::Argument(format!("{} segmentations for {b} stocks", segs.len())));
        }
    }
    let mut scores = Vec::with_capacity(b);
    for s in 0..b {
        let seg = segmentations.map(|segs| &segs[s]);
        let points = extraction_points(
            seg,
            window_start,
            w,
            cfg.patch.patch_len,
            cfg.patch.stride,
            cfg.patch.drop_crossing,
        )?;
        let positions: Vec<usize> = points.iter().map(|p| p.position).collect();
        let mut acc = 0.0;
        for f in 0..m {
            let series: Vec<f64> = (0..w).map(|t| window[(s, f, t)]).collect();
            let sample =
                Sample { series, positions: positions.clone(), filter_idx: bank.pair_index(f), label: None };
            let (_, tokens) = sample_tokens(&sample, bank, cfg)?;
            let cache = forward_cached(params, &tokens)?;
            acc += cache.scores[tokens.nrows() - 1];
        }
        scores.push(acc / m as f64);
    }
    Ok(scores)
}

/// Current on-disk format for [`ModelCheckpoint`].
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Lossless JSON checkpoint of the predictor and its training progress.
/// Filters are checkpointed separately so they can move across markets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub params: PredictorParams,
    pub progress: TrainProgress,
}

impl ModelCheckpoint {
    pub fn new(params: PredictorParams, progress: TrainProgress) -> Self {
        ModelCheckpoint { format_version: MODEL_FORMAT_VERSION, params, progress }
    }

    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Data(format!("cannot open model checkpoint '{}': {e}", path.as_ref().display()))
        })?;
        let ckpt: ModelCheckpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model checkpoint version {} (expected {})",
                ckpt.format_version, MODEL_FORMAT_VERSION
            )));
        }
        ckpt.params.check_finite().map_err(|_| {
            Error::Data("model checkpoint contains non-finite parameters".into())
        })?;
        Ok(ckpt)
    }
}
