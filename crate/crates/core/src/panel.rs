//! Cross-sectional panel ingestion, alignment, normalization, and labels.
//!
//! A [`StockPanel`] holds B stocks x M features x T trading days on one shared
//! calendar. Everything downstream (segmentation, patching, tokenization,
//! backtesting) works against this shape contract. Panels are immutable after
//! construction; all operations here return new values.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Standard-deviation floor used when z-scoring near-constant series.
pub const STD_FLOOR: f64 = 1e-8;

/// Cross-section of per-stock multivariate daily series.
#[derive(Debug, Clone, PartialEq)]
pub struct StockPanel {
    /// Stock identifiers, length B. Loaded panels keep these in lexicographic order.
    pub symbols: Vec<String>,
    /// Strictly increasing trading-day calendar, length T.
    pub calendar: Vec<NaiveDate>,
    /// Values of shape B x M x T.
    pub values: Array3<f64>,
    /// Feature names, length M, in CSV header order.
    pub feature_names: Vec<String>,
}

/// Next-day simple returns, shape B x (T-1).
///
/// Entry `(s, t)` is `p[t+1] / p[t] - 1` for the prices of stock `s`; it is
/// the return realized between calendar day `t` and day `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnLabels {
    pub values: Array2<f64>,
}

/// Ingestion configuration for [`load_panel`].
#[derive(Debug, Clone, Default)]
pub struct IngestSchema {
    /// Feature columns that must be present in the header. `None` accepts any.
    pub required_features: Option<Vec<String>>,
}

impl StockPanel {
    /// Validates the panel invariants and builds the value.
    pub fn new(
        symbols: Vec<String>,
        calendar: Vec<NaiveDate>,
        values: Array3<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (b, m, t) = values.dim();
        if b != symbols.len() || m != feature_names.len() || t != calendar.len() {
            return Err(Error::Argument(format!(
                "panel shape {b}x{m}x{t} does not match symbols={}, features={}, dates={}",
                symbols.len(),
                feature_names.len(),
                calendar.len()
            )));
        }
        if b < 1 || m < 1 || t < 2 {
            return Err(Error::Data(format!(
                "panel requires B>=1, M>=1, T>=2, got B={b}, M={m}, T={t}"
            )));
        }
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("calendar must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("panel values must be finite".into()));
        }
        Ok(StockPanel { symbols, calendar, values, feature_names })
    }

    pub fn num_stocks(&self) -> usize {
        self.symbols.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn num_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::Argument(format!("unknown feature '{name}'")))
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::Argument(format!("unknown symbol '{symbol}'")))
    }

    /// Index of `date` in the calendar.
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// One univariate series: all days of `(symbol, feature)`.
    pub fn series(&self, stock: usize, feature: usize) -> Vec<f64> {
        self.values
            .index_axis(ndarray::Axis(0), stock)
            .index_axis(ndarray::Axis(0), feature)
            .to_vec()
    }

    /// Sub-panel covering calendar positions `[start, end)`.
    pub fn slice_days(&self, start: usize, end: usize) -> Result<StockPanel> {
        if start >= end || end > self.num_days() {
            return Err(Error::Argument(format!(
                "invalid day range {start}..{end} for T={}",
                self.num_days()
            )));
        }
        StockPanel::new(
            self.symbols.clone(),
            self.calendar[start..end].to_vec(),
            self.values.slice(ndarray::s![.., .., start..end]).to_owned(),
            self.feature_names.clone(),
        )
    }
}

/// Loads a date-aligned panel from CSV.
///
/// Expected format: header `date,symbol,<feature_1>,...,<feature_M>`, ISO-8601
/// dates, one row per `(date, symbol)`. Dates must be strictly increasing
/// within each symbol. Symbols missing a date on the union calendar are
/// forward-filled from their last prior value; leading dates on which some
/// symbol has no value yet are dropped from the whole panel.
pub fn load_panel<P: AsRef<Path>>(path: P, schema: &IngestSchema) -> Result<StockPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Data(format!("cannot open panel file '{}': {e}", path.display()))
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    if headers.len() < 3 || &headers[0] != "date" || &headers[1] != "symbol" {
        return Err(Error::Data(
            "header must be 'date,symbol,<feature_1>,...' with at least one feature".into(),
        ));
    }
    let feature_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    if let Some(required) = &schema.required_features {
        for f in required {
            if !feature_names.iter().any(|name| name == f) {
                return Err(Error::Config(format!("required feature '{f}' missing from header")));
            }
        }
    }
    let m = feature_names.len();

    // Per symbol: strictly increasing (date -> row) map.
    let mut per_symbol: BTreeMap<String, Vec<(NaiveDate, Vec<f64>)>> = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if record.len() != m + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", m + 2, record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date '{}': {e}", &record[0]),
        })?;
        let symbol = record[1].to_string();
        let mut row = Vec::with_capacity(m);
        for (j, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value '{}' for feature '{}'", field, feature_names[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value for feature '{}'", feature_names[j]),
                });
            }
            row.push(v);
        }
        let rows = per_symbol.entry(symbol.clone()).or_default();
        if let Some((last, _)) = rows.last() {
            if *last >= date {
                return Err(Error::Data(format!(
                    "dates for symbol '{symbol}' not strictly increasing at line {line}"
                )));
            }
        }
        rows.push((date, row));
    }
    if per_symbol.is_empty() {
        return Err(Error::Data(format!("panel file '{}' contains no rows", path.display())));
    }
    for (symbol, rows) in &per_symbol {
        if rows.len() < 2 {
            return Err(Error::Data(format!(
                "symbol '{symbol}' has {} record(s); at least 2 dates required",
                rows.len()
            )));
        }
    }

    // Union calendar, then forward-fill each symbol onto it.
    let mut calendar: Vec<NaiveDate> =
        per_symbol.values().flat_map(|rows| rows.iter().map(|(d, _)| *d)).collect();
    calendar.sort_unstable();
    calendar.dedup();

    let symbols: Vec<String> = per_symbol.keys().cloned().collect();
    let b = symbols.len();
    let t_full = calendar.len();
    let mut filled = Array3::<f64>::from_elem((b, m, t_full), f64::NAN);
    let mut first_valid = 0usize; // first calendar index covered by every symbol
    for (s, symbol) in symbols.iter().enumerate() {
        let rows = &per_symbol[symbol];
        let mut next = 0usize;
        let mut last_row: Option<&Vec<f64>> = None;
        for (ti, date) in calendar.iter().enumerate() {
            if next < rows.len() && rows[next].0 == *date {
                last_row = Some(&rows[next].1);
                next += 1;
            }
            match last_row {
                Some(row) => {
                    for (f, &v) in row.iter().enumerate() {
                        filled[(s, f, ti)] = v;
                    }
                }
                None => {
                    // leading gap for this symbol; panel start moves forward
                    if ti + 1 > first_valid {
                        first_valid = ti + 1;
                    }
                }
            }
        }
    }
    if t_full - first_valid < 2 {
        return Err(Error::Data(
            "fewer than 2 dates remain after trimming leading dates with missing symbols".into(),
        ));
    }
    let calendar = calendar[first_valid..].to_vec();
    let values = filled.slice(ndarray::s![.., .., first_valid..]).to_owned();
    StockPanel::new(symbols, calendar, values, feature_names)
}

/// Writes a panel in the same CSV format accepted by [`load_panel`].
///
/// Values are emitted in shortest round-trip decimal form, so a write/load
/// cycle reproduces them bit-exactly.
pub fn write_panel<P: AsRef<Path>>(panel: &StockPanel, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write!(w, "date,symbol")?;
    for f in &panel.feature_names {
        write!(w, ",{f}")?;
    }
    writeln!(w)?;
    for (ti, date) in panel.calendar.iter().enumerate() {
        for (s, symbol) in panel.symbols.iter().enumerate() {
            write!(w, "{},{}", date.format("%Y-%m-%d"), symbol)?;
            for f in 0..panel.num_features() {
                write!(w, ",{}", panel.values[(s, f, ti)])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Z-scores each `(symbol, feature)` series using statistics estimated on
/// `stats_window` only (inclusive date range).
///
/// Uses the population standard deviation with a floor of [`STD_FLOOR`], so a
/// constant series maps to zeros. The input panel is unchanged.
pub fn normalize(panel: &StockPanel, stats_window: (NaiveDate, NaiveDate)) -> Result<StockPanel> {
    let (w_start, w_end) = stats_window;
    if w_start > w_end {
        return Err(Error::Argument(format!(
            "stats window start {w_start} is after end {w_end}"
        )));
    }
    let first = *panel.calendar.first().expect("panel has dates");
    let last = *panel.calendar.last().expect("panel has dates");
    if w_start < first || w_end > last {
        return Err(Error::Argument(format!(
            "stats window {w_start}..{w_end} not contained in calendar {first}..{last}"
        )));
    }
    let lo = panel.calendar.partition_point(|d| *d < w_start);
    let hi = panel.calendar.partition_point(|d| *d <= w_end);
    if lo >= hi {
        return Err(Error::Argument("stats window contains no trading days".into()));
    }

    let mut out = panel.values.clone();
    let n = (hi - lo) as f64;
    for s in 0..panel.num_stocks() {
        for f in 0..panel.num_features() {
            let mut mean = 0.0;
            for ti in lo..hi {
                mean += panel.values[(s, f, ti)];
            }
            mean /= n;
            let mut var = 0.0;
            for ti in lo..hi {
                let d = panel.values[(s, f, ti)] - mean;
                var += d * d;
            }
            let std = (var / n).sqrt().max(STD_FLOOR);
            for ti in 0..panel.num_days() {
                out[(s, f, ti)] = (panel.values[(s, f, ti)] - mean) / std;
            }
        }
    }
    StockPanel::new(
        panel.symbols.clone(),
        panel.calendar.clone(),
        out,
        panel.feature_names.clone(),
    )
}

/// Next-day simple returns from raw (unnormalized) prices.
pub fn compute_labels(panel: &StockPanel, price_feature: &str) -> Result<ReturnLabels> {
    let f = panel.feature_index(price_feature)?;
    let b = panel.num_stocks();
    let t = panel.num_days();
    let mut labels = Array2::<f64>::zeros((b, t - 1));
    for s in 0..b {
        for ti in 0..t {
            let p = panel.values[(s, f, ti)];
            if p <= 0.0 {
                return Err(Error::Data(format!(
                    "non-positive price {p} for symbol '{}' on {}",
                    panel.symbols[s], panel.calendar[ti]
                )));
            }
        }
        for ti in 0..t - 1 {
            labels[(s, ti)] = panel.values[(s, f, ti + 1)] / panel.values[(s, f, ti)] - 1.0;
        }
    }
    Ok(ReturnLabels { values: labels })
}

/// Splits the panel chronologically at `valid_start` and `test_start`.
///
/// Train covers dates before `valid_start`, validation covers
/// `[valid_start, test_start)`, test covers the rest. Every split must be
/// non-empty.
pub fn chronological_split(
    panel: &StockPanel,
    valid_start: NaiveDate,
    test_start: NaiveDate,
) -> Result<(StockPanel, StockPanel, StockPanel)> {
    if valid_start >= test_start {
        return Err(Error::Config(format!(
            "split boundaries out of order: valid_start {valid_start} >= test_start {test_start}"
        )));
    }
    let i1 = panel.calendar.partition_point(|d| *d < valid_start);
    let i2 = panel.calendar.partition_point(|d| *d < test_start);
    if i1 == 0 {
        return Err(Error::Config("empty training split: boundary precedes first date".into()));
    }
    if i2 == i1 {
        return Err(Error::Config("empty validation split".into()));
    }
    if i2 == panel.num_days() {
        return Err(Error::Config("empty test split: boundary follows last date".into()));
    }
    Ok((
        panel.slice_days(0, i1)?,
        panel.slice_days(i1, i2)?,
        panel.slice_days(i2, panel.num_days())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn toy_panel(prices: &[&[f64]]) -> StockPanel {
        let b = prices.len();
        let t = prices[0].len();
        let mut values = Array3::<f64>::zeros((b, 1, t));
        for (s, row) in prices.iter().enumerate() {
            for (ti, &v) in row.iter().enumerate() {
                values[(s, 0, ti)] = v;
            }
        }
        let calendar: Vec<NaiveDate> = (0..t)
            .map(|i| date("2024-01-01") + chrono::Days::new(i as u64))
            .collect();
        let symbols = (0..b).map(|i| format!("S{i}")).collect();
        StockPanel::new(symbols, calendar, values, vec!["close".into()]).unwrap()
    }

    fn write_csv(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("panel.csv");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn load_full_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "date,symbol,close,volume\n\
             2024-01-01,A,10.0,100\n\
             2024-01-01,B,20.0,200\n\
             2024-01-02,A,10.5,110\n\
             2024-01-02,B,21.0,210\n\
             2024-01-03,A,11.0,120\n\
             2024-01-03,B,22.0,220\n",
        );
        let panel = load_panel(&path, &IngestSchema::default()).unwrap();
        assert_eq!(panel.num_stocks(), 2);
        assert_eq!(panel.num_days(), 3);
        assert_eq!(panel.num_features(), 2);
        assert_eq!(panel.values[(0, 0, 2)], 11.0);
        assert_eq!(panel.values[(1, 1, 0)], 200.0);
    }

    #[test]
    fn load_forward_fills_missing_day() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "date,symbol,close\n\
             2024-01-01,A,1.0\n\
             2024-01-01,B,5.0\n\
             2024-01-02,A,2.0\n\
             2024-01-03,A,3.0\n\
             2024-01-03,B,6.0\n",
        );
        let panel = load_panel(&path, &IngestSchema::default()).unwrap();
        assert_eq!(panel.num_days(), 3);
        // B's day 2 is forward-filled from day 1.
        assert_eq!(panel.values[(1, 0, 1)], 5.0);
    }

    #[test]
    fn load_trims_leading_dates_without_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "date,symbol,close\n\
             2024-01-01,A,1.0\n\
             2024-01-02,A,2.0\n\
             2024-01-02,B,5.0\n\
             2024-01-03,A,3.0\n\
             2024-01-03,B,6.0\n",
        );
        let panel = load_panel(&path, &IngestSchema::default()).unwrap();
        // B starts on day 2, so day 1 is dropped entirely.
        assert_eq!(panel.calendar[0], date("2024-01-02"));
        assert_eq!(panel.num_days(), 2);
    }

    #[test]
    fn load_rejects_non_numeric_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "date,symbol,close\n\
             2024-01-01,A,1.0\n\
             2024-01-02,A,oops\n\
             2024-01-03,A,3.0\n",
        );
        let err = load_panel(&path, &IngestSchema::default()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_non_monotone_dates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "date,symbol,close\n\
             2024-01-02,A,1.0\n\
             2024-01-01,A,2.0\n",
        );
        let err = load_panel(&path, &IngestSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err:?}");
    }

    #[test]
    fn load_rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(dir.path(), "date,symbol,close\n");
        let err = load_panel(&path, &IngestSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let panel = toy_panel(&[&[1.25, std::f64::consts::PI, 3.0e-17], &[4.0, 5.5, 6.0625]]);
        let path = dir.path().join("out.csv");
        write_panel(&panel, &path).unwrap();
        let reloaded = load_panel(&path, &IngestSchema::default()).unwrap();
        assert_eq!(panel, reloaded);
    }

    #[test]
    fn normalize_hand_computed() {
        let panel = toy_panel(&[&[1.0, 2.0, 3.0]]);
        let window = (panel.calendar[0], panel.calendar[2]);
        let normed = normalize(&panel, window).unwrap();
        let sigma = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / sigma, 0.0, 1.0 / sigma];
        for (ti, e) in expect.iter().enumerate() {
            assert!((normed.values[(0, 0, ti)] - e).abs() < 1e-12);
        }
        assert!((normed.values[(0, 0, 2)] - 1.224_744_871_391_589).abs() < 1e-9);
    }

    #[test]
    fn normalize_constant_series_is_zero() {
        let panel = toy_panel(&[&[7.0, 7.0, 7.0]]);
        let window = (panel.calendar[0], panel.calendar[2]);
        let normed = normalize(&panel, window).unwrap();
        assert!(normed.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_twice_is_identity() {
        let panel = toy_panel(&[&[1.0, 4.0, 2.0, 8.0], &[3.0, 3.5, 2.5, 3.0]]);
        let window = (panel.calendar[0], panel.calendar[3]);
        let once = normalize(&panel, window).unwrap();
        let twice = normalize(&once, window).unwrap();
        for (a, b) in once.values.iter().zip(twice.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_stats_ignore_out_of_window_changes() {
        let mut base = toy_panel(&[&[1.0, 2.0, 3.0, 4.0]]);
        let window = (base.calendar[0], base.calendar[1]);
        let normed_a = normalize(&base, window).unwrap();
        base.values[(0, 0, 3)] = 400.0; // strictly after the window
        let normed_b = normalize(&base, window).unwrap();
        for ti in 0..2 {
            assert_eq!(normed_a.values[(0, 0, ti)], normed_b.values[(0, 0, ti)]);
        }
    }

    #[test]
    fn normalize_rejects_window_outside_calendar() {
        let panel = toy_panel(&[&[1.0, 2.0, 3.0]]);
        let err = normalize(&panel, (date("2023-12-01"), date("2024-01-02"))).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn labels_hand_computed() {
        let panel = toy_panel(&[&[100.0, 101.0]]);
        let labels = compute_labels(&panel, "close").unwrap();
        assert!((labels.values[(0, 0)] - 0.01).abs() < 1e-15);

        let panel = toy_panel(&[&[100.0, 100.0, 100.0]]);
        let labels = compute_labels(&panel, "close").unwrap();
        assert_eq!(labels.values[(0, 0)], 0.0);
        assert_eq!(labels.values[(0, 1)], 0.0);

        let panel = toy_panel(&[&[100.0, 90.0, 99.0]]);
        let labels = compute_labels(&panel, "close").unwrap();
        assert!((labels.values[(0, 0)] + 0.10).abs() < 1e-12);
        assert!((labels.values[(0, 1)] - 0.10).abs() < 1e-12);
    }

    #[test]
    fn labels_reject_non_positive_price() {
        let panel = toy_panel(&[&[100.0, -1.0, 99.0]]);
        let err = compute_labels(&panel, "close").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("S0") && msg.contains("2024-01-02"), "{msg}");
    }

    #[test]
    fn labels_compound_back_to_price_ratio() {
        let prices = [100.0, 103.0, 99.5, 101.25, 108.0, 100.125];
        let panel = toy_panel(&[&prices]);
        let labels = compute_labels(&panel, "close").unwrap();
        let compounded: f64 = (0..prices.len() - 1).map(|t| 1.0 + labels.values[(0, t)]).product();
        let expected = prices[prices.len() - 1] / prices[0];
        assert!((compounded / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_counts_and_reassembly() {
        let panel = toy_panel(&[&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]]);
        let (train, valid, test) =
            chronological_split(&panel, panel.calendar[6], panel.calendar[8]).unwrap();
        assert_eq!(train.num_days(), 6);
        assert_eq!(valid.num_days(), 2);
        assert_eq!(test.num_days(), 2);
        // disjoint and ordered: concatenated calendars reproduce the original
        let mut all = train.calendar.clone();
        all.extend(valid.calendar.iter());
        all.extend(test.calendar.iter());
        assert_eq!(all, panel.calendar);
    }

    #[test]
    fn split_rejects_degenerate_boundaries() {
        let panel = toy_panel(&[&[1., 2., 3., 4., 5.]]);
        // boundary before the first date -> empty training split
        let err =
            chronological_split(&panel, date("2023-12-31"), panel.calendar[2]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // equal boundaries -> empty validation split
        let err =
            chronological_split(&panel, panel.calendar[2], panel.calendar[2]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // out of order
        let err =
            chronological_split(&panel, panel.calendar[3], panel.calendar[1]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
