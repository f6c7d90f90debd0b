//! Loop detector CSV ingestion and lagged-instrument construction.
//!
//! Raw rows are 5-minute detector readings keyed by detector, day, and slot
//! index (288 slots per day, slot 144 = 12:00). The instrument for a row at
//! slot `i` is the mean occupancy over slots `[i - w, i + w]` on the same
//! detector's previous workday, which by construction contains no same-day
//! information. Rows whose lag window is mostly missing are dropped rather
//! than imputed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 5-minute slots per day.
pub const SLOTS_PER_DAY: u32 = 288;

/// One accepted detector reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRecord {
    pub detector: String,
    pub day: NaiveDate,
    /// Slot index within the day, 0..=287.
    pub interval: u32,
    /// Vehicles per 5 minutes.
    pub flow: f64,
    /// Percent occupancy, 0..=100.
    pub occupancy: f64,
}

/// Column names expected in the input CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub detector: String,
    pub timestamp: String,
    pub flow: String,
    pub occupancy: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            detector: "detector_id".into(),
            timestamp: "timestamp".into(),
            flow: "flow_veh_per_5min".into(),
            occupancy: "occupancy_pct".into(),
        }
    }
}

/// Row-level rejection with its 1-based line number in the file.
#[derive(Debug, Clone)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

/// Read detector readings from a CSV file.
///
/// Malformed rows are collected in the report and skipped; structural
/// problems (missing columns, nothing readable) fail the whole read.
pub fn read_detector_csv(
    path: &Path,
    columns: &ColumnMap,
) -> Result<(Vec<DetectorRecord>, IngestReport)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_detector_records(file, columns)
}

pub fn read_detector_records<R: Read>(
    reader: R,
    columns: &ColumnMap,
) -> Result<(Vec<DetectorRecord>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Schema(format!(
                "missing column '{name}'; found: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let c_det = col(&columns.detector)?;
    let c_ts = col(&columns.timestamp)?;
    let c_flow = col(&columns.flow)?;
    let c_occ = col(&columns.occupancy)?;

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut seen: BTreeMap<(String, NaiveDate, u32), ()> = BTreeMap::new();
    for (idx, row) in rdr.records().enumerate() {
        let line = idx + 2; // 1-based, after the header line
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(RejectedRow {
                    line,
                    reason: format!("unparseable row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&row, c_det, c_ts, c_flow, c_occ) {
            Ok(rec) => {
                let key = (rec.detector.clone(), rec.day, rec.interval);
                if seen.insert(key, ()).is_some() {
                    report.rejected.push(RejectedRow {
                        line,
                        reason: format!(
                            "duplicate slot {} {} interval {}",
                            rec.detector, rec.day, rec.interval
                        ),
                    });
                } else {
                    records.push(rec);
                }
            }
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(
            "no valid detector rows in the input".into(),
        ));
    }
    report.accepted = records.len();
    records.sort_by(|a, b| {
        (&a.detector, a.day, a.interval).cmp(&(&b.detector, b.day, b.interval))
    });
    Ok((records, report))
}

fn parse_row(
    row: &csv::StringRecord,
    c_det: usize,
    c_ts: usize,
    c_flow: usize,
    c_occ: usize,
) -> std::result::Result<DetectorRecord, String> {
    let get = |i: usize| row.get(i).ok_or_else(|| format!("missing field {i}"));
    let detector = get(c_det)?.to_string();
    if detector.is_empty() {
        return Err("empty detector id".into());
    }
    let ts_raw = get(c_ts)?;
    let ts = NaiveDateTime::parse_from_str(ts_raw, "%Y-%m-%d %H:%M")
        .map_err(|e| format!("bad timestamp '{ts_raw}': {e}"))?;
    let minute = ts.time().format("%M").to_string().parse::<u32>().unwrap();
    if minute % 5 != 0 {
        return Err(format!("timestamp '{ts_raw}' not on a 5-minute boundary"));
    }
    let interval = {
        use chrono::Timelike;
        ts.time().hour() * 12 + ts.time().minute() / 5
    };
    debug_assert!(interval < SLOTS_PER_DAY);
    let flow: f64 = get(c_flow)?
        .parse()
        .map_err(|e| format!("bad flow value: {e}"))?;
    if !flow.is_finite() || flow < 0.0 {
        return Err(format!("flow {flow} negative or non-finite"));
    }
    let occupancy: f64 = get(c_occ)?
        .parse()
        .map_err(|e| format!("bad occupancy value: {e}"))?;
    if !occupancy.is_finite() || !(0.0..=100.0).contains(&occupancy) {
        return Err(format!("occupancy {occupancy} outside [0, 100]"));
    }
    Ok(DetectorRecord {
        detector,
        day: ts.date(),
        interval,
        flow,
        occupancy,
    })
}

/// Site selection and calendar rules for one analysis run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteConfig {
    pub name: String,
    /// Detector ids to keep; empty keeps every detector.
    pub detectors: Vec<String>,
    /// Inclusive slot window within the day, e.g. (144, 287) = noon onward.
    pub window: (u32, u32),
    pub workdays_only: bool,
    /// Inclusive date range filter; `None` keeps all days.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
    /// Dates never treated as workdays.
    pub holidays: Vec<NaiveDate>,
}

impl SiteConfig {
    pub fn validated(self) -> Result<Self> {
        if self.window.0 > self.window.1 || self.window.1 >= SLOTS_PER_DAY {
            return Err(Error::Config(format!(
                "slot window ({}, {}) outside 0..=287",
                self.window.0, self.window.1
            )));
        }
        if let Some((a, b)) = self.date_range {
            if a > b {
                return Err(Error::Config(format!("date range {a}..{b} is reversed")));
            }
        }
        Ok(self)
    }

    fn is_workday(&self, day: NaiveDate) -> bool {
        !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) && !self.holidays.contains(&day)
    }
}

/// Lag window settings for instrument construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstrumentOptions {
    /// Slots on each side of the row's slot in the lag-day window.
    pub half_window: u32,
    /// Number of workdays to step back.
    pub lag_days: u32,
    /// Maximum tolerated fraction of missing slots in the lag window.
    pub max_missing: f64,
}

impl Default for InstrumentOptions {
    fn default() -> Self {
        InstrumentOptions {
            half_window: 15,
            lag_days: 1,
            max_missing: 0.2,
        }
    }
}

/// Where a sample row came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Provenance {
    Observed {
        detector: String,
        day: NaiveDate,
        interval: u32,
    },
    Synthetic(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Observed {
                detector,
                day,
                interval,
            } => write!(f, "{detector}/{day}/{interval}"),
            Provenance::Synthetic(i) => write!(f, "synthetic/{i}"),
        }
    }
}

/// Aligned regression vectors: flow `q`, occupancy `o`, instrument `z`.
#[derive(Debug, Clone)]
pub struct RegressionSample {
    pub q: Vec<f64>,
    pub o: Vec<f64>,
    pub z: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl RegressionSample {
    pub fn from_parts(
        q: Vec<f64>,
        o: Vec<f64>,
        z: Vec<f64>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let n = q.len();
        if o.len() != n || z.len() != n || provenance.len() != n {
            return Err(Error::InvalidArgument(
                "sample vectors have mismatched lengths".into(),
            ));
        }
        if n == 0 {
            return Err(Error::EmptyInput("empty regression sample".into()));
        }
        for (name, v) in [("q", &q), ("o", &o), ("z", &z)] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value in sample vector {name}"
                )));
            }
        }
        Ok(RegressionSample { q, o, z, provenance })
    }

    /// Synthetic sample with index provenance, for simulations.
    pub fn synthetic(q: Vec<f64>, o: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        let n = q.len();
        let provenance = (0..n).map(Provenance::Synthetic).collect();
        RegressionSample::from_parts(q, o, z, provenance)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Row accounting for instrument construction.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InstrumentReport {
    pub rows_considered: usize,
    pub rows_built: usize,
    /// Rows dropped because the lag day had too many missing slots.
    pub dropped_missing_lag: usize,
    /// Rows dropped because no previous workday exists in the data at all.
    pub dropped_no_lag_day: usize,
}

/// Build the aligned (q, o, z) sample from accepted detector records.
///
/// `z` for a row at (detector, day, slot i) is the mean occupancy over slots
/// `[i - w, i + w]` (truncated at day boundaries) on the detector's
/// `lag_days`-th previous workday. Rows are dropped when the lag window has
/// more than `max_missing` of its slots absent.
pub fn build_lagged_instrument(
    records: &[DetectorRecord],
    site: &SiteConfig,
    opts: &InstrumentOptions,
) -> Result<(RegressionSample, InstrumentReport)> {
    if opts.lag_days < 1 {
        return Err(Error::Config("lag_days must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&opts.max_missing) {
        return Err(Error::Config(format!(
            "max_missing {} outside [0, 1)",
            opts.max_missing
        )));
    }

    // Occupancy grids per (detector, day) for lag lookups.
    let mut grids: BTreeMap<(&str, NaiveDate), Vec<f64>> = BTreeMap::new();
    for r in records {
        let slots = grids
            .entry((r.detector.as_str(), r.day))
            .or_insert_with(|| vec![f64::NAN; SLOTS_PER_DAY as usize]);
        slots[r.interval as usize] = r.occupancy;
    }

    let keep_detector = |d: &str| site.detectors.is_empty() || site.detectors.iter().any(|x| x == d);
    let in_range = |day: NaiveDate| {
        site.date_range
            .map(|(a, b)| day >= a && day <= b)
            .unwrap_or(true)
    };

    let mut q = Vec::new();
    let mut o = Vec::new();
    let mut z = Vec::new();
    let mut provenance = Vec::new();
    let mut report = InstrumentReport::default();

    for r in records {
        if !keep_detector(&r.detector)
            || !in_range(r.day)
            || r.interval < site.window.0
            || r.interval > site.window.1
            || (site.workdays_only && !site.is_workday(r.day))
        {
            continue;
        }
        report.rows_considered += 1;

        let lag_day = previous_workday(r.day, opts.lag_days, site);
        let Some(slots) = grids.get(&(r.detector.as_str(), lag_day)) else {
            report.dropped_no_lag_day += 1;
            continue;
        };
        let lo = r.interval.saturating_sub(opts.half_window);
        let hi = (r.interval + opts.half_window).min(SLOTS_PER_DAY - 1);
        let window = (hi - lo + 1) as usize;
        let mut present = 0usize;
        let mut acc = 0.0;
        for s in lo..=hi {
            let v = slots[s as usize];
            if v.is_finite() {
                present += 1;
                acc += v;
            }
        }
        let missing_frac = 1.0 - present as f64 / window as f64;
        if missing_frac > opts.max_missing {
            report.dropped_missing_lag += 1;
            continue;
        }
        q.push(r.flow);
        o.push(r.occupancy);
        z.push(acc / present as f64);
        provenance.push(Provenance::Observed {
            detector: r.detector.clone(),
            day: r.day,
            interval: r.interval,
        });
    }

    report.rows_built = q.len();
    if q.is_empty() {
        return Err(Error::EmptyInput(
            "instrument construction produced no usable rows".into(),
        ));
    }
    let sample = RegressionSample::from_parts(q, o, z, provenance)?;
    Ok((sample, report))
}

/// Step back `lag_days` workdays, skipping weekends and configured holidays.
fn previous_workday(day: NaiveDate, lag_days: u32, site: &SiteConfig) -> NaiveDate {
    let mut d = day;
    for _ in 0..lag_days {
        loop {
            d = d.pred_opt().expect("date within calendar range");
            if site.is_workday(d) {
                break;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn site() -> SiteConfig {
        SiteConfig {
            name: "test".into(),
            detectors: vec![],
            window: (0, 287),
            workdays_only: true,
            date_range: None,
            holidays: vec![],
        }
        .validated()
        .unwrap()
    }

    fn rec(det: &str, day: &str, interval: u32, flow: f64, occ: f64) -> DetectorRecord {
        DetectorRecord {
            detector: det.into(),
            day: date(day),
            interval,
            flow,
            occupancy: occ,
        }
    }

    #[test]
    fn csv_parsing_accepts_and_rejects() {
        let data = "\
detector_id,timestamp,flow_veh_per_5min,occupancy_pct
D1,2009-06-05 12:00,42,7.5
D1,2009-06-05 12:05,40,6.0
D1,2009-06-05 12:05,41,6.1
D1,2009-06-05 12:03,40,6.0
D1,bad-stamp,40,6.0
D1,2009-06-05 12:10,-3,6.0
D1,2009-06-05 12:15,40,130.0
D1,2009-06-05 12:20,40,6.0
";
        let (recs, report) = read_detector_records(data.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(report.accepted, 3);
        // Noon is slot 144.
        assert_eq!(recs[0].interval, 144);
        let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
        // duplicate, off-grid minute, bad timestamp, negative flow, occupancy range
        assert_eq!(lines, vec![4, 5, 6, 7, 8]);
        assert!(report.rejected[0].reason.contains("duplicate"));
    }

    #[test]
    fn csv_missing_column_is_a_schema_error() {
        let data = "detector_id,when,flow_veh_per_5min,occupancy_pct\nD1,2009-06-05 12:00,1,1\n";
        let err = read_detector_records(data.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn csv_all_rows_invalid_is_empty_input() {
        let data = "detector_id,timestamp,flow_veh_per_5min,occupancy_pct\nD1,nope,1,1\n";
        let err = read_detector_records(data.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn ingestion_is_deterministic() {
        let data = "\
detector_id,timestamp,flow_veh_per_5min,occupancy_pct
D2,2009-06-05 12:00,42,7.5
D1,2009-06-05 12:05,40,6.0
D1,2009-06-05 12:00,41,5.5
";
        let (a, _) = read_detector_records(data.as_bytes(), &ColumnMap::default()).unwrap();
        let (b, _) = read_detector_records(data.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].detector, "D1");
    }

    /// Hand-worked two-day oracle: Friday 2009-06-05 provides the lag values
    /// for Monday 2009-06-08 (the weekend is skipped).
    #[test]
    fn friday_to_monday_instrument_values() {
        let mut records = Vec::new();
        // Friday: occupancy = slot index, all 288 slots present.
        for i in 0..SLOTS_PER_DAY {
            records.push(rec("D1", "2009-06-05", i, 10.0, (i % 100) as f64));
        }
        // Monday rows to instrument.
        records.push(rec("D1", "2009-06-08", 144, 50.0, 30.0));
        records.push(rec("D1", "2009-06-08", 0, 20.0, 10.0));
        let (sample, report) =
            build_lagged_instrument(&records, &site(), &InstrumentOptions::default()).unwrap();
        // Friday rows themselves have no Thursday data and are dropped.
        assert_eq!(report.dropped_no_lag_day, 288);
        assert_eq!(sample.len(), 2);
        // Slot 0: window truncates to [0, 15] on Friday; occupancies 0..=15.
        let want0: f64 = (0..=15).map(|i| i as f64).sum::<f64>() / 16.0;
        // Slot 144: window [129, 159], occupancies are (i % 100).
        let want144: f64 = (129..=159).map(|i| (i % 100) as f64).sum::<f64>() / 31.0;
        let z0 = sample.z[sample
            .provenance
            .iter()
            .position(|p| matches!(p, Provenance::Observed { interval: 0, .. }))
            .unwrap()];
        let z144 = sample.z[sample
            .provenance
            .iter()
            .position(|p| matches!(p, Provenance::Observed { interval: 144, .. }))
            .unwrap()];
        assert!((z0 - want0).abs() < 1e-12);
        assert!((z144 - want144).abs() < 1e-12);
    }

    #[test]
    fn missing_slot_budget_is_enforced() {
        let mut records = Vec::new();
        // Lag day with slots 129..=152 present only: 24 of the 31-slot
        // window for slot 144, missing fraction 7/31 > 0.2.
        for i in 129..=152 {
            records.push(rec("D1", "2009-06-05", i, 10.0, 5.0));
        }
        records.push(rec("D1", "2009-06-08", 144, 50.0, 30.0));
        let r = build_lagged_instrument(&records, &site(), &InstrumentOptions::default());
        assert!(r.is_err(), "the only candidate row was dropped");
        // One more present slot brings it to 6/31 <= 0.2 and the row stays.
        records.insert(0, rec("D1", "2009-06-05", 153, 10.0, 5.0));
        let (sample, report) =
            build_lagged_instrument(&records, &site(), &InstrumentOptions::default()).unwrap();
        assert_eq!(report.dropped_missing_lag, 0);
        assert_eq!(sample.len(), 1);
        let want: f64 = 5.0;
        assert!((sample.z[0] - want).abs() < 1e-12);
    }

    #[test]
    fn no_same_day_values_enter_the_instrument() {
        let mut records = Vec::new();
        for i in 0..SLOTS_PER_DAY {
            records.push(rec("D1", "2009-06-05", i, 10.0, 5.0));
        }
        // Same-day occupancies poisoned with a sentinel that would blow up
        // any average it entered.
        for i in 140..150 {
            records.push(rec("D1", "2009-06-08", i, 10.0, 99.0));
        }
        let (sample, _) =
            build_lagged_instrument(&records, &site(), &InstrumentOptions::default()).unwrap();
        for &zi in &sample.z {
            assert!((zi - 5.0).abs() < 1e-12, "same-day leak: z = {zi}");
        }
    }

    #[test]
    fn holidays_are_skipped_for_the_lag_day() {
        let mut cfg = site();
        cfg.holidays.push(date("2009-07-03")); // Friday observed holiday
        let mut records = Vec::new();
        for i in 0..SLOTS_PER_DAY {
            records.push(rec("D1", "2009-07-02", i, 10.0, 3.0)); // Thursday
            records.push(rec("D1", "2009-07-03", i, 10.0, 8.0)); // holiday Friday
        }
        records.push(rec("D1", "2009-07-06", 144, 50.0, 30.0)); // Monday
        let (sample, _) =
            build_lagged_instrument(&records, &cfg, &InstrumentOptions::default()).unwrap();
        // The Monday row must reach back to Thursday, not the holiday Friday.
        let tail = sample.z[sample.len() - 1];
        assert!((tail - 3.0).abs() < 1e-12);
    }

    #[test]
    fn window_and_detector_filters_apply() {
        let mut cfg = site();
        cfg.detectors = vec!["D1".into()];
        cfg.window = (144, 287);
        let mut records = Vec::new();
        for i in 0..SLOTS_PER_DAY {
            records.push(rec("D1", "2009-06-04", i, 10.0, 5.0));
        }
        records.push(rec("D1", "2009-06-05", 144, 50.0, 30.0));
        records.push(rec("D1", "2009-06-05", 100, 50.0, 30.0)); // before window
        records.push(rec("D2", "2009-06-05", 150, 50.0, 30.0)); // other detector
        let (sample, report) =
            build_lagged_instrument(&records, &cfg, &InstrumentOptions::default()).unwrap();
        assert_eq!(sample.len(), 1);
        assert_eq!(report.rows_considered, 1 + 144); // Monday row + Thursday window rows
    }

    #[test]
    fn lag_days_walks_further_back() {
        let mut records = Vec::new();
        for i in 0..SLOTS_PER_DAY {
            records.push(rec("D1", "2009-06-03", i, 10.0, 1.0)); // Wednesday
            records.push(rec("D1", "2009-06-04", i, 10.0, 2.0)); // Thursday
        }
        records.push(rec("D1", "2009-06-05", 144, 50.0, 30.0)); // Friday
        let opts = InstrumentOptions {
            lag_days: 2,
            ..Default::default()
        };
        let (sample, _) = build_lagged_instrument(&records, &site(), &opts).unwrap();
        let friday_row = sample.len() - 1;
        assert!((sample.z[friday_row] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_alignment_is_validated() {
        assert!(RegressionSample::from_parts(vec![1.0], vec![1.0, 2.0], vec![1.0], vec![]).is_err());
        assert!(RegressionSample::synthetic(vec![], vec![], vec![]).is_err());
        assert!(RegressionSample::synthetic(vec![f64::NAN], vec![1.0], vec![1.0]).is_err());
        let s = RegressionSample::synthetic(vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.provenance[1], Provenance::Synthetic(1));
    }
}
