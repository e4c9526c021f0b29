//! Billed-byte and monetary cost estimation for batched vs.
//! query-at-a-time execution under the two pay-per-byte pricing schemes.
//!
//! Columns-billed charges the full size of every column a statement
//! references, independent of how many tuples qualify. Bytes-scanned
//! charges the referenced bytes scaled by the combined selectivity of the
//! batch, saturating at a full column read: above the saturation
//! threshold (default 0.99) the read granularity of columnar storage
//! means the whole column is fetched anyway. Ratios between batch sizes
//! are unaffected by the threshold.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::table::Catalog;
use crate::util::powu;

#[derive(Clone, Debug, PartialEq)]
pub enum CostError {
    Domain(String),
    MissingStats(String),
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::Domain(m) => write!(f, "{m}"),
            CostError::MissingStats(m) => write!(f, "missing statistics for {m}"),
        }
    }
}

impl core::error::Error for CostError {}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ColumnStats {
    pub avg_width: u64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TableStatsEntry {
    pub rows: u64,
    pub columns: BTreeMap<String, ColumnStats>,
}

impl TableStatsEntry {
    pub fn column_width(&self, name: &str) -> Option<u64> {
        self.columns.get(name).map(|c| c.avg_width)
    }

    pub fn column_bytes(&self, name: &str) -> Option<u64> {
        self.column_width(name).map(|w| w * self.rows)
    }

    pub fn total_width(&self) -> u64 {
        self.columns.values().map(|c| c.avg_width).sum()
    }
}

/// Row counts and per-column byte widths for every table the estimator
/// may see. Usually derived straight from the schema catalog.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TableStats {
    pub tables: BTreeMap<String, TableStatsEntry>,
}

impl TableStats {
    pub fn from_catalog(catalog: &Catalog) -> TableStats {
        let mut tables = BTreeMap::new();
        for (name, schema) in &catalog.tables {
            let mut columns = BTreeMap::new();
            for c in &schema.columns {
                columns.insert(c.name.clone(), ColumnStats { avg_width: c.avg_width });
            }
            tables.insert(name.clone(), TableStatsEntry { rows: schema.row_count, columns });
        }
        TableStats { tables }
    }

    pub fn table(&self, name: &str) -> Option<&TableStatsEntry> {
        self.tables.get(&name.to_ascii_lowercase())
    }

    pub fn insert(&mut self, name: &str, entry: TableStatsEntry) {
        self.tables.insert(name.to_ascii_lowercase(), entry);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PricingKind {
    /// Every byte actually read is billed (scaled by selectivity).
    BytesScanned,
    /// Every referenced column is billed in its entirety.
    ColumnsBilled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricingScheme {
    pub kind: PricingKind,
    /// Currency units per byte.
    pub rate: f64,
    /// Lower bound on billed bytes per statement.
    pub min_billed_bytes: u64,
    /// Combined selectivity at which a scan saturates to a full read.
    pub saturation: f64,
}

impl PricingScheme {
    pub fn bytes_scanned(rate: f64) -> PricingScheme {
        PricingScheme { kind: PricingKind::BytesScanned, rate, min_billed_bytes: 0, saturation: 0.99 }
    }

    pub fn columns_billed(rate: f64) -> PricingScheme {
        PricingScheme { kind: PricingKind::ColumnsBilled, rate, min_billed_bytes: 0, saturation: 0.99 }
    }

    fn validate(&self) -> Result<(), CostError> {
        if !(self.rate > 0.0) {
            return Err(CostError::Domain("pricing rate must be positive".into()));
        }
        if !(self.saturation > 0.0 && self.saturation <= 1.0) {
            return Err(CostError::Domain("saturation must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Billed fraction of the referenced bytes. A per-query selectivity
    /// at or above the saturation threshold defeats block skipping, so
    /// even a single query reads the full column; below it the bytes
    /// scale with the batch's combined selectivity, clamped at a full
    /// read.
    pub fn billed_fraction(&self, per_query_s: f64, combined: f64) -> f64 {
        match self.kind {
            PricingKind::ColumnsBilled => 1.0,
            PricingKind::BytesScanned => {
                if per_query_s >= self.saturation || combined >= 1.0 {
                    1.0
                } else {
                    combined
                }
            }
        }
    }
}

/// Fraction of tuples matched by at least one of `q` uncorrelated
/// queries of per-query selectivity `s`.
pub fn combined_selectivity(s: f64, q: u32) -> Result<f64, CostError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(CostError::Domain(alloc::format!("selectivity {s} outside [0, 1]")));
    }
    if q == 0 {
        return Err(CostError::Domain("batch size must be at least 1".into()));
    }
    if q == 1 {
        return Ok(s);
    }
    Ok(1.0 - powu(1.0 - s, q))
}

/// The columns a statement (or script step) reads, per table.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ColumnFootprint {
    /// table -> referenced column names; `None` set meaning "all".
    pub tables: BTreeMap<String, Option<BTreeSet<String>>>,
    /// Temp tables read back by this step (billed like normal tables).
    pub temp_tables: BTreeMap<String, u64>,
}

impl ColumnFootprint {
    pub fn add_column(&mut self, table: &str, column: &str) {
        match self.tables.entry(table.to_string()).or_insert_with(|| Some(BTreeSet::new())) {
            Some(set) => {
                set.insert(column.to_string());
            }
            None => {}
        }
    }

    pub fn add_all_columns(&mut self, table: &str) {
        self.tables.insert(table.to_string(), None);
    }

    pub fn add_temp(&mut self, name: &str, bytes: u64) {
        self.temp_tables.insert(name.to_string(), bytes);
    }

    /// Total bytes of the referenced base-table columns.
    pub fn referenced_bytes(&self, stats: &TableStats) -> Result<u64, CostError> {
        let mut total = 0u64;
        for (table, cols) in &self.tables {
            let entry = stats.table(table).ok_or_else(|| CostError::MissingStats(table.clone()))?;
            match cols {
                None => total += entry.total_width() * entry.rows,
                Some(set) => {
                    for c in set {
                        total += entry
                            .column_bytes(c)
                            .ok_or_else(|| CostError::MissingStats(alloc::format!("{table}.{c}")))?;
                    }
                }
            }
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepCost {
    pub label: String,
    pub billed_bytes: u64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub steps: Vec<StepCost>,
    pub total_bytes: u64,
    pub total_cost: f64,
    pub batch_size: u32,
    pub amortized_cost: f64,
}

impl CostReport {
    fn from_steps(steps: Vec<StepCost>, batch_size: u32) -> CostReport {
        let total_bytes = steps.iter().map(|s| s.billed_bytes).sum();
        let total_cost = steps.iter().map(|s| s.cost).sum();
        CostReport {
            steps,
            total_bytes,
            total_cost,
            batch_size,
            amortized_cost: if batch_size > 0 { total_cost / batch_size as f64 } else { total_cost },
        }
    }
}

/// Estimate billed bytes and cost for a sequence of statement footprints
/// executed as one batch of `batch_size` queries with per-query
/// selectivity `s`.
///
/// Columns-billed charges every referenced column in full. Bytes-scanned
/// scales by the combined selectivity of the batch and saturates at a
/// full read. Temp-table read-backs bill like normal tables under the
/// active scheme; writes bill zero.
pub fn estimate_bytes(
    steps: &[(String, ColumnFootprint)],
    stats: &TableStats,
    scheme: &PricingScheme,
    s: f64,
    batch_size: u32,
) -> Result<CostReport, CostError> {
    estimate_bytes_with(steps, stats, scheme, s, batch_size, None)
}

/// Like [`estimate_bytes`], but an empirically measured combined
/// selectivity can replace the uncorrelated-queries assumption.
pub fn estimate_bytes_with(
    steps: &[(String, ColumnFootprint)],
    stats: &TableStats,
    scheme: &PricingScheme,
    s: f64,
    batch_size: u32,
    measured_combined: Option<f64>,
) -> Result<CostReport, CostError> {
    scheme.validate()?;
    let combined = match measured_combined {
        Some(c) if (0.0..=1.0).contains(&c) => c,
        Some(c) => {
            return Err(CostError::Domain(alloc::format!(
                "measured combined selectivity {c} outside [0, 1]"
            )))
        }
        None => combined_selectivity(s, batch_size.max(1))?,
    };
    let fraction = scheme.billed_fraction(s, combined);
    let mut out = Vec::new();
    for (label, fp) in steps {
        let base = fp.referenced_bytes(stats)?;
        let temp: u64 = fp.temp_tables.values().sum();
        // costs stay in floating point; the byte count is rounded only
        // for reporting
        let billed = (base as f64) * fraction + temp as f64;
        let billed = billed.max(scheme.min_billed_bytes as f64);
        out.push(StepCost {
            label: label.clone(),
            billed_bytes: (billed + 0.5) as u64,
            cost: billed * scheme.rate,
        });
    }
    Ok(CostReport::from_steps(out, batch_size))
}

/// One row of the batch-size sweep emitted by [`compare_batch_vs_qat`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub batch_size: u32,
    pub batched_bytes: u64,
    pub batched_cost: f64,
    pub qat_bytes: u64,
    pub qat_cost: f64,
    pub savings_ratio: f64,
}

/// Sweep batch sizes for one template footprint: batched cost vs. running
/// each query alone (query-at-a-time = batch size x single-query cost).
pub fn compare_batch_vs_qat(
    footprint: &ColumnFootprint,
    stats: &TableStats,
    scheme: &PricingScheme,
    s: f64,
    batch_sizes: &[u32],
) -> Result<Vec<SweepPoint>, CostError> {
    scheme.validate()?;
    let single =
        estimate_bytes(&[("single".to_string(), footprint.clone())], stats, scheme, s, 1)?;
    let mut out = Vec::new();
    for &q in batch_sizes {
        let batched =
            estimate_bytes(&[("batched".to_string(), footprint.clone())], stats, scheme, s, q)?;
        let qat_bytes = single.total_bytes * q as u64;
        let qat_cost = single.total_cost * q as f64;
        out.push(SweepPoint {
            batch_size: q,
            batched_bytes: batched.total_bytes,
            batched_cost: batched.total_cost,
            qat_bytes,
            qat_cost,
            savings_ratio: if batched.total_cost > 0.0 { qat_cost / batched.total_cost } else { 1.0 },
        });
    }
    Ok(out)
}
