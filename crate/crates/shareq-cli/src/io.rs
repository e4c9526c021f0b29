//! File formats: the schema catalog (JSON), fixture relations (pipe
//! delimited text with a header row), batch input files (one JSON record
//! per line: `{id, sql, bindings?}`), dialect profiles (JSON), plan
//! files, and cost-report export.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use shareq_core::cost::{CostReport, SweepPoint};
use shareq_core::dq::SetEncoding;
use shareq_core::ir::{self, QuerySpec};
use shareq_core::sqlgen::DialectProfile;
use shareq_core::table::{Catalog, ColumnDef, Column, Database, Table, TableSchema};
use shareq_core::value::{Value, ValueType};

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    tables: Vec<TableFile>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    name: String,
    row_count: u64,
    columns: Vec<ColumnFile>,
}

#[derive(Serialize, Deserialize)]
struct ColumnFile {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    avg_width: u64,
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading catalog {}", path.display()))?;
    let file: CatalogFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing catalog {}", path.display()))?;
    let mut catalog = Catalog::new();
    for t in file.tables {
        let columns = t
            .columns
            .into_iter()
            .map(|c| {
                let ty = ValueType::parse(&c.ty)
                    .ok_or_else(|| anyhow!("unknown column type {} for {}.{}", c.ty, t.name, c.name))?;
                Ok(ColumnDef { name: c.name, ty, avg_width: c.avg_width })
            })
            .collect::<Result<Vec<_>>>()?;
        catalog.add_table(TableSchema { name: t.name, row_count: t.row_count, columns });
    }
    Ok(catalog)
}

pub fn save_catalog(path: &Path, catalog: &Catalog) -> Result<()> {
    let file = CatalogFile {
        tables: catalog
            .tables
            .values()
            .map(|t| TableFile {
                name: t.name.clone(),
                row_count: t.row_count,
                columns: t
                    .columns
                    .iter()
                    .map(|c| ColumnFile {
                        name: c.name.clone(),
                        ty: c.ty.name().to_string(),
                        avg_width: c.avg_width,
                    })
                    .collect(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)
        .with_context(|| format!("writing catalog {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

const DELIM: char = '|';

pub fn save_fixture(dir: &Path, name: &str, table: &Table) -> Result<()> {
    let mut out = String::new();
    let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    out.push_str(&names.join("|"));
    out.push('\n');
    for row in &table.rows {
        let fields: Vec<String> = row.iter().map(render_field).collect();
        out.push_str(&fields.join("|"));
        out.push('\n');
    }
    let path = dir.join(format!("{name}.tbl"));
    fs::write(&path, out).with_context(|| format!("writing fixture {}", path.display()))?;
    Ok(())
}

fn render_field(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format!("{f}"),
        Value::Str(s) | Value::Date(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::IntArray(items) => items
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(","),
    }
}

pub fn load_fixture(path: &Path, schema: &TableSchema) -> Result<Table> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading fixture {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{}: empty fixture", path.display()))?;
    let names: Vec<&str> = header.split(DELIM).collect();
    let defs: Vec<&ColumnDef> = names
        .iter()
        .map(|n| {
            schema
                .column(&n.to_ascii_lowercase())
                .ok_or_else(|| anyhow!("{}: column {n} not in catalog", path.display()))
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Column> =
        defs.iter().map(|d| Column { name: d.name.clone(), ty: d.ty }).collect();
    let mut table = Table::new(columns);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(DELIM).collect();
        if fields.len() != defs.len() {
            bail!("{}:{}: expected {} fields, got {}", path.display(), lineno + 2, defs.len(), fields.len());
        }
        let row = fields
            .iter()
            .zip(&defs)
            .map(|(f, d)| parse_field(f, d.ty))
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("{}:{}", path.display(), lineno + 2))?;
        table.push_row(row);
    }
    Ok(table)
}

fn parse_field(field: &str, ty: ValueType) -> Result<Value> {
    if field.is_empty() {
        return Ok(Value::Null);
    }
    Ok(match ty {
        ValueType::Int => Value::Int(field.parse()?),
        ValueType::Float => Value::Float(field.parse()?),
        ValueType::Str => Value::Str(field.to_string()),
        ValueType::Date => Value::Date(field.to_string()),
        ValueType::IntArray => Value::IntArray(
            field.split(',').map(|p| p.parse()).collect::<std::result::Result<_, _>>()?,
        ),
    })
}

/// Load every cataloged table that has a fixture file in `dir`.
pub fn load_fixtures(dir: &Path, catalog: &Catalog) -> Result<Database> {
    let mut db = Database::new();
    for (name, schema) in &catalog.tables {
        let path = dir.join(format!("{name}.tbl"));
        if path.exists() {
            db.insert(name, load_fixture(&path, schema)?);
        }
    }
    Ok(db)
}

// ---------------------------------------------------------------------------
// Batch input
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct BatchRecord {
    pub id: String,
    pub sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bindings: Option<Vec<serde_json::Value>>,
}

pub fn json_to_value(v: &serde_json::Value) -> Result<Value> {
    Ok(match v {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::Int(i)
            } else {
                Value::Float(n.as_f64().ok_or_else(|| anyhow!("bad number {n}"))?)
            }
        }
        serde_json::Value::String(s) => Value::Str(s.clone()),
        other => bail!("unsupported binding value {other}"),
    })
}

pub fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Bool(b) => serde_json::Value::Bool(*b),
        Value::Int(i) => serde_json::json!(i),
        Value::Float(f) => serde_json::json!(f),
        Value::Str(s) | Value::Date(s) => serde_json::json!(s),
        Value::IntArray(items) => serde_json::json!(items),
    }
}

/// Parse one batch record against the catalog, binding placeholders.
pub fn parse_record(record: &BatchRecord, catalog: &Catalog) -> Result<QuerySpec> {
    let spec = ir::parse_query(&record.sql, catalog)
        .map_err(|e| anyhow!("query {}: {e}", record.id))?;
    let bound = match &record.bindings {
        Some(vals) => {
            let values =
                vals.iter().map(json_to_value).collect::<Result<Vec<_>>>()?;
            ir::bind(&spec, &values).map_err(|e| anyhow!("query {}: {e}", record.id))?
        }
        None => spec,
    };
    if !bound.is_bound() {
        bail!("query {}: placeholders without bindings", record.id);
    }
    Ok(bound)
}

pub fn load_batch_file(path: &Path, catalog: &Catalog) -> Result<Vec<(String, QuerySpec)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading batch file {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record: BatchRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        let spec = parse_record(&record, catalog)?;
        out.push((record.id, spec));
    }
    if out.is_empty() {
        bail!("{}: no queries", path.display());
    }
    Ok(out)
}

pub fn save_batch_file(path: &Path, records: &[BatchRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing batch file {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dialect profiles
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialectFile {
    name: String,
    encoding: String,
    array_constructor: String,
    array_remove_fn: String,
    array_intersect_fn: String,
    cardinality_fn: String,
    contains_fn: String,
    bitand_fn: String,
    popcount_fn: String,
    shift_left_fn: String,
    unnest_template: String,
    window_template: String,
    max_statement_bytes: usize,
    reads_own_materialization: bool,
}

/// A builtin profile name or a path to a JSON profile.
pub fn load_dialect(name_or_path: &str) -> Result<DialectProfile> {
    if let Some(d) = DialectProfile::builtin(name_or_path) {
        return Ok(d);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        bail!(
            "unknown dialect {name_or_path}; builtins are presto-like, standard-like, \
             reference, reference-bitmask"
        );
    }
    let text = fs::read_to_string(path)?;
    let f: DialectFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing dialect profile {}", path.display()))?;
    let encoding = match f.encoding.as_str() {
        "array" => SetEncoding::Array,
        "bitmask" => SetEncoding::Bitmask,
        other => bail!("unknown encoding {other} (use array or bitmask)"),
    };
    Ok(DialectProfile {
        name: f.name,
        encoding,
        array_constructor: f.array_constructor,
        array_remove_fn: f.array_remove_fn,
        array_intersect_fn: f.array_intersect_fn,
        cardinality_fn: f.cardinality_fn,
        contains_fn: f.contains_fn,
        bitand_fn: f.bitand_fn,
        popcount_fn: f.popcount_fn,
        shift_left_fn: f.shift_left_fn,
        unnest_template: f.unnest_template,
        window_template: f.window_template,
        max_statement_bytes: f.max_statement_bytes,
        reads_own_materialization: f.reads_own_materialization,
    })
}

// ---------------------------------------------------------------------------
// Plan files and reports
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct PlanFile {
    pub dialect: String,
    pub mode: String,
    pub batch_size: usize,
    pub steps: Vec<PlanStepFile>,
}

#[derive(Serialize, Deserialize)]
pub struct PlanStepFile {
    pub kind: String,
    /// temp-table name for materialize steps, sink label for run steps
    pub target: String,
    pub depends_on: Vec<usize>,
    pub sql: String,
    pub bytes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
}

pub fn save_plan_file(path: &Path, plan: &PlanFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(plan)?)
        .with_context(|| format!("writing plan {}", path.display()))?;
    Ok(())
}

/// Cost report as tab-separated text, one line per step plus totals.
pub fn render_cost_report(report: &CostReport) -> String {
    let mut out = String::from("step\tbilled_bytes\tcost\n");
    for s in &report.steps {
        out.push_str(&format!("{}\t{}\t{:.9}\n", s.label, s.billed_bytes, s.cost));
    }
    out.push_str(&format!(
        "total\t{}\t{:.9}\namortized_per_query\t\t{:.9}\n",
        report.total_bytes, report.total_cost, report.amortized_cost
    ));
    out
}

/// Batch-size sweep as tab-separated text suitable for plotting.
pub fn render_sweep(points: &[SweepPoint]) -> String {
    let mut out =
        String::from("batch_size\tbatched_bytes\tbatched_cost\tqat_bytes\tqat_cost\tsavings_ratio\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{}\t{:.9}\t{}\t{:.9}\t{:.4}\n",
            p.batch_size, p.batched_bytes, p.batched_cost, p.qat_bytes, p.qat_cost, p.savings_ratio
        ));
    }
    out
}
