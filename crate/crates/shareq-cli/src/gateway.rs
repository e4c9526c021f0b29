//! Batching gateway: accepts query submissions over a local TCP socket
//! (one JSON record per line), groups them within a time window, executes
//! each group as a shared statement, and replies to every submitter with
//! its own demultiplexed rows plus the batch's amortized cost.
//!
//! A group is flushed when the window elapses or it reaches the maximum
//! batch size, whichever happens first. A query that cannot be rewritten
//! (unsupported construct, oversized statement) falls back to individual
//! execution and says so in its reply. Replies to one connection are
//! delivered in submission order.
//!
//! Request:  {"id": "...", "sql": "...", "bindings": [...]}
//! Reply:    {"id": "...", "status": "ok", "columns": [...], "rows": [[...]],
//!            "batch_id": n, "batch_size": n, "amortized_cost": x,
//!            "fallback": false}
//!           {"id": "...", "status": "error", "error": "..."}

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use crate::io::{self, BatchRecord};
use crate::script_footprint;
use shareq_core::cost::{estimate_bytes, PricingScheme};
use shareq_core::exec::{self, reference_execute, ExecConfig, RefBackend};
use shareq_core::ir::{self, extract_template, GroupPolicy, QueryBatch, QueryId, QuerySpec};
use shareq_core::plan::{SplitConfig, SplitPolicy};
use shareq_core::sqlgen::{DialectProfile, ScanMode};
use shareq_core::table::{Catalog, Database, Table};

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    pub listen: String,
    pub window: Duration,
    pub max_batch_size: usize,
    pub policy: GroupPolicy,
    pub dialect: DialectProfile,
    pub mode: ScanMode,
    pub split: SplitPolicy,
    pub pricing: PricingScheme,
    pub assumed_selectivity: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            listen: "127.0.0.1:0".into(),
            window: Duration::from_millis(250),
            max_batch_size: 64,
            policy: GroupPolicy::PerTemplate,
            dialect: DialectProfile::reference(),
            mode: ScanMode::Indexed,
            split: SplitPolicy::Heuristic,
            pricing: PricingScheme::columns_billed(5e-12),
            assumed_selectivity: 0.05,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.is_zero() {
            bail!("batch window must be positive");
        }
        if self.max_batch_size == 0 {
            bail!("max batch size must be at least 1");
        }
        Ok(())
    }
}

/// TOML file shape for `serve --config`.
#[derive(Deserialize)]
pub struct GatewayConfigFile {
    pub listen: Option<String>,
    pub window_ms: Option<u64>,
    pub max_batch_size: Option<usize>,
    pub policy: Option<String>,
    pub dialect: Option<String>,
    pub mode: Option<String>,
    pub split: Option<String>,
    pub catalog: PathBuf,
    pub fixtures: PathBuf,
    pub pricing: Option<PricingFile>,
}

#[derive(Deserialize)]
pub struct PricingFile {
    pub scheme: Option<String>,
    pub rate: Option<f64>,
    pub assumed_selectivity: Option<f64>,
}

pub fn load_config(path: &std::path::Path) -> Result<(GatewayConfig, Catalog, Database)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading gateway config {}", path.display()))?;
    let file: GatewayConfigFile = toml::from_str(&text)
        .with_context(|| format!("parsing gateway config {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

    let mut cfg = GatewayConfig::default();
    if let Some(l) = file.listen {
        cfg.listen = l;
    }
    if let Some(w) = file.window_ms {
        cfg.window = Duration::from_millis(w);
    }
    if let Some(m) = file.max_batch_size {
        cfg.max_batch_size = m;
    }
    if let Some(p) = file.policy {
        cfg.policy = parse_policy(&p)?;
    }
    if let Some(d) = file.dialect {
        cfg.dialect = io::load_dialect(&d)?;
    }
    if let Some(m) = file.mode {
        cfg.mode = parse_mode(&m)?;
    }
    if let Some(sp) = file.split {
        cfg.split = parse_split(&sp)?;
    }
    if let Some(p) = file.pricing {
        let rate = p.rate.unwrap_or(5e-12);
        cfg.pricing = match p.scheme.as_deref() {
            None | Some("columns-billed") => PricingScheme::columns_billed(rate),
            Some("bytes-scanned") => PricingScheme::bytes_scanned(rate),
            Some(other) => bail!("unknown pricing scheme {other}"),
        };
        if let Some(s) = p.assumed_selectivity {
            cfg.assumed_selectivity = s;
        }
    }
    cfg.validate()?;
    let catalog = io::load_catalog(&resolve(&file.catalog))?;
    let db = io::load_fixtures(&resolve(&file.fixtures), &catalog)?;
    Ok((cfg, catalog, db))
}

pub fn parse_policy(s: &str) -> Result<GroupPolicy> {
    match s {
        "per-template" => Ok(GroupPolicy::PerTemplate),
        "global" => Ok(GroupPolicy::Global),
        other => bail!("unknown grouping policy {other} (per-template | global)"),
    }
}

pub fn parse_mode(s: &str) -> Result<ScanMode> {
    match s {
        "linear" => Ok(ScanMode::Linear),
        "indexed" => Ok(ScanMode::Indexed),
        other => bail!("unknown scan mode {other} (linear | indexed)"),
    }
}

pub fn parse_split(s: &str) -> Result<SplitPolicy> {
    match s {
        "heuristic" => Ok(SplitPolicy::Heuristic),
        "duplicate" => Ok(SplitPolicy::AlwaysDuplicate),
        "materialize" => Ok(SplitPolicy::AlwaysMaterialize),
        other => bail!("unknown split policy {other} (heuristic | duplicate | materialize)"),
    }
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

struct Submission {
    reply: Sender<(u64, String)>,
    seq: u64,
    id: String,
    raw_sql: String,
    /// `Err` carries the rewrite-parse failure; raw SQL may still run.
    spec: std::result::Result<QuerySpec, String>,
    arrived: Instant,
}

pub struct Gateway {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
    batcher_handle: Option<JoinHandle<()>>,
}

impl Gateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
        if let Some(h) = self.batcher_handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }
}

pub fn serve(config: GatewayConfig, catalog: Catalog, db: Database) -> Result<Gateway> {
    config.validate()?;
    let listener = TcpListener::bind(&config.listen)
        .with_context(|| format!("binding {}", config.listen))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Submission>();

    let backend = Arc::new(Mutex::new(RefBackend::with_dialect(db, config.dialect.clone())));

    let accept_shutdown = shutdown.clone();
    let accept_catalog = catalog.clone();
    let accept_handle = std::thread::spawn(move || {
        accept_loop(listener, tx, accept_catalog, accept_shutdown);
    });

    let batcher_shutdown = shutdown.clone();
    let batcher_handle = std::thread::spawn(move || {
        batcher_loop(rx, config, catalog, backend, batcher_shutdown);
    });

    Ok(Gateway {
        addr,
        shutdown,
        accept_handle: Some(accept_handle),
        batcher_handle: Some(batcher_handle),
    })
}

fn accept_loop(
    listener: TcpListener,
    tx: Sender<Submission>,
    catalog: Catalog,
    shutdown: Arc<AtomicBool>,
) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                let catalog = catalog.clone();
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, tx, catalog);
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(_) => break,
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    tx: Sender<Submission>,
    catalog: Catalog,
) -> Result<()> {
    let peer = stream.try_clone()?;
    let (reply_tx, reply_rx) = mpsc::channel::<(u64, String)>();
    let writer = std::thread::spawn(move || write_in_order(peer, reply_rx));

    let reader = BufReader::new(stream);
    let mut seq = 0u64;
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let this_seq = seq;
        seq += 1;
        match serde_json::from_str::<BatchRecord>(&line) {
            Ok(record) => {
                let spec = io::parse_record(&record, &catalog).map_err(|e| e.to_string());
                let sub = Submission {
                    reply: reply_tx.clone(),
                    seq: this_seq,
                    id: record.id,
                    raw_sql: record.sql,
                    spec,
                    arrived: Instant::now(),
                };
                if tx.send(sub).is_err() {
                    break;
                }
            }
            Err(e) => {
                let msg = serde_json::json!({
                    "id": serde_json::Value::Null,
                    "status": "error",
                    "error": format!("bad request: {e}"),
                });
                let _ = reply_tx.send((this_seq, msg.to_string()));
            }
        }
    }
    drop(reply_tx);
    let _ = writer.join();
    Ok(())
}

/// Deliver replies strictly in submission order even when batches finish
/// out of order.
fn write_in_order(mut stream: TcpStream, rx: Receiver<(u64, String)>) {
    let mut pending: BTreeMap<u64, String> = BTreeMap::new();
    let mut next = 0u64;
    while let Ok((seq, line)) = rx.recv() {
        pending.insert(seq, line);
        while let Some(line) = pending.remove(&next) {
            if writeln!(stream, "{line}").is_err() {
                return;
            }
            next += 1;
        }
    }
}

struct PendingGroup {
    template: Option<u64>,
    members: Vec<Submission>,
    deadline: Instant,
}

fn batcher_loop(
    rx: Receiver<Submission>,
    config: GatewayConfig,
    catalog: Catalog,
    backend: Arc<Mutex<RefBackend>>,
    shutdown: Arc<AtomicBool>,
) {
    let mut groups: Vec<PendingGroup> = Vec::new();
    let batch_counter = AtomicU64::new(0);
    loop {
        let now = Instant::now();
        let next_deadline = groups.iter().map(|g| g.deadline).min();
        let timeout = match next_deadline {
            Some(d) if d > now => d - now,
            Some(_) => Duration::from_millis(0),
            None => Duration::from_millis(50),
        };
        match rx.recv_timeout(timeout) {
            Ok(sub) => {
                match &sub.spec {
                    Ok(spec) => {
                        let template = match config.policy {
                            GroupPolicy::PerTemplate => Some(extract_template(spec).0),
                            GroupPolicy::Global => None,
                        };
                        let group = groups.iter_mut().find(|g| g.template == template);
                        let group = match group {
                            Some(g) => g,
                            None => {
                                groups.push(PendingGroup {
                                    template,
                                    members: Vec::new(),
                                    deadline: sub.arrived + config.window,
                                });
                                groups.last_mut().unwrap()
                            }
                        };
                        group.members.push(sub);
                        if group.members.len() >= config.max_batch_size {
                            let g = groups
                                .iter()
                                .position(|g| g.template == template)
                                .unwrap();
                            let group = groups.remove(g);
                            flush_group(group, &config, &catalog, &backend, &batch_counter);
                        }
                    }
                    Err(_) => {
                        // not rewritable: run individually right away
                        run_individual(sub, &backend, true);
                    }
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        // flush everything whose window elapsed
        let now = Instant::now();
        let mut i = 0;
        while i < groups.len() {
            if groups[i].deadline <= now {
                let group = groups.remove(i);
                flush_group(group, &config, &catalog, &backend, &batch_counter);
            } else {
                i += 1;
            }
        }
        if shutdown.load(Ordering::SeqCst) {
            for group in groups.drain(..) {
                flush_group(group, &config, &catalog, &backend, &batch_counter);
            }
            break;
        }
    }
}

fn flush_group(
    group: PendingGroup,
    config: &GatewayConfig,
    catalog: &Catalog,
    backend: &Arc<Mutex<RefBackend>>,
    batch_counter: &AtomicU64,
) {
    if group.members.is_empty() {
        return;
    }
    let batch_id = batch_counter.fetch_add(1, Ordering::SeqCst);
    let members: Vec<(QueryId, &Submission)> = group
        .members
        .iter()
        .enumerate()
        .map(|(i, s)| (QueryId(i as u32 + 1), s))
        .collect();
    let batch = QueryBatch {
        batch_id,
        template_id: group.template,
        members: members
            .iter()
            .map(|(q, s)| (*q, s.spec.as_ref().unwrap().clone()))
            .collect(),
    };

    let shared = execute_batch(&batch, config, catalog, backend);
    match shared {
        Ok((demuxed, amortized, mode_used)) => {
            for (q, sub) in &members {
                let table = &demuxed[q];
                let spec = sub.spec.as_ref().unwrap();
                reply_ok(
                    sub,
                    spec,
                    table,
                    catalog,
                    batch_id,
                    batch.len(),
                    amortized,
                    mode_used,
                    false,
                );
            }
        }
        Err(_) => {
            // rewrite or shared execution failed: every member falls back
            // to individual execution
            for (_, sub) in members {
                run_individual_ref(sub, backend, true);
            }
        }
    }
}

type BatchOutcome = (BTreeMap<QueryId, Table>, f64, &'static str);

fn execute_batch(
    batch: &QueryBatch,
    config: &GatewayConfig,
    catalog: &Catalog,
    backend: &Arc<Mutex<RefBackend>>,
) -> Result<BatchOutcome> {
    let split = SplitConfig { policy: config.split, ..SplitConfig::default() };
    let mut guard = backend.lock().map_err(|_| anyhow!("backend poisoned"))?;
    let attempt = |mode: ScanMode, guard: &mut RefBackend| -> Result<BatchOutcome, exec::ExecError> {
        let cfg = ExecConfig { mode, split: split.clone(), ..ExecConfig::default() };
        let run = if batch.template_id.is_some() || batch.len() == 1 {
            exec::run_single(batch, catalog, guard, &cfg)
        } else {
            // mixed templates in one window (global policy): regroup by
            // template and run one global plan
            let per_template = regroup(batch);
            let (results, script) = exec::run_global(&per_template, catalog, guard, &cfg)?;
            let mut demuxed = BTreeMap::new();
            // map (sub-batch, member) pairs back to the window's dense ids
            let mut ordinal = 0u32;
            for sb in &per_template {
                for (q, _) in &sb.members {
                    ordinal += 1;
                    let member_tables = results
                        .get(&(sb.batch_id, *q))
                        .cloned()
                        .ok_or_else(|| exec::ExecError::QueryOutsideBatch(*q))?;
                    demuxed.insert(QueryId(ordinal), member_tables);
                }
            }
            Ok((demuxed, script))
        };
        let (demuxed, script) = run?;
        let fp = script_footprint(&script);
        let stats = shareq_core::cost::TableStats::from_catalog(catalog);
        let report = estimate_bytes(
            &[("batch".to_string(), fp)],
            &stats,
            &config.pricing,
            config.assumed_selectivity,
            batch.len() as u32,
        )
        .map_err(|e| exec::ExecError::Invalid(e.to_string()))?;
        let label = match mode {
            ScanMode::Linear => "linear",
            ScanMode::Indexed => "indexed",
        };
        Ok((demuxed, report.amortized_cost, label))
    };
    match attempt(config.mode, &mut guard) {
        Ok(out) => Ok(out),
        // an oversized indexed statement falls back to linear before
        // giving up on sharing entirely
        Err(exec::ExecError::Render(shareq_core::sqlgen::SqlGenError::SizeExceeded { .. }))
            if config.mode == ScanMode::Indexed =>
        {
            attempt(ScanMode::Linear, &mut guard).map_err(|e| anyhow!("{e}"))
        }
        Err(e) => Err(anyhow!("{e}")),
    }
}

/// Split a mixed-template window batch into per-template batches for the
/// global plan, preserving submission order within each template.
fn regroup(batch: &QueryBatch) -> Vec<QueryBatch> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Vec<(QueryId, QuerySpec)>> = BTreeMap::new();
    for (q, spec) in &batch.members {
        let (tid, _) = extract_template(spec);
        if !groups.contains_key(&tid) {
            order.push(tid);
        }
        groups.entry(tid).or_default().push((*q, spec.clone()));
    }
    order
        .into_iter()
        .enumerate()
        .map(|(i, tid)| {
            let members = groups.remove(&tid).unwrap();
            let renumbered = members
                .into_iter()
                .enumerate()
                .map(|(j, (_, s))| (QueryId(j as u32 + 1), s))
                .collect();
            QueryBatch { batch_id: i as u64, template_id: Some(tid), members: renumbered }
        })
        .collect()
}

fn run_individual(sub: Submission, backend: &Arc<Mutex<RefBackend>>, fallback: bool) {
    run_individual_ref(&sub, backend, fallback);
}

/// Execute one query on its own: the unparsed spec when available, the
/// raw SQL otherwise (covers constructs outside the rewrite subset that
/// the engine still understands).
fn run_individual_ref(sub: &Submission, backend: &Arc<Mutex<RefBackend>>, fallback: bool) {
    let sql = match &sub.spec {
        Ok(spec) => ir::unparse(spec),
        Err(_) => sub.raw_sql.clone(),
    };
    let result = {
        let guard = backend.lock();
        match guard {
            Ok(g) => reference_execute(g.engine(), &sql),
            Err(_) => {
                reply_error(sub, "backend unavailable");
                return;
            }
        }
    };
    match result {
        Ok(table) => {
            let columns: Vec<String> = table.columns.iter().map(|c| c.name.clone()).collect();
            let rows: Vec<Vec<serde_json::Value>> = table
                .rows
                .iter()
                .map(|r| r.iter().map(io::value_to_json).collect())
                .collect();
            let msg = serde_json::json!({
                "id": sub.id,
                "status": "ok",
                "columns": columns,
                "rows": rows,
                "batch_id": serde_json::Value::Null,
                "batch_size": 1,
                "amortized_cost": serde_json::Value::Null,
                "mode": "individual",
                "fallback": fallback,
            });
            let _ = sub.reply.send((sub.seq, msg.to_string()));
        }
        Err(e) => reply_error(sub, &e.to_string()),
    }
}

#[allow(clippy::too_many_arguments)]
fn reply_ok(
    sub: &Submission,
    spec: &QuerySpec,
    table: &Table,
    catalog: &Catalog,
    batch_id: u64,
    batch_size: usize,
    amortized_cost: f64,
    mode: &str,
    fallback: bool,
) {
    let columns: Vec<String> = spec.output_schema(catalog).into_iter().map(|(n, _)| n).collect();
    let rows: Vec<Vec<serde_json::Value>> =
        table.rows.iter().map(|r| r.iter().map(io::value_to_json).collect()).collect();
    let msg = serde_json::json!({
        "id": sub.id,
        "status": "ok",
        "columns": columns,
        "rows": rows,
        "batch_id": batch_id,
        "batch_size": batch_size,
        "amortized_cost": amortized_cost,
        "mode": mode,
        "fallback": fallback,
    });
    let _ = sub.reply.send((sub.seq, msg.to_string()));
}

fn reply_error(sub: &Submission, error: &str) {
    let msg = serde_json::json!({
        "id": sub.id,
        "status": "error",
        "error": error,
    });
    let _ = sub.reply.send((sub.seq, msg.to_string()));
}

// ---------------------------------------------------------------------------
// Client helper (used by the CLI and tests)
// ---------------------------------------------------------------------------

/// Send requests over one connection and collect one reply per request.
pub fn submit_all(
    addr: &SocketAddr,
    records: &[BatchRecord],
    inter_arrival: Duration,
) -> Result<Vec<serde_json::Value>> {
    let mut stream = TcpStream::connect(addr)?;
    let reader = BufReader::new(stream.try_clone()?);
    let n = records.len();
    let writer_records: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).unwrap())
        .collect();
    let writer = std::thread::spawn(move || -> Result<()> {
        for line in writer_records {
            writeln!(stream, "{line}")?;
            stream.flush()?;
            if !inter_arrival.is_zero() {
                std::thread::sleep(inter_arrival);
            }
        }
        Ok(())
    });
    let mut replies = Vec::with_capacity(n);
    for line in reader.lines() {
        let line = line?;
        replies.push(serde_json::from_str(&line)?);
        if replies.len() == n {
            break;
        }
    }
    writer.join().map_err(|_| anyhow!("writer panicked"))??;
    Ok(replies)
}
