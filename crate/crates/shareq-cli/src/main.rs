//! Command-line front end: rewrite batches to shared SQL, check shared
//! execution against query-at-a-time on the bundled backend, estimate
//! pay-per-byte costs, run batches end to end, generate the desk-scale
//! workload, and serve the batching gateway.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shareq_cli::gateway::{self, parse_mode, parse_policy, parse_split};
use shareq_cli::{io, script_footprint, workload};
use shareq_core::cost::{compare_batch_vs_qat, PricingScheme, TableStats};
use shareq_core::exec::{self, ExecConfig, RefBackend};
use shareq_core::ir::{self, GroupPolicy, QueryBatch};
use shareq_core::plan::{self, SplitConfig, Step};
use shareq_core::sqlgen::{self, RenderContext, ScanMode};
use shareq_core::table::Catalog;

#[derive(Parser)]
#[command(
    name = "shareq",
    about = "Rewrite batches of SQL queries into shared statements, execute them, and estimate pay-per-byte costs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Batch input file: one JSON record {id, sql, bindings?} per line
    #[arg(long)]
    batch: PathBuf,
    /// Schema catalog (JSON)
    #[arg(long)]
    catalog: PathBuf,
    /// Scan annotation mode
    #[arg(long, default_value = "indexed")]
    mode: String,
    /// Grouping policy: per-template | global
    #[arg(long, default_value = "per-template")]
    policy: String,
    /// Dialect profile: builtin name or JSON file
    #[arg(long, default_value = "reference")]
    dialect: String,
    /// DAG split policy: heuristic | duplicate | materialize
    #[arg(long, default_value = "heuristic")]
    split: String,
    /// Maximum queries per batch
    #[arg(long, default_value_t = 128)]
    max_batch: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite a batch file into shared SQL / an execution plan file
    Rewrite {
        #[command(flatten)]
        common: CommonArgs,
        /// Write the plan as JSON here instead of printing statements
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run shared and individual execution on the reference backend and
    /// compare per-query results
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of .tbl fixture files
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Estimate billed bytes and cost across batch sizes
    Cost {
        #[command(flatten)]
        common: CommonArgs,
        /// Pricing scheme: columns-billed | bytes-scanned
        #[arg(long, default_value = "columns-billed")]
        scheme: String,
        /// Currency units per byte
        #[arg(long, default_value_t = 5e-12)]
        rate: f64,
        /// Per-query selectivity assumed by the estimate
        #[arg(long, default_value_t = 0.05)]
        selectivity: f64,
        /// Comma-separated batch sizes to sweep
        #[arg(long, default_value = "1,2,4,8,16,32,64,128")]
        sizes: String,
    },
    /// Execute a batch end to end and print demultiplexed results
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Generate the desk-scale workload: fixtures, catalog, query file
    GenWorkload {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Fraction of the full-size benchmark tables
        #[arg(long, default_value_t = 0.001)]
        scale: f64,
        /// Comma-separated template subset (default: all five)
        #[arg(long)]
        templates: Option<String>,
        #[arg(long, default_value_t = 32)]
        instances: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Selectivity of the seq-search template's dense interval
        #[arg(long, default_value_t = 0.01)]
        selectivity: f64,
    },
    /// Start the batching gateway
    Serve {
        /// Gateway config (TOML)
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Rewrite { common, out } => cmd_rewrite(&common, out.as_deref()),
        Command::Check { common, fixtures } => cmd_check(&common, &fixtures),
        Command::Cost { common, scheme, rate, selectivity, sizes } => {
            cmd_cost(&common, &scheme, rate, selectivity, &sizes)
        }
        Command::Run { common, fixtures } => cmd_run(&common, &fixtures),
        Command::GenWorkload { out, scale, templates, instances, seed, selectivity } => {
            cmd_gen_workload(&out, scale, templates.as_deref(), instances, seed, selectivity)
        }
        Command::Serve { config } => cmd_serve(&config),
    }
}

struct Loaded {
    catalog: Catalog,
    batches: Vec<QueryBatch>,
    mapping: Vec<ir::IdMapping>,
    mode: ScanMode,
    policy: GroupPolicy,
    dialect: sqlgen::DialectProfile,
    split: SplitConfig,
}

fn load_common(common: &CommonArgs) -> Result<Loaded> {
    let catalog = io::load_catalog(&common.catalog)?;
    let queries = io::load_batch_file(&common.batch, &catalog)?;
    let policy = parse_policy(&common.policy)?;
    // structural grouping is always per template; the policy decides
    // whether execution uses per-batch plans or one global plan
    let (batches, mapping) =
        ir::group_batch(&queries, GroupPolicy::PerTemplate, common.max_batch)
            .map_err(|e| anyhow!("{e}"))?;
    let dialect = io::load_dialect(&common.dialect)?;
    let split = SplitConfig {
        policy: parse_split(&common.split)?,
        can_materialize: dialect.reads_own_materialization,
        ..SplitConfig::default()
    };
    Ok(Loaded {
        catalog,
        batches,
        mapping,
        mode: parse_mode(&common.mode)?,
        policy,
        dialect,
        split,
    })
}

fn cmd_rewrite(common: &CommonArgs, out: Option<&std::path::Path>) -> Result<ExitCode> {
    let loaded = load_common(common)?;
    let stats = TableStats::from_catalog(&loaded.catalog);
    let ctx = RenderContext::new(&loaded.catalog);
    let limit = loaded.dialect.max_statement_bytes;

    let mut scripts: Vec<(String, plan::ExecutionScript, usize)> = Vec::new();
    match loaded.policy {
        GroupPolicy::PerTemplate => {
            for batch in &loaded.batches {
                let dag = plan::build_shared_plan(batch, loaded.dialect.encoding)
                    .map_err(|e| anyhow!("batch {}: {e}", batch.batch_id))?;
                let script = plan::split_dag(&dag, &stats, &loaded.split)
                    .map_err(|e| anyhow!("batch {}: {e}", batch.batch_id))?;
                scripts.push((format!("batch_{}", batch.batch_id), script, batch.len()));
            }
        }
        GroupPolicy::Global => {
            let (dag, _) = plan::build_global_plan(&loaded.batches, loaded.dialect.encoding)
                .map_err(|e| anyhow!("{e}"))?;
            let script =
                plan::split_dag(&dag, &stats, &loaded.split).map_err(|e| anyhow!("{e}"))?;
            scripts.push(("global".to_string(), script, dag.batch.len()));
        }
    }

    let mut plan_file = io::PlanFile {
        dialect: loaded.dialect.name.clone(),
        mode: common.mode.clone(),
        batch_size: loaded.mapping.len(),
        steps: Vec::new(),
    };
    let mut ctx = ctx;
    for (label, script, batch_size) in &scripts {
        // step indices in the plan file are global across scripts
        let base = plan_file.steps.len();
        for (i, step) in script.steps.iter().enumerate() {
            let rendered = match step {
                Step::Materialize { name, plan, columns } => {
                    let rq = sqlgen::render_materialize(
                        plan,
                        *batch_size,
                        &loaded.dialect,
                        loaded.mode,
                        &ctx,
                    )
                    .map_err(|e| anyhow!("{label}: {e}"))?;
                    ctx.temp_columns.insert(name.clone(), rq.columns.clone());
                    io::PlanStepFile {
                        kind: "materialize".into(),
                        target: name.clone(),
                        depends_on: script.deps[i].iter().map(|d| d + base).collect(),
                        bytes: rq.bytes,
                        sql: rq.sql,
                        columns: columns.clone(),
                    }
                }
                Step::Run { sink, plan } => {
                    let rq = sqlgen::render_plan(
                        plan,
                        *batch_size,
                        &loaded.dialect,
                        loaded.mode,
                        &ctx,
                    )
                    .map_err(|e| anyhow!("{label}: {e}"))?;
                    io::PlanStepFile {
                        kind: "run".into(),
                        target: format!("{label}/{}", sink.label),
                        depends_on: script.deps[i].iter().map(|d| d + base).collect(),
                        bytes: rq.bytes,
                        sql: rq.sql,
                        columns: rq.columns,
                    }
                }
            };
            println!(
                "{} {}: {} bytes ({} the {}-byte limit)",
                rendered.kind,
                rendered.target,
                rendered.bytes,
                if rendered.bytes <= limit { "within" } else { "OVER" },
                limit
            );
            plan_file.steps.push(rendered);
        }
    }

    match out {
        Some(path) => {
            io::save_plan_file(path, &plan_file)?;
            println!("plan written to {}", path.display());
        }
        None => {
            for step in &plan_file.steps {
                println!("-- {} {}", step.kind, step.target);
                println!("{};\n", step.sql);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(common: &CommonArgs, fixtures: &std::path::Path) -> Result<ExitCode> {
    let loaded = load_common(common)?;
    let db = io::load_fixtures(fixtures, &loaded.catalog)?;
    let mut backend = RefBackend::with_dialect(db, loaded.dialect.clone());
    let cfg = ExecConfig { mode: loaded.mode, split: loaded.split.clone(), ..ExecConfig::default() };

    let mut failed = 0usize;
    let mut total = 0usize;
    match loaded.policy {
        GroupPolicy::PerTemplate => {
            for batch in &loaded.batches {
                let report = exec::equivalence_check(batch, &loaded.catalog, &mut backend, &cfg)
                    .map_err(|e| anyhow!("batch {}: {e}", batch.batch_id))?;
                for o in &report.outcomes {
                    total += 1;
                    let orig = original_id(&loaded, batch.batch_id, o.query);
                    if o.equal {
                        println!("ok   {orig}");
                    } else {
                        failed += 1;
                        println!(
                            "FAIL {orig}: {}",
                            o.detail.clone().unwrap_or_else(|| "mismatch".into())
                        );
                    }
                }
            }
        }
        GroupPolicy::Global => {
            let report = exec::equivalence_check_global(
                &loaded.batches,
                &loaded.catalog,
                &mut backend,
                &cfg,
            )
            .map_err(|e| anyhow!("{e}"))?;
            for o in &report.outcomes {
                total += 1;
                if o.equal {
                    println!("ok   query {}", o.query);
                } else {
                    failed += 1;
                    println!(
                        "FAIL query {}: {}",
                        o.query,
                        o.detail.clone().unwrap_or_else(|| "mismatch".into())
                    );
                }
            }
        }
    }
    println!("{} of {total} queries match", total - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn original_id(loaded: &Loaded, batch: u64, member: ir::QueryId) -> String {
    loaded
        .mapping
        .iter()
        .find(|m| m.batch == batch && m.member == member)
        .map(|m| m.original.clone())
        .unwrap_or_else(|| format!("batch{batch}/q{member}"))
}

fn cmd_cost(
    common: &CommonArgs,
    scheme: &str,
    rate: f64,
    selectivity: f64,
    sizes: &str,
) -> Result<ExitCode> {
    let loaded = load_common(common)?;
    let stats = TableStats::from_catalog(&loaded.catalog);
    let scheme = match scheme {
        "columns-billed" => PricingScheme::columns_billed(rate),
        "bytes-scanned" => PricingScheme::bytes_scanned(rate),
        other => bail!("unknown pricing scheme {other}"),
    };
    let sizes: Vec<u32> = sizes
        .split(',')
        .map(|p| p.trim().parse().context("bad --sizes entry"))
        .collect::<Result<_>>()?;

    for batch in &loaded.batches {
        // the footprint of one representative member's shared plan
        let one = QueryBatch {
            batch_id: batch.batch_id,
            template_id: batch.template_id,
            members: vec![batch.members[0].clone()],
        };
        let dag = plan::build_shared_plan(&one, loaded.dialect.encoding)
            .map_err(|e| anyhow!("{e}"))?;
        let script =
            plan::split_dag(&dag, &stats, &loaded.split).map_err(|e| anyhow!("{e}"))?;
        let fp = script_footprint(&script);
        let sweep = compare_batch_vs_qat(&fp, &stats, &scheme, selectivity, &sizes)
            .map_err(|e| anyhow!("{e}"))?;
        let first = original_id(&loaded, batch.batch_id, batch.members[0].0);
        println!("# template of {first} ({} queries in file)", batch.len());
        print!("{}", io::render_sweep(&sweep));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(common: &CommonArgs, fixtures: &std::path::Path) -> Result<ExitCode> {
    let loaded = load_common(common)?;
    let db = io::load_fixtures(fixtures, &loaded.catalog)?;
    let mut backend = RefBackend::with_dialect(db, loaded.dialect.clone());
    let cfg = ExecConfig { mode: loaded.mode, split: loaded.split.clone(), ..ExecConfig::default() };

    let print_table = |orig: &str, table: &shareq_core::table::Table| {
        println!("== {orig}");
        let names: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
        println!("{}", names.join("\t"));
        for row in &table.rows {
            let fields: Vec<String> = row
                .iter()
                .map(|v| match v {
                    shareq_core::value::Value::Null => String::new(),
                    shareq_core::value::Value::Str(s) | shareq_core::value::Value::Date(s) => {
                        s.clone()
                    }
                    other => other.render_sql(),
                })
                .collect();
            println!("{}", fields.join("\t"));
        }
    };

    match loaded.policy {
        GroupPolicy::PerTemplate => {
            for batch in &loaded.batches {
                let (demuxed, _) =
                    exec::run_single(batch, &loaded.catalog, &mut backend, &cfg)
                        .map_err(|e| anyhow!("batch {}: {e}", batch.batch_id))?;
                for (q, table) in &demuxed {
                    print_table(&original_id(&loaded, batch.batch_id, *q), table);
                }
            }
        }
        GroupPolicy::Global => {
            let (results, _) =
                exec::run_global(&loaded.batches, &loaded.catalog, &mut backend, &cfg)
                    .map_err(|e| anyhow!("{e}"))?;
            for ((batch_id, q), table) in &results {
                print_table(&original_id(&loaded, *batch_id, *q), table);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_workload(
    out: &std::path::Path,
    scale: f64,
    templates: Option<&str>,
    instances: usize,
    seed: u64,
    selectivity: f64,
) -> Result<ExitCode> {
    let templates = match templates {
        None => workload::TEMPLATE_NAMES.iter().map(|s| s.to_string()).collect(),
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
    };
    let spec = workload::WorkloadSpec {
        scale_factor: scale,
        templates,
        instances_per_template: instances,
        seed,
        search_selectivity: selectivity,
    };
    std::fs::create_dir_all(out)?;
    let (catalog, db) = workload::generate_data(&spec);
    io::save_catalog(&out.join("catalog.json"), &catalog)?;
    for (name, table) in &db.tables {
        io::save_fixture(out, name, table)?;
    }
    let records = workload::generate_queries(&spec)?;
    io::save_batch_file(&out.join("queries.jsonl"), &records)?;
    println!(
        "wrote catalog.json, {} fixtures, and queries.jsonl ({} queries) to {}",
        db.tables.len(),
        records.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(config_path: &std::path::Path) -> Result<ExitCode> {
    let (config, catalog, db) = gateway::load_config(config_path)?;
    let window = config.window;
    let gw = gateway::serve(config, catalog, db)?;
    println!("listening on {} (batch window {:?})", gw.addr(), window);
    // run until interrupted
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}
