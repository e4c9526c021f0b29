//! Gateway behaviors beyond the acceptance traces: fallback safety for
//! queries the rewriter cannot take, per-connection reply ordering, and
//! batch metadata.

use std::time::Duration;

use shareq_cli::gateway::{self, GatewayConfig};
use shareq_cli::io::BatchRecord;
use shareq_cli::workload;
use shareq_core::ir::GroupPolicy;

fn start(window_ms: u64, max_batch: usize, policy: GroupPolicy) -> (gateway::Gateway, workload::WorkloadSpec) {
    let spec = workload::WorkloadSpec {
        scale_factor: 0.0002,
        instances_per_template: 4,
        ..workload::WorkloadSpec::default()
    };
    let (catalog, db) = workload::generate_data(&spec);
    let config = GatewayConfig {
        listen: "127.0.0.1:0".into(),
        window: Duration::from_millis(window_ms),
        max_batch_size: max_batch,
        policy,
        ..GatewayConfig::default()
    };
    (gateway::serve(config, catalog, db).unwrap(), spec)
}

#[test]
fn unsupported_construct_falls_back_to_individual_execution() {
    let (gw, _) = start(100, 8, GroupPolicy::PerTemplate);
    // CASE in the projection is outside the rewrite subset but the
    // backend executes it fine
    let records = vec![
        BatchRecord {
            id: "odd".into(),
            sql: "SELECT CASE WHEN l_quantity > 25 THEN 1 ELSE 0 END AS big FROM lineitem \
                  WHERE l_seq BETWEEN 1 AND 5"
                .into(),
            bindings: None,
        },
        BatchRecord {
            id: "plain".into(),
            sql: "SELECT l_seq FROM lineitem WHERE l_seq BETWEEN 1 AND 3".into(),
            bindings: None,
        },
    ];
    let replies = gateway::submit_all(&gw.addr(), &records, Duration::ZERO).unwrap();
    assert_eq!(replies.len(), 2);
    let odd = replies.iter().find(|r| r["id"] == "odd").unwrap();
    assert_eq!(odd["status"], "ok", "{odd}");
    assert_eq!(odd["fallback"], true);
    assert_eq!(odd["mode"], "individual");
    assert_eq!(odd["rows"].as_array().unwrap().len(), 5);
    let plain = replies.iter().find(|r| r["id"] == "plain").unwrap();
    assert_eq!(plain["status"], "ok");
    assert_eq!(plain["fallback"], false);
    assert_eq!(plain["rows"].as_array().unwrap().len(), 3);
    gw.shutdown();
}

#[test]
fn malformed_sql_gets_an_error_reply() {
    let (gw, _) = start(80, 8, GroupPolicy::PerTemplate);
    let records = vec![BatchRecord {
        id: "broken".into(),
        sql: "SELEC nothing FROM nowhere".into(),
        bindings: None,
    }];
    let replies = gateway::submit_all(&gw.addr(), &records, Duration::ZERO).unwrap();
    assert_eq!(replies[0]["status"], "error");
    assert!(replies[0]["error"].as_str().unwrap().contains("syntax"), "{}", replies[0]);
    gw.shutdown();
}

#[test]
fn replies_follow_submission_order_per_connection() {
    // mixed templates flush as separate batches that may finish out of
    // order; the connection still sees replies in submission order
    let (gw, spec) = start(120, 4, GroupPolicy::PerTemplate);
    let a = workload::generate_queries(&workload::WorkloadSpec {
        templates: vec!["seq-search".into()],
        instances_per_template: 3,
        ..spec.clone()
    })
    .unwrap();
    let b = workload::generate_queries(&workload::WorkloadSpec {
        templates: vec!["pricing-summary".into()],
        instances_per_template: 3,
        ..spec
    })
    .unwrap();
    let interleaved: Vec<BatchRecord> =
        a.into_iter().zip(b).flat_map(|(x, y)| [x, y]).collect();
    let replies = gateway::submit_all(&gw.addr(), &interleaved, Duration::ZERO).unwrap();
    let got: Vec<&str> = replies.iter().map(|r| r["id"].as_str().unwrap()).collect();
    let sent: Vec<&str> = interleaved.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(got, sent);
    gw.shutdown();
}

#[test]
fn global_policy_groups_mixed_templates_into_one_batch() {
    let (gw, spec) = start(150, 16, GroupPolicy::Global);
    let a = workload::generate_queries(&workload::WorkloadSpec {
        templates: vec!["seq-search".into()],
        instances_per_template: 2,
        ..spec.clone()
    })
    .unwrap();
    let b = workload::generate_queries(&workload::WorkloadSpec {
        templates: vec!["forecast-revenue".into()],
        instances_per_template: 2,
        ..spec
    })
    .unwrap();
    let mixed: Vec<BatchRecord> = a.into_iter().chain(b).collect();
    let replies = gateway::submit_all(&gw.addr(), &mixed, Duration::ZERO).unwrap();
    let batch_ids: std::collections::BTreeSet<u64> =
        replies.iter().map(|r| r["batch_id"].as_u64().unwrap()).collect();
    assert_eq!(batch_ids.len(), 1, "global policy should share one window batch");
    assert!(replies.iter().all(|r| r["batch_size"].as_u64() == Some(4)));
    assert!(replies.iter().all(|r| r["status"] == "ok"));
    gw.shutdown();
}
