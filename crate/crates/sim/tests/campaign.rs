use dncit::method::MethodConfig;
use dncit::stats::{ks_uniform, monte_carlo_se, rejection_rate};
use dncit::Method;
use dncit_sim::{
    run_campaign, run_config, run_methods, write_outputs, CampaignConfig, DgmConfig, GzKind, PreparedDgm, SimError,
};

fn wald() -> MethodConfig {
    MethodConfig::default_for(Method::Wald)
}

fn small_cell() -> DgmConfig {
    DgmConfig::new(120, 2, GzKind::Linear, 0).with_q(5)
}

/// Supremum of |F_m(t) − t| by direct evaluation of the empirical CDF at
/// every jump and just before it.
fn ks_oracle(p: &[f64]) -> f64 {
    let m = p.len() as f64;
    let mut best: f64 = 0.0;
    for &t in p {
        let at = p.iter().filter(|&&v| v <= t).count() as f64 / m;
        let before = p.iter().filter(|&&v| v < t).count() as f64 / m;
        best = best.max((at - t).abs()).max((before - t).abs());
    }
    best
}

#[test]
fn rejection_rate_and_standard_error_examples() {
    assert_eq!(rejection_rate(&[0.01, 0.04, 0.2, 0.8], 0.05), 0.5);
    assert!((monte_carlo_se(0.5, 200) - 0.03536).abs() < 1e-5);
}

#[test]
fn campaign_statistics_match_oracles() {
    let res = run_campaign(&small_cell(), &wald(), 40, 0.05, 9).unwrap();
    assert_eq!(res.n_errors, 0);
    let p = res.successful_p_values();
    assert_eq!(p.len(), 40);
    let rr = p.iter().filter(|&&v| v <= 0.05).count() as f64 / 40.0;
    assert_eq!(res.rejection_rate, rr);
    assert!((res.mc_se - (rr * (1.0 - rr) / 40.0).sqrt()).abs() < 1e-15);
    assert!((res.ks_stat - ks_oracle(&p)).abs() < 1e-12);
    assert!((ks_uniform(&p) - ks_oracle(&p)).abs() < 1e-12);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let prepared = PreparedDgm::new(&small_cell()).unwrap();
    let methods = [wald(), MethodConfig::default_for(Method::Rcot)];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_methods(&prepared, &methods, 24, 0.05, 3).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.p_values, y.p_values);
        assert_eq!(x.rejection_rate, y.rejection_rate);
    }
    let c = run_methods(&prepared, &methods, 24, 0.05, 4).unwrap();
    assert_ne!(a[0].p_values, c[0].p_values);
}

#[test]
fn failing_replications_are_recorded() {
    // Too few rows for the forest test's held-out split.
    let cell = DgmConfig::new(50, 1, GzKind::Linear, 0).with_q(3);
    let res = run_campaign(&cell, &MethodConfig::default_for(Method::Fcit), 20, 0.05, 1).unwrap();
    assert_eq!(res.n_errors, 20);
    assert!(res.p_values.iter().all(Option::is_none));
    assert!(res.records.iter().all(|r| r.error.is_some()));
}

#[test]
fn campaign_arguments_are_checked() {
    assert!(run_campaign(&small_cell(), &wald(), 19, 0.05, 1).is_err());
    assert!(run_campaign(&small_cell(), &wald(), 20, 1.0, 1).is_err());
}

fn config_error_key(text: &str) -> String {
    match CampaignConfig::from_json_str(text) {
        Err(SimError::Config { key, .. }) => key,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn config_parsing_and_validation() {
    let ok = r#"{"master_seed": 5, "n_sim": 30, "methods": ["wald", {"method": "rcot", "params": {"num_f_z": 50}}],
                 "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0}]}"#;
    let cfg = CampaignConfig::from_json_str(ok).unwrap();
    assert_eq!(cfg.n_sim, 30);
    assert_eq!(cfg.alpha, 0.05);
    assert_eq!(cfg.method_configs().unwrap().len(), 2);

    let key = config_error_key(
        r#"{"methods": ["wald"], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "cubic", "c": 0}]}"#,
    );
    assert!(key.contains("g_z_kind"), "{key}");
    let key = config_error_key(r#"{"methods": ["wald"], "cells": [{"n": 100, "conf_dim": 3, "g_z_kind": "linear", "c": 0}]}"#);
    assert!(key.contains("conf_dim"), "{key}");
    let key = config_error_key(r#"{"methods": ["wald"], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 2}]}"#);
    assert!(key.ends_with(".c"), "{key}");
    let key = config_error_key(r#"{"n_sim": 5, "methods": ["wald"], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0}]}"#);
    assert_eq!(key, "n_sim");
    let key = config_error_key(r#"{"methods": [], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0}]}"#);
    assert_eq!(key, "methods");
    let key = config_error_key(
        r#"{"methods": ["wald"], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0, "colour": 1}]}"#,
    );
    assert!(key.starts_with("cells"), "{key}");
    let key = config_error_key(
        r#"{"methods": [{"method": "wald", "params": {"nope": 1}}], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0}]}"#,
    );
    assert!(key.starts_with("methods[0]"), "{key}");
    let key = config_error_key(
        r#"{"methods": ["wald"], "cells": [{"id": "a", "n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0},
                                           {"id": "a", "n": 200, "conf_dim": 1, "g_z_kind": "linear", "c": 0}]}"#,
    );
    assert!(key.contains("id"), "{key}");
    let key = config_error_key(
        r#"{"methods": ["wald"], "cells": [{"n": 100, "conf_dim": 1, "g_z_kind": "linear", "c": 0,
             "embedding_for_test": {"kind": "precomputed", "dim_out": 3}}]}"#,
    );
    assert!(key.contains("embedding_for_test"), "{key}");
}

#[test]
fn output_files_and_cardinality() {
    let text = r#"{"master_seed": 2, "n_sim": 20, "methods": ["wald", "rcot"],
                   "cells": [{"id": "a", "n": 120, "conf_dim": 1, "g_z_kind": "linear", "c": 0, "true_dim_q": 4},
                             {"id": "b", "n": 120, "conf_dim": 2, "g_z_kind": "squared", "c": 1, "true_dim_q": 4}]}"#;
    let cfg = CampaignConfig::from_json_str(text).unwrap();
    let cells = run_config(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), cfg.master_seed, &cells).unwrap();

    for id in ["a", "b"] {
        let rows = std::fs::read_to_string(dir.path().join(format!("{id}.csv"))).unwrap();
        let mut lines = rows.lines();
        assert_eq!(
            lines.next().unwrap(),
            "dgm_id,method,replication,seed,p_value,statistic,runtime_ms,error"
        );
        assert_eq!(lines.count(), 2 * 20);
        for m in ["wald", "rcot"] {
            let qq = std::fs::read_to_string(dir.path().join("qq").join(format!("{id}__{m}.csv"))).unwrap();
            assert_eq!(qq.lines().count(), 21);
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 2);
    let entries = summary["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        assert_eq!(e["n_sim"], 20);
        assert!(e["rejection_rate"].as_f64().unwrap() <= 1.0);
    }
}
