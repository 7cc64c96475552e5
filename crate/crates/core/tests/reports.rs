use std::path::Path;
use std::process::{Command, Output};

use hklearn::bench::{compute_pdi, RunMetrics};
use hklearn::bnb::BoundEvent;
use hklearn::instance::generate_random;
use proptest::prelude::*;

fn hklearn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hklearn")).args(args).current_dir(dir).output().unwrap()
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    csv::Reader::from_path(path).unwrap().deserialize().collect::<Result<_, _>>().unwrap()
}

#[derive(Debug, PartialEq, serde::Deserialize)]
struct Summary {
    config: String,
    instances: usize,
    solved: usize,
    mean_time: f64,
    mean_pdi: f64,
    mean_filtered_pct: f64,
    mean_opt_gap_pct: f64,
}

#[test]
fn summary_is_recomputable_from_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hklearn(&["bench", "--n", "13", "--count", "7", "--seed", "3", "--out", "b"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<RunMetrics> = read_rows(&tmp.path().join("b/runs.csv"));
    let summary: Vec<Summary> = read_rows(&tmp.path().join("b/summary.csv"));
    assert_eq!(runs.len(), 7);
    for s in &summary {
        let rows: Vec<&RunMetrics> = runs.iter().filter(|r| r.config == s.config).collect();
        let k = rows.len() as f64;
        let mean = |f: &dyn Fn(&RunMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
        let again = Summary {
            config: s.config.clone(),
            instances: rows.len(),
            solved: rows.iter().filter(|r| r.solved).count(),
            mean_time: mean(&|r| r.time),
            mean_pdi: mean(&|r| r.pdi),
            mean_filtered_pct: mean(&|r| r.filtered_pct),
            mean_opt_gap_pct: mean(&|r| r.opt_gap_pct),
        };
        assert_eq!(&again, s);
    }
    let text = std::fs::read_to_string(tmp.path().join("b/improvement.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("config,")).count(), 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("a.json");
    generate_random(8, 1).unwrap().save(&good).unwrap();
    let good = good.to_str().unwrap();

    assert_eq!(hklearn(&["oracle", good], tmp.path()).status.code(), Some(0));
    assert_eq!(hklearn(&["oracle", good, "missing.json"], tmp.path()).status.code(), Some(2));
    assert_eq!(hklearn(&["oracle", "missing.json"], tmp.path()).status.code(), Some(1));
    assert_eq!(hklearn(&["solve", "--model", "missing-model.json", good], tmp.path()).status.code(), Some(1));
    assert_eq!(hklearn(&["frobnicate"], tmp.path()).status.code(), Some(1));
}

#[test]
fn solve_writes_result_and_event_log() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("inst.json");
    let inst = generate_random(12, 4).unwrap();
    inst.save(&file).unwrap();
    let out = hklearn(&["solve", "--out", "res", file.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let name = &inst.provenance().name;
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join(format!("res/{name}.json"))).unwrap()).unwrap();
    assert_eq!(json["status"], "optimal");
    let log: Vec<BoundEvent> = read_rows(&tmp.path().join(format!("res/{name}.events.csv")));
    assert!(!log.is_empty());
}

fn trajectory() -> impl Strategy<Value = (Vec<BoundEvent>, Vec<f64>)> {
    prop::collection::vec((0.0f64..1.0, 1.0f64..2.0, 0.0f64..1.0, 0.0f64..1.0), 1..20).prop_map(|raw| {
        let mut t = 0.0;
        let mut log = Vec::new();
        let mut lift = Vec::new();
        for (dt, primal, frac, up) in raw {
            t += dt;
            log.push(BoundEvent { time: t, primal, dual: primal * frac });
            lift.push(up);
        }
        (log, lift)
    })
}

proptest! {
    #[test]
    fn tighter_duals_never_raise_the_integral((log, lift) in trajectory(), horizon in 0.5f64..25.0) {
        let tighter: Vec<BoundEvent> = log
            .iter()
            .zip(&lift)
            .map(|(e, &u)| BoundEvent { dual: e.dual + u * (e.primal - e.dual), ..*e })
            .collect();
        prop_assert!(compute_pdi(&tighter, horizon) <= compute_pdi(&log, horizon) + 1e-12);
        prop_assert!(compute_pdi(&log, horizon) <= horizon + 1e-12);
    }
}
