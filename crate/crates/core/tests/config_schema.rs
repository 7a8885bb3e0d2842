use qrnet::experiments::{ExperimentConfig, ExperimentKind};
use serde_json::{json, Value};

fn validator() -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn presets_match_the_shipped_schema() {
    let v = validator();
    for config in [
        ExperimentConfig::experiment1(),
        ExperimentConfig::experiment2(),
        ExperimentConfig::experiment2_full_scale(),
        ExperimentConfig::bench(),
    ] {
        let value = serde_json::to_value(&config).unwrap();
        let errors: Vec<String> = v.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{:?}: {errors:?}", config.experiment);
    }
}

#[test]
fn schema_and_loader_agree_on_overlays() {
    let v = validator();
    let accepted = [
        json!({ "runs": 5, "optimizer": { "lr": 0.001 } }),
        json!({ "sort_mode": { "mode": "soft", "epsilon": 0.5 }, "smoothing": 0.1 }),
        json!({ "stop_rules": [{ "kind": "threshold", "value": 0.9 }, { "kind": "max_epochs", "epochs": 10 }] }),
        json!({ "distributions": [{ "kind": "chi_squared", "dof": 3 }] }),
    ];
    for overlay in &accepted {
        assert!(v.is_valid(overlay), "{overlay}");
        ExperimentConfig::from_json_overlay(ExperimentKind::Exp1, overlay).unwrap();
    }
    let rejected = [
        json!({ "rnus": 5 }),
        json!({ "optimizer": { "learning_rate": 0.001 } }),
        json!({ "bench": { "depht": 2 } }),
        json!({ "families": ["qrnn"] }),
    ];
    for overlay in &rejected {
        assert!(!v.is_valid(overlay), "{overlay}");
        assert!(
            ExperimentConfig::from_json_overlay(ExperimentKind::Exp1, overlay).is_err(),
            "{overlay}"
        );
    }
}
