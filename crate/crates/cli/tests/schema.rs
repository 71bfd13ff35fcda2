mod common;

use common::{ok, read_json, s, small_dataset, train};
use nested_fusion_cli::VIZ_SCHEMA;
use serde_json::{json, Value};

fn validator() -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(VIZ_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn errors(v: &jsonschema::Validator, doc: &Value) -> Vec<String> {
    v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}

#[test]
fn exports_validate_for_every_latent_dimension_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = small_dataset(tmp.path());
    let regions = tmp.path().join("regions.json");
    std::fs::write(
        &regions,
        r#"{"regions": [
            {"label": "a", "kind": "disc", "center": [60.0, 60.0], "radius": 80.0},
            {"label": "b", "kind": "polygon", "vertices": [[200.0, 200.0], [360.0, 200.0], [300.0, 360.0]]},
            {"label": "c", "kind": "indices", "indices": [5, 6]}
        ]}"#,
    )
    .unwrap();
    let v = validator();
    for (model, d) in [("nested-fusion", 1), ("nested-fusion", 2), ("nested-fusion", 3), ("joint-pca", 2), ("concat-vae", 2)] {
        let ckpt = tmp.path().join(format!("{model}-{d}.ckpt"));
        train(&ds, &ckpt, model, d, 3);
        let out = tmp.path().join(format!("{model}-{d}.json"));
        ok(&["export-viz", "--data", s(&ds), "--checkpoint", s(&ckpt), "--out", s(&out), "--regions", s(&regions)]);
        let doc = read_json(&out);
        assert_eq!(errors(&v, &doc), Vec::<String>::new(), "{model} d={d}");
        assert_eq!(doc["heatmap"].is_null(), d != 2);
        assert_eq!(doc["color_mapping"]["mode"], ["ramp", "bilinear", "rgb"][d as usize - 1]);
    }
}

#[test]
fn schema_rejects_malformed_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = small_dataset(tmp.path());
    let ckpt = tmp.path().join("m.ckpt");
    train(&ds, &ckpt, "nested-fusion", 2, 0);
    let out = tmp.path().join("e.json");
    ok(&["export-viz", "--data", s(&ds), "--checkpoint", s(&ckpt), "--out", s(&out), "--bins", "20"]);
    let good = read_json(&out);
    let v = validator();
    assert!(v.is_valid(&good));

    let mutations: [(&str, fn(&mut Value)); 5] = [
        ("missing heatmap", |d| {
            d.as_object_mut().unwrap().remove("heatmap");
        }),
        ("latent_dim 4", |d| d["latent_dim"] = json!(4)),
        ("colour out of range", |d| d["spatial"][0]["color"] = json!([1.5, 0.0, 0.0])),
        ("unknown region kind", |d| d["regions"] = json!([{"label": "x", "kind": "blob"}])),
        ("extra field", |d| d["extra"] = json!(true)),
    ];
    for (what, mutate) in mutations {
        let mut doc = good.clone();
        mutate(&mut doc);
        assert!(!v.is_valid(&doc), "{what} accepted");
    }
}
