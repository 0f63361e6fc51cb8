#![allow(dead_code)]

use std::path::{Path, PathBuf};

use jsonschema::{Resource, Validator};
use serde_json::Value;

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Validator for `schemas/<name>.schema.json` with every sibling schema
/// registered, so relative `$ref`s resolve offline.
pub fn validator(name: &str) -> Validator {
    let mut opts = jsonschema::options();
    for entry in std::fs::read_dir(schema_dir()).unwrap() {
        let doc = load(&entry.unwrap().path());
        let id = doc["$id"].as_str().unwrap().to_string();
        opts = opts.with_resource(id, Resource::from_contents(doc).unwrap());
    }
    opts.build(&load(&schema_dir().join(format!("{name}.schema.json"))))
        .unwrap()
}

/// Schema for an emitted JSON file, chosen by file name.
pub fn schema_for(file: &Path) -> Option<&'static str> {
    Some(match file.file_name()?.to_str()? {
        "metrics.json" => "metrics_report",
        "comparison.json" => "space_comparison",
        "ladder.json" => "ladder_report",
        "decomposition.json" => "decomposition_report",
        "capacity.json" => "capacity_report",
        "shortcut.json" => "shortcut_report",
        "shift_table.json" => "shift_table",
        "manifest.json" => "run_manifest",
        _ => return None,
    })
}

pub fn assert_valid(schema: &str, doc: &Value) {
    let v = validator(schema);
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

/// Validate every `.json` file under `root` that has a schema; returns how
/// many were checked.
pub fn validate_tree(root: &Path) -> usize {
    let mut count = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if let Some(schema) = schema_for(&path) {
                assert_valid(schema, &load(&path));
                count += 1;
            }
        }
    }
    count
}

/// All files under `root` with the given extension, as sorted relative paths.
pub fn files_with_ext(root: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
