//! Listings 1 to 7 as files: each parses to the AST stored next to it and
//! the whole set deploys in order. `UPDATE_GOLDEN=1` rewrites the ASTs.

use std::fs;
use std::path::Path;

use portpipe_core::epl::{parse_statement, Engine};

/// Files per engine, in deployment order.
pub const GROUPS: [&[&str]; 2] = [
    &["listing1.json", "listing2.json", "listing3.json", "listing4.json", "listing5.json"],
    &[
        "listing6-1.epl",
        "listing6-2.epl",
        "listing7-1.epl",
        "listing7-2.epl",
        "listing7-3.epl",
        "listing7-4.epl",
    ],
];

/// Statement text of a corpus file. `.json` files are request bodies.
pub fn statement_text(dir: &Path, file: &str) -> Result<String, String> {
    let raw = fs::read_to_string(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
    if !file.ends_with(".json") {
        return Ok(raw);
    }
    let body: serde_json::Value = serde_json::from_str(&raw).map_err(|e| format!("{file}: {e}"))?;
    ["schema", "pattern", "dataflow"]
        .iter()
        .find_map(|k| body[k].as_str().map(str::to_owned))
        .ok_or_else(|| format!("{file}: no statement in body"))
}

/// Returns the number of statements checked.
pub fn check_corpus(dir: &Path) -> Result<usize, String> {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut n = 0;
    for group in GROUPS {
        let mut engine = Engine::new();
        for file in group {
            let text = statement_text(dir, file)?;
            let stmt = parse_statement(&text).map_err(|e| format!("{file}: {e}"))?;
            let mut got = serde_json::to_string_pretty(&stmt).expect("ast serializes");
            got.push('\n');
            let golden = dir.join(format!("{}.ast.json", file.rsplit_once('.').unwrap().0));
            if update {
                fs::write(&golden, &got).map_err(|e| e.to_string())?;
            }
            let want = fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
            if got != want {
                return Err(format!("{file}: AST differs from {}:\n{got}", golden.display()));
            }
            engine.deploy(stmt).map_err(|e| format!("{file}: deploy failed: {e}"))?;
            n += 1;
        }
    }
    Ok(n)
}
