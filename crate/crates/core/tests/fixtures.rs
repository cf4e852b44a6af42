//! Stored fixtures must regenerate byte-identically from their oracles, and
//! the implementation must agree with every stored expected value.

use std::path::PathBuf;

fn fixtures_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn fixtures_match_their_oracles() {
    let rows = asmlp_core::fixtures::verify_all(&fixtures_root()).unwrap();
    assert!(!rows.is_empty());
    let mut failed = Vec::new();
    for (case, ok, detail) in &rows {
        println!("{}: {} ({detail})", case, if *ok { "ok" } else { "DISAGREES" });
        if !ok {
            failed.push(format!("{case}: {detail}"));
        }
    }
    assert!(failed.is_empty(), "fixture differences:\n{}", failed.join("\n"));
}

/// Rebuild the committed fixture files in place:
/// `cargo test -p asmlp-core --test fixtures regenerate -- --ignored`
#[test]
#[ignore]
fn regenerate() {
    let n = asmlp_core::fixtures::write_all(&fixtures_root()).unwrap();
    println!("wrote {n} fixture cases under {:?}", fixtures_root());
}
