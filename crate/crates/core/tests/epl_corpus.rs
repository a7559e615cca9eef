mod support;

use std::path::Path;

use support::corpus::check_corpus;

#[test]
fn listings_parse_to_golden_asts_and_deploy() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus");
    assert_eq!(check_corpus(&dir).unwrap(), 11);
}
