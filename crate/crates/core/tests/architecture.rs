//! Network access stays behind the model, search and wiki clients.

use std::fs;
use std::path::Path;

const NETWORK_MODULES: [&str; 3] = ["model_client.rs", "search.rs", "wiki_fetch.rs"];

#[test]
fn http_client_is_confined() {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    for entry in fs::read_dir(&src).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if NETWORK_MODULES.contains(&name.as_str()) {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains("reqwest"), "{name} uses the HTTP client directly");
    }
}

#[test]
fn cli_has_no_http_client() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/Cargo.toml");
    let text = fs::read_to_string(manifest).unwrap();
    assert!(!text.contains("reqwest"));
}
