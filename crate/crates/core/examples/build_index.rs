//! Embed a caption corpus with the mock provider and write an index.
//!
//! cargo run --example build_index -- [captions.jsonl] [out.ragc]

use std::path::PathBuf;

use retrocap::store::CaptionFormat;
use retrocap::{EmbeddingStore, Gateway, StoreBuilder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args().skip(1);
    let captions = args.next().map(PathBuf::from).unwrap_or_else(|| fixtures.join("corpus/captions.jsonl"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("retrocap-example.ragc"));

    let gateway = Gateway::mock();
    let m = gateway.manifest();
    let mut builder = StoreBuilder::new(m.embedding_dimension, m.provider_id.clone());
    let added = builder.ingest_captions(&captions, CaptionFormat::Jsonl, "example", "en", Some(&gateway))?;
    let store = builder.freeze();
    let manifest = store.save_index(&out)?;
    println!("{added} captions -> {}", out.display());
    println!("{}", serde_json::to_string_pretty(&manifest)?);

    let loaded = EmbeddingStore::load_index(&out, Some(m.embedding_dimension))?;
    assert_eq!(loaded.entries(), store.entries());
    println!("reloaded {} entries, checksum verified", loaded.len());
    Ok(())
}
