//! Exact top-k retrieval for a fixture image against the fixture index.
//!
//! cargo run --example retrieve -- [image.png] [k]

use std::path::PathBuf;

use retrocap::provider::ImageSource;
use retrocap::{EmbeddingStore, Gateway};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args().skip(1);
    let image = args.next().map(PathBuf::from).unwrap_or_else(|| fixtures.join("images/harbor.png"));
    let k: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);

    let gateway = Gateway::mock();
    let store = EmbeddingStore::load_index(&fixtures.join("index/mock.ragc"), None)?;
    let query = gateway.embed_image(ImageSource::Path(&image))?;
    for hit in store.top_k(&query, k)? {
        let entry = store.entry(hit.entry_id).unwrap();
        println!("{:>2}  {:+.6}  #{:<3} {}", hit.rank, hit.score, hit.entry_id, entry.text);
    }
    Ok(())
}
