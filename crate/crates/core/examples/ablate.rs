//! Sweep K and N over a grid with the mock provider and print a TSV table.
//!
//! cargo run --example ablate -- [grid]     (default: table3)

use std::path::PathBuf;

use retrocap::cli::{format_ablation_row, parse_grid, AblationRow, ABLATION_HEADER, EXTENDED_SHOTS_JSON};
use retrocap::metrics::{evaluate, load_references, pair_instances};
use retrocap::{CaptionEngine, EmbeddingStore, Gateway, ImageInput, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let grid = std::env::args().nth(1).unwrap_or_else(|| "table3".into());

    let gateway = Gateway::mock();
    let store = EmbeddingStore::load_index(&fixtures.join("index/mock.ragc"), None)?;
    let refs = load_references(&fixtures.join("eval/references.json"))?;
    let images: Vec<ImageInput> = refs
        .keys()
        .map(|id| ImageInput::from_path(fixtures.join(format!("images/{id}.png"))))
        .collect();

    println!("{ABLATION_HEADER}");
    for cell in parse_grid(&grid, 4, 3)? {
        let config = PipelineConfig {
            k: cell.k,
            n: cell.n,
            shots: serde_json::from_str(EXTENDED_SHOTS_JSON)?,
            ..PipelineConfig::default()
        };
        let engine = CaptionEngine::new(&config, &store, &gateway)?;
        let mut preds = Vec::new();
        for r in engine.caption_batch(&images) {
            let r = r?;
            preds.push((r.image_id, r.chosen));
        }
        let report = evaluate(&pair_instances(preds, &refs)?, "en")?;
        println!("{}", format_ablation_row(&AblationRow { cell, report }));
    }
    Ok(())
}
