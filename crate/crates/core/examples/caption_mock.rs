//! Caption every fixture image end to end with the deterministic mock.
//!
//! cargo run --example caption_mock -- [language-code] [retrieval|socratic]

use std::path::PathBuf;

use retrocap::{CaptionEngine, EmbeddingStore, Gateway, ImageInput, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args().skip(1);
    let config = PipelineConfig {
        language: args.next().unwrap_or_else(|| "es".into()),
        template: args.next().as_deref().unwrap_or("retrieval").parse()?,
        ..PipelineConfig::default()
    };

    let gateway = Gateway::mock();
    let store = EmbeddingStore::load_index(&fixtures.join("index/mock.ragc"), None)?;
    let engine = CaptionEngine::new(&config, &store, &gateway)?;
    let images: Vec<ImageInput> = ["beach", "forest", "kitchen", "street"]
        .iter()
        .map(|n| ImageInput::from_path(fixtures.join(format!("images/{n}.png"))))
        .collect();
    for result in engine.caption_batch(&images) {
        let r = result?;
        println!("{:<8} {}", r.image_id, r.chosen);
        for (i, c) in r.candidates.iter().enumerate() {
            let mark = if i == r.chosen_index { '*' } else { ' ' };
            println!("    {mark} gen {:+.2} rerank {:+.4}  {}", c.generation_score, c.rerank_score, c.text);
        }
    }
    Ok(())
}
