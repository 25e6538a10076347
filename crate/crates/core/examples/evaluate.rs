//! Score a predictions file against references: BLEU-1/4, ROUGE-L, CIDEr-D.
//!
//! cargo run --example evaluate -- [predictions.jsonl] [references.json]

use std::path::PathBuf;

use retrocap::metrics::evaluate_run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args().skip(1);
    let preds = args.next().map(PathBuf::from).unwrap_or_else(|| fixtures.join("eval/predictions.jsonl"));
    let refs = args.next().map(PathBuf::from).unwrap_or_else(|| fixtures.join("eval/references.json"));

    let report = evaluate_run(&preds, &refs, "en")?;
    let s = &report.scores;
    println!("instances {}", report.instances);
    println!("BLEU-1  {:.4}\nBLEU-4  {:.4}\nROUGE-L {:.4}\nCIDEr-D {:.4}", s.bleu1, s.bleu4, s.rouge_l, s.cider_d);
    for i in &report.per_instance {
        println!("  {:<10} {:.4}", i.id, i.cider_d);
    }
    Ok(())
}
