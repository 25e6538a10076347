//! Render the three-shot Spanish retrieval prompt and a socratic prompt.
//!
//! cargo run --example prompt

use retrocap::pipeline::default_shots;
use retrocap::{build_retrieval_prompt, build_socratic_prompt, language_display_name, PromptSpec, SocraticContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let language = language_display_name("es")?;
    let spec = PromptSpec::new(
        default_shots(),
        vec![
            "a brown chicken is walking around outside with another hen".into(),
            "a couple of roosters standing in a field".into(),
            "a hen pecks the ground while another looks off in the distance".into(),
            "a couple of roosters are in a field".into(),
        ],
        language,
        "</s>",
    );
    println!("{}\n", build_retrieval_prompt(&spec)?);

    let query = SocraticContext {
        image_type: "photo".into(),
        people_count: "are no people".into(),
        places: vec!["farm".into(), "field".into()],
        objects: vec!["chicken".into(), "rooster".into()],
    };
    println!("{}", build_socratic_prompt(&query, language, &default_shots()[..1], "</s>")?);
    Ok(())
}
