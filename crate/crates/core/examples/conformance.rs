//! Run the provider conformance suite against a running service, or against
//! the in-process mock when no URL is given.
//!
//! cargo run --example conformance -- [http://host:port]

use retrocap::provider::{run_conformance, HttpProvider, HttpProviderConfig, Provider};
use retrocap::MockProvider;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let provider: Box<dyn Provider> = match std::env::args().nth(1) {
        Some(url) => Box::new(HttpProvider::new(HttpProviderConfig::new(url))?),
        None => Box::new(MockProvider::new()),
    };
    let report = run_conformance(provider.as_ref());
    for c in &report.checks {
        let status = if c.passed { "ok  " } else { "FAIL" };
        println!("{status} {}{}", c.name, if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) });
    }
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
