//! Regenerates the fixture worlds under `tests/fixtures/`.
//!
//! ```text
//! cargo run -p censorml --example fixtures
//! ```

use std::path::Path;

use censorml::ingest::Platform;
use censorml::synth::{generate, FakeIp, SynthOptions};
use serde_json::json;

fn curation_world() -> SynthOptions {
    SynthOptions {
        platform: Platform::Satellite,
        records: 1000,
        domains: 20,
        months: 1,
        seed: 101,
        ..SynthOptions::default()
    }
}

fn ooni_world() -> SynthOptions {
    SynthOptions {
        platform: Platform::Ooni,
        records: 600,
        domains: 15,
        months: 1,
        seed: 102,
        ..SynthOptions::default()
    }
}

fn signature_world() -> SynthOptions {
    SynthOptions {
        platform: Platform::Satellite,
        records: 1200,
        domains: 20,
        months: 1,
        seed: 103,
        fake_ips: vec![
            FakeIp::new("198.51.100.7", 2, false, false),
            FakeIp::new("203.0.113.99", 1, false, false),
            FakeIp::new("192.0.2.45", 1, false, true),
        ],
        ..SynthOptions::default()
    }
}

fn worlds() -> Vec<(&'static str, SynthOptions)> {
    vec![
        ("curation_1k", curation_world()),
        ("ooni_600", ooni_world()),
        ("signatures", signature_world()),
    ]
}

fn main() -> std::io::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    for (name, opts) in worlds() {
        let world = generate(&opts);
        let dir = root.join(name);
        world.write(&dir, true)?;
        let expected = json!({
            "options": opts,
            "countries": ["CN"],
            "counts": world.expected_counts(&["CN"]),
        });
        std::fs::write(
            dir.join("expected.json"),
            serde_json::to_string_pretty(&expected)? + "\n",
        )?;
        println!("{}: {} records", dir.display(), world.records.len());
    }
    Ok(())
}
