//! Regenerates the sextuple fixture: the default search's first hit as JSON
//! and its event log.
//!
//! cargo run --example sextuple_fixture -- tests/fixtures

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rsrgx_core::ladder::{search_sextuple, write_events_jsonl, SextupleSearch};
use rsrgx_core::rulegen::{Branch, RuleTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "tests/fixtures".into()));
    let rules = RuleTable::generate(&Branch::BOTH);
    let hit = search_sextuple(&SextupleSearch::default(), &rules)?.ok_or("search found no pattern")?;
    let (preset, events) = (hit.preset, hit.events);
    println!("hit after {} trials", hit.trials);
    serde_json::to_writer_pretty(File::create(dir.join("sextuple_preset.json"))?, &preset)?;
    write_events_jsonl(&events, BufWriter::new(File::create(dir.join("sextuple_events.jsonl"))?))?;
    for e in &events {
        println!("{} {:?} -> {}", e.rule, e.location, e.new_type);
    }
    Ok(())
}
