use std::io::BufReader;

use rsrgx_core::ladder::*;
use rsrgx_core::rulegen::{Branch, CellType, RuleTable};

const PRESET: &str = include_str!("fixtures/sextuple_preset.json");
const EVENTS: &str = include_str!("fixtures/sextuple_events.jsonl");

fn frozen() -> (SextuplePreset, Vec<DecimationEvent>) {
    let preset: SextuplePreset = serde_json::from_str(PRESET).unwrap();
    let events = read_events_jsonl(BufReader::new(EVENTS.as_bytes())).unwrap();
    (preset, events)
}

#[test]
fn fixture_reaches_a_type_two_cell() {
    let (_, events) = frozen();
    let last = events.last().unwrap();
    assert_eq!(last.new_type, CellType::new(2).unwrap());
    assert_eq!(last.rule, "J(0,1,0)/max");
    let rules: Vec<&str> = events.iter().map(|e| e.rule.as_str()).collect();
    assert_eq!(rules, ["J(0,0,0)/min", "p(0,0)/max", "J(1,0,0)/min", "J(0,1,0)/max"]);
}

#[test]
fn preset_regenerates_frozen_events() {
    let (preset, events) = frozen();
    let rules = RuleTable::generate(&Branch::BOTH);
    assert_eq!(preset.events(&rules).unwrap(), events);
}

#[test]
fn replay_matches_direct_stepping() {
    let (preset, events) = frozen();
    let rules = RuleTable::generate(&Branch::BOTH);
    let initial = init_chain(&preset.config()).unwrap();
    let mut direct = initial.clone();
    for _ in &events {
        assert!(matches!(direct.decimate_step(&rules, &Policy::Default).unwrap(), StepOutcome::Decimated(_)));
    }
    assert_eq!(replay(&initial, &events, &rules).unwrap(), direct);
    // The six clump cells have merged into the one type-2 cell.
    assert_eq!(direct.type_census()[3], 1);
}

#[test]
fn default_search_finds_the_fixture() {
    let (preset, events) = frozen();
    let rules = RuleTable::generate(&Branch::BOTH);
    let hit = search_sextuple(&SextupleSearch::default(), &rules).unwrap().unwrap();
    assert_eq!((hit.preset, hit.events), (preset, events));
}

#[test]
fn search_is_deterministic() {
    let rules = RuleTable::generate(&Branch::BOTH);
    let search = SextupleSearch { max_trials: 20_000, ..SextupleSearch::default() };
    let a = search_sextuple(&search, &rules).unwrap().expect("a type-2 pattern");
    let b = search_sextuple(&search, &rules).unwrap().unwrap();
    assert_eq!(a, b);
    assert!(a.events.iter().any(|e| e.new_type == CellType::new(2).unwrap()));
}
