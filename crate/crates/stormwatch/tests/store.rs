mod common;

use std::fs::{self, OpenOptions};
use std::io::Write;

use stormwatch::core::campaign::{CampaignState, Decision, Verdict};
use stormwatch::registry::Registry;
use stormwatch::store::Store;

use common::{review_fixture, ticking_clock};

fn decide_first_two(reg: &Registry, fx: &common::Fixture) {
    reg.decide(&Decision {
        candidate_id: fx.pending[0].id.clone(),
        verdict: Verdict::Validated,
        label: "Flood, river \"Oder\"".into(),
        note: Some("front pages".into()),
        expert: Some("ak".into()),
    })
    .unwrap();
    reg.decide(&Decision { candidate_id: fx.pending[1].id.clone(), verdict: Verdict::Rejected, label: String::new(), note: None, expert: None })
        .unwrap();
}

#[test]
fn empty_data_directory_restores_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("fresh")).unwrap();
    assert!(store.restore_all().unwrap().is_empty());
    let reg = Registry::open(store).unwrap();
    assert!(reg.campaigns().is_empty());
    assert!(reg.warnings().is_empty());
    assert!(reg.storms(None, None).is_empty());
}

#[test]
fn persist_then_restore_is_deep_equal() {
    let fx = review_fixture();
    let reg = fx.registry();
    decide_first_two(&reg, &fx);
    let live = (*reg.campaign(&fx.campaign).unwrap()).clone();
    drop(reg);

    let restored = fx.store().restore(&fx.campaign).unwrap();
    assert_eq!(restored.damage, None);
    assert_eq!(restored.journal_len, 4);
    assert_eq!(restored.state, live);

    // without the snapshot, replaying the journal gives the same state
    fs::remove_file(fx.store().snapshot_path(&fx.campaign).unwrap()).unwrap();
    let replayed = fx.store().restore(&fx.campaign).unwrap();
    assert_eq!(replayed.state, live);
    let (events, damage) = fx.store().read_journal(&fx.campaign).unwrap();
    assert!(damage.is_none());
    assert_eq!(CampaignState::replay(&events).unwrap(), live);

    let reopened = fx.registry();
    assert_eq!(*reopened.campaign(&fx.campaign).unwrap(), live);
}

#[test]
fn stale_snapshot_is_caught_up_from_the_journal() {
    // a crash between journal append and snapshot refresh
    let fx = review_fixture();
    let reg = fx.registry();
    reg.decide(&Decision {
        candidate_id: fx.pending[2].id.clone(),
        verdict: Verdict::Rejected,
        label: String::new(),
        note: None,
        expert: None,
    })
    .unwrap();
    let snap_path = fx.store().snapshot_path(&fx.campaign).unwrap();
    let old_snapshot = fs::read(&snap_path).unwrap();
    decide_first_two(&reg, &fx);
    let live = (*reg.campaign(&fx.campaign).unwrap()).clone();
    drop(reg);
    fs::write(&snap_path, old_snapshot).unwrap();

    let restored = fx.store().restore(&fx.campaign).unwrap();
    assert_eq!(restored.state, live);
    assert_eq!(restored.journal_len, 5);
}

#[test]
fn journal_truncated_mid_line_restores_the_complete_prefix() {
    let fx = review_fixture();
    let reg = fx.registry();
    decide_first_two(&reg, &fx);
    drop(reg);
    let path = fx.store().journal_path(&fx.campaign).unwrap();
    let full = fs::read(&path).unwrap();
    let last_start = full[..full.len() - 1].iter().rposition(|b| *b == b'\n').unwrap() + 1;
    fs::write(&path, &full[..last_start + 20]).unwrap();
    fs::remove_file(fx.store().snapshot_path(&fx.campaign).unwrap()).unwrap();

    let r = fx.store().restore(&fx.campaign).unwrap();
    assert_eq!(r.journal_len, 3);
    let damage = r.damage.expect("tail flagged");
    assert_eq!(damage.line, 4);
    assert_eq!(damage.offset, last_start as u64);
    assert_eq!(r.state.record(&fx.pending[0].id).unwrap().status.as_str(), "validated");
    assert_eq!(r.state.record(&fx.pending[1].id).unwrap().status.as_str(), "pending");
}

#[test]
fn registry_moves_a_damaged_tail_aside_and_keeps_appending() {
    let fx = review_fixture();
    let path = fx.store().journal_path(&fx.campaign).unwrap();
    let clean_len = fs::metadata(&path).unwrap().len();
    OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"event\":\"decided\",\"cand").unwrap();

    let reg = Registry::open_with_clock(fx.store(), ticking_clock()).unwrap();
    assert_eq!(reg.warnings().len(), 1);
    assert!(reg.warnings()[0].contains(&format!("byte offset {clean_len}")), "{}", reg.warnings()[0]);
    assert_eq!(fs::metadata(&path).unwrap().len(), clean_len);
    assert_eq!(fs::read(path.with_extension("damaged")).unwrap(), b"{\"event\":\"decided\",\"cand");

    decide_first_two(&reg, &fx);
    drop(reg);
    let r = fx.store().restore(&fx.campaign).unwrap();
    assert!(r.damage.is_none());
    assert_eq!(r.journal_len, 4);
}

#[test]
fn corrupt_middle_line_halts_replay_there() {
    let fx = review_fixture();
    let reg = fx.registry();
    decide_first_two(&reg, &fx);
    drop(reg);
    let path = fx.store().journal_path(&fx.campaign).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{not json}";
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    fs::remove_file(fx.store().snapshot_path(&fx.campaign).unwrap()).unwrap();

    let r = fx.store().restore(&fx.campaign).unwrap();
    assert_eq!(r.journal_len, 2);
    let d = r.damage.unwrap();
    assert_eq!(d.line, 3);
    assert_eq!(d.offset as usize, lines[0].len() + lines[1].len() + 2);
    assert_eq!(r.state.pending().count(), 3);
}

#[test]
fn record_that_does_not_apply_is_reported_as_damage() {
    let fx = review_fixture();
    let reg = fx.registry();
    decide_first_two(&reg, &fx);
    drop(reg);
    let path = fx.store().journal_path(&fx.campaign).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let third = text.lines().nth(2).unwrap().to_owned();
    // deciding the same candidate twice cannot be applied
    OpenOptions::new().append(true).open(&path).unwrap().write_all(format!("{third}\n").as_bytes()).unwrap();
    fs::remove_file(fx.store().snapshot_path(&fx.campaign).unwrap()).unwrap();
    let r = fx.store().restore(&fx.campaign).unwrap();
    assert_eq!(r.journal_len, 4);
    let d = r.damage.unwrap();
    assert_eq!(d.line, 5);
    assert!(d.reason.contains("does not apply"));
    assert_eq!(d.offset, text.len() as u64);
}

#[test]
fn campaign_ids_are_validated() {
    let fx = review_fixture();
    let store = fx.store();
    assert!(store.journal_path("../escape").is_err());
    assert!(store.journal_path("").is_err());
    assert!(store.journal_path(&"x".repeat(65)).is_err());
    assert_eq!(store.campaign_ids().unwrap(), ["review"]);
}
