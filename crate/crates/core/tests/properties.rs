use std::path::Path;

use draftvault_core::backup::{content_hash, BackupManifest};
use draftvault_core::disk::Disk;
use draftvault_core::journal::{scan_journal, Change, Journal, RECORD_OVERHEAD};
use draftvault_core::pp::{PpBlob, PpVersionLog};
use draftvault_core::signature::{Authentication, EditGuard, Integrity, SignedEnvelope};
use draftvault_core::{Drawing, ElementPayload, Error};
use proptest::prelude::*;

fn payload() -> impl Strategy<Value = ElementPayload> {
    (1u16..4, prop::collection::vec(any::<u8>(), 0..6)).prop_map(|(k, d)| ElementPayload::new(k, d))
}

/// Abstract step: for each change, add a new payload or delete the element at
/// an index (modulo the current size).
#[derive(Debug, Clone)]
enum Pick {
    Add(ElementPayload),
    Del(usize),
    SelfModify(usize),
}

fn pick() -> impl Strategy<Value = Pick> {
    prop_oneof![
        3 => payload().prop_map(Pick::Add),
        2 => any::<usize>().prop_map(Pick::Del),
        1 => any::<usize>().prop_map(Pick::SelfModify),
    ]
}

/// Resolves picks against `model` (which is updated) into concrete changes.
fn resolve(model: &mut Vec<ElementPayload>, picks: &[Pick]) -> Vec<Change> {
    let mut out = Vec::new();
    for p in picks {
        match p {
            Pick::Add(e) => {
                model.push(e.clone());
                out.push(Change::added(e.clone()));
            }
            Pick::Del(i) | Pick::SelfModify(i) if !model.is_empty() => {
                let e = model[i % model.len()].clone();
                let at = model.iter().rposition(|x| *x == e).unwrap();
                model.remove(at);
                out.push(Change::deleted(e.clone()));
                if matches!(p, Pick::SelfModify(_)) {
                    model.push(e.clone());
                    out.push(Change::added(e));
                }
            }
            _ => {}
        }
    }
    out
}

fn bytes_of(model: &[ElementPayload]) -> Vec<u8> {
    let mut d = Drawing::new("m");
    model.iter().for_each(|e| d.add_element(e.clone()));
    d.canonical_bytes()
}

fn journal_in(dir: &Path) -> Journal {
    Journal::begin_session(&dir.join("p.journal"), &Disk::volatile()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn undo_redo_walk_matches_snapshots(
        steps in prop::collection::vec(prop::collection::vec(pick(), 1..8), 1..40),
        walk in prop::collection::vec(any::<bool>(), 0..120),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut j = journal_in(dir.path());
        let mut d = Drawing::new("m");
        let mut model = Vec::new();
        let mut snaps = vec![bytes_of(&model)];
        for picks in &steps {
            let changes = resolve(&mut model, picks);
            if changes.is_empty() {
                continue;
            }
            j.commit_step(&mut d, changes).unwrap();
            snaps.push(bytes_of(&model));
        }
        let mut cursor = snaps.len() - 1;
        for undo in walk {
            if undo && cursor > 0 {
                let before = d.canonical_bytes();
                j.undo_step(&mut d).unwrap();
                cursor -= 1;
                // redo ∘ undo = identity
                j.redo_step(&mut d).unwrap();
                prop_assert_eq!(d.canonical_bytes(), before);
                j.undo_step(&mut d).unwrap();
            } else if !undo && cursor + 1 < snaps.len() {
                j.redo_step(&mut d).unwrap();
                cursor += 1;
            }
            prop_assert_eq!(j.cursor(), cursor);
            prop_assert_eq!(d.canonical_bytes(), snaps[cursor].clone());
        }
    }

    #[test]
    fn distinct_payload_steps_are_order_free(
        base in prop::collection::btree_set(payload(), 1..10),
        adds in prop::collection::btree_set(payload(), 0..6),
        seed in any::<u64>(),
    ) {
        let base: Vec<_> = base.into_iter().collect();
        let mut changes: Vec<Change> = base.iter().step_by(2).cloned().map(Change::deleted).collect();
        changes.extend(adds.into_iter().filter(|a| !base.contains(a)).map(Change::added));
        prop_assume!(!changes.is_empty());
        let mut shuffled = changes.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let run = |cs: Vec<Change>| {
            let dir = tempfile::tempdir().unwrap();
            let mut j = journal_in(dir.path());
            let mut d = Drawing::new("m");
            j.commit_step(&mut d, base.iter().cloned().map(Change::added).collect()).unwrap();
            j.commit_step(&mut d, cs).unwrap();
            d
        };
        prop_assert!(run(changes).multiset_eq(&run(shuffled)));
    }

    #[test]
    fn truncated_journal_recovers_a_step_prefix(
        steps in prop::collection::vec(prop::collection::vec(pick(), 1..6), 1..12),
        cut in any::<prop::sample::Index>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.journal");
        let mut model = Vec::new();
        let mut committed = Vec::new();
        let mut expected_len = 6usize;
        {
            let mut j = journal_in(dir.path());
            let mut d = Drawing::new("m");
            for picks in &steps {
                let changes = resolve(&mut model, picks);
                if changes.is_empty() {
                    continue;
                }
                expected_len += changes.iter().map(|c| RECORD_OVERHEAD + c.payload.data().len()).sum::<usize>() + RECORD_OVERHEAD;
                j.commit_step(&mut d, changes.clone()).unwrap();
                committed.push(changes);
                // Size is linear in payload bytes plus fixed record overhead.
                prop_assert_eq!(j.file_len(), expected_len as u64);
            }
        }
        let image = std::fs::read(&path).unwrap();
        let k = cut.index(image.len() + 1);
        std::fs::write(&path, &image[..k]).unwrap();
        let (j, _) = Journal::recover_journal(&path, &Disk::volatile()).unwrap();
        prop_assert!(j.steps().len() <= committed.len());
        for (s, c) in j.steps().iter().zip(&committed) {
            prop_assert_eq!(&s.changes, c);
        }
        let again = scan_journal(&std::fs::read(&path).unwrap()).unwrap();
        prop_assert_eq!(again.steps.len(), j.steps().len());
    }

    #[test]
    fn pp_jump_equals_single_steps_and_survives_reopen(
        blobs in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..16), 1..20),
        from in any::<prop::sample::Index>(),
        to in any::<prop::sample::Index>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pplog");
        let disk = Disk::volatile();
        let mut log = PpVersionLog::create(&path, "t", &disk).unwrap();
        for b in &blobs {
            log.commit_pp(&PpBlob::new("t", b.clone())).unwrap();
        }
        let (f, t) = (from.index(blobs.len()) + 1, to.index(blobs.len()) + 1);
        log.jump_pp(f).unwrap();
        let jumped = log.jump_pp(t).unwrap();
        log.jump_pp(f).unwrap();
        for _ in 0..f.abs_diff(t) {
            if t < f { log.undo_pp().unwrap(); } else { log.redo_pp().unwrap(); }
        }
        prop_assert_eq!(log.cursor(), t);
        prop_assert_eq!(log.current(), Some(jumped.clone()));
        prop_assert_eq!(jumped.data(), &blobs[t - 1][..]);
        drop(log);
        let (mut reopened, truncated) = PpVersionLog::open(&path, "t", &disk).unwrap();
        prop_assert!(!truncated);
        prop_assert!(reopened.versions().eq(blobs.iter().map(|b| &b[..])));
        let v = reopened.jump_pp(t).unwrap();
        prop_assert_eq!(v.data(), &blobs[t - 1][..]);
    }

    #[test]
    fn manifest_text_round_trip(
        entries in prop::collection::btree_map("[a-z]{1,6}(/[a-z0-9_.]{1,6}){0,2}", prop::collection::vec(any::<u8>(), 0..8), 0..20),
        day in 0u32..3650,
    ) {
        let m = BackupManifest {
            entries: entries.iter().map(|(k, v)| (k.clone(), content_hash(v))).collect(),
            last_backup_date: chrono::NaiveDate::from_num_days_from_ce_opt(738_000 + day as i32),
        };
        prop_assert_eq!(BackupManifest::parse(&m.to_text()).unwrap(), m);
    }
}

fn signed_fixture() -> &'static SignedEnvelope {
    static ENV: std::sync::OnceLock<SignedEnvelope> = std::sync::OnceLock::new();
    ENV.get_or_init(|| {
        SignedEnvelope::new(b"TCGD fixture document".to_vec())
            .sign_with_salt("alice", "pw-a", 100, [1; 16])
            .unwrap()
            .sign_with_salt("bob", "pw-b", 200, [2; 16])
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frozen_envelope_rejects_every_document_change(doc in prop::collection::vec(any::<u8>(), 0..64)) {
        let env = signed_fixture();
        prop_assert_eq!(env.guard_edit(), EditGuard::Locked);
        prop_assert!(matches!(env.with_document(doc), Err(Error::Frozen(2))));
        let one = env.remove_signature("alice").unwrap();
        prop_assert_eq!(one.document(), env.document());
        prop_assert_eq!(one.guard_edit(), EditGuard::Locked);
        let none = one.remove_signature("bob").unwrap();
        prop_assert_eq!(none.document(), env.document());
        prop_assert_eq!(none.guard_edit(), EditGuard::Allowed);
    }

    #[test]
    fn any_document_mutation_is_detected(pos in any::<prop::sample::Index>(), delta in 1u8..=255) {
        let env = signed_fixture();
        let mut bytes = env.encode();
        // Document section value starts after the 6-byte header, type byte and length.
        let doc_len = env.document().len();
        let i = 11 + pos.index(doc_len);
        bytes[i] ^= delta;
        let crc = crc32fast::hash(&bytes[6..11 + doc_len]);
        bytes[11 + doc_len..15 + doc_len].copy_from_slice(&crc.to_le_bytes());
        let tampered = SignedEnvelope::decode(&bytes).unwrap();
        prop_assert!(tampered.verify_integrity().iter().all(|(_, v)| *v == Integrity::ContentChanged));
    }
}

#[test]
fn sign_and_remove_are_inverse_for_the_freeze() {
    let plain = SignedEnvelope::new(b"doc".to_vec());
    let signed = plain.sign_with_salt("x", "pw", 5, [9; 16]).unwrap();
    assert_eq!(signed.document(), plain.document());
    assert_eq!(signed.guard_edit(), EditGuard::Locked);
    let back = signed.remove_signature("x").unwrap();
    assert_eq!(back, plain);
    // Same inputs, same tag.
    let twice = plain.sign_with_salt("x", "pw", 5, [9; 16]).unwrap();
    assert_eq!(twice, signed);
    assert_eq!(signed.authenticate_signature("x", "pw"), Authentication::Authentic);
    assert_eq!(signed.authenticate_signature("x", "pw"), Authentication::Authentic);
}
