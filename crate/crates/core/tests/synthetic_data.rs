use std::collections::BTreeSet;
use std::path::Path;

use semsup::dataset::{Dataset, DatasetManifest};
use semsup::synthetic::{gen_synthetic, SyntheticTaskSpec, MANIFEST_FILE};

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generation_is_byte_identical_across_runs() {
    let spec = SyntheticTaskSpec { n_unseen: 2, vocab_size: 260, docs_per_class: 12, seed: 3, ..Default::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_synthetic(&spec).unwrap().write(a.path()).unwrap();
    gen_synthetic(&spec).unwrap().write(b.path()).unwrap();
    let fa = read_dir_bytes(a.path());
    assert!(fa.iter().any(|(n, _)| n == MANIFEST_FILE));
    assert_eq!(fa, read_dir_bytes(b.path()));

    let other = SyntheticTaskSpec { seed: 4, ..spec };
    let c = tempfile::tempdir().unwrap();
    gen_synthetic(&other).unwrap().write(c.path()).unwrap();
    assert_ne!(fa, read_dir_bytes(c.path()));
}

#[test]
fn uncued_descriptions_hit_the_signature_at_the_background_rate() {
    let spec = SyntheticTaskSpec { cue_strength: 0.0, descriptions_per_class: 200, ..Default::default() };
    let task = gen_synthetic(&spec).unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    for &c in &task.seen {
        let sig: BTreeSet<&str> = task.signatures[&c].iter().map(String::as_str).collect();
        for d in task.descriptions.get(c) {
            total += d.tokens.len();
            hits += d.tokens.iter().filter(|t| sig.contains(t.as_str())).count();
        }
    }
    let p = spec.background_signature_rate();
    let n = total as f64;
    let z = (hits as f64 - n * p) / (n * p * (1.0 - p)).sqrt();
    assert!(z.abs() <= 3.0, "{hits} of {total} tokens, expected rate {p}, z = {z:.2}");
}

#[test]
fn full_cue_descriptions_always_carry_signature_tokens() {
    let spec = SyntheticTaskSpec { cue_strength: 1.0, ..Default::default() };
    let task = gen_synthetic(&spec).unwrap();
    for &c in &task.seen {
        let sig: BTreeSet<&String> = task.signatures[&c].iter().collect();
        for d in task.descriptions.get(c) {
            let n = d.tokens.iter().filter(|t| sig.contains(t)).count();
            assert!(n >= spec.desc_cue_tokens, "{} has {n} signature tokens", d.raw);
        }
    }
}

#[test]
fn manifest_round_trips_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let task = gen_synthetic(&SyntheticTaskSpec { n_unseen: 4, vocab_size: 300, ..Default::default() }).unwrap();
    let path = task.write(dir.path()).unwrap();
    let m = DatasetManifest::load(&path).unwrap();
    let copy = dir.path().join("copy.json");
    m.save(&copy).unwrap();
    assert_eq!(DatasetManifest::load(&copy).unwrap(), m);

    let ds = Dataset::load(&path).unwrap();
    assert_eq!([ds.train.len(), ds.val.len(), ds.test.len()], task.split_counts());
    assert_eq!(ds.scenarios.scenarios.len(), 4);
    let seen: BTreeSet<_> = task.seen.iter().collect();
    assert!(ds.train.iter().chain(&ds.val).all(|i| i.labels.iter().all(|c| seen.contains(c))));
}

#[test]
fn a_training_class_without_descriptions_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_synthetic(&SyntheticTaskSpec::default()).unwrap().write(dir.path()).unwrap();
    let desc_path = dir.path().join("descriptions.jsonl");
    let kept: Vec<String> = std::fs::read_to_string(&desc_path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"class\":\"class03\""))
        .map(str::to_string)
        .collect();
    std::fs::write(&desc_path, kept.join("\n") + "\n").unwrap();
    // The stored split manifest names hashes of the removed descriptions.
    let mut m = DatasetManifest::load(&path).unwrap();
    m.split_manifest = None;
    m.save(&path).unwrap();
    let err = Dataset::load(&path).unwrap_err().to_string();
    assert!(err.contains("class03"), "{err}");
}
