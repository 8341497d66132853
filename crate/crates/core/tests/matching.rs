mod common;

use std::collections::BTreeMap;

use common::{planted, PlantedSpec};
use divesound::matcher::{build_dataset, manifest_to_jsonl, parse_manifest_jsonl, DropReason, MatchConfig};
use divesound::parallel;

fn config() -> MatchConfig {
    MatchConfig::default()
}

#[test]
fn planted_assignment_is_recovered() {
    let p = planted(&PlantedSpec::standard(11));
    let out = build_dataset(p.inputs(), &config()).unwrap();
    assert!(out.skipped.is_empty());
    assert!(out.manifest.unmatched_clips.is_empty());
    assert!(out.manifest.dropped_subcategories.is_empty());
    let mut seen = 0;
    for (class, sub, clip) in out.manifest.retained_clips() {
        assert_eq!(p.truth[clip], (class.to_string(), sub.name.clone()), "clip {clip}");
        seen += 1;
    }
    assert_eq!(seen, p.truth.len());
    assert!(out.records.iter().all(|r| r.agreed));
}

#[test]
fn representative_frames_belong_to_the_subcategory() {
    let p = planted(&PlantedSpec::standard(12));
    let out = build_dataset(p.inputs(), &config()).unwrap();
    for class in &out.manifest.classes {
        for sub in &class.subcategories {
            let frame = sub.representative_frame.as_deref().unwrap();
            let clip = frame.rsplit_once("#frame").unwrap().0;
            assert!(sub.clip_ids.iter().any(|c| c == clip));
            assert!(sub.representative_similarity.unwrap() > 0.8);
        }
    }
}

#[test]
fn manifest_bytes_do_not_depend_on_thread_count() {
    let p = planted(&PlantedSpec::standard(13));
    let cfg = MatchConfig {
        frames_per_clip: Some(2),
        seed: 5,
        ..config()
    };
    let run = |threads| {
        parallel::with_threads(threads, || manifest_to_jsonl(&build_dataset(p.inputs(), &cfg).unwrap().manifest))
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
    assert_eq!(one, manifest_to_jsonl(&build_dataset(p.inputs(), &cfg).unwrap().manifest));
    assert_eq!(manifest_to_jsonl(&parse_manifest_jsonl(&one).unwrap()), one);
}

#[test]
fn nineteen_dropped_twenty_kept() {
    let spec = PlantedSpec {
        classes: vec![vec![19, 20, 25], vec![20, 20]],
        ..PlantedSpec::standard(14)
    };
    let p = planted(&spec);
    let out = build_dataset(p.inputs(), &config()).unwrap();
    let m = &out.manifest;
    assert_eq!(m.dropped_subcategories.len(), 1);
    let d = &m.dropped_subcategories[0];
    assert_eq!((d.class.as_str(), d.name.as_str(), d.clip_count), ("class0", "sub0", 19));
    assert_eq!(d.reason, DropReason::BelowMinClips);
    let kept: BTreeMap<(&str, &str), usize> = m
        .classes
        .iter()
        .flat_map(|c| c.subcategories.iter().map(move |s| ((c.class_name.as_str(), s.name.as_str()), s.clip_ids.len())))
        .collect();
    assert_eq!(kept[&("class0", "sub1")], 20);
    assert_eq!(kept.len(), 4);
    assert_eq!(m.retained_clip_count() + m.dropped_clip_count() + m.unmatched_clips.len(), p.truth.len());
    assert_eq!(m.total_input_clips(), p.truth.len());
}

#[test]
fn class_left_with_one_subcategory_collapses() {
    let spec = PlantedSpec {
        classes: vec![vec![19, 20], vec![20, 20]],
        ..PlantedSpec::standard(15)
    };
    let p = planted(&spec);
    let out = build_dataset(p.inputs(), &config()).unwrap();
    let m = &out.manifest;
    assert_eq!(m.classes.len(), 1);
    assert_eq!(m.dropped_subcategories.len(), 2);
    assert!(m
        .dropped_subcategories
        .iter()
        .any(|d| d.reason == DropReason::ClassCollapsed && d.clip_count == 20));
    assert_eq!(m.total_input_clips(), 79);

    let keep = build_dataset(
        p.inputs(),
        &MatchConfig {
            keep_singleton_classes: true,
            ..config()
        },
    )
    .unwrap();
    assert_eq!(keep.manifest.classes.len(), 2);
    assert_eq!(keep.manifest.dropped_subcategories.len(), 1);
}

#[test]
fn disagreeing_clips_are_unmatched() {
    let mut p = planted(&PlantedSpec::standard(16));
    // Swap the audio-side texts of class0 so audio votes for the other subcategory.
    let a = p.augmented_text.get("class0/sub0").unwrap().to_vec();
    let b = p.augmented_text.get("class0/sub1").unwrap().to_vec();
    let mut swapped = divesound::embedding::EmbeddingSet::new(p.augmented_text.modality(), p.augmented_text.dim()).unwrap();
    for (id, v) in p.augmented_text.iter() {
        let v = match id {
            "class0/sub0" => b.clone(),
            "class0/sub1" => a.clone(),
            _ => v.to_vec(),
        };
        swapped.push(id, v).unwrap();
    }
    p.augmented_text = swapped;
    let out = build_dataset(p.inputs(), &config()).unwrap();
    let class0_clips = p.truth.values().filter(|(c, _)| c == "class0").count();
    assert_eq!(out.manifest.unmatched_clips.len(), class0_clips);
    assert!(out.manifest.classes.iter().all(|c| c.class_name != "class0"));
}
