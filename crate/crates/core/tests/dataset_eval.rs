use std::path::PathBuf;

use alertness::dataset::{
    build_dataset, detection_rate, state_statistics, sweep_features, write_sweep_csv, BuildOptions,
    DatasetManifest, LabeledSession, ManifestEntry, RecordingState, SplitMode, SplitSpec,
};
use alertness::io;
use alertness::synth::{generate_corpus, FaceGap, SynthProfile};
use alertness::{evaluate, sweep_k, train, AlertnessLabel, FeatureMask};

fn corpus(seed: u64, subjects: usize) -> Vec<LabeledSession> {
    let base = SynthProfile {
        seed,
        ..SynthProfile::default()
    };
    generate_corpus(&base, subjects)
        .unwrap()
        .into_iter()
        .map(Into::into)
        .collect()
}

#[test]
fn feature_means_move_in_the_drowsy_direction() {
    let sessions = corpus(5, 8);
    let ds = build_dataset(&sessions, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    let samples: Vec<_> = ds.all_samples().map(|s| (s.raw, s.label)).collect();
    let st = state_statistics(&samples).unwrap();
    let (a, d) = (st.alert.mean, st.drowsy.mean);
    assert!(a[0] > d[0], "EAR");
    assert!(a[1] < d[1], "MAR");
    assert!(a[2] > d[2], "PUC");
    assert!(a[3] < d[3], "MOE");
    assert!(st.delta_percent[0] < 0.0 && st.delta_percent[3] > 0.0);
}

#[test]
fn held_out_subjects_are_recognized() {
    let sessions = corpus(9, 12);
    let spec = SplitSpec {
        mode: SplitMode::SubjectLevel,
        ..SplitSpec::default()
    };
    let ds = build_dataset(&sessions, &spec, &BuildOptions::default()).unwrap();
    let model = train(&ds.train_vectors(), FeatureMask::ALL, 38).unwrap();
    let report = evaluate(&model, &ds.test_vectors()).unwrap();
    assert!(report.accuracy >= 0.95, "{report}");
}

#[test]
fn feature_sweep_covers_every_mask() {
    let sessions = corpus(3, 6);
    let ds = build_dataset(&sessions, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    let rows = sweep_features(&ds.train_vectors(), &ds.test_vectors(), 38).unwrap();
    assert_eq!(rows.len(), 15);
    let masks: Vec<String> = rows.iter().map(|r| r.mask.to_string()).collect();
    assert_eq!(masks[0], "EAR");
    assert_eq!(masks[14], "EAR+MAR+PUC+MOE");
    for r in &rows {
        assert_eq!(r.metrics.confusion.total(), ds.test.len());
    }
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 16);
    assert!(text.starts_with("mask,accuracy,precision,recall,f1,tp,fp,fn,tn\n"));
}

#[test]
fn k_sweep_agrees_with_separate_models() {
    let sessions = corpus(4, 4);
    let ds = build_dataset(&sessions, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    let (tr, te) = (ds.train_vectors(), ds.test_vectors());
    let mask: FeatureMask = "EAR,MOE".parse().unwrap();
    let sweep = sweep_k(&tr, &te, mask, 1..=45).unwrap();
    assert_eq!(sweep.rows.len(), 45);
    for k in [1, 2, 17, 38, 45] {
        let direct = evaluate(&train(&tr, mask, k).unwrap(), &te).unwrap();
        assert_eq!(sweep.rows[k - 1].accuracy, direct.accuracy, "k={k}");
        assert_eq!(sweep.rows[k - 1].f1, direct.f1, "k={k}");
    }
    let best = sweep.rows.iter().map(|r| r.accuracy).fold(0.0, f64::max);
    assert_eq!(sweep.best_accuracy, best);
    assert_eq!(sweep.rows[sweep.best_k - 1].accuracy, best);
}

#[test]
fn manifest_on_disk_round_trips_through_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let base = SynthProfile {
        seed: 77,
        duration_s: 75.0,
        face_gaps: vec![FaceGap {
            start_ms: 50_000,
            duration_ms: 3_000,
        }],
        ..SynthProfile::default()
    };
    let generated = generate_corpus(&base, 3).unwrap();
    let mut entries = Vec::new();
    for c in &generated {
        let file = format!("{}.jsonl", c.meta.session_id);
        io::write_frames(
            io::create(&dir.path().join("data").join(&file)).unwrap(),
            &c.session.frames,
        )
        .unwrap();
        entries.push(ManifestEntry {
            subject: c.meta.subject_id.clone(),
            session: c.meta.session_id.clone(),
            label: c.session.label.into(),
            landmarks: file,
            fps: c.meta.fps_nominal,
        });
    }
    let manifest = DatasetManifest {
        root: PathBuf::from("data"),
        entries,
    };
    let path = dir.path().join("manifest.json");
    io::save_json(&path, &manifest).unwrap();

    let loaded = DatasetManifest::load(&path).unwrap();
    let sessions = loaded.load_sessions().unwrap();
    assert_eq!(sessions.len(), 6);
    for (s, c) in sessions.iter().zip(&generated) {
        assert_eq!(s.frames, c.session.frames);
        assert_eq!(s.state.to_label(false), Some(c.session.label));
        let rate = detection_rate(&s.frames).unwrap();
        assert!(rate < 1.0 && rate > 0.95);
    }
    let in_memory: Vec<LabeledSession> = generated.into_iter().map(Into::into).collect();
    let a = build_dataset(&sessions, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    let b = build_dataset(&in_memory, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    // Seconds 40 to 74 are sampled; the gap removes seconds 50 to 52.
    assert_eq!(a.train.len() + a.test.len(), 6 * 32);
}

#[test]
fn low_vigilant_sessions_count_as_drowsy_only_on_request() {
    let mut sessions = corpus(6, 3);
    let mut extra = sessions[1].clone();
    extra.session_id.push_str("_lv");
    extra.state = RecordingState::LowVigilant;
    sessions.push(extra);
    let excluded =
        build_dataset(&sessions, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    let included = build_dataset(
        &sessions,
        &SplitSpec::default(),
        &BuildOptions {
            include_low_vigilant: true,
            ..BuildOptions::default()
        },
    )
    .unwrap();
    let count = |d: &alertness::dataset::Dataset| d.all_samples().count();
    assert!(count(&included) > count(&excluded));
    assert!(included
        .all_samples()
        .filter(|s| s.session_id.ends_with("_lv"))
        .all(|s| s.label == AlertnessLabel::Drowsy));
}

#[test]
fn saved_model_predicts_like_the_original() {
    let sessions = corpus(8, 4);
    let ds = build_dataset(&sessions, &SplitSpec::default(), &BuildOptions::default()).unwrap();
    let model = train(&ds.train_vectors(), "MAR,MOE".parse().unwrap(), 38)
        .unwrap()
        .with_baseline(ds.baselines.values().next().unwrap().clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    io::save_model(&path, &model).unwrap();
    let loaded = io::load_model(&path).unwrap();
    assert_eq!(loaded.k(), 38);
    assert_eq!(loaded.mask(), model.mask());
    assert_eq!(loaded.baseline, model.baseline);
    for s in &ds.test {
        assert_eq!(
            loaded.predict(&s.normalized).unwrap(),
            model.predict(&s.normalized).unwrap()
        );
    }
}
