mod common;

use common::*;
use fpad::classify::LinearSvm;
use fpad::encode::EncodingKind;
use fpad::ingest::Label;
use fpad::persist::{
    digest, load_descriptors, load_model, load_vectors, read_scores, save_descriptors, save_model, save_vectors,
    write_scores, Model, ModelFile, ModelMeta, ScoreRow, VectorBatch,
};
use fpad::vocab::Codebook;
use proptest::prelude::*;
use rand::Rng;

fn meta(tag: &str) -> ModelMeta {
    ModelMeta {
        config_hash: format!("hash-{tag}"),
        depends_on: vec!["abc".into()],
        params: serde_json::json!({ "k": 4, "tag": tag }),
    }
}

fn all_models(seed: u64) -> Vec<ModelFile> {
    let mut r = rng(seed);
    vec![
        ModelFile::new(Model::Kmeans(Codebook::new(3, (0..12).map(|_| r.gen::<f64>() - 0.5).collect()).unwrap()), meta("k")),
        ModelFile::new(Model::Pca(axis_pca(&mut r, 5, seed % 2 == 0)), meta("p")),
        ModelFile::new(Model::Gmm(random_gmm(&mut r, 3, 4, 1.0)), meta("g")),
        ModelFile::new(
            Model::Svm(LinearSvm { w: (0..7).map(|_| r.gen::<f64>() * 1e-7).collect(), b: -1.0 / 3.0, positive: Label::Attack }),
            meta("s"),
        ),
    ]
}

#[test]
fn models_survive_disk_and_json_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        for (i, m) in all_models(seed).into_iter().enumerate() {
            let path = dir.path().join(format!("nested/m{i}.padm"));
            let d = save_model(&path, &m).unwrap();
            assert_eq!(d, digest(&std::fs::read(&path).unwrap()));
            assert_eq!(d, m.digest());
            let back = load_model(&path).unwrap();
            assert_eq!(back, m);
            assert_eq!(ModelFile::from_json(&m.to_json()).unwrap(), m);
            assert_eq!(back.to_bytes(), m.to_bytes());
        }
    }
}

#[test]
fn truncated_or_foreign_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let m = &all_models(1)[2];
    let bytes = m.to_bytes();
    for cut in [0, 3, 8, 20, bytes.len() - 1] {
        assert!(ModelFile::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
    }
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    assert!(ModelFile::from_bytes(&wrong_version).is_err());
    let path = dir.path().join("x.pads");
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_descriptors(&path).is_err());
    assert!(load_vectors(&path).is_err());
}

#[test]
fn score_tables_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        ScoreRow { id: "a,b".into(), label: Label::BonaFide, material: "none".into(), score: 0.1, s_bf: 0.1, s_pa: -0.3 },
        ScoreRow { id: "c".into(), label: Label::Attack, material: "latex".into(), score: -1e-300, s_bf: 2.0, s_pa: 1e-300 },
    ];
    let path = dir.path().join("scores.csv");
    write_scores(&path, &rows).unwrap();
    assert_eq!(read_scores(&path).unwrap(), rows);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn descriptor_files_round_trip(seed in any::<u64>(), n in 0usize..20, w in 1usize..80, h in 1usize..80) {
        let mut r = rng(seed);
        let ds = random_descriptors(&mut r, n, w, h);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pads");
        save_descriptors(&path, &ds).unwrap();
        prop_assert_eq!(load_descriptors(&path).unwrap(), ds);
    }

    #[test]
    fn vector_files_round_trip(seed in any::<u64>(), rows in 0usize..10, dim in 0usize..40) {
        let mut r = rng(seed);
        let batch = VectorBatch {
            kind: EncodingKind::ALL[seed as usize % 3],
            dim,
            rows: (0..rows).map(|_| (0..dim).map(|_| r.gen::<f32>() - 0.5).collect()).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.padv");
        save_vectors(&path, &batch).unwrap();
        prop_assert_eq!(load_vectors(&path).unwrap(), batch);
    }
}
