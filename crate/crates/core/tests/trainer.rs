use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::path::Path;

use adassm::adversary::{Discriminator, NoiseGenerator};
use adassm::cohort::{generate_cohort, Cohort, CohortSpec, ShapeDistribution, Split};
use adassm::shape_space::{augment_cohort, AugmentConfig};
use adassm::trainer::{audit_hygiene, train, Mode, Summary, TrainConfig, RUNLOG_FILE};
use adassm::Error;
use adassm_nn::{Param, Real};
use tempfile::TempDir;

fn tiny_cohort() -> Cohort {
    generate_cohort(&CohortSpec {
        n_samples: 20,
        dims: [16; 3],
        n_points: 16,
        shape: ShapeDistribution::scaled_to(16),
        seed: 3,
        ..CohortSpec::default()
    })
    .unwrap()
}

fn tiny_config(mode: Mode, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(mode);
    cfg.epochs = epochs;
    cfg.net.channels = vec![4, 8];
    cfg.net.hidden = 16;
    cfg.net.latent = 8;
    cfg.generator_channels = 2;
    cfg.seed = 13;
    cfg
}

fn param_hash<T: Real>(params: &[&Param<T>]) -> u64 {
    let mut h = DefaultHasher::new();
    for p in params {
        for v in p.value.data() {
            v.f64().to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn adversary_hashes(ckpt: &Path) -> (u64, u64) {
    let g = NoiseGenerator::<f32>::load(&ckpt.join("generator")).unwrap();
    let d = Discriminator::<f32>::load(&ckpt.join("discriminator")).unwrap();
    (param_hash(&g.parameters()), param_hash(&d.parameters()))
}

#[test]
fn baseline_modes_never_update_the_adversaries() {
    let cohort = tiny_cohort();
    let tmp = TempDir::new().unwrap();
    let mut hashes = Vec::new();
    for (name, mode) in [
        ("noaug", Mode::NoAug),
        ("gauss", Mode::Gaussian { sigma: 1.0 }),
        ("adassm", Mode::Adassm),
    ] {
        let dir = tmp.path().join(name);
        train(&tiny_config(mode, 2), &cohort, Some(&dir)).unwrap();
        hashes.push(adversary_hashes(&dir.join("checkpoints/last")));
    }
    // same seed, so the untouched initial weights coincide
    let g = NoiseGenerator::<f32>::load(&tmp.path().join("noaug/checkpoints/last/generator")).unwrap();
    let fresh = NoiseGenerator::<f32>::new(g.config().clone(), 13 + 1).unwrap();
    assert_eq!(hashes[0].0, param_hash(&fresh.parameters()));
    assert_eq!(hashes[0], hashes[1]);
    assert_ne!(hashes[2].0, hashes[0].0, "adversarial mode trains the generator");
    assert_ne!(hashes[2].1, hashes[0].1, "adversarial mode trains the discriminator");
}

#[test]
fn identical_configs_give_identical_runlogs() {
    let cohort = tiny_cohort();
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(Mode::AdassmBcPc, 2);
    let logs: Vec<String> = ["a", "b"]
        .iter()
        .map(|n| {
            let dir = tmp.path().join(n);
            train(&cfg, &cohort, Some(&dir)).unwrap();
            std::fs::read_to_string(dir.join(RUNLOG_FILE)).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
    let mut other = cfg.clone();
    other.seed += 1;
    let changed = train(&other, &cohort, None).unwrap();
    assert_ne!(changed.runlog.steps_csv(), logs[0]);
}

#[test]
fn kde_offline_quadruples_the_training_split() {
    let cohort = generate_cohort(&CohortSpec::default()).unwrap();
    let mut cfg = TrainConfig::desk(Mode::KdeOffline { n_aug_factor: 3 });
    cfg.epochs = 1;
    let tmp = TempDir::new().unwrap();
    let out = train(&cfg, &cohort, Some(tmp.path())).unwrap();
    assert_eq!(cohort.split(Split::Train).len(), 36);
    assert_eq!(out.summary.n_train, 144);
    let summary = Summary::load(tmp.path()).unwrap();
    assert!(summary.timings.augmentation_s > 0.0 && summary.timings.training_s > 0.0);
}

#[test]
fn augmented_pairs_project_back_to_their_scores() {
    let cohort = tiny_cohort();
    let cfg = AugmentConfig {
        seed: 8,
        ..AugmentConfig::default()
    };
    let (augmented, aug) = augment_cohort(&cohort, &cfg).unwrap();
    assert_eq!(aug.samples.len(), 3 * cohort.split(Split::Train).len());
    for s in &aug.samples {
        let scores = s.kde_scores.as_ref().unwrap();
        let back = aug.pca.project(&s.correspondences).unwrap();
        for (a, b) in back.iter().zip(scores) {
            assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
        }
        assert_eq!(s.split, Split::Train);
    }
    // only training samples gained augmented copies
    for split in [Split::Val, Split::Test] {
        assert!(augmented.split(split).iter().all(|s| !s.augmented));
        assert_eq!(augmented.split(split).len(), cohort.split(split).len());
    }
}

#[test]
fn hygiene_audit_rejects_held_out_ids() {
    let cohort = tiny_cohort();
    let train_ids: HashSet<String> = cohort.split(Split::Train).iter().map(|s| s.id.clone()).collect();
    audit_hygiene(&cohort, &train_ids).unwrap();
    for split in [Split::Val, Split::Test] {
        let mut ids = train_ids.clone();
        ids.insert(cohort.split(split)[0].id.clone());
        assert!(matches!(audit_hygiene(&cohort, &ids), Err(Error::Hygiene(_))));
    }
}

#[test]
fn diverging_training_aborts_with_last_good_checkpoint() {
    let cohort = tiny_cohort();
    let mut cfg = tiny_config(Mode::NoAug, 3);
    cfg.lr_model = 1e30;
    let tmp = TempDir::new().unwrap();
    match train(&cfg, &cohort, Some(tmp.path())) {
        Err(Error::NonFinite { last_good, .. }) => {
            if let Some(p) = last_good {
                assert!(p.starts_with(tmp.path()));
            }
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.summary)),
    }
}
