use super::*;
use crate::losses::tests::{fixture, Fixture};
use crate::model::ModelConfig;

fn model(f: &Fixture, mode: Mode) -> MufiModel {
    MufiModel::new(
        ModelConfig {
            grid: [2, 2, 3],
            in_channels: 4,
            hidden: 6,
            out_channels: 5,
            space_dim: 4,
            n_facets: 6,
            pooling: mode.pooling(),
            classifier: mode.layout(&f.intra, &f.world.spec.classes_per_facet),
        },
        1,
    )
    .unwrap()
}

fn config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        lr: 0.05,
        epochs: 3,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let f = fixture();
    let m = model(&f, Mode::Mufi);
    let cfg = TrainConfig {
        lr: 0.0,
        ..config(Mode::Mufi)
    };
    let out = train(&m, &f.world, &f.space, Some(&f.cache), &cfg).unwrap();
    assert_eq!(out.log.final_hash, out.log.initial_hash);
    assert_eq!(out.model, m);
}

#[test]
fn same_seed_same_log_across_thread_counts() {
    let f = fixture();
    let m = model(&f, Mode::Mufi);
    let a = train(&m, &f.world, &f.space, Some(&f.cache), &config(Mode::Mufi)).unwrap();
    let b = train(&m, &f.world, &f.space, Some(&f.cache), &config(Mode::Mufi)).unwrap();
    let c = train(
        &m,
        &f.world,
        &f.space,
        Some(&f.cache),
        &TrainConfig {
            threads: 3,
            ..config(Mode::Mufi)
        },
    )
    .unwrap();
    assert_eq!(a.log.steps, b.log.steps);
    assert_eq!(a.log.final_hash, b.log.final_hash);
    assert_eq!(a.log.steps, c.log.steps);
    assert_eq!(a.log.final_hash, c.log.final_hash);
    assert_ne!(a.log.final_hash, a.log.initial_hash);
}

#[test]
fn teacher_only_facets_never_feed_training() {
    let f = fixture();
    let out = train(
        &model(&f, Mode::Mufi),
        &f.world,
        &f.space,
        Some(&f.cache),
        &config(Mode::Mufi),
    )
    .unwrap();
    let (train_n, _, _) = f.world.spec.split_counts();
    for (facet, &n) in out.log.samples_seen.iter().enumerate() {
        let expected = if f.world.spec.teacher_only[facet] {
            0
        } else {
            3 * train_n
        };
        assert_eq!(n, expected, "facet {facet}");
    }
    let cfg = TrainConfig {
        facets: Some(vec![4]),
        ..config(Mode::Mufi)
    };
    let err = train(&model(&f, Mode::Mufi), &f.world, &f.space, Some(&f.cache), &cfg).unwrap_err();
    assert!(matches!(err, MufiError::Config(_)));
}

#[test]
fn batches_alternate_between_facets() {
    let f = fixture();
    let out = train(
        &model(&f, Mode::IntraNce),
        &f.world,
        &f.space,
        None,
        &config(Mode::IntraNce),
    )
    .unwrap();
    let first: Vec<usize> = out.log.steps.iter().take(8).map(|s| s.facet).collect();
    assert_eq!(first, vec![0, 1, 2, 3, 0, 1, 2, 3]);
}

#[test]
fn updates_touch_only_the_trainable_blocks() {
    let f = fixture();
    for mode in Mode::ALL {
        let m = model(&f, mode);
        let out = train(&m, &f.world, &f.space, Some(&f.cache), &config(mode)).unwrap();
        let declared = m.trainable_indices(trainable_for(mode));
        for (i, (a, b)) in m.params().iter().zip(out.model.params()).enumerate() {
            if !declared.contains(&i) {
                assert_eq!(a, b, "{mode}: block {} changed", m.param_names()[i]);
            }
        }
        assert!(declared.iter().any(|&i| m.params()[i] != out.model.params()[i]));
    }
}

#[test]
fn frozen_inputs_are_untouched() {
    let f = fixture();
    let (space, cache) = (f.space.clone(), f.cache.clone());
    train(
        &model(&f, Mode::Mufi),
        &f.world,
        &f.space,
        Some(&f.cache),
        &config(Mode::Mufi),
    )
    .unwrap();
    assert_eq!(space, f.space);
    assert_eq!(cache, f.cache);
}

#[test]
fn divergence_aborts_naming_the_step() {
    let f = fixture();
    let cfg = TrainConfig {
        lr: 1e200,
        momentum: 0.0,
        ..config(Mode::IntraL2)
    };
    let err = train(&model(&f, Mode::IntraL2), &f.world, &f.space, None, &cfg).unwrap_err();
    assert!(matches!(err, MufiError::Numeric(_)), "{err}");
    assert!(err.to_string().contains("step"), "{err}");
}

#[test]
fn snapshots_and_single_stage_equivalence() {
    let f = fixture();
    let mode = Mode::ClassificationMerged;
    let base = model(&f, mode);
    let cfg = TrainConfig {
        snapshot_epochs: vec![1, 3],
        ..config(mode)
    };
    let out = train(&base, &f.world, &f.space, None, &cfg).unwrap();
    assert_eq!(out.snapshots.len(), 2);
    assert_eq!(out.snapshots[1].1, out.model);

    let stages = sequential_finetune(&base, &[2], &f.world, &f.space, None, &cfg).unwrap();
    assert_eq!(stages.len(), 1);
    let start = stage_start(&base, mode, 2, &f.world, cfg.seed, 0).unwrap();
    let plain = train(
        &start,
        &f.world,
        &f.space,
        None,
        &TrainConfig {
            facets: Some(vec![2]),
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(stages[0].model, plain.model);
    assert_eq!(stages[0].log.steps, plain.log.steps);

    let all = sequential_finetune(&base, &[0, 1, 2, 3], &f.world, &f.space, None, &cfg).unwrap();
    assert_eq!(all.len(), 4);
    assert_eq!(all.iter().map(|s| s.facet).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn log_csv_has_one_row_per_step() {
    let f = fixture();
    let out = train(
        &model(&f, Mode::Mufi),
        &f.world,
        &f.space,
        Some(&f.cache),
        &config(Mode::Mufi),
    )
    .unwrap();
    let mut buf = Vec::new();
    out.log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), out.log.steps.len() + 1);
    assert!(text.starts_with("step,epoch,facet,mode,sce,intra_l2,intra_nce,inter_0,"));
}
