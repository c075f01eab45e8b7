use ctgru_core::autodiff::predict;
use ctgru_core::datasets::{read_sequences, write_sequences};
use ctgru_core::model::head_for_task;
use ctgru_core::training::{evaluate, train, TrainConfig};
use ctgru_core::{Arch, Dataset, ModelParams, ModelSpec, RngStream, SyntheticTask};

fn cluster_subset(n: usize) -> Dataset {
    SyntheticTask::Cluster
        .generate(&RngStream::new(3), n)
        .unwrap()
}

#[test]
fn small_cluster_subset_can_be_overfit() {
    let data = cluster_subset(50);
    let config = TrainConfig {
        hidden_sizes: vec![20],
        learning_rate: 3e-3,
        max_epochs: 500,
        patience: 500,
        ..TrainConfig::default()
    };
    for arch in [Arch::Gru, Arch::CtGru] {
        let spec = ModelSpec::new(arch, 20, data.vocab, head_for_task(data.task));
        let (_, record) = train(spec, &config, &data).unwrap();
        let best = record.candidates[0]
            .epochs
            .iter()
            .map(|e| e.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "{}: lowest training loss {best}", arch.name());
    }
}

#[test]
fn checkpoint_and_data_files_reproduce_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = SyntheticTask::Remembering
        .generate(&RngStream::new(8), 40)
        .unwrap();
    let data_path = dir.path().join("rem.seq");
    write_sequences(&data_path, &data).unwrap();
    let reread = read_sequences(&data_path).unwrap();
    assert_eq!(reread, data);

    let config = TrainConfig {
        hidden_sizes: vec![5],
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let spec = ModelSpec::new(Arch::CtGru, 5, data.vocab, head_for_task(data.task));
    let (model, _) = train(spec, &config, &data).unwrap();
    let model_path = dir.path().join("m.txt");
    model.save(&model_path).unwrap();
    let loaded = ModelParams::load(&model_path).unwrap();
    for seq in &reread.sequences {
        assert_eq!(
            predict(&model, seq).unwrap(),
            predict(&loaded, seq).unwrap()
        );
    }
    assert_eq!(
        evaluate(&model, &data, Some(&data)).unwrap(),
        evaluate(&loaded, &reread, Some(&reread)).unwrap()
    );
}

#[test]
fn hidden_size_selection_names_a_candidate() {
    let data = cluster_subset(60);
    let config = TrainConfig {
        hidden_sizes: vec![4, 8],
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let spec = ModelSpec::new(Arch::Gru, 4, data.vocab, head_for_task(data.task));
    let (model, record) = train(spec, &config, &data).unwrap();
    assert!([4, 8].contains(&record.selected_hidden));
    assert_eq!(model.spec.hidden, record.selected_hidden);
    assert_eq!(record.candidates.len(), 2);
    let best = record
        .candidates
        .iter()
        .map(|c| c.best_val_loss)
        .fold(f64::INFINITY, f64::min);
    let chosen = record
        .candidates
        .iter()
        .find(|c| c.hidden == record.selected_hidden)
        .unwrap();
    assert_eq!(chosen.best_val_loss, best);
}
