mod common;

use gderec::data::{load, DatasetFormat};
use gderec::eval::{
    evaluate_checkpoint, export_attention, export_embeddings, parse_grid, run_ablation, train_to_dir, ExperimentConfig,
    MaskSeen, PreparedData, Split, METRICS_HEADER,
};
use gderec::model::{Checkpoint, ForwardPlan};

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let idx = METRICS_HEADER.split(',').position(|h| h == name).unwrap();
    rows(csv).into_iter().map(|r| r[idx].clone()).collect()
}

fn ablate(text: &str) -> String {
    let grid = parse_grid(text).unwrap();
    let mut out = Vec::new();
    run_ablation(&grid, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn single_cell_grid_writes_header_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_block_log(dir.path(), 2, 5);
    let csv = ablate(&common::config_text(&data, dir.path(), "run_id = one"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], METRICS_HEADER);
    let row = &rows(&csv)[0];
    assert_eq!(row.len(), 15);
    assert_eq!(row[0], "one-000");
    assert_eq!(row[1], "u.data");
    assert_eq!(row[8], "test");
    assert!(row[11].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn variant_grid_labels_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_block_log(dir.path(), 2, 5);
    let csv = ablate(&common::config_text(
        &data,
        dir.path(),
        "run_id = v\nvariant = full, att, ode, gcn\nepochs = 2",
    ));
    assert_eq!(column(&csv, "variant"), ["full", "att", "ode", "gcn"]);
    assert_eq!(column(&csv, "run_id"), ["v-000", "v-001", "v-002", "v-003"]);
    // No solver runs in the attention-only variant.
    assert_eq!(column(&csv, "nfe"), ["8", "0", "8", "8"]);
}

#[test]
fn step_sweep_counts_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_block_log(dir.path(), 2, 5);
    let csv = ablate(&common::config_text(&data, dir.path(), "eps = 1.0, 0.5, 0.2, 0.1\nepochs = 1"));
    assert_eq!(column(&csv, "nfe"), ["4", "8", "20", "40"]);
    assert_eq!(column(&csv, "eps"), ["1", "0.5", "0.2", "0.1"]);
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_block_log(dir.path(), 2, 5);
    let text = common::config_text(&data, dir.path(), "seed = 7\nvariant = full, att");
    let a = ablate(&text);
    assert_eq!(a, ablate(&text));
    assert!(column(&a, "wall_seconds").iter().all(|w| w == "0"));
    assert_ne!(a, ablate(&text.replace("seed = 7", "seed = 8")));
}

#[test]
fn failing_cell_does_not_stop_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_block_log(dir.path(), 2, 5);
    let mut grid = parse_grid(&common::config_text(&data, dir.path(), "seed = 1, 2")).unwrap();
    grid[0].dataset = dir.path().join("missing.data");
    let mut out = Vec::new();
    let cells = run_ablation(&grid, &mut out).unwrap();
    let csv = String::from_utf8(out).unwrap();
    assert!(cells[0].outcome.is_err() && cells[1].outcome.is_ok());
    assert_eq!(column(&csv, "split"), ["failed", "test"]);
    assert_eq!(column(&csv, "mrr")[0], "");
}

#[test]
fn train_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_block_log(dir.path(), 2, 5);
    let runs = dir.path().join("runs");
    let cfg = ExperimentConfig::parse(&common::config_text(&data, &runs, "run_id = r1\nepochs = 3")).unwrap();
    let mut seen = 0;
    let art = train_to_dir(&cfg, |_| seen += 1).unwrap();
    assert_eq!(seen, 3);
    assert_eq!(art.checkpoint, runs.join("r1/checkpoint.json"));

    let metrics = std::fs::read_to_string(&art.metrics).unwrap();
    assert_eq!(column(&metrics, "split"), ["valid", "valid", "valid", "valid", "test"]);
    assert_eq!(column(&metrics, "epoch")[..3], ["1", "2", "3"]);

    let ck = Checkpoint::load(&art.checkpoint).unwrap();
    assert_eq!(ck.params, art.outcome.fit.params);
    assert_eq!(ck.best_epoch, art.outcome.fit.best_epoch);
    let report = evaluate_checkpoint(&ck, Split::Test, None, None).unwrap();
    assert_eq!(report, art.outcome.test);
    let unmasked = evaluate_checkpoint(&ck, Split::Test, Some(MaskSeen::None), None).unwrap();
    assert!(unmasked.results.iter().zip(&report.results).all(|(a, b)| a.rank >= b.rank));
}

#[test]
fn exports_cover_every_node_and_edge() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_block_log(dir.path(), 2, 5);
    let data = PreparedData::from_log(&load(&path, DatasetFormat::MovieLens).unwrap(), 2).unwrap();
    let cfg = ExperimentConfig::parse(&common::config_text(&path, dir.path(), "epochs = 1")).unwrap();
    let fit = gderec::model::fit(&data.system, &data.valid, &cfg.train).unwrap();
    let plan = ForwardPlan::new(&data.system, cfg.train.policy, cfg.train.variant, cfg.train.step).unwrap();

    let mut emb = Vec::new();
    export_embeddings(&plan, &fit.params, data.system.num_users, &mut emb).unwrap();
    let emb = String::from_utf8(emb).unwrap();
    let header = emb.lines().next().unwrap();
    assert_eq!(header, "node_id,kind,layer,dim_0,dim_1,dim_2,dim_3,dim_4,dim_5,dim_6,dim_7");
    let n = data.system.num_nodes();
    // Layers 0..=K plus the mean.
    assert_eq!(emb.lines().count(), 1 + n * 4);
    assert!(emb.lines().any(|l| l.starts_with("0,user,final,")));
    assert!(emb.lines().any(|l| l.starts_with(&format!("{},item,2,", n - 1))));

    let mut att = Vec::new();
    export_attention(&plan, &fit.params, &mut att).unwrap();
    let att = String::from_utf8(att).unwrap();
    assert_eq!(att.lines().next().unwrap(), "layer,user,item,edge_time,weight");
    let expected: usize = (0..2).map(|k| data.system.cumulative_edges[k].len()).sum();
    assert_eq!(att.lines().count(), 1 + expected);
    for line in att.lines().skip(1) {
        let w: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(w > 0.0 && w < 1.0);
    }
}

#[test]
fn prepared_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_block_log(dir.path(), 2, 5);
    let data = PreparedData::from_log(&load(&path, DatasetFormat::MovieLens).unwrap(), 3).unwrap();
    let out = dir.path().join("prepared");
    data.save(&out).unwrap();
    let back = PreparedData::load(&out).unwrap();
    assert_eq!(back.system, data.system);
    assert_eq!((back.valid.clone(), back.test.clone()), (data.valid.clone(), data.test.clone()));
    assert_eq!((back.user_ids, back.item_ids), (data.user_ids, data.item_ids));

    let text = format!("dataset = {}\nformat = prepared\nk = 3\n", out.display());
    assert!(ExperimentConfig::parse(&text).unwrap().load_data().is_ok());
    let wrong_k = format!("dataset = {}\nformat = prepared\nk = 2\n", out.display());
    assert!(ExperimentConfig::parse(&wrong_k).unwrap().load_data().is_err());
}
