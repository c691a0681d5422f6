use dpkit::harness::*;
use dpkit::Error;

fn tiny_spec(id: &str, seed: u64, runs: usize) -> ExperimentSpec {
    let text = format!(
        "optimizer = adam\nbatch_size = 25\nepsilon = 8\nclip_norm = 1\nlearning_rate = 0.005\n\
         epochs = 2\nmodel = convnet-4-4-8-8\nseed = {seed}\nruns = {runs}\ndataset = synthetic\nsubset_size = 100\n"
    );
    ExperimentSpec::parse(id, &text).unwrap()
}

fn grid_csv(specs: &[ExperimentSpec]) -> Vec<u8> {
    let results = run_grid(specs, None);
    assert!(results.iter().all(|r| r.error.is_none()), "{results:?}");
    let records: Vec<MetricsRecord> = results.into_iter().flat_map(|r| r.records).collect();
    let mut out = Vec::new();
    write_records(&mut out, &records).unwrap();
    out
}

#[test]
fn grid_csv_is_byte_identical_across_runs() {
    let specs = [tiny_spec("a", 0, 2), tiny_spec("b", 5, 1)];
    let first = grid_csv(&specs);
    let second = grid_csv(&specs);
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), 1 + 2 * 2 + 2);
}

#[test]
fn runs_differ_only_in_values() {
    let records = read_records(&grid_csv(&[tiny_spec("s", 0, 2)])[..]).unwrap();
    let run0: Vec<&MetricsRecord> = records.iter().filter(|r| r.run == 0).collect();
    let run1: Vec<&MetricsRecord> = records.iter().filter(|r| r.run == 1).collect();
    assert_eq!(run0.len(), run1.len());
    assert_ne!(run0[1].test_loss, run1[1].test_loss);
    for r in &records {
        assert!((0.0..=1.0).contains(&r.test_acc) && (0.0..=1.0).contains(&r.train_acc));
    }
    for w in run0.windows(2) {
        assert!(w[1].epsilon_spent >= w[0].epsilon_spent);
    }
}

#[test]
fn constant_model_summary_equals_each_run() {
    let spec = ExperimentSpec {
        config: dpkit::dp::DpTrainConfig {
            runs: 3,
            ..Default::default()
        },
        ..tiny_spec("const", 0, 3)
    };
    let results = run_grid_with(std::slice::from_ref(&spec), |spec, run| {
        Ok((1..=2)
            .map(|epoch| MetricsRecord {
                experiment_id: spec.id.clone(),
                run,
                epoch,
                train_loss: 0.75,
                train_acc: 0.3,
                test_loss: 0.875,
                test_acc: 0.25,
                epsilon_spent: epoch as f64,
                sigma: 1.125,
            })
            .collect())
    });
    let s = &summarize(&results[0].records)[0];
    assert_eq!(s.runs, 3);
    assert_eq!((s.test_acc, s.train_loss, s.epsilon_spent, s.sigma), (0.25, 0.75, 2.0, 1.125));
}

#[test]
fn failing_experiment_does_not_stop_grid() {
    let mut bad = tiny_spec("bad", 0, 1);
    bad.config.noise_multiplier = Some(-1.0);
    let specs = [bad, tiny_spec("good", 0, 1)];
    let results = run_grid(&specs, None);
    assert!(results[0].error.is_some() && results[0].records.is_empty());
    assert!(results[1].error.is_none() && results[1].records.len() == 2);

    let cifar = ExperimentSpec::parse("c", "dataset = cifar10\nsubset_size = 10\n").unwrap();
    let results = run_grid(&[cifar], None);
    assert!(results[0].error.as_ref().unwrap().contains("DPKIT_DATA_DIR"));
}

#[test]
fn grid_outputs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grid.csv");
    let specs = [tiny_spec("x", 0, 1), tiny_spec("y", 1, 1)];
    let results = run_grid(&specs, None);
    write_grid_outputs(&csv, &specs, &results).unwrap();
    let (summary, meta) = companion_paths(&csv);
    let summary = std::fs::read_to_string(summary).unwrap();
    assert!(summary.starts_with("experiment_id,runs,"));
    assert_eq!(summary.lines().count(), 3);
    let meta = std::fs::read_to_string(meta).unwrap();
    assert!(meta.starts_with("timestamp = ") && meta.contains("[y]"));

    let records = read_records(std::fs::File::open(&csv).unwrap()).unwrap();
    let charts = report(&records).unwrap();
    assert_eq!(charts.len(), 1);
    assert_eq!(charts[0].series.len(), 2);
    assert!(charts[0].series.iter().all(|s| s.points.len() == 2));
    let again = report(&read_records(std::fs::File::open(&csv).unwrap()).unwrap()).unwrap();
    assert_eq!(charts[0].svg.as_bytes(), again[0].svg.as_bytes());
}

#[test]
fn malformed_csv_reports_line() {
    let header = CSV_HEADER.join(",");
    assert!(matches!(read_records(&b""[..]), Err(Error::Parse { line: 1, .. })));
    let bad = format!("{header}\na,0,1,0.5,0.5,0.5,0.5,1,1\nb,0,x,0.5,0.5,0.5,0.5,1,1\n");
    assert!(matches!(read_records(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
    let wrong_header = "id,run\n";
    assert!(matches!(read_records(wrong_header.as_bytes()), Err(Error::Parse { line: 1, .. })));
    let only_header = format!("{header}\n");
    let records = read_records(only_header.as_bytes()).unwrap();
    assert!(matches!(report(&records), Err(Error::Parse { .. })));
}

#[test]
fn table1_preset() {
    let specs = table1();
    assert_eq!(specs.len(), 20);
    let sigmas: Vec<f64> = specs.iter().map(|s| s.config.noise_multiplier.unwrap()).collect();
    assert_eq!(
        sigmas,
        [0.47, 0.47, 0.67, 0.67, 0.67, 0.67, 0.88, 1.07, 0.76, 0.91, 0.91, 0.76, 0.91, 0.91, 0.91, 1.21, 0.91, 1.21, 2.81, 0.91]
    );
    let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 20);
    for spec in &specs {
        assert_eq!(spec.config.delta, 1e-5);
        let back = ExperimentSpec::parse(&spec.id, &spec.to_config()).unwrap();
        assert_eq!(&back, spec);
    }
    for axis in AblationAxis::ALL {
        assert!(axis.ids().iter().all(|id| ids.contains(&id.as_str())));
    }
}

#[test]
fn directional_checks() {
    assert!(finding_epsilon(&[0.54, 0.48, 0.30]).holds);
    assert!(finding_epsilon(&[0.48, 0.49, 0.30]).holds);
    assert!(!finding_epsilon(&[0.48, 0.52, 0.30]).holds);
    assert!(!finding_epsilon(&[0.40, 0.41, 0.42]).holds);
    assert!(finding_batch(&[0.3, 0.4]).holds);
    assert!(!finding_batch(&[0.4, 0.3]).holds);
}
