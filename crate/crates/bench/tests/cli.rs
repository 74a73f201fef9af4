//! End-to-end checks of the `bench` binary and the experiment drivers at
//! small scale.

use std::path::Path;
use std::process::Command;

use idm::io::read_points_csv;
use idm::manifolds::{distance_to_manifold, ManifoldKind, ManifoldSpec};
use idm::score::schedule_at;
use idm_bench::config::{CircleDemoConfig, Experiment, ExperimentConfig, ScoreFieldConfig};
use idm_bench::output::RESULTS_HEADER;
use idm_bench::{run_circle_demo, run_dimension_experiment, run_score_field};

fn bench(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn small_rate(dir: &Path, workers: &str) -> (i32, String) {
    bench(&[
        "rate",
        "--n-list",
        "32,64,128",
        "--d-list",
        "16",
        "--m-proxy",
        "200",
        "--seeds",
        "3,4",
        "--workers",
        workers,
        "--no-wall-time",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(bench(&["rate", "--n-list", "256", "--out", out]).0, 2);
    assert_eq!(bench(&["rate", "--m-proxy", "50", "--out", out]).0, 2);
    assert_eq!(bench(&["score-field", "--d-list", "3", "--out", out]).0, 2);
    assert_eq!(
        bench(&["rate", "--path-mode", "sideways", "--out", out]).0,
        2
    );
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"experiment": "rate", "unknown_field": 1}"#).unwrap();
    assert_eq!(
        bench(&["rate", "--config", cfg.to_str().unwrap(), "--out", out]).0,
        2
    );
    std::fs::write(&cfg, r#"{"experiment": "dimension"}"#).unwrap();
    assert_eq!(
        bench(&["rate", "--config", cfg.to_str().unwrap(), "--out", out]).0,
        2
    );
    assert_eq!(
        bench(&["sample", "--data", "/nonexistent.csv", "--out", out]).0,
        4
    );
}

#[test]
fn rate_run_writes_canonical_reproducible_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (code, stdout) = small_rate(a.path(), "1");
    assert_eq!(code, 0);
    assert!(stdout.contains("IDM: slope"));
    assert_eq!(small_rate(b.path(), "3").0, 0);
    let text = std::fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert_eq!(
        text,
        std::fs::read_to_string(b.path().join("results.csv")).unwrap()
    );

    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(RESULTS_HEADER));
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 2 * 3 * 2);
    let keys: Vec<(String, usize, u64)> = rows
        .iter()
        .map(|r| (r[1].clone(), r[2].parse().unwrap(), r[4].parse().unwrap()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    for r in &rows {
        let n: f64 = r[2].parse().unwrap();
        let sp: f64 = r[6].parse().unwrap();
        let want = 0.8 * n.powf(-1.0 / 10.0);
        assert!((sp - want).abs() <= 1e-12 * want);
        assert!(r[5].parse::<f64>().unwrap() >= 0.0);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["slopes"]["IDM"]["slope"].is_number());
    assert!(summary["slopes"]["Memorized"]["slope"].is_number());
    assert_eq!(summary["cells_failed"], 0);
}

#[test]
fn single_dimension_sweep_reports_zero_flatness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        n_list: vec![40],
        d_list: vec![16],
        m_proxy: 150,
        seeds: vec![1],
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::preset(Experiment::Dimension)
    };
    let out = run_dimension_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 2);
    for stats in out.summary.dimension.values() {
        assert_eq!(stats.flatness, 0.0);
    }
}

#[test]
fn circle_demo_pulls_samples_onto_the_circle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset(Experiment::CircleDemo);
    let summary = run_circle_demo(&cfg, dir.path()).unwrap();
    assert_eq!(
        read_points_csv(&dir.path().join("training.csv"))
            .unwrap()
            .len(),
        70
    );
    assert_eq!(
        read_points_csv(&dir.path().join("early_stopped.csv"))
            .unwrap()
            .len(),
        200
    );
    assert_eq!(
        read_points_csv(&dir.path().join("updated.csv"))
            .unwrap()
            .len(),
        200
    );
    assert!(dir.path().join("updated.json").exists());
    // Averaging along an arc of kernel width sigma' pulls the estimate inside
    // the circle by about sigma'^2 / 2, well below the normal noise level.
    let sp = schedule_at(0.05).unwrap();
    let sigma_prime = sp.sigma / sp.alpha;
    assert!(
        summary.median_distance_updated <= 0.6 * sigma_prime * sigma_prime
            && summary.median_distance_updated <= 0.5 * summary.median_distance_early,
        "{} vs {}",
        summary.median_distance_updated,
        summary.median_distance_early
    );

    // Without noise the update stays next to the training points.
    let quiet = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        circle_demo: CircleDemoConfig {
            t: 1e-8,
            ..Default::default()
        },
        ..cfg
    };
    run_circle_demo(&cfg, quiet.path()).unwrap();
    let spec = ManifoldSpec::native(ManifoldKind::Circle).unwrap();
    for r in read_points_csv(&quiet.path().join("updated.csv"))
        .unwrap()
        .rows()
    {
        assert!(distance_to_manifold(r, &spec).unwrap() <= 1e-2);
    }
}

#[test]
fn score_field_grid_and_directions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        score_field: ScoreFieldConfig {
            grid_w: 9,
            grid_h: 7,
            extent: 2.0,
            ..Default::default()
        },
        ..ExperimentConfig::preset(Experiment::ScoreField)
    };
    assert_eq!(run_score_field(&cfg, dir.path()).unwrap(), 63);
    let mut rdr = csv::Reader::from_path(dir.path().join("score_field.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["x", "y", "score_x", "score_y"]);
    let rows: Vec<[f64; 4]> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            [0, 1, 2, 3].map(|k| r[k].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 63);
    for [x, y, sx, sy] in rows {
        if (x * x + y * y).sqrt() > 1.5 {
            assert!(
                x * sx + y * sy < 0.0,
                "score at ({x}, {y}) does not point inward"
            );
        }
    }

    // At a data point the mixture is near its mode when t is tiny.
    let t = 1e-4;
    let cfg = ExperimentConfig {
        score_field: ScoreFieldConfig {
            t,
            n: 5,
            grid_w: 1,
            grid_h: 1,
            ..Default::default()
        },
        ..ExperimentConfig::preset(Experiment::ScoreField)
    };
    let quiet = tempfile::tempdir().unwrap();
    run_score_field(&cfg, quiet.path()).unwrap();
    let data = read_points_csv(&quiet.path().join("training.csv")).unwrap();
    let sigma2 = schedule_at(t).unwrap().variance();
    for x in data.rows() {
        let s = idm::score::empirical_score(x, t, &data).unwrap();
        assert!((s[0] * s[0] + s[1] * s[1]).sqrt() <= 1e-3 / sigma2);
    }
}

#[test]
fn sample_subcommand_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ManifoldSpec::new(ManifoldKind::Sphere(2), 5, 3).unwrap();
    let data = idm::manifolds::sample_manifold(&spec, 64, 9).unwrap();
    let data_csv = dir.path().join("data.csv");
    idm::io::save_dataset(&data, &data_csv).unwrap();
    let out = dir.path().join("gen/samples.csv");
    let (code, _) = bench(&[
        "sample",
        "--data",
        data_csv.to_str().unwrap(),
        "--count",
        "25",
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (batch, meta) = idm::io::load_batch(&out).unwrap();
    assert_eq!(batch.samples.len(), 25);
    assert_eq!(batch.samples.dim(), 5);
    assert_eq!(meta.seed, 4);
    assert_eq!(meta.config.unwrap().plan.d, 2);

    // Without a sidecar the intrinsic dimension must be given.
    let bare = dir.path().join("bare.csv");
    idm::io::write_points_csv(&bare, &data.points).unwrap();
    let bare_out = dir.path().join("bare_out.csv");
    let args = [
        "sample",
        "--data",
        bare.to_str().unwrap(),
        "--count",
        "5",
        "--out",
        bare_out.to_str().unwrap(),
    ];
    assert_eq!(bench(&args).0, 2);
    let mut with_d = args.to_vec();
    with_d.extend(["--intrinsic-dim", "2"]);
    assert_eq!(bench(&with_d).0, 0);
}
