use std::path::{Path, PathBuf};
use std::process::Command;

use chanmix_cli::commands::{
    cmd_lower, cmd_pareto, cmd_search, cmd_space, read_results, AssignmentFile, SearchOptions, SpaceSource,
};
use chanmix_cli::{CliError, ExperimentConfig};
use chanmix_core::cost::{exact_model_energy, exact_model_size};
use chanmix_core::lower::import_lowered;
use chanmix_core::sweep::pareto_front;
use chanmix_core::{CostLut, RegMode};

const LUT: &str = "px,pw,pj_per_mac\n2,2,0.2\n2,4,0.3\n2,8,0.4\n4,2,0.3\n4,4,0.4\n4,8,0.6\n8,2,0.5\n8,4,0.7\n8,8,1.0\n";

fn config(lambdas: &str) -> String {
    format!(
        r#"
out_dir = "out"
reg_mode = "energy"
lut = "lut.csv"
lambdas = {lambdas}
[dataset]
kind = "blobs"
n = 200
seed = 4
[arch]
input_shape = [2]
layers = [
    {{ kind = "fc", in_features = 2, out_features = 8 }},
    {{ kind = "relu" }},
    {{ kind = "fc", in_features = 8, out_features = 8 }},
    {{ kind = "relu" }},
    {{ kind = "fc", in_features = 8, out_features = 2 }},
]
[train]
epochs_wu = 5
epochs_ft = 2
max_search_epochs = 4
clip_init = 2.0
lr_w = 0.05
"#
    )
}

fn setup(dir: &Path, lambdas: &str) -> PathBuf {
    std::fs::write(dir.join("lut.csv"), LUT).unwrap();
    let p = dir.join("exp.toml");
    std::fs::write(&p, config(lambdas)).unwrap();
    p
}

fn opts(jobs: usize) -> SearchOptions {
    SearchOptions {
        out: None,
        seed: None,
        jobs,
    }
}

#[test]
fn single_lambda_gives_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "[1e-3]");
    let out = cmd_search(&cfg, &opts(1)).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(read_results(&out.out_dir.join("results.csv")).unwrap(), out.records);
}

#[test]
fn results_rows_rederive_from_assignment_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = setup(dir.path(), "[0.0, 1e-4, 1e-2]");
    let out = cmd_search(&cfg_path, &opts(2)).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let lut = CostLut::load(&dir.path().join("lut.csv")).unwrap();
    let geoms = cfg.arch.quant_geometries().unwrap();
    let rows = read_results(&out.out_dir.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    for (row, file) in rows.iter().zip(&out.assignment_files) {
        let a: AssignmentFile = serde_json::from_str(&std::fs::read_to_string(file).unwrap()).unwrap();
        assert_eq!(a.lambda, row.lambda);
        assert_eq!(exact_model_size(&geoms, &a.assignment).unwrap(), row.size_bits);
        let e = exact_model_energy(&geoms, &a.assignment, &lut, &cfg.space.weight_set).unwrap();
        let got = row.energy_uj.unwrap();
        assert!((got - e).abs() <= 1e-9 * e, "{got} vs {e}");
    }
    for f in ["curves_00.csv", "model_02.json", "config.toml"] {
        assert!(out.out_dir.join(f).exists(), "{f}");
    }
    // the written config reloads to the same experiment
    let again = ExperimentConfig::parse(&std::fs::read_to_string(out.out_dir.join("config.toml")).unwrap()).unwrap();
    assert_eq!(again.lambdas, cfg.lambdas);

    // sequential run with a shared warmup cache reproduces the parallel one
    let seq = cmd_search(&cfg_path, &opts(1)).unwrap();
    assert_eq!(seq.records, out.records);

    let front = cmd_pareto(&out.out_dir.join("results.csv"), RegMode::Energy, &dir.path().join("p.csv")).unwrap();
    assert_eq!(front, pareto_front(&rows, RegMode::Energy));
    assert_eq!(read_results(&dir.path().join("p.csv")).unwrap(), front);

    let lowered_path = dir.path().join("lowered.bin");
    let report = cmd_lower(
        &out.out_dir.join("model_01.json"),
        &out.assignment_files[1],
        &lowered_path,
        32,
        7,
    )
    .unwrap();
    assert_eq!(report.max_abs_diff, 0.0);
    assert_eq!(import_lowered(&lowered_path).unwrap().size_bits(), rows[1].size_bits);
    assert!(lowered_path.with_extension("report.json").exists());
}

#[test]
fn invalid_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("exp.toml");
    // energy mode without a LUT
    std::fs::write(&p, config("[0.0]").replace("lut = \"lut.csv\"\n", "")).unwrap();
    let err = cmd_search(&p, &opts(1)).unwrap_err();
    assert!(matches!(err, CliError::Config(_)), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn space_report_matches_layer_counts() {
    let r = cmd_space(SpaceSource::MobileNet {
        width: 0.25,
        classes: 1000,
    })
    .unwrap();
    assert_eq!(r.layers, 28);
    assert!((r.log10_layerwise - 28.0 * 9f64.log10()).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let p = setup(dir.path(), "[0.0]");
    let r = cmd_space(SpaceSource::Config(&p)).unwrap();
    assert_eq!((r.layers, r.channels), (3, 18));
    assert!((r.log10_channelwise - (3.0 * 3f64.log10() + 18.0 * 3f64.log10())).abs() < 1e-9);
}

fn chanmix(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_chanmix"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), "[1e-3]");
    let cfg = cfg.to_str().unwrap();

    let ok = chanmix(&["search", "--config", cfg, "--seed", "3", "--out", "run"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("run/results.csv").exists());
    let p = chanmix(&["pareto", "run/results.csv", "--mode", "energy"], dir.path());
    assert_eq!(p.status.code(), Some(0));
    assert!(dir.path().join("run/pareto.csv").exists());
    let s = chanmix(&["space", "--mobilenet", "0.25"], dir.path());
    assert!(String::from_utf8_lossy(&s.stdout).contains("layer-wise"));

    std::fs::write(dir.path().join("bad.toml"), "lambdas = [").unwrap();
    assert_eq!(chanmix(&["search", "--config", "bad.toml"], dir.path()).status.code(), Some(2));

    // a hopeless learning rate overflows the weights
    let diverging = config("[0.0]").replace("lr_w = 0.05", "lr_w = 1e300");
    std::fs::write(dir.path().join("div.toml"), diverging).unwrap();
    let d = chanmix(&["search", "--config", "div.toml"], dir.path());
    assert_eq!(d.status.code(), Some(3), "{}", String::from_utf8_lossy(&d.stderr));
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let codes = [
        CliError::Other(String::new()).exit_code(),
        CliError::Config(String::new()).exit_code(),
        CliError::Diverged(String::new()).exit_code(),
        CliError::Equivalence(1.0).exit_code(),
    ];
    assert_eq!(codes, [1, 2, 3, 4]);
    let e: CliError = chanmix_core::Error::NonFinite("loss".into()).into();
    assert_eq!(e.exit_code(), 3);
}
