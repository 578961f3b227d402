use std::path::Path;

use chanmix_cli::{CliError, ExperimentConfig};
use chanmix_core::RegMode;

fn example(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)).unwrap()
}

const MINIMAL: &str = r#"
lambdas = [0.0]
[dataset]
kind = "blobs"
n = 100
seed = 1
[arch]
input_shape = [2]
layers = [{ kind = "fc", in_features = 2, out_features = 2 }]
[space]
search_activations = false
"#;

#[test]
fn examples_round_trip() {
    for name in ["spirals.toml", "spirals_energy.toml"] {
        let a = ExperimentConfig::parse(&example(name)).unwrap();
        let b = ExperimentConfig::parse(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b, "{name}");
        a.validate().unwrap();
    }
}

#[test]
fn defaults_fill_in() {
    let c = ExperimentConfig::parse(MINIMAL).unwrap();
    assert_eq!(c.reg_mode, RegMode::Size);
    assert_eq!(c.train.clip_init, 6.0);
    assert_eq!(c.space.weight_set.bits(), &[2, 4, 8]);
    c.validate().unwrap();
}

#[test]
fn energy_mode_needs_a_lut() {
    let text = MINIMAL.replace("lambdas", "reg_mode = \"energy\"\nlambdas");
    let c = ExperimentConfig::parse(&text).unwrap();
    assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("LUT")));
}

#[test]
fn size_mode_forbids_activation_search() {
    let text = MINIMAL.replace("search_activations = false", "search_activations = true");
    let err = ExperimentConfig::parse(&text).unwrap().validate().unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_configs_are_config_errors() {
    for text in [
        MINIMAL.replace("lambdas = [0.0]", "lambdas = []"),
        MINIMAL.replace("lambdas = [0.0]", "lambdas = [-1.0]"),
        MINIMAL.replace("n = 100", "n = 100\nbogus = 1"),
        format!("{MINIMAL}\n[train]\nreg_mode = \"size\"\n"),
        format!("{MINIMAL}\n[train]\nbatch = 0\n"),
        MINIMAL.replace("in_features = 2", "in_features = 3"),
        MINIMAL.replace("search_activations = false", "search_activations = false\nweight_set = [1, 4]"),
        MINIMAL.replace("kind = \"fc\",", "kind = \"fc\", stride = 2,"),
    ] {
        let res = ExperimentConfig::parse(&text).and_then(|c| c.validate());
        assert!(matches!(res, Err(CliError::Config(_))), "accepted:\n{text}");
    }
}
