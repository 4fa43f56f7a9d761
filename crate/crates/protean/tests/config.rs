use std::path::Path;

use protean::config::ExperimentConfig;
use protean::Error;
use protean_core::fed::StrategyKind;

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const MINIMAL: &str = "[data.synthetic]\nclasses = 3\nfeatures = 8\nper_class = 20\nseparation = 4.0\n";

fn load(text: &str) -> Result<ExperimentConfig, Error> {
    let dir = tempfile::tempdir().unwrap();
    ExperimentConfig::load(&write(dir.path(), text))
}

fn field_of(err: Error) -> String {
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn defaults_match_the_evaluation_setting() {
    let c = load(MINIMAL).unwrap();
    let f = &c.federation;
    assert_eq!(f.participants, 10);
    assert_eq!(f.rounds, 10);
    assert_eq!(f.epochs, 3);
    assert_eq!(f.mu, 0.1);
    assert_eq!(f.alpha, vec![0.75, 0.5, 0.25]);
    assert_eq!(c.seeds.len(), 3);
    assert_eq!(c.data.train_fraction, 0.8);
}

#[test]
fn unknown_strategy_names_the_field() {
    let err = load(&format!("{MINIMAL}[federation]\nstrategies = [\"fedavg\", \"fedmagic\"]\n")).unwrap_err();
    let text = err.to_string();
    assert_eq!(field_of(err), "federation.strategies[1]");
    assert!(text.contains("fedmagic"), "{text}");
}

#[test]
fn unknown_key_names_the_field() {
    let err = load(&format!("{MINIMAL}[federation]\nlamda = 0.5\n")).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("lamda"), "{text}");
    assert!(field_of(err).starts_with("federation"));
}

#[test]
fn wrong_type_names_the_field() {
    let err = load(&format!("{MINIMAL}[federation]\nrounds = \"ten\"\n")).unwrap_err();
    assert_eq!(field_of(err), "federation.rounds");
}

#[test]
fn semantic_checks_name_the_field() {
    let cases = [
        ("[federation]\nalpha = [0.5, -1.0]\n", "federation.alpha[1]"),
        ("[federation]\nparticipants = 1\n", "federation.participants"),
        ("[federation]\nlearning_rate = 0.0\n", "federation.learning_rate"),
        ("[federation]\nstrategies = [\"fedavg\", \"fedavg\"]\n", "federation.strategies[1]"),
        ("[audit]\nenabled = true\nstrategy = \"fedavg\"\n[federation]\nstrategies = [\"fedavg\"]\n", "audit.strategy"),
        ("[audit]\nenabled = true\nstrategy = \"protean\"\n[federation]\nstrategies = [\"fedavg\"]\n", "audit.strategy"),
        ("[data]\ntrain_fraction = 1.0\n", "data.train_fraction"),
    ];
    for (extra, field) in cases {
        let text = if extra.starts_with("[data]") {
            format!("{extra}{MINIMAL}")
        } else {
            format!("{MINIMAL}{extra}")
        };
        assert_eq!(field_of(load(&text).unwrap_err()), field, "{extra}");
    }
    assert_eq!(field_of(load("seeds = [1, 1]\n[data.synthetic]\nclasses = 3\nfeatures = 8\nper_class = 20\nseparation = 4.0\n").unwrap_err()), "seeds[1]");
}

#[test]
fn exactly_one_data_source() {
    assert_eq!(field_of(load("[data]\n").unwrap_err()), "data");
    let both = format!("{MINIMAL}[data.csv]\npath = \"a.csv\"\nschema = \"s.toml\"\n");
    assert_eq!(field_of(load(&both).unwrap_err()), "data");
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "output_dir = \"out\"\n[data.csv]\npath = \"flows.csv\"\nschema = \"flows.schema.toml\"\n");
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!(c.data.csv.as_ref().unwrap().path, dir.path().join("flows.csv"));
    assert_eq!(c.output_dir, dir.path().join("out"));
}

#[test]
fn canonical_form_round_trips_and_hashes_stably() {
    let mut c = load(&format!("{MINIMAL}[federation]\nstrategies = [\"protean\", \"cerberus\"]\n[federation.architecture]\nkind = \"mlp\"\nhidden = 8\n")).unwrap();
    assert_eq!(c.federation.strategies, vec![StrategyKind::Protean, StrategyKind::FedAvg]);
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), c.to_toml()).unwrap();
    let back = ExperimentConfig::from_run_dir(dir.path()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    assert_eq!(c.hash().len(), 64);
    let before = c.hash();
    c.federation.lambda = 0.5;
    assert_ne!(c.hash(), before);
}

#[test]
fn partial_cnn_settings_keep_other_defaults() {
    let c = load(&format!("{MINIMAL}[federation.architecture]\nkind = \"cnn\"\nhidden = 32\n")).unwrap();
    let protean_core::nn::Architecture::Cnn(cnn) = c.federation.architecture else { panic!("cnn expected") };
    assert_eq!(cnn.hidden, 32);
    assert_eq!(cnn.conv1_filters, 64);
    assert_eq!(cnn.conv2_filters, 128);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let synthetic = ExperimentConfig::load(&dir.join("synthetic.toml")).unwrap();
    assert_eq!(synthetic.federation.participants, 5);
    assert_eq!(synthetic.federation.lambda, 0.01);
    let corpus = ExperimentConfig::load(&dir.join("corpus.example.toml")).unwrap();
    assert_eq!(corpus.federation.strategies, vec![StrategyKind::Protean, StrategyKind::FedProx, StrategyKind::FedAvg]);
    let schema = protean::ingest::Schema::load(&corpus.data.csv.unwrap().schema).unwrap();
    assert_eq!(schema.label, "class");
}
