use std::path::PathBuf;

use fsg_lab::checks::spirals_config;
use fsg_lab::config::RunConfig;
use fsg_lab::trainer::Method;
use fsg_lab::LabError;

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for name in ["spirals-fsg.toml", "spirals-ste.toml", "bench.toml", "blobs-quick.toml"] {
        let cfg = RunConfig::load(&shipped(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let dir = tempfile::tempdir().unwrap();
        let saved = dir.path().join("c.toml");
        cfg.save(&saved).unwrap();
        let back = RunConfig::load(&saved).unwrap();
        assert_eq!(back, cfg, "{name}");
        assert_eq!(std::fs::read_to_string(&saved).unwrap(), back.to_canonical().unwrap());
    }
}

#[test]
fn spirals_configs_match_the_comparison_run() {
    let mut fsg = RunConfig::load(&shipped("spirals-fsg.toml")).unwrap();
    let mut ste = RunConfig::load(&shipped("spirals-ste.toml")).unwrap();
    let (mut a, mut b) = (spirals_config(Method::Fsg, 0), spirals_config(Method::Ste, 0));
    for c in [&mut fsg, &mut ste, &mut a, &mut b] {
        c.name = None;
    }
    assert_eq!(fsg, a);
    assert_eq!(ste, b);
}

#[test]
fn bad_enum_value_has_a_position() {
    match RunConfig::parse("[train]\nmethod = \"sgd\"\n") {
        Err(LabError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn idx_without_paths_is_rejected() {
    match RunConfig::parse("[dataset]\nkind = \"idx\"\n") {
        Err(LabError::Config { field, .. }) => assert_eq!(field, "dataset.images"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_layer_key_is_rejected() {
    let text = "[model]\nlayers = [{ kind = \"dense\", inputs = 2, outputs = 2, bias = true }]\n";
    assert!(matches!(RunConfig::parse(text), Err(LabError::Parse { .. })));
}
