use std::path::Path;

use clap::Parser;
use fcf_cli::{run, Cli};

pub fn fcf(args: &[&str], out: &Path) -> fcf_cli::Result<()> {
    let mut argv = vec!["fcf"];
    argv.extend_from_slice(args);
    let out = out.to_str().unwrap().to_string();
    argv.push("--out");
    argv.push(&out);
    run(Cli::try_parse_from(argv).expect("arguments parse"))
}

pub const SIMPLE_BN_ORACLE: &str = r#"{"kind":"scm-monotonic","effect":"x3"}"#;

/// Simulated workspace with a classifier, a base generator and oracle-labeled queries.
pub fn labeled_workspace(out: &Path, n: &str) {
    fcf(&["simulate", "--scm", "simple-bn", "--n", n, "--seed", "3"], out).unwrap();
    fcf(&["train-classifier"], out).unwrap();
    fcf(&["train-cf", "--method", "base"], out).unwrap();
    fcf(&["build-queries", "--oracle", SIMPLE_BN_ORACLE], out).unwrap();
}
