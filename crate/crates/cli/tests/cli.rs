use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spde_mlmc_cli::output::read_binary;

const BASE: &str = r#"
[mesh]
dim = 2
extents = [1.0, 1.0]
cells = [8, 8]
levels = 2

[field]
nu = 1.0
correlation_length = 0.25
"#;

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spde-mlmc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("c.toml");
    std::fs::write(&p, format!("{BASE}{extra}")).unwrap();
    p
}

#[test]
fn unknown_key_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "bogus = 1\n");
    let o = run(&["sample"], &c, &d.path().join("o"));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["sample"], &d.path().join("absent.toml"), &d.path().join("o"));
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn covariance_check_refuses_tiny_sample_counts() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "[covariance]\nsamples = 1\n");
    let o = run(&["covariance-check"], &c, &d.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pair_dump_writes_fine_and_coarse_with_headers() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "[sampling]\nsamples = 2\nformat = \"binary\"\n");
    let out = d.path().join("o");
    let o = run(&["sample", "--pair", "--seed", "9"], &c, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..2 {
        let (hf, f) = read_binary(&out.join(format!("field_{i:05}_l0.bin"))).unwrap();
        let (hc, c) = read_binary(&out.join(format!("field_{i:05}_l1.bin"))).unwrap();
        assert_eq!((f.len(), c.len()), (256, 64));
        for h in [&hf, &hc] {
            assert!(h.contains("# seed = 9"));
            assert!(h.contains("# [field]"));
        }
        assert!(hf.contains("role = fine") && hc.contains("role = coarse"));
    }
}

#[test]
fn reruns_are_bit_identical() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "[sampling]\nsamples = 3\n");
    let dumps: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = d.path().join(tag);
            assert!(run(&["sample", "--seed", "4"], &c, &out).status.success());
            std::fs::read(out.join("field_00002_l0.csv")).unwrap()
        })
        .collect();
    assert_eq!(dumps[0], dumps[1]);
}

#[test]
fn darcy_writes_flux_balance() {
    let d = tempfile::tempdir().unwrap();
    let c = write_config(d.path(), "");
    let out = d.path().join("o");
    let o = run(&["darcy", "--seed", "1"], &c, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("darcy_cells.csv").exists());
    assert!(std::fs::read_to_string(out.join("darcy_summary.txt")).unwrap().contains("# command = darcy"));
}
