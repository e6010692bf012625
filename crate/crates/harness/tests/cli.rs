//! Runs the `eqzsim` binary on tiny configs.

use std::path::Path;
use std::process::{Command, Output};

use eqz_harness::sweep::{read_ber_csv, BER_CSV_HEADER};

const TINY: &str = r#"
name = "tiny"
channel = "h_A"
modulation = 2
mode = "uncoded"
ebn0_db = [12.0, 14.0]
seed = 3
geometry = { n1 = 3, n2 = 3 }
stopping = { min_errors = 100, max_bits = 100000, block_symbols = 1024, round_blocks = 4 }

[[equalizers]]
kind = "lmmse"

[[equalizers]]
kind = "bcjr"

[[equalizers]]
kind = "eqznet_train"
architecture = { kind = "k_eqz_net", k = 2 }
training_bits = 20000
train = { epochs = 2, batch_size = 64 }
"#;

fn eqzsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqzsim")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ];
    args.extend_from_slice(extra);
    let o = eqzsim(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn train_then_sweep_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let ck = dir.path().join("ck");
    run("train", &config, &ck, &[]);
    for db in ["12", "14"] {
        assert!(ck.join(format!("2-EqzNet_{db}dB.json")).exists());
        let trace = std::fs::read_to_string(ck.join(format!("2-EqzNet_{db}dB_trace.csv"))).unwrap();
        assert!(trace.starts_with("bit,stage,epoch,loss\n"));
        assert_eq!(trace.lines().count(), 3);
    }

    let out = dir.path().join("sweep");
    run("sweep", &config, &out, &["--checkpoints", ck.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("ber.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(BER_CSV_HEADER));
    let records = read_ber_csv(&out.join("ber.csv")).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records.iter().any(|r| r.equalizer == "2-EqzNet"));

    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command: sweep"));
    assert!(manifest.contains("config_sha256: "));
    assert!(manifest.contains("seed: 3"));

    // the same run with the seed overridden from the command line differs
    let other = dir.path().join("other");
    run("sweep", &config, &other, &["--checkpoints", ck.to_str().unwrap(), "--seed", "4"]);
    let again = read_ber_csv(&other.join("ber.csv")).unwrap();
    assert_ne!(records[0].seed_digest, again[0].seed_digest);
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    // conventional equalizers only; networks are covered by the acceptance suite
    std::fs::write(&config, &TINY[..TINY.find("[[equalizers]]\nkind = \"eqznet_train\"").unwrap()]).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run("sweep", &config, &a, &[]);
    let o = eqzsim(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--workers",
        "1",
    ]);
    assert!(o.status.success());
    let (x, y) = (read_ber_csv(&a.join("ber.csv")).unwrap(), read_ber_csv(&b.join("ber.csv")).unwrap());
    assert_eq!(x.len(), y.len());
    for (r, s) in x.iter().zip(&y) {
        assert_eq!((r.errors, r.bits, &r.seed_digest), (s.errors, s.bits, &s.seed_digest));
    }
}

#[test]
fn gain_table_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let sweep = dir.path().join("sweep");
    run("sweep", &config, &sweep, &[]);

    let gt = dir.path().join("gain.toml");
    std::fs::write(
        &gt,
        "records = [\"sweep/ber.csv\"]\ntarget_ber = 1e-3\nn1 = 3\nn2 = 3\n\
         [architectures]\n\"2-EqzNet\" = { kind = \"k_eqz_net\", k = 2 }\n",
    )
    .unwrap();
    let out = dir.path().join("gain");
    run("gain-table", &gt, &out, &[]);
    let table = std::fs::read_to_string(out.join("gain_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.contains("2-EqzNet"));

    let hist = dir.path().join("hist.toml");
    let experiment = TINY.replace("[[equalizers]]", "[[experiment.equalizers]]");
    let (head, tail) = experiment.split_at(experiment.find("[[experiment.equalizers]]").unwrap());
    std::fs::write(
        &hist,
        format!("ebn0_db = 12.0\nsymbols = 20000\n\n[experiment]\n{}\n{tail}", head.trim()),
    )
    .unwrap();
    let out = dir.path().join("hist");
    run("llr-hist", &hist, &out, &[]);
    let csv = std::fs::read_to_string(out.join("llr_hist.csv")).unwrap();
    assert!(csv.starts_with("equalizer,bit,bin_lo,bin_hi,count\n"));
    for label in ["LMMSE", "BCJR", "2-EqzNet"] {
        let total: u64 = csv
            .lines()
            .filter(|l| l.starts_with(&format!("{label},")))
            .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 20000, "{label}");
    }
}

#[test]
fn calibrate_window_writes_its_choice() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cal.toml");
    std::fs::write(
        &config,
        "name = \"cal\"\nchannel = \"h_B\"\nmodulation = 2\nmode = \"uncoded\"\nebn0_db = [8.0]\n\
         geometry = \"auto\"\ncalibration = { block_len = 512, blocks = 8, max_window = 8 }\n\
         equalizers = [{ kind = \"lmmse\" }]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run("calibrate-window", &config, &out, &[]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("n1 = "));
    let csv = std::fs::read_to_string(out.join("calibration.csv")).unwrap();
    assert!(csv.starts_with("ebn0_db,window,bits,errors,ber,full_block_errors,full_block_ber,chosen\n"));
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 1);
}

#[test]
fn invalid_input_exits_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    let out = dir.path().join("out");
    std::fs::write(&config, TINY.replace("modulation = 2", "modulation = 3")).unwrap();
    for cmd in ["train", "sweep"] {
        let o = eqzsim(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(!o.status.success());
        assert!(!o.stderr.is_empty());
    }
    std::fs::write(&config, TINY.replace("name = \"tiny\"", "name = \"tiny\"\ncolour = 1")).unwrap();
    let o = eqzsim(&["sweep", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let missing = dir.path().join("missing.toml");
    let o = eqzsim(&["sweep", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
}
