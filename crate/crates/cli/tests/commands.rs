use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[stage1]
epochs = 1
steps_per_epoch = 3
batch_size = 4

[stage2.train]
epochs = 2
steps_per_epoch = 5
batch_size = 8

[stage3.train]
epochs = 1
steps_per_epoch = 2
batch_size = 2

[sweep]
snr_db = [0.0, 6.0]
trials = 3
"#;

fn dmce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmce")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn selftest_passes() {
    let o = dmce(&["selftest", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().count() >= 5);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("syntax.toml", "seed = = 1\n", "line 1"),
        ("unknown.toml", "[sweep]\ntrails = 3\n", "trails"),
        ("range.toml", "[sweep]\ntrials = 0\n", "trials"),
        ("dims.toml", "[link]\nusers = 3\n", "users"),
    ];
    for (name, text, needle) in cases {
        let cfg = write(&dir.path().join(name), text);
        let o = dmce(&["sweep", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{name}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{name}: {}", stderr(&o));
    }
    let o = dmce(&["selftest", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = dmce(&["selftest", "--threads", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_sweep_enhance_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("tiny.toml"), TINY);
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();

    let o = dmce(&["train", "--config", &cfg, "--out", run_s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["stage1_codecs.ckpt", "stage2_dmce.ckpt", "stage3_codecs.ckpt", "manifest.toml"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let ckpt = std::fs::read(run.join("stage2_dmce.ckpt")).unwrap();
    assert_eq!(&ckpt[..5], b"DMCE1");

    let o = dmce(&["sweep", "--config", &cfg, "--out", run_s, "--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "snr_db,mode,trials,mean_miou,ci95_miou,mean_nmse_db_initial,mean_nmse_db_enhanced,mean_symbol_mse"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows[0].starts_with("0,dmce,3,"), "{}", rows[0]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);

    // Same seed, fresh directory: identical checkpoints.
    let again = dir.path().join("again");
    let o = dmce(&["train", "--config", &cfg, "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    for f in ["stage1_codecs.ckpt", "stage2_dmce.ckpt", "stage3_codecs.ckpt"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let input = write(
        &dir.path().join("h.csi"),
        "2 2 0.5\n1.0+0.5j -0.25-1.0j\n0.3+0.0j 2.0-0.7j\n",
    );
    let output = dir.path().join("h_tilde.csi");
    let o = dmce(&["enhance", "--config", &cfg, "--out", run_s, "--input", &input, "--output", output.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&output).unwrap();
    let mut it = text.lines();
    let header: Vec<&str> = it.next().unwrap().split_whitespace().collect();
    assert_eq!(&header[..2], &["2", "2"]);
    assert_eq!(header[2].parse::<f64>().unwrap(), 0.5);
    assert_eq!(it.filter(|l| !l.is_empty()).count(), 2);

    let wrong = write(&dir.path().join("wide.csi"), "2 3 0.1\n1+1j 1+1j 1+1j\n1+1j 1+1j 1+1j\n");
    let o = dmce(&["enhance", "--out", run_s, "--input", &wrong, "--output", output.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let garbled = write(&dir.path().join("bad.csi"), "2 2 0.1\n1+1j oops\n1+1j 1+1j\n");
    let o = dmce(&["enhance", "--out", run_s, "--input", &garbled, "--output", output.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
