use std::path::Path;
use std::process::Command;

fn metsc(dir: &Path, args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_metsc")).current_dir(dir).arg("--quiet").args(args).output().unwrap();
    out.status.code().unwrap_or(-1)
}

#[test]
fn simulate_fit_train_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(metsc(d, &["simulate", "--kind", "ivim", "--dims", "12x12x1", "--seed", "1", "--out", "sim"]), 0);
    for f in ["signal.raw", "signal.json", "truth.raw", "mask.raw", "scheme.bval", "scheme.bvec", "run.json"] {
        assert!(d.join("sim").join(f).exists(), "{f}");
    }
    assert_eq!(metsc(d, &["fit", "--method", "nlls", "--volume", "sim/signal", "--out", "nlls"]), 0);
    assert_eq!(metsc(d, &["fit", "--method", "iht", "--volume", "sim/signal", "--bvals", "comb1", "--dict-size", "20", "--out", "iht"]), 0);
    let train = ["train", "--kind", "ivim", "--data", "sim", "--bvals", "comb1", "--desk", "--epochs", "1", "--warmup", "1", "--lr", "1e-3", "--out", "net"];
    assert_eq!(metsc(d, &train), 0);
    assert_eq!(metsc(d, &["fit", "--method", "metsc", "--volume", "sim/signal", "--bvals", "comb1", "--weights", "net/model", "--out", "fit"]), 0);
    assert_eq!(metsc(d, &["evaluate", "--pred", "fit/maps", "--truth", "sim/truth", "--out", "eval"]), 0);
    assert!(d.join("eval/evaluation.json").exists());
}

#[test]
fn rerun_with_another_config_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sim = |snr: &'static str| ["simulate", "--kind", "ivim", "--dims", "8x8", "--snr", snr, "--out", "sim"];
    assert_eq!(metsc(d, &sim("30")), 0);
    assert_eq!(metsc(d, &sim("30")), 0);
    assert_eq!(metsc(d, &sim("20")), 3);
    let mut forced = sim("20").to_vec();
    forced.push("--force");
    assert_eq!(metsc(d, &forced), 0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(metsc(d, &["simulate", "--kind", "ivim"]), 2);
    assert_eq!(metsc(d, &["simulate", "--kind", "dti", "--out", "x"]), 2);
    assert_eq!(metsc(d, &["fit", "--method", "nlls", "--volume", "missing/signal", "--out", "y"]), 3);
}
