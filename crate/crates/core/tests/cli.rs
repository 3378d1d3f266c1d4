use std::path::Path;
use std::process::Command;

fn trt(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_ci_config(dir: &Path) -> std::path::PathBuf {
    let text = "nx = 5\nny = 5\ngroup_bounds = 0.7075, 2.123, 4.245, 7.783, 1e7\n\
                n_polar = 2\nn_azim = 2\nt_end = 1.0\nsteps = 50\nxi = 1e-4\n\
                fom_dir = out/fom\nbasis_dir = out/basis\nrom_dir = out/rom\nreport_dir = out/report\n";
    let p = dir.join("ci.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_ci_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let steps = ["--steps", "4"];

    let out = trt(&[&["fom", "--config", cfg][..], &steps].concat(), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/fom/manifest.txt").is_file());
    assert!(dir.path().join("out/fom/step_0004.bin").is_file());

    let out = trt(&["offline", "--config", cfg, "--xi", "1e-4", "--xi", "0"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ranks = std::fs::read_to_string(dir.path().join("out/basis/ranks.csv")).unwrap();
    assert!(ranks.starts_with("xi,k,r\n"));
    assert_eq!(ranks.lines().count(), 3);
    assert!(dir.path().join("out/basis/xi_0e0/basis.bin").is_file());

    let out = trt(&[&["rom", "--config", cfg, "--xi", "0"][..], &steps].concat(), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = trt(&["compare", "--config", cfg, "--out", "out/report"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "{stdout}");
    for f in ["errors.csv", "boundary.csv", "spectrum.csv"] {
        assert!(dir.path().join("out/report").join(f).is_file(), "{f} missing");
    }
    let errors = std::fs::read_to_string(dir.path().join("out/report/errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 5);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_ci_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    std::fs::write(dir.path().join("bad.cfg"), "nx = many\n").unwrap();
    let out = trt(&["fom", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = trt(&["rom", "--config", cfg, "--xi", "1e-4"], dir.path());
    assert_eq!(out.status.code(), Some(5));

    let out = trt(&["fom", "--config", "missing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(5));

    // An archive built for another grid is refused.
    let out = trt(&["fom", "--config", cfg, "--steps", "2"], dir.path());
    assert!(out.status.success());
    let out = trt(&["offline", "--config", cfg, "--xi", "1e-4"], dir.path());
    assert!(out.status.success());
    let other = std::fs::read_to_string(cfg).unwrap().replace("nx = 5", "nx = 4");
    std::fs::write(dir.path().join("other.cfg"), other).unwrap();
    let out = trt(&["rom", "--config", "other.cfg", "--xi", "1e-4", "--steps", "2"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
