use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nhalab::table::parse;
use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nhalab"));
    cmd.env_remove("NHALAB_OUT_DIR");
    cmd
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

fn rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const TWO_BAND: &str = r#"
n = 128
g = 1.0
n_ref = 512

[potential]
family = "iid"
seed = 7
parameters = { distribution = { kind = "symmetric_bands", inner = 3.0, outer = 4.0 } }
"#;

#[test]
fn two_band_non_real_fraction_grows_with_g() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["spectrum", "--check"], &repo_config("two_band_n50.toml"), out.path());
    assert_ok(&o);
    let mut fractions = Vec::new();
    for g in ["0.2", "1.1", "1.4"] {
        let (header, data) = rows(&out.path().join(format!("spectrum_n50_g{g}.csv")));
        assert_eq!(header, ["re", "im", "residual"]);
        assert_eq!(data.len(), 50);
        fractions.push(data.iter().filter(|r| r[1].abs() > 1e-3).count() as f64 / 50.0);
    }
    assert!(fractions.windows(2).all(|w| w[0] < w[1]), "{fractions:?}");
    let m = manifest(out.path());
    assert_eq!(m["status"], "complete");
    assert_eq!(m["seeds"], serde_json::json!([7]));
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn zero_potential_at_ln2() {
    let out = tempfile::tempdir().unwrap();
    assert_ok(&run(&["spectrum", "--check"], &repo_config("free_n4.toml"), out.path()));
    let (_, mut data) = rows(&out.path().join("spectrum_n4_g0.6931471805599453.csv"));
    data.sort_by(|a, b| (a[0] + a[1]).total_cmp(&(b[0] + b[1])));
    let expected = [(-2.5, 0.0), (0.0, -1.5), (0.0, 1.5), (2.5, 0.0)];
    for (row, (re, im)) in data.iter().zip(expected) {
        assert!((row[0] - re).abs() < 1e-12 && (row[1] - im).abs() < 1e-12, "{row:?}");
    }
}

#[test]
fn g_zero_gives_the_hermitian_energies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_config(dir.path(), "n = 6\ng = 0.0\n[potential]\nfamily = \"constant\"\nparameters = { value = 0.0 }\n");
    assert_ok(&run(&["spectrum"], &cfg, &dir.path().join("out")));
    let (_, data) = rows(&dir.path().join("out/spectrum_n6_g0.csv"));
    let re: Vec<f64> = data.iter().map(|r| r[0]).collect();
    // -2 cos(2πk/6)
    for (x, e) in re.iter().zip([-2.0, -1.0, -1.0, 1.0, 1.0, 2.0]) {
        assert!((x - e).abs() < 1e-12, "{re:?}");
    }
    assert!(data.iter().all(|r| r[1] == 0.0));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_BAND);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_ok(&run(&["spectrum"], &cfg, &a));
    assert_ok(&bin().args(["spectrum", "--threads", "1", "--config"]).arg(&cfg).arg("--out").arg(&b).output().unwrap());
    // the manifest alone is enough to repeat the run
    assert_ok(&run(&["spectrum"], &a.join("manifest.json"), &c));
    let m = manifest(&a);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for entry in outputs {
        let name = entry["path"].as_str().unwrap();
        let bytes = std::fs::read(a.join(name)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert_eq!(bytes, std::fs::read(c.join(name)).unwrap(), "{name}");
        assert_eq!(entry["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(entry["sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(manifest(&b)["outputs"], m["outputs"]);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_BAND);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&run(&["spectrum"], &cfg, &a));
    assert_ok(&run(&["spectrum", "--seed", "8"], &cfg, &b));
    assert_eq!(manifest(&b)["seeds"], serde_json::json!([8]));
    let name = "spectrum_n128_g1.csv";
    assert_ne!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("out = \"{}\"\n{TWO_BAND}", dir.path().join("from_config").display()));
    let env_dir = dir.path().join("from_env");
    let o = bin().args(["sparse"]).arg("--config").arg(&cfg).env("NHALAB_OUT_DIR", &env_dir).output().unwrap();
    assert!(!o.status.success());
    assert!(env_dir.join("manifest.json").exists());
    assert!(!dir.path().join("from_config").exists());

    let flag_dir = dir.path().join("from_flag");
    let o = bin()
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .env("NHALAB_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(flag_dir.join("spectrum_n128_g1.csv").exists());

    assert_ok(&bin().args(["spectrum", "--config"]).arg(&cfg).output().unwrap());
    assert!(dir.path().join("from_config/spectrum_n128_g1.csv").exists());
}

#[test]
fn failures_leave_a_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_BAND);
    let out = dir.path().join("out");
    let o = run(&["sparse"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(&out);
    assert_eq!(m["status"], "partial");
    assert!(m["error"].as_str().unwrap().contains("sparse"));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for text in [format!("{TWO_BAND}\nextra = 1\n"), TWO_BAND.replace("n = 128", ""), "n = 4\n".to_owned()] {
        let cfg = write_config(dir.path(), &text);
        let o = run(&["spectrum"], &cfg, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(!dir.path().join("out").exists());
    }
    let o = bin().arg("spectrum").output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn free_ids_is_close_to_the_arccos_law() {
    let dir = tempfile::tempdir().unwrap();
    let n = 64;
    let cfg = write_config(
        dir.path(),
        &format!("n = {n}\nn_ref = 256\n[potential]\nfamily = \"constant\"\nparameters = {{ value = 0.0 }}\n[dos]\npoints = 2001\n"),
    );
    assert_ok(&run(&["dos"], &cfg, &dir.path().join("out")));
    let (header, data) = rows(&dir.path().join(format!("out/ids_n{n}.csv")));
    assert_eq!(header, ["E", "N"]);
    let worst = data
        .iter()
        .map(|r| {
            let limit = (-r[0] / 2.0).clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
            (r[1] - limit).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst <= 2.0 / n as f64, "{worst}");
}

#[test]
fn curves_and_spacings_on_a_small_sample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TWO_BAND);
    let out = dir.path().join("curves");
    assert_ok(&run(&["curves", "--check"], &cfg, &out));
    let (header, preds) = rows(&out.join("predicted_n128_g1.csv"));
    assert_eq!(header, ["arc", "quantum", "re", "im", "residual", "edge"]);
    assert!(!preds.is_empty());
    let (header, arc) = rows(&out.join("arc_n128_g1_0.csv"));
    assert_eq!(header, ["x", "y", "theta", "theta_prime"]);
    assert!(arc.windows(2).all(|w| w[0][0] < w[1][0] && w[0][2] < w[1][2]));

    // every prediction is an eigenvalue of the direct spectrum
    let spec_out = dir.path().join("spectrum");
    assert_ok(&run(&["spectrum"], &cfg, &spec_out));
    let (_, direct) = rows(&spec_out.join("spectrum_n128_g1.csv"));
    for p in &preds {
        let d = direct.iter().map(|r| (r[0] - p[2]).hypot(r[1] - p[3])).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-9, "{p:?} is {d} from the spectrum");
    }

    let out = dir.path().join("spacings");
    assert_ok(&run(&["spacings", "--check"], &cfg, &out));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("spacings_summary.json")).unwrap()).unwrap();
    let entries = summary.as_array().unwrap();
    assert!(!entries.is_empty());
    for e in entries {
        assert_eq!(e["ordered"], true);
        assert!(e["count_discrepancy"].as_f64().unwrap().abs() < 2.0, "{e}");
    }
    let (header, _) = rows(&out.join("spacings_n128_g1_0.csv"));
    assert_eq!(header, ["re", "im", "gap_re", "gap_im", "pred_re", "pred_im", "delta_abs"]);
}

#[test]
fn lyapunov_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{TWO_BAND}\n[lyapunov]\nre = [-5.0, 5.0]\nim = [0.5, 2.0]\nnx = 5\nny = 3\n"),
    );
    assert_ok(&run(&["lyapunov", "--check"], &cfg, &dir.path().join("out")));
    let (header, data) = rows(&dir.path().join("out/lyapunov_n128.csv"));
    assert_eq!(header, ["re_z", "im_z", "gamma", "U_n"]);
    assert_eq!(data.len(), 15);
    for r in &data {
        assert!(r[2] >= 0.0);
        // off the axis the exponent and the potential agree to O(1/n)
        assert!((r[2] - r[3]).abs() < 0.1, "{r:?}");
    }
}

#[test]
fn sparse_growth_statistic() {
    let out = tempfile::tempdir().unwrap();
    assert_ok(&run(&["sparse"], &repo_config("sparse.toml"), out.path()));
    let (header, data) = rows(&out.path().join("s_n.csv"));
    assert_eq!(header, ["n", "s_n", "peaks"]);
    let last = data.last().unwrap();
    assert_eq!(last[0], 100_000.0);
    assert_eq!(last[2], 316.0);
    assert!((last[1] - 0.5).abs() < 0.01);
}
