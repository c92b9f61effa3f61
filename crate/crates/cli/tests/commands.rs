use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csclab_core::io::write_grid;
use csclab_core::manifest::Manifest;
use csclab_core::vtid::SceneImage;
use csclab_core::RandomStream;

fn csclab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csclab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path, seed: &str, n: &str, split: &str) -> PathBuf {
    let out = dir.join("data");
    let o = csclab(&["gen", "--seed", seed, "--n", n, split, "--out", out.to_str().unwrap()], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join(&split[2..]).join("manifest.json")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn missing_dataset_field_exits_2_and_names_it() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), r#"{"trials": 2}"#);
    let o = csclab(&["run", "--config", cfg.to_str().unwrap()], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset"), "{}", stderr(&o));
}

#[test]
fn bad_field_type_reports_path() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), r#"{"dataset":"m.json","schedule":{"t_max":"many"}}"#);
    let o = csclab(&["run", "--config", cfg.to_str().unwrap()], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule.t_max"), "{}", stderr(&o));
}

#[test]
fn single_trial_with_zero_rho_has_zero_deltas() {
    let t = tempfile::tempdir().unwrap();
    let m = gen(t.path(), "2", "2", "--paired");
    let cfg = write_config(
        t.path(),
        &format!(r#"{{"dataset":{:?},"trials":1,"sampler":{{"rho":0.0}}}}"#, m),
    );
    let o = csclab(&["run", "--config", cfg.to_str().unwrap(), "--out", "r"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("r/summary.json")).unwrap())
            .unwrap();
    for (_, v) in s["delta"].as_object().unwrap() {
        assert_eq!(v.as_f64(), Some(0.0));
    }
    let csv = std::fs::read_to_string(t.path().join("r/trajectories.csv")).unwrap();
    // Header plus 20 steps for each arm.
    assert_eq!(csv.lines().count(), 41);
}

#[test]
fn layer_sweep_rows() {
    let t = tempfile::tempdir().unwrap();
    let m = gen(t.path(), "3", "2", "--paired");
    let cfg = write_config(t.path(), &format!(r#"{{"dataset":{:?},"trials":2}}"#, m));
    let o = csclab(&["sweep", "--kind", "layers", "--config", cfg.to_str().unwrap(), "--out", "s"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(t.path().join("s/sweep_layers.csv")).unwrap();
    let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["both", "full_only", "half_only"]);
    let o = csclab(&["sweep", "--kind", "depth", "--config", cfg.to_str().unwrap()], t.path());
    assert_eq!(o.status.code(), Some(2));
}

fn edit_manifest(m: &Path, f: impl FnOnce(&mut Manifest)) -> PathBuf {
    let mut man = Manifest::from_json(&std::fs::read_to_string(m).unwrap()).unwrap();
    f(&mut man);
    let p = m.with_file_name("edited.json");
    std::fs::write(&p, man.to_json().unwrap()).unwrap();
    p
}

fn vtid_rows(dir: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("vtid.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn vtid_over_manifests() {
    let t = tempfile::tempdir().unwrap();
    let m = gen(t.path(), "4", "3", "--unpaired");
    let o = csclab(&["vtid", "--manifest", m.to_str().unwrap(), "--out", "v"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = vtid_rows(&t.path().join("v"));
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[4], ["mean", "0.0", "0.0", "0.0"]);

    // One noised generated image.
    let dir = m.parent().unwrap();
    let noisy = dir.join("noisy.f64grid");
    let reference = csclab_core::io::read_grid(dir.join("0001/reference.f64grid")).unwrap();
    let img = SceneImage::from_stacked(&reference).unwrap();
    let img = img.with_noise(0.1, &mut RandomStream::new(1)).unwrap();
    write_grid(&noisy, &img.to_stacked()).unwrap();
    let edited = edit_manifest(&m, |man| man.generated[1] = "noisy.f64grid".into());
    let o = csclab(&["vtid", "--manifest", edited.to_str().unwrap(), "--out", "v2", "--extractor", "random"], t.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = vtid_rows(&t.path().join("v2"));
    assert!(rows[2][3].parse::<f64>().unwrap() > 0.0);
    assert_eq!(rows[1][3], "0.0");

    // Missing file is named.
    let missing = edit_manifest(&m, |man| man.garment[2] = "nope.f64grid".into());
    let o = csclab(&["vtid", "--manifest", missing.to_str().unwrap(), "--out", "v3"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.f64grid"), "{}", stderr(&o));

    // Shape mismatch names the sample.
    let small = dir.join("small.f64grid");
    write_grid(&small, &csclab_core::Grid::zeros(6, 4).unwrap()).unwrap();
    let bad = edit_manifest(&m, |man| man.generated[2] = "small.f64grid".into());
    let o = csclab(&["vtid", "--manifest", bad.to_str().unwrap(), "--out", "v4"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sample 2"), "{}", stderr(&o));

    // Empty manifest.
    let empty = edit_manifest(&m, |man| *man = Manifest::default());
    let o = csclab(&["vtid", "--manifest", empty.to_str().unwrap(), "--out", "v5"], t.path());
    assert_eq!(o.status.code(), Some(2));
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_deterministic_and_checks_split_size() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "1", "4", "--paired");
    gen(b.path(), "1", "4", "--paired");
    assert_eq!(tree(a.path()), tree(b.path()));
    let o = csclab(&["gen", "--n", "1", "--unpaired", "--out", "x"], a.path());
    assert_eq!(o.status.code(), Some(2));
    gen(a.path(), "1", "16", "--unpaired");
    let dirs = std::fs::read_dir(a.path().join("data/unpaired"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 16);
}

#[test]
fn plot_writes_wellformed_deterministic_svg() {
    let t = tempfile::tempdir().unwrap();
    let m = gen(t.path(), "5", "2", "--paired");
    let cfg = write_config(t.path(), &format!(r#"{{"dataset":{:?},"trials":3}}"#, m));
    assert!(csclab(&["run", "--config", cfg.to_str().unwrap(), "--out", "r"], t.path()).status.success());
    for out in ["p1", "p2"] {
        let o = csclab(&["plot", "--input", "r/trajectories.csv", "--out", out], t.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (p1, p2) = (tree(&t.path().join("p1")), tree(&t.path().join("p2")));
    assert_eq!(p1, p2);
    assert_eq!(p1.len(), 5);
    for (_, bytes) in &p1 {
        let doc = roxmltree::Document::parse(std::str::from_utf8(bytes).unwrap()).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().any(|n| n.has_tag_name("polyline")));
    }

    std::fs::write(t.path().join("empty.csv"), "step,e_total\n").unwrap();
    let o = csclab(&["plot", "--input", "empty.csv", "--out", "p3"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no data rows"));

    std::fs::write(t.path().join("bad.csv"), "step,e_total\n1,0.5\n2,abc\n").unwrap();
    let o = csclab(&["plot", "--input", "bad.csv", "--out", "p4"], t.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}
