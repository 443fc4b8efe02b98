use std::path::Path;
use std::process::Command;

use corrfield::checkpoint::Checkpoint;
use corrfield::field::{FieldConfig, FieldParams};
use corrfield::optim::AdamState;
use corrfield::synth::{AnalyticScene, Primitive, Texture};
use corrfield::linalg::Vec3;
use corrfield_cli::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corrfield"))
}

fn small(out: &Path) -> Vec<String> {
    [
        format!("output_dir={}", serde_json::Value::String(out.display().to_string())),
        "rig.width=16".into(),
        "rig.height=16".into(),
        "train.iterations=6".into(),
        "train.eval_every=3".into(),
        "train.batch_rays=24".into(),
        "train.samples=8".into(),
        r#"train.field={"layers":1,"hidden":8,"color_hidden":4}"#.into(),
    ]
    .into()
}

fn cfg(out: &Path, extra: &[&str]) -> ExperimentConfig {
    let mut o = small(out);
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load(None, &o).unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn default_synth_emits_three_training_and_eight_test_views() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_synth(&cfg(dir.path(), &[])).unwrap();
    assert_eq!((s.train_views, s.test_views), (3, 8));
    assert!(s.raw_matches > 0);
    let layout = Layout::new(dir.path());
    assert!(layout.image("test_7").exists() && layout.depth("train_0").exists() && layout.manifest().exists());
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let c = cfg(dir, &[]);
        cmd_synth(&c).unwrap();
        cmd_preprocess(&c).unwrap();
        cmd_triangulate(&c).unwrap();
        cmd_train(&c).unwrap();
        cmd_eval(&c, None).unwrap();
    }
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> { v.into_iter().filter(|(n, _)| n != "config.json").collect() };
    assert_eq!(strip(read_dir_bytes(a.path())), strip(read_dir_bytes(b.path())));
}

#[test]
fn rerunning_overwrites_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), &[]);
    cmd_synth(&c).unwrap();
    let first = read_dir_bytes(dir.path());
    cmd_synth(&c).unwrap();
    assert_eq!(first, read_dir_bytes(dir.path()));
}

#[test]
fn clean_preprocess_report_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), &[]);
    cmd_synth(&c).unwrap();
    let r = cmd_preprocess(&c).unwrap();
    assert_eq!(r.after_projection_filter, r.input_count);
    assert!(r.after_knn_filter <= r.after_projection_filter);
    let back: serde_json::Value = serde_json::from_slice(&std::fs::read(Layout::new(dir.path()).filter_report()).unwrap()).unwrap();
    assert_eq!(back["after_knn_filter"], r.after_knn_filter);
}

#[test]
fn ablation_writes_a_monotone_curve() {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_ablate_noise(&cfg(dir.path(), &["rig.width=24", "rig.height=24"])).unwrap();
    assert_eq!(rows.iter().map(|r| r.noise_std).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 4.0]);
    assert!(rows.windows(2).all(|w| w[1].survival_fraction <= w[0].survival_fraction));
    let text = std::fs::read_to_string(Layout::new(dir.path()).ablation()).unwrap();
    assert!(text.starts_with("noise_std,raw,input_count,after_projection_filter,after_knn_filter,survival_fraction\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn corrupt_correspondence_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(dir.path(), &[]);
    cmd_synth(&c).unwrap();
    cmd_preprocess(&c).unwrap();
    let path = Layout::new(dir.path()).correspondences();
    let mut lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[2] = "{\"image_q\": 0, oops".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = cmd_triangulate(&c).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("line 3"), "{err}");
}

/// A fronto-parallel plane of one color, and a field whose density is a
/// large constant and whose color is that constant: every ray saturates at
/// the first sample, matching the scene up to the sampling offset.
#[test]
fn matching_field_scores_above_forty_db() {
    let dir = tempfile::tempdir().unwrap();
    let color = [0.25, 0.5, 0.75];
    let scene = AnalyticScene {
        name: "flat".into(),
        primitives: vec![Primitive::Plane {
            point: Vec3::new(0.0, 0.0, -1.0),
            normal: Vec3::new(0.0, 0.0, -1.0),
            texture: Texture::Constant { color },
        }],
        background: [0.0; 3],
        near: 2.0,
        far: 8.0,
    };
    let scene_path = dir.path().join("flat.json");
    std::fs::write(&scene_path, scene.to_json()).unwrap();
    let c = cfg(dir.path(), &[&format!("scene_file={}", serde_json::Value::String(scene_path.display().to_string()))]);
    cmd_synth(&c).unwrap();

    let fc = FieldConfig { layers: 1, hidden: 4, color_hidden: 4, freq_position: 0, freq_direction: 0, ..Default::default() };
    let mut p = FieldParams::<f64>::zeros(fc).unwrap();
    let mut flat = p.flat().to_vec();
    let bias = |name: &str| p.block(name).unwrap().offset;
    flat[bias("density.bias")] = 1e4;
    let logit = |c: f64| (c / (1.0 - c)).ln();
    for k in 0..3 {
        flat[bias("color.1.bias") + k] = logit(color[k]);
    }
    p.set_flat(flat).unwrap();
    let n = p.flat().len();
    let ck = Checkpoint { params: p, adam: AdamState::new(n), iteration: 0 };
    let path = dir.path().join("truth.bin");
    ck.write(std::fs::File::create(&path).unwrap()).unwrap();
    let r = cmd_eval(&c, Some(&path)).unwrap();
    assert!(r.psnr > 40.0, "psnr {}", r.psnr);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let ok = bin().args(["synth", "--out", &out, "--set", "rig.width=8", "--set", "rig.height=8"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let missing = bin().args(["eval", "--out", &out, "--checkpoint", "does/not/exist.bin"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does/not/exist.bin"));
    let scene = bin().args(["synth", "--out", &out, "--set", "scene_file=missing_scene.json"]).output().unwrap();
    assert_eq!(scene.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&scene.stderr).contains("missing_scene.json"));
    let unknown = bin().args(["train", "--out", &out, "--set", "train.lamda=1"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("train.lamda"));
    let flag = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(flag.status.code(), Some(2));
}

#[test]
fn help_lists_every_key_with_its_default() {
    for cmd in ["synth", "preprocess", "triangulate", "train", "eval", "ablate-noise"] {
        let out = bin().args([cmd, "--help"]).output().unwrap();
        let text = String::from_utf8_lossy(&out.stdout);
        for key in ["pipeline.threshold_px = 2.0", "train.lambda_depth = 0.1", "rig.test_views = 8", "match_stride = 1", "output_dir = \"out\""] {
            assert!(text.contains(key), "{cmd} --help lacks {key}");
        }
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.json");
    std::fs::write(&file, r#"{"seed": 5, "train": {"iterations": 40}, "scene": "boxes"}"#).unwrap();
    let c = ExperimentConfig::load(Some(&file), &["train.iterations=9".into()]).unwrap();
    assert_eq!((c.seed, c.train.iterations, c.scene.as_str()), (5, 9, "boxes"));
    std::fs::write(&file, r#"{"train": {"iteration": 40}}"#).unwrap();
    let err = ExperimentConfig::load(Some(&file), &[]).unwrap_err();
    assert!(err.to_string().contains("train.iteration"), "{err}");
}
