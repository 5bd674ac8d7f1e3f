use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vinpaint::datagen::{
    load_mask, save_frames, save_image, save_mask, save_masks, ProceduralTexture,
};
use vinpaint::temporal::{read_flo, write_flo, FlowField};
use vinpaint::{Image, Mask};

fn vinpaint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinpaint"))
        .args(args)
        .output()
        .expect("run vinpaint")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .to_string()
}

#[test]
fn hole_free_input_is_copied_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let tex = ProceduralTexture::new(2, 64.0);
    let frames: Vec<Image> = (0..3).map(|t| tex.render(32, 32, t as f64, 0.0)).collect();
    save_frames(&frames, &dir.path().join("in")).unwrap();
    save_masks(&vec![Mask::visible(32, 32); 3], &dir.path().join("m")).unwrap();
    let out = dir.path().join("out");
    let o = vinpaint(&[
        "inpaint",
        "--frames",
        p(&dir.path().join("in")),
        "--masks",
        p(&dir.path().join("m")),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for t in 0..3 {
        let name = format!("{t:05}.png");
        assert_eq!(
            fs::read(dir.path().join("in").join(&name)).unwrap(),
            fs::read(out.join("frames").join(&name)).unwrap()
        );
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("stride = 10"));
    assert!(manifest.contains("root_seed = 0"));
}

#[test]
fn missing_mask_dir_names_path() {
    let dir = tempfile::tempdir().unwrap();
    save_frames(&[Image::zeros(3, 8, 8)], &dir.path().join("in")).unwrap();
    let missing = dir.path().join("nowhere");
    let o = vinpaint(&[
        "inpaint",
        "--frames",
        p(&dir.path().join("in")),
        "--masks",
        p(&missing),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "stride = 4\nbogus = 1\n").unwrap();
    let o = vinpaint(&[
        "flow",
        "--prev",
        "a.png",
        "--cur",
        "b.png",
        "--out",
        "f.flo",
        "--config",
        p(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus"));
    let o = vinpaint(&[
        "flow", "--prev", "a.png", "--cur", "b.png", "--out", "f.flo", "--set", "nope=3",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seeded_fixture_matches_golden_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let o = vinpaint(&[
        "synth",
        "video",
        "--out",
        p(&fx),
        "--frames",
        "8",
        "--size",
        "64",
        "--hole",
        "24",
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let o = vinpaint(&[
        "inpaint",
        "--frames",
        p(&fx.join("frames")),
        "--masks",
        p(&fx.join("masks")),
        "--gt",
        p(&fx.join("clean")),
        "--out",
        p(&out),
        "--set",
        "stride=3",
        "--seed",
        "11",
    ]);
    assert!(
        matches!(o.status.code(), Some(0) | Some(2)),
        "{}",
        stderr(&o)
    );
    let got = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let golden =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/small_fixture_metrics.csv");
    if std::env::var_os("VINPAINT_BLESS").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(&golden).unwrap());
}

#[test]
fn self_alignment_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let img = ProceduralTexture::new(8, 96.0).render(96, 96, 0.0, 0.0);
    let a = dir.path().join("a.png");
    save_image(&img, &a).unwrap();
    let theta = dir.path().join("id.txt");
    fs::write(&theta, "1 0 0 0 1 0\n").unwrap();
    let o = vinpaint(&[
        "align",
        "--reference",
        p(&a),
        "--target",
        p(&a),
        "--theta-star",
        p(&theta),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let g: f64 = value(&stdout(&o), "grid_term").parse().unwrap();
    assert!(g < 1e-3, "{g}");
    assert_eq!(value(&stdout(&o), "theta").split(' ').count(), 6);
}

#[test]
fn synthetic_pair_aligns() {
    let dir = tempfile::tempdir().unwrap();
    let o = vinpaint(&["synth", "pair", "--out", p(dir.path()), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "imgA.png",
        "imgB.png",
        "maskA.png",
        "maskB.png",
        "theta_star.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let d = |f: &str| dir.path().join(f);
    let o = vinpaint(&[
        "align",
        "--reference",
        p(&d("imgA.png")),
        "--target",
        p(&d("imgB.png")),
        "--reference-mask",
        p(&d("maskA.png")),
        "--target-mask",
        p(&d("maskB.png")),
        "--theta-star",
        p(&d("theta_star.txt")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let g: f64 = value(&stdout(&o), "grid_term").parse().unwrap();
    assert!(g < 0.01, "{g}");
}

#[test]
fn all_hole_target_fails_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let img = ProceduralTexture::new(1, 64.0).render(64, 64, 0.0, 0.0);
    let a = dir.path().join("a.png");
    let m = dir.path().join("m.png");
    save_image(&img, &a).unwrap();
    save_mask(&Mask::filled(64, 64, false), &m).unwrap();
    let o = vinpaint(&[
        "align",
        "--reference",
        p(&a),
        "--target",
        p(&a),
        "--target-mask",
        p(&m),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn synth_is_deterministic_and_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let (m1, m2) = (dir.path().join("m1.png"), dir.path().join("m2.png"));
    for m in [&m1, &m2] {
        let o = vinpaint(&[
            "synth",
            "mask",
            "--out",
            p(m),
            "--min-hole",
            "0.1",
            "--max-hole",
            "0.2",
            "--seed",
            "5",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    let f = load_mask(&m1).unwrap().hole_fraction();
    assert!((0.1..=0.2).contains(&f), "{f}");
    let o = vinpaint(&[
        "synth",
        "mask",
        "--out",
        p(&m1),
        "--min-hole",
        "0.5",
        "--max-hole",
        "0.2",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = vinpaint(&[
            "synth",
            "pair",
            "--out",
            p(d),
            "--size",
            "32",
            "--seed",
            "9",
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["imgA.png", "imgB.png", "maskB.png", "theta_star.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

fn eval_fixture(root: &Path, gap: f64) -> (String, String, String) {
    let gt: Vec<Image> = (0..3).map(|_| Image::filled(3, 32, 32, 0.4)).collect();
    let pred: Vec<Image> = (0..3)
        .map(|_| Image::filled(3, 32, 32, 0.4 + gap))
        .collect();
    let masks = vec![Mask::from_fn(32, 32, |y, _| y >= 8); 3];
    save_frames(&gt, &root.join("gt")).unwrap();
    save_frames(&pred, &root.join("pred")).unwrap();
    save_masks(&masks, &root.join("m")).unwrap();
    let s = |d: &str| root.join(d).to_str().unwrap().to_string();
    (s("pred"), s("gt"), s("m"))
}

#[test]
fn eval_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt, m) = eval_fixture(dir.path(), 0.0);
    let o = vinpaint(&["eval", "--pred", &gt, "--gt", &gt, "--masks", &m]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(value(&text, "l_hole"), "0.000000000");
    assert_eq!(value(&text, "psnr_hole"), "99.000000000");
    assert_eq!(value(&text, "l_valid"), "0.000000000");
    assert_ne!(pred, gt);

    let dir = tempfile::tempdir().unwrap();
    // 0.4 and 0.5 quantize to 102 and 128; the gap is 26/255 per channel.
    let (pred, gt, m) = eval_fixture(dir.path(), 0.1);
    let out = dir.path().join("report");
    let o = vinpaint(&[
        "eval",
        "--pred",
        &pred,
        "--gt",
        &gt,
        "--masks",
        &m,
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let l: f64 = value(&stdout(&o), "l_hole").parse().unwrap();
    assert!((l - 3.0 * 26.0 / 255.0).abs() < 1e-9, "{l}");
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn partial_flow_files_leave_flow_metric_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt, m) = eval_fixture(dir.path(), 0.0);
    let flows = dir.path().join("flows");
    fs::create_dir_all(&flows).unwrap();
    write_flo(&flows.join("00001.flo"), &FlowField::zeros(32, 32)).unwrap();
    // Two pyramid levels fit 32x32 frames.
    let eval = |flows: &Path| {
        vinpaint(&[
            "eval",
            "--pred",
            &pred,
            "--gt",
            &gt,
            "--masks",
            &m,
            "--flows",
            p(flows),
            "--set",
            "flow_levels=2",
        ])
    };
    let o = eval(&flows);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "flow_metric"), "unavailable");
    write_flo(&flows.join("00002.flo"), &FlowField::zeros(32, 32)).unwrap();
    let o = eval(&flows);
    assert_ne!(value(&stdout(&o), "flow_metric"), "unavailable");
}

#[test]
fn eval_shape_mismatch_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, _, m) = eval_fixture(dir.path(), 0.0);
    save_frames(&vec![Image::zeros(3, 16, 16); 3], &dir.path().join("small")).unwrap();
    let o = vinpaint(&[
        "eval",
        "--pred",
        &pred,
        "--gt",
        p(&dir.path().join("small")),
        "--masks",
        &m,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("frame 0"), "{}", stderr(&o));
}

#[test]
fn flow_command_cases() {
    let dir = tempfile::tempdir().unwrap();
    let tex = ProceduralTexture::new(6, 128.0);
    let prev = dir.path().join("prev.png");
    let cur = dir.path().join("cur.png");
    let out = dir.path().join("f.flo");
    save_image(&tex.render(64, 64, 10.0, 10.0), &prev).unwrap();
    let o = vinpaint(&[
        "flow",
        "--prev",
        p(&prev),
        "--cur",
        p(&prev),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_flo(&out).unwrap(), FlowField::zeros(64, 64));

    save_image(&tex.render(64, 64, 12.0, 9.0), &cur).unwrap();
    let o = vinpaint(&[
        "flow",
        "--prev",
        p(&prev),
        "--cur",
        p(&cur),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let f = read_flo(&out).unwrap();
    for y in 8..56 {
        for x in 8..56 {
            assert_eq!(f.at(y * 64 + x), (2.0, -1.0));
        }
    }

    let tiny = dir.path().join("tiny.png");
    save_image(&Image::zeros(3, 16, 16), &tiny).unwrap();
    let o = vinpaint(&[
        "flow",
        "--prev",
        p(&tiny),
        "--cur",
        p(&tiny),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
