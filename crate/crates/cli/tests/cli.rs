use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flickerforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scene(path: &Path, h: u32, w: u32) {
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([(40 + x % 50) as u8, (30 + (x + y) % 40) as u8, (60 + y % 30) as u8])
    });
    img.save(path).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unit_duty_pwm_keeps_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    write_scene(&a, 32, 24);
    let o = run(&["synth", "--in", s(&a), "--mode", "pwm", "--duty", "1.0", "--out", s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pa = image::open(&a).unwrap().into_rgb8();
    let pb = image::open(&b).unwrap().into_rgb8();
    assert_eq!(pa.as_raw(), pb.as_raw());
}

#[test]
fn synth_changes_pixels_for_real_flicker() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    write_scene(&a, 64, 16);
    let o = run(&[
        "synth", "--in", s(&a), "--mode", "half", "--frow", "2000", "--k", "0.2,0.4,0.6", "--out", s(&b),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pa = image::open(&a).unwrap().into_rgb8();
    let pb = image::open(&b).unwrap().into_rgb8();
    assert_ne!(pa.as_raw(), pb.as_raw());
}

#[test]
fn burst_without_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.png");
    write_scene(&a, 32, 32);
    let o = run(&["burst", "--in", s(&a), "--out-dir", s(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_bad_data() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let o = run(&["estimate", "--frames", "/nonexistent/a.png", "/nonexistent/b.png"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/a.png"));
}

#[test]
fn burst_deflicker_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.png");
    write_scene(&clean, 96, 40);
    let bdir = dir.path().join("burst");
    let o = run(&[
        "burst", "--in", s(&clean), "--seed", "7", "--frames", "3", "--mode", "full", "--frow", "4000",
        "--k", "0.5", "--phases", "0,2.0944,4.1888", "--shake-rot", "0", "--shake-trans", "0", "--out-dir", s(&bdir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(bdir.join("spec.json").is_file());

    let frames: Vec<String> = (0..3).map(|i| s(&bdir.join(format!("frame_{i:02}.png"))).to_string()).collect();
    let restored = dir.path().join("restored.png");
    let report = dir.path().join("report.json");
    let spec = bdir.join("spec.json");
    let mut args = vec!["deflicker", "--frames"];
    args.extend(frames.iter().map(String::as_str));
    args.extend(["--spec", s(&spec), "--out", s(&restored), "--report", s(&report)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));

    let scores = dir.path().join("scores.json");
    let o = run(&["evaluate", "--pred", s(&restored), "--gt", s(&clean), "--out", s(&scores)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&scores).unwrap()).unwrap();
    let psnr = &v["images"][0]["psnr_db"];
    let ok = psnr.as_str() == Some("inf") || psnr.as_f64().unwrap() >= 60.0;
    assert!(ok, "psnr {psnr}");

    // blind removal of the same burst also runs end to end
    let blind = dir.path().join("blind.png");
    let mut args = vec!["deflicker", "--frames"];
    args.extend(frames.iter().map(String::as_str));
    args.extend(["--out", s(&blind)]);
    assert!(run(&args).status.success());

    // --no-clobber refuses to replace the restored image
    let mut args = vec!["--no-clobber", "deflicker", "--frames"];
    args.extend(frames.iter().map(String::as_str));
    args.extend(["--spec", s(&spec), "--out", s(&restored)]);
    assert_eq!(run(&args).status.code(), Some(1));
}

#[test]
fn manifest_generate_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let bg = dir.path().join("bg");
    std::fs::create_dir(&bg).unwrap();
    for i in 0..5 {
        write_scene(&bg.join(format!("b{i}.png")), 40, 32);
    }
    let out = dir.path().join("data");
    let o = run(&[
        "manifest", "generate", "--backgrounds", s(&bg), "--out", s(&out), "--seed", "3", "--frames", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = out.join("manifest.json");
    let o = run(&["manifest", "validate", s(&m)]);
    assert!(o.status.success(), "{}", stderr(&o));

    std::fs::remove_file(out.join("scenes/0000_b0/frame_02.png")).unwrap();
    let o = run(&["manifest", "validate", s(&m)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("frame_02.png"));
}

#[test]
fn composite_writes_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.png");
    write_scene(&clean, 48, 40);
    let bdir = dir.path().join("burst");
    let o = run(&[
        "burst", "--in", s(&clean), "--seed", "1", "--frames", "2", "--mode", "half", "--frow", "3000", "--out-dir",
        s(&bdir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fg = dir.path().join("fg.png");
    write_scene(&fg, 10, 8);
    let alpha = dir.path().join("alpha.png");
    image::GrayImage::from_pixel(8, 10, image::Luma([255])).save(&alpha).unwrap();
    let clip = dir.path().join("clip.json");
    std::fs::write(
        &clip,
        r#"{"frames": [{"frame": "fg.png", "alpha": "alpha.png"}, {"frame": "fg.png", "alpha": "alpha.png"}],
            "placement": {"scale": 1.0, "offset": [4, 6]}}"#,
    )
    .unwrap();
    let out = dir.path().join("comp");
    let o = run(&[
        "composite", "--bg-dir", s(&bdir), "--clean", s(&clean), "--clip", s(&clip), "--frames", "2", "--out-dir",
        s(&out), "--flicker-on-fg",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["frame_00.png", "frame_01.png", "clean_00.png", "clean_01.png", "composite.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
}
