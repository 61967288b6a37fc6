use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_holocodec"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).env("HOLOCODEC_CACHE", dir.join("cache")).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

const SMALL: &str = "seed = 3\n[data]\nsynthetic_count = 4\n[schedule]\nstage1_epochs = 1\nstage2_epochs = 1\n";

#[test]
fn full_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.toml"), SMALL).unwrap();
    let cfg = ["--config", "run.toml"];
    let with = |extra: &[&str]| -> Vec<String> { cfg.iter().chain(extra).map(|s| s.to_string()).collect() };
    let call = |extra: &[&str]| {
        let a = with(extra);
        ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let t = call(&["train"]);
    assert_eq!(t["epochs"], 1);
    let a = call(&["adapt", "--sizes", "16,32,64"]);
    assert_eq!(a["sizes"], serde_json::json!([16, 32, 64]));
    let e = call(&["export-books"]);
    assert_eq!(e["files"].as_array().unwrap().len(), 8);
    assert!(d.join("books/1/bottom/16.rvqc").is_file());

    let img = std::fs::read_dir(d.join("cache")).unwrap().next().unwrap().unwrap().path().join("0000.png");
    std::fs::copy(img, d.join("img.png")).unwrap();
    call(&["compress", "--input", "img.png", "--size", "32", "--out", "a.ravq"]);
    call(&["compress", "--input", "img.png", "--size", "32", "--out", "b.ravq"]);
    assert_eq!(std::fs::read(d.join("a.ravq")).unwrap(), std::fs::read(d.join("b.ravq")).unwrap());
    call(&["decompress", "--input", "a.ravq", "--out", "p1.png", "--raw", "p1.f32"]);
    call(&["decompress", "--input", "a.ravq", "--out", "p2.png", "--raw", "p2.f32"]);
    let p1 = std::fs::read(d.join("p1.f32")).unwrap();
    assert_eq!(p1.len(), 64 * 128 * 4);
    assert_eq!(p1, std::fs::read(d.join("p2.f32")).unwrap());

    let q = call(&["evaluate", "--input", "a.ravq", "--reference", "img.png"]);
    assert_eq!(q["K"], 32);
    assert!(q["psnr"].as_f64().unwrap().is_finite());

    let s = call(&["send", "img.png", "img.png", "--size", "16", "--out", "wire.bin"]);
    let r = call(&["recv", "--input", "wire.bin", "--out-dir", "rx", "--raw"]);
    assert_eq!(r["received"], 2);
    assert_eq!(r["bytes"], s["bytes"]);
    assert!(d.join("rx/frame_0001.png").is_file());

    call(&["rd-curve", "--count", "2", "--out", "rd.csv"]);
    let csv = std::fs::read_to_string(d.join("rd.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "image,channel,K,bpp_fixed,bpp_entropy,psnr,ssim,msssim");
    // 2 images x 4 sizes + 4 mean rows
    assert_eq!(lines.count(), 12);
    let bd = call(&["rd-curve", "--count", "2", "--out", "rd2.csv", "--anchor", "rd.csv"]);
    assert!(bd["bd_psnr_db"].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn retrieval_and_propagation_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let img = image::ImageBuffer::from_fn(32, 32, |x, y| image::Luma([((x * 7 + y * 3) % 256) as u8]));
    img.save(d.join("t.png")).unwrap();
    let gs = ok(d, &["--seed", "1", "gs", "--target", "t.png", "--iterations", "20", "--out", "g.png"]);
    assert!(gs["error_last"].as_f64().unwrap() <= gs["error_first"].as_f64().unwrap());
    let sgd = ok(
        d,
        &["sgd", "--target", "t.png", "--iterations", "20", "--init", "zeros", "--step", "1.0", "--out", "s.png"],
    );
    assert!(sgd["error_last"].as_f64().unwrap() < sgd["error_first"].as_f64().unwrap());
    let p = ok(d, &["propagate", "--input", "t.png", "--out", "p.png", "--distance", "-0.02"]);
    assert_eq!(p["frame"], serde_json::json!([32, 32]));
    assert!(d.join("p.png").is_file() && d.join("g.png").is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let out = run(d, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(error_line(&out)["error"], "usage");

    let out = run(d, &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(d.join("bad.toml"), "[optics]\nfocal_length = 1.0\n").unwrap();
    let out = run(d, &["--config", "bad.toml", "train"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "config");

    std::fs::write(d.join("neg.toml"), "[optics]\npixel_pitch = -1.0\n").unwrap();
    assert_eq!(run(d, &["--config", "neg.toml", "train"]).status.code(), Some(3));

    let out = run(d, &["--strict", "train"]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(d, &["decompress", "--input", "missing.ravq", "--out", "x.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().len() > 0);

    std::fs::write(d.join("junk.ravq"), b"not a stream").unwrap();
    assert_eq!(run(d, &["evaluate", "--input", "junk.ravq", "--reference", "x.png"]).status.code(), Some(1));
}

#[test]
fn help_lists_defaults() {
    for cmd in [
        "propagate", "gs", "sgd", "train", "adapt", "export-books", "compress", "decompress", "send", "recv", "evaluate",
        "rd-curve",
    ] {
        let out = bin().args([cmd, "--help"]).output().unwrap();
        assert!(out.status.success(), "{cmd}");
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in ["--seed", "--config", "--threads", "--strict"] {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
        let usage = text.lines().find(|l| l.starts_with("Usage:")).unwrap().to_string();
        for line in text.lines().map(str::trim_start).filter(|l| l.starts_with("--")) {
            let mut words = line.split_whitespace();
            let name = words.next().unwrap();
            let takes_value = words.next().is_some_and(|w| w.starts_with('<'));
            if takes_value && !usage.contains(&format!("{name} <")) {
                assert!(line.contains("[default"), "{cmd}: {line}");
            }
        }
    }
}
