use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stereodc::image::write_image;
use stereodc_bench::synth::{generate_pair, SceneParams};

fn stereodc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereodc")).args(args).env_remove("STEREODC_JOBS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
}

fn write_scene(dir: &Path, name: &str, seed: u64, w: usize, h: usize, color: bool) {
    let mut p = SceneParams::new(w, h, color);
    p.max_disparity = 8.0;
    let s = generate_pair(seed, &p);
    let ext = if color { "ppm" } else { "pgm" };
    write_image(&s.left, dir.join(format!("{name}_left.{ext}"))).unwrap();
    write_image(&s.right, dir.join(format!("{name}_right.{ext}"))).unwrap();
}

fn p(dir: &Path, f: &str) -> String {
    dir.join(f).to_string_lossy().into_owned()
}

#[test]
fn encode_decode_psnr_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scene(d, "a", 1, 64, 48, true);
    let out = stereodc(&[
        "encode",
        &p(d, "a_left.ppm"),
        &p(d, "a_right.ppm"),
        &p(d, "a.dsc"),
        "--lambda",
        "0.01",
        "--max-disp",
        "16",
        "--dump-disparity",
        &p(d, "a.dmap"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout(&out);
    assert!(fs::metadata(d.join("a.dsc")).unwrap().len() > 0);
    assert!(fs::read(d.join("a.dmap")).unwrap().starts_with(b"DMAP"));
    let bytes: usize = ["bytes_right", "bytes_disparity", "bytes_left"]
        .iter()
        .map(|k| field(&summary, k).parse::<usize>().unwrap())
        .sum();
    assert_eq!(bytes + 36, fs::metadata(d.join("a.dsc")).unwrap().len() as usize);

    let out = stereodc(&["decode", &p(d, "a.dsc"), &p(d, "l.ppm"), &p(d, "r.ppm")]);
    assert!(out.status.success());
    let psnr_l = stdout(&stereodc(&["psnr", &p(d, "a_left.ppm"), &p(d, "l.ppm")]));
    let psnr_r = stdout(&stereodc(&["psnr", &p(d, "a_right.ppm"), &p(d, "r.ppm")]));
    assert_eq!(psnr_l.trim(), field(&summary, "psnr_l"));
    assert_eq!(psnr_r.trim(), field(&summary, "psnr_r"));
    let ms = stdout(&stereodc(&["msssim", &p(d, "a_left.ppm"), &p(d, "a_left.ppm")]));
    assert_eq!(ms.trim(), "1");
}

#[test]
fn ablation_flags_select_cases() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_scene(d, "g", 2, 48, 32, false);
    for (flag, bytes_disp_zero) in
        [("--no-disparity", true), ("--no-prior", false), ("--no-align", false), ("--no-prn", false)]
    {
        let out = stereodc(&[
            "encode",
            &p(d, "g_left.pgm"),
            &p(d, "g_right.pgm"),
            &p(d, "g.dsc"),
            "--qp-r",
            "8",
            "--qp-l",
            "12",
            "--max-disp",
            "8",
            flag,
        ]);
        assert!(out.status.success(), "{flag}: {}", String::from_utf8_lossy(&out.stderr));
        let s = stdout(&out);
        assert_eq!(field(&s, "bytes_disparity") == "0", bytes_disp_zero, "{flag}");
        assert_eq!(field(&s, "qp_r"), "8");
        assert_eq!(field(&s, "qp_l"), "12");
        let out = stereodc(&["decode", &p(d, "g.dsc"), &p(d, "l.pgm"), &p(d, "r.pgm")]);
        assert!(out.status.success());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let check = |args: &[&str], code: i32| {
        let out = stereodc(args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        if code != 0 {
            let err = String::from_utf8_lossy(&out.stderr);
            assert!(err.lines().any(|l| l.starts_with("error:")), "{err}");
        }
    };
    check(&["--help"], 0);
    check(&[], 1);
    check(&["frobnicate"], 1);
    check(&["psnr", "--bogus", "a", "b"], 1);
    check(&["psnr", &p(d, "missing.pgm"), &p(d, "missing2.pgm")], 1);
    check(&["encode", "l", "r", "o", "--lambda", "0.1", "--qp-r", "4"], 1);

    fs::write(d.join("junk.dsc"), b"not a stream").unwrap();
    check(&["decode", &p(d, "junk.dsc"), &p(d, "l.pgm"), &p(d, "r.pgm")], 2);
    fs::write(d.join("bad.pgm"), b"P5\n2 2\n255\n").unwrap();
    check(&["psnr", &p(d, "bad.pgm"), &p(d, "bad.pgm")], 2);
    write_scene(d, "x", 3, 40, 24, false);
    write_scene(d, "y", 4, 48, 24, false);
    check(&["psnr", &p(d, "x_left.pgm"), &p(d, "y_left.pgm")], 2);
    check(&["encode", &p(d, "x_left.pgm"), &p(d, "x_right.pgm"), &p(d, "o.dsc"), "--qp-l=-3"], 2);
}

#[test]
fn bd_reads_curve_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let anchor = "lambda,bpp,psnr\n0.001,0.1,30\n0.002,0.2,32\n0.005,0.4,34\n0.01,0.8,36\n";
    let test = "bpp,psnr\n0.2,30\n0.4,32\n0.8,34\n1.6,36\n";
    fs::write(d.join("a.csv"), anchor).unwrap();
    fs::write(d.join("t.csv"), test).unwrap();
    let out = stereodc(&["bd", &p(d, "a.csv"), &p(d, "t.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout(&out);
    assert_eq!(field(&s, "bd_rate"), "100");
    let out = stereodc(&["bd", &p(d, "a.csv"), &p(d, "a.csv")]);
    assert_eq!(stdout(&out).trim(), "bd_rate=0 bd_psnr=0");
}

#[test]
fn sweep_summary_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    fs::create_dir(&data).unwrap();
    write_scene(&data, "p1", 5, 48, 32, false);
    write_scene(&data, "p2", 6, 48, 32, false);
    let out_dir = p(d, "out");
    let out = stereodc(&[
        "sweep",
        &data.to_string_lossy(),
        "--out",
        &out_dir,
        "--lambdas",
        "0.001,0.002,0.005,0.01,0.02",
        "--ablation",
        "--max-disp",
        "8",
        "--qp-grid",
        "6,12,24,48",
        "--jobs",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = stdout(&out);
    for f in ["rd_curve.csv", "allocation.csv", "ablation.csv", "per_pair.csv", "ablation_bd.csv"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }
    let alloc = fs::read_to_string(d.join("out/allocation.csv")).unwrap();
    let full_lines: Vec<&str> = s.lines().filter(|l| l.starts_with("full ")).collect();
    assert_eq!(full_lines.len(), 5);
    for (line, row) in full_lines.iter().zip(alloc.lines().skip(1)) {
        let printed: Vec<&str> = line.split_whitespace().skip(1).map(|kv| kv.split_once('=').unwrap().1).collect();
        assert_eq!(printed.join(","), row);
    }
    let abd = fs::read_to_string(d.join("out/ablation_bd.csv")).unwrap();
    for line in s.lines().filter(|l| l.contains("bd_rate=")) {
        let case = line.split_whitespace().next().unwrap();
        let row = abd.lines().find(|r| r.starts_with(&format!("{case},"))).unwrap();
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(field(line, "bd_rate"), f[2]);
        assert_eq!(field(line, "bd_psnr"), f[3]);
    }
    assert!(s.starts_with("pairs=2 skipped=0"));
}
