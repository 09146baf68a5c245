use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfinr::io::{self, ViewFormat};
use lfinr::lightfield::serpentine_order;
use lfinr::pipeline::{RunManifest, RD_CSV_HEADER};

fn lfinr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfinr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = lfinr(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    lfinr(args, cwd).status.code().expect("exit code")
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const QUICK: [&str; 4] = ["--epochs", "6", "--finetune-epochs", "2"];

fn encode_quick(dir: &Path, input: &str, out: &str, extra: &[&str]) {
    let mut args = vec!["-q", "encode", "-i", input, "-o", out];
    args.extend(QUICK);
    args.extend(extra);
    ok(&args, dir);
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let b = fs::read(&p).unwrap();
            (p.file_name().unwrap().into(), b)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_deterministic_and_degenerate_grid_encodes() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "a", "--seed", "4"], d);
    ok(&["synth", "-o", "b", "--seed", "4"], d);
    assert_eq!(files(&d.join("a")), files(&d.join("b")));
    assert_eq!(files(&d.join("a")).len(), 9);
    assert!(!fs::read(d.join("a.manifest.json")).unwrap().is_empty());

    ok(&["synth", "-o", "one", "--rows", "1", "--cols", "1"], d);
    encode_quick(d, "one", "one.lfin", &[]);
    ok(&["decode", "-i", "one.lfin", "-o", "one_dec"], d);
    assert_eq!(files(&d.join("one_dec")).len(), 1);
}

#[test]
fn encode_decode_consistency() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "desk"], d);
    let stdout = {
        let mut args = vec!["encode", "-i", "desk", "-o", "desk.lfin", "--train-log", "log.csv"];
        args.extend(QUICK);
        ok(&args, d)
    };
    assert!(stdout.contains("bpp"));
    let enc = manifest(&d.join("desk.lfin.manifest.json"));
    let bytes = fs::metadata(d.join("desk.lfin")).unwrap().len() as f64;
    assert_eq!(enc.results["bytes"], bytes);
    assert_eq!(enc.results["bpp"], 8.0 * bytes / (9.0 * 24.0 * 32.0));
    assert!(fs::read_to_string(d.join("log.csv")).unwrap().starts_with("epoch,loss,psnr,lr,seconds"));

    ok(
        &["decode", "-i", "desk.lfin", "-o", "dec", "--format", "raw", "--reference", "desk"],
        d,
    );
    let dec = manifest(&d.join("dec.manifest.json"));
    assert_eq!(dec.results["yuv_psnr"], enc.results["yuv_psnr"]);
    assert_eq!(dec.results["y_ssim"], enc.results["y_ssim"]);

    let full = io::load_lightfield(&d.join("dec")).unwrap();
    for c in full.coords() {
        let name = format!("v_{}_{}.lfrw", c.u, c.v);
        ok(
            &[
                "decode-view", "-i", "desk.lfin", "--u", &c.u.to_string(), "--v", &c.v.to_string(),
                "-o", &name, "--format", "raw",
            ],
            d,
        );
        assert_eq!(
            fs::read(d.join(&name)).unwrap(),
            io::encode_view(full.view(c), ViewFormat::Raw),
            "view {c}"
        );
    }

    ok(&["decode", "-i", "desk.lfin", "-o", "plain"], d);
    assert_eq!(files(&d.join("plain")).len(), 9);
}

#[test]
fn decode_view_range_and_fractional() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "desk"], d);
    encode_quick(d, "desk", "desk.lfin", &[]);
    assert_eq!(code(&["decode-view", "-i", "desk.lfin", "--u", "3", "--v", "0", "-o", "x.ppm"], d), 2);
    assert!(!d.join("x.ppm").exists());
    assert_eq!(code(&["decode-view", "-i", "desk.lfin", "--u", "0.5", "--v", "0.5", "-o", "x.ppm"], d), 2);
    let out = ok(
        &[
            "decode-view", "-i", "desk.lfin", "--u", "0.5", "--v", "0.5", "-o", "x.ppm",
            "--experimental-fractional",
        ],
        d,
    );
    assert!(out.contains("experimental"));
    assert!(io::read_view(&d.join("x.ppm")).is_ok());
}

#[test]
fn failures_leave_no_outputs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    assert_eq!(code(&["encode", "-i", "missing", "-o", "y.lfin"], d), 3);
    assert!(!d.join("y.lfin").exists());

    ok(&["synth", "-o", "desk"], d);
    encode_quick(d, "desk", "desk.lfin", &[]);
    let good = fs::read(d.join("desk.lfin")).unwrap();
    for pos in [0, 4, 30, good.len() / 2, good.len() - 1] {
        let mut bad = good.clone();
        bad[pos] ^= 0x5a;
        fs::write(d.join("bad.lfin"), &bad).unwrap();
        assert_eq!(code(&["decode", "-i", "bad.lfin", "-o", "out"], d), 5, "byte {pos}");
        assert!(!d.join("out").exists());
        assert_eq!(code(&["decode-view", "-i", "bad.lfin", "--u", "0", "--v", "0", "-o", "v.ppm"], d), 5);
        assert!(!d.join("v.ppm").exists());
    }
    fs::write(d.join("short.lfin"), &good[..good.len() / 3]).unwrap();
    assert_eq!(code(&["decode", "-i", "short.lfin", "-o", "out"], d), 5);

    assert_eq!(code(&["encode", "-i", "desk", "-o", "z.lfin", "--alpha", "2"], d), 2);
    assert_eq!(code(&["encode", "-i", "desk", "-o", "z.lfin", "--quant-bits", "0"], d), 2);
    assert_eq!(code(&["encode", "-i", "desk", "-o", "z.lfin", "--preset", "huge"], d), 2);
    assert!(!d.join("z.lfin").exists());
    assert_eq!(code(&["frobnicate"], d), 2);
    let leftovers: Vec<_> = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn zero_prune_ratio_still_produces_a_stream() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "desk"], d);
    encode_quick(d, "desk", "p0.lfin", &["--prune-ratio", "0"]);
    let m = manifest(&d.join("p0.lfin.manifest.json"));
    assert!(!m.timings.contains_key("finetune"));
    assert_eq!(m.results["pruned_weights"], 0.0);
    ok(&["decode", "-i", "p0.lfin", "-o", "dec"], d);
}

#[test]
fn runs_are_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "desk"], d);
    encode_quick(d, "desk", "a.lfin", &["--seed", "3"]);
    fs::rename(d.join("a.lfin"), d.join("first.lfin")).unwrap();
    fs::rename(d.join("a.lfin.manifest.json"), d.join("first.json")).unwrap();
    encode_quick(d, "desk", "a.lfin", &["--seed", "3"]);
    assert_eq!(fs::read(d.join("first.lfin")).unwrap(), fs::read(d.join("a.lfin")).unwrap());
    let (m1, m2) = (manifest(&d.join("first.json")), manifest(&d.join("a.lfin.manifest.json")));
    assert!(m1.same_run(&m2));
    assert_eq!(m1.seed, Some(3));
}

#[test]
fn pvs_export_round_trips() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "desk", "--format", "raw"], d);
    let out = ok(&["export-pvs", "-i", "desk", "-o", "desk.pvs"], d);
    assert!(out.starts_with("9 frames"));
    let side: io::PvsSidecar =
        serde_json::from_slice(&fs::read(d.join("desk.pvs.json")).unwrap()).unwrap();
    let expected: Vec<[usize; 2]> = serpentine_order(3, 3).iter().map(|c| [c.u, c.v]).collect();
    assert_eq!(side.order, expected);
    let original = io::load_lightfield(&d.join("desk")).unwrap();
    assert_eq!(io::import_pvs(&d.join("desk.pvs")).unwrap(), original);
}

#[test]
fn rd_sweep_writes_one_row_per_preset() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(&["synth", "-o", "desk"], d);
    let mut args = vec!["-q", "rd-sweep", "-i", "desk", "-o", "rd.csv", "--presets", "tiny,small"];
    args.extend(QUICK);
    ok(&args, d);
    let csv = fs::read_to_string(d.join("rd.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], RD_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("tiny,") && lines[2].starts_with("small,"));
    let bpp: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(bpp[0] < bpp[1]);

    let mut args = vec!["-q", "rd-sweep", "-i", "desk", "-o", "rd2.csv", "--presets", "tiny", "--prune-ratio", "0", "--quant-bits", "16"];
    args.extend(QUICK);
    ok(&args, d);
    let csv = fs::read_to_string(d.join("rd2.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').skip(1).map(|x| x.parse().unwrap()).collect();
    assert!(row[3].abs() < 0.01, "psnr drop {}", row[3]);
    assert!(row[4].abs() < 1e-4, "ssim drop {}", row[4]);
}
