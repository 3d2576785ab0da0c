mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use jpgnet_core::data::{load_image, save_image, Mask};
use jpgnet_core::nn::{PfuNet, ToyGenerator, UafNet};
use jpgnet_core::train::{load_checkpoint, save_checkpoint, Checkpoint, NetKind, TrainConfig};

fn jpgnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jpgnet")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = jpgnet(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 12] = [
    "--image-size", "16", "--base-width", "2", "--batch-size", "2", "--stage1-iters", "2", "--gen-iters", "2", "--stage2-iters", "2",
];

fn make_data(dir: &Path, n: &str) -> PathBuf {
    let data = dir.join("data");
    ok(&["make-data", "--n", n, "--size", "16", "--out", s(&data), "--seed", "3"]);
    data
}

fn train(data: &Path, ckpt: &Path, stage: &str) {
    let mut args = vec!["train", "--stage", stage, "--data", s(data), "--out", s(ckpt)];
    args.extend(TINY);
    ok(&args);
}

#[test]
fn help_snapshots() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    for sub in ["", "make-data", "train", "infer", "eval", "viz-uncertainty"] {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let text = ok(&args);
        let name = dir.join(format!("help_{}.txt", if sub.is_empty() { "main" } else { sub }));
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&name, &text).unwrap();
        }
        assert_eq!(text, fs::read_to_string(&name).unwrap(), "{sub} --help changed");
        if !sub.is_empty() {
            // every value-taking flag except the optional ones shows its default
            for line in text.lines().filter(|l| l.trim_start().starts_with("--") && l.contains('<')) {
                let flag = line.split_whitespace().next().unwrap();
                if ["--config", "--diff-dir"].contains(&flag) {
                    continue;
                }
                let idx = text.find(line).unwrap();
                let rest = &text[idx..];
                let block_end = rest[1..].find("\n      --").map_or(rest.len(), |i| i + 1);
                assert!(rest[..block_end].contains("[default:"), "{sub} {flag} has no default");
            }
        }
    }
}

#[test]
fn make_data_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (make_data(a.path(), "3"), make_data(b.path(), "3"));
    let manifest = fs::read_to_string(da.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    for name in manifest.lines().chain(["manifest.txt"]) {
        assert_eq!(fs::read(da.join(name)).unwrap(), fs::read(db.join(name)).unwrap());
    }
    let out = jpgnet(&["make-data", "--n", "0", "--out", s(&a.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);
}

#[test]
fn uaf_needs_its_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "2");
    let ckpt = dir.path().join("ckpt");
    let out = jpgnet(&["train", "--stage", "uaf", "--data", s(&data), "--out", s(&ckpt), "--image-size", "16"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pfu.ckpt"));
}

#[test]
fn zero_iterations_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "2");
    let ckpt = dir.path().join("ckpt");
    ok(&["train", "--stage", "pfu", "--data", s(&data), "--out", s(&ckpt), "--image-size", "16", "--base-width", "2", "--stage1-iters", "0"]);
    let ck = load_checkpoint(ckpt.join("pfu.ckpt")).unwrap();
    let cfg = ck.meta.train.clone().unwrap();
    let mut init = rng(cfg.seed);
    init.set_stream(0);
    let fresh = PfuNet::new(cfg.pfu_config(3), 3, &mut init).unwrap();
    assert_eq!(ck.to_unet().unwrap(), fresh.net);
    assert_eq!(fs::read_to_string(ckpt.join("pfu_loss.csv")).unwrap(), "iteration,loss\n");
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "3");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&data, &a, "pfu");
    train(&data, &b, "pfu");
    assert_eq!(fs::read(a.join("pfu.ckpt")).unwrap(), fs::read(b.join("pfu.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("pfu_loss.csv")).unwrap(), fs::read(b.join("pfu_loss.csv")).unwrap());
}

#[test]
fn full_pipeline_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_data(dir.path(), "3");
    let ckpt = dir.path().join("ckpt");
    for stage in ["pfu", "gen", "uaf"] {
        train(&data, &ckpt, stage);
        assert!(ckpt.join(format!("{stage}.ckpt")).exists());
        assert_eq!(fs::read_to_string(ckpt.join(format!("{stage}_loss.csv"))).unwrap().lines().count(), 3);
    }

    let img = data.join("img_00000.png");
    let mask_path = dir.path().join("mask.png");
    let mut mask = Mask::zeros(16, 16);
    (4..9).for_each(|y| (3..12).for_each(|x| mask.set(y, x, true)));
    save_image(&mask_path, &mask.to_tensor()).unwrap();

    let out = dir.path().join("out").join("res.png");
    fs::create_dir_all(out.parent().unwrap()).unwrap();
    ok(&["infer", "--img", s(&img), "--mask", s(&mask_path), "--ckpt-dir", s(&ckpt), "--out", s(&out)]);
    assert_eq!(fs::read_dir(out.parent().unwrap()).unwrap().count(), 1);
    ok(&[
        "infer", "--img", s(&img), "--mask", s(&mask_path), "--ckpt-dir", s(&ckpt), "--out", s(&out), "--emit-intermediates",
        "--pixels", "5,5;0,0",
    ]);
    assert_eq!(fs::read_dir(out.parent().unwrap()).unwrap().count(), 5);
    assert_eq!(load_image(out.parent().unwrap().join("res_uncertainty.png")).unwrap().dims(), &[1, 1, 16, 16]);

    let report = dir.path().join("eval.csv");
    let table = ok(&["eval", "--data", s(&data), "--ckpt-dir", s(&ckpt), "--report", s(&report), "--buckets", "B20"]);
    let csv = fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().skip(1).all(|l| l.contains(",B20,")));
    for m in ["input", "filtering", "naive_fusion", "smart_fusion", "generator"] {
        assert!(table.contains(m));
    }
    let again = dir.path().join("eval2.csv");
    ok(&["eval", "--data", s(&data), "--ckpt-dir", s(&ckpt), "--report", s(&again), "--buckets", "B20"]);
    assert_eq!(csv, fs::read_to_string(&again).unwrap());

    let viz = dir.path().join("viz");
    let pfu = ckpt.join("pfu.ckpt");
    ok(&["viz-uncertainty", "--img", s(&img), "--mask", s(&mask_path), "--ckpt", s(&pfu), "--out", s(&viz), "--reducer", "avg,max,l1,l2"]);
    assert_eq!(fs::read_dir(&viz).unwrap().count(), 4);
    let viz_default = dir.path().join("viz1");
    ok(&["viz-uncertainty", "--img", s(&img), "--mask", s(&mask_path), "--ckpt", s(&pfu), "--out", s(&viz_default)]);
    assert!(viz_default.join("uncertainty_avg.png").exists());
    let bad = jpgnet(&["viz-uncertainty", "--img", s(&img), "--mask", s(&mask_path), "--ckpt", s(&pfu), "--reducer", "median"]);
    assert_eq!(code(&bad), 2);

    let big = dir.path().join("big.png");
    save_image(&big, &uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut rng(0))).unwrap();
    let big_mask = dir.path().join("big_mask.png");
    save_image(&big_mask, &Mask::zeros(32, 32).to_tensor()).unwrap();
    let out = jpgnet(&["infer", "--img", s(&big), "--mask", s(&big_mask), "--ckpt-dir", s(&ckpt), "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn identity_behaving_filter_preserves_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    fs::create_dir_all(&ckpt).unwrap();
    let cfg = TrainConfig { image_size: 16, base_width: 2, ..TrainConfig::default() };
    let mut pfu = PfuNet::new(cfg.pfu_config(3), 3, &mut rng(0)).unwrap();
    let mut uaf = UafNet::new(cfg.uaf_config(3), 3, &mut rng(1)).unwrap();
    let gen = ToyGenerator::new(cfg.gen_config(3), &mut rng(2)).unwrap();
    // constant head: identity kernels, and fusion weights selecting the filtered image
    for net in [&mut pfu.net, &mut uaf.net] {
        net.zero_head();
        let bias = net.head_param_names().1.to_string();
        let idx = net.params().find(&bias).unwrap();
        for c in 0..3 {
            net.params_mut().get_mut(idx).data_mut()[c * 9 + 4] = 1.0;
        }
    }
    let r = rng(3);
    save_checkpoint(ckpt.join("pfu.ckpt"), &Checkpoint::from_net(NetKind::Pfu, &pfu.net, 3, None, &r)).unwrap();
    save_checkpoint(ckpt.join("gen.ckpt"), &Checkpoint::from_net(NetKind::Gen, &gen.net, 3, None, &r)).unwrap();
    save_checkpoint(ckpt.join("uaf.ckpt"), &Checkpoint::from_net(NetKind::Uaf, &uaf.net, 3, None, &r)).unwrap();

    let img = dir.path().join("img.png");
    save_image(&img, &uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut rng(4))).unwrap();
    let mask = dir.path().join("mask.png");
    save_image(&mask, &Mask::zeros(16, 16).to_tensor()).unwrap();
    let out = dir.path().join("out.png");
    ok(&["infer", "--img", s(&img), "--mask", s(&mask), "--ckpt-dir", s(&ckpt), "--out", s(&out)]);
    assert_eq!(load_image(&out).unwrap(), load_image(&img).unwrap());
}

#[test]
fn json_config_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("d");
    fs::write(&cfg, format!(r#"{{"n": 2, "size": 16, "out": "{}"}}"#, s(&out))).unwrap();
    ok(&["make-data", "--config", s(&cfg), "--n", "4"]);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert_eq!(load_image(out.join("img_00000.png")).unwrap().dims(), &[1, 3, 16, 16]);

    fs::write(&cfg, r#"{"n": 2, "sise": 16}"#).unwrap();
    assert_eq!(code(&jpgnet(&["make-data", "--config", s(&cfg), "--out", s(&out)])), 4);
    fs::write(&cfg, "not json").unwrap();
    assert_eq!(code(&jpgnet(&["make-data", "--config", s(&cfg), "--out", s(&out)])), 4);
    assert_eq!(code(&jpgnet(&["make-data", "--config", s(&dir.path().join("none.json"))])), 3);
}

#[test]
fn eval_on_an_empty_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("manifest.txt"), "\n").unwrap();
    let out = jpgnet(&["eval", "--data", s(dir.path()), "--ckpt-dir", s(&dir.path().join("ckpt"))]);
    assert_eq!(code(&out), 4);
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);
}
