use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clif_vqa::config::RunConfig;
use clif_vqa::dataset_io::{load_manifest, read_cache, write_frame_png, DatasetManifest};
use clif_vqa::prompt_bank::default_bank;
use clif_vqa::synthetic::{write_synthetic_dataset, SyntheticSpec};
use clif_vqa::Error;
use clif_vqa_cli::*;
use ndarray::Array3;

fn small_spec(clips: usize) -> SyntheticSpec {
    SyntheticSpec { clips, frames: 4, ..SyntheticSpec::default() }
}

fn quick_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 3;
    cfg
}

fn dataset(dir: &Path, clips: usize) -> DatasetManifest {
    load_manifest(write_synthetic_dataset(&dir.join("data"), &small_spec(clips)).unwrap()).unwrap()
}

fn cache_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.into_iter().map(|p| (p.clone(), fs::read(&p).unwrap())).collect()
}

#[test]
fn extract_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path(), 3);
    let ctx = Context::new(quick_config()).unwrap();
    let cache = tmp.path().join("cache");

    let first = cmd_extract(&ctx, &manifest, &cache).unwrap();
    assert_eq!((first.computed, first.skipped), (3, 0));
    let before = cache_bytes(&cache);
    assert_eq!(before.len(), 6);

    let second = cmd_extract(&ctx, &manifest, &cache).unwrap();
    assert_eq!((second.computed, second.skipped), (0, 3));
    assert_eq!(cache_bytes(&cache), before);
}

#[test]
fn semantic_maps_have_one_column_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("video_id,path,mos\n");
    for (i, t) in [2usize, 3, 5].into_iter().enumerate() {
        let dir = tmp.path().join(format!("v{i}"));
        fs::create_dir(&dir).unwrap();
        for f in 0..t {
            let frame = Array3::from_elem((240, 320, 3), (i * 10 + f) as f32 / 64.0);
            write_frame_png(&frame, dir.join(format!("{f:03}.png"))).unwrap();
        }
        csv.push_str(&format!("v{i},v{i},{}\n", i + 1));
    }
    fs::write(tmp.path().join("m.csv"), csv).unwrap();
    let manifest = load_manifest(tmp.path().join("m.csv")).unwrap();
    let ctx = Context::new(quick_config()).unwrap();
    let cache = tmp.path().join("cache");
    assert!(cmd_extract(&ctx, &manifest, &cache).unwrap().failed.is_empty());

    for (id, t) in [("v0", 2), ("v1", 3), ("v2", 5)] {
        let c = read_cache(semantic_cache_path(&cache, id)).unwrap();
        assert_eq!(c.shape, [32, t], "{id}");
        let f = read_cache(fragment_cache_path(&cache, id)).unwrap();
        assert_eq!(f.shape, [16, 224, 224, 3]);
    }
}

#[test]
fn changing_prompts_forces_recompute() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path(), 2);
    let prompts = tmp.path().join("prompts.txt");
    fs::write(&prompts, default_bank().to_file_string()).unwrap();
    let mut cfg = quick_config();
    cfg.prompts.path = Some(prompts.clone());
    let cache = tmp.path().join("cache");

    let ctx = Context::new(cfg.clone()).unwrap();
    assert_eq!(cmd_extract(&ctx, &manifest, &cache).unwrap().computed, 2);
    assert_eq!(cmd_extract(&ctx, &manifest, &cache).unwrap().computed, 0);
    let frag_before = fs::read(fragment_cache_path(&cache, "clip00")).unwrap();

    fs::write(&prompts, default_bank().to_file_string().replace("bright", "dazzling")).unwrap();
    let ctx = Context::new(cfg).unwrap();
    assert_eq!(cmd_extract(&ctx, &manifest, &cache).unwrap().computed, 2);
    let c = read_cache(semantic_cache_path(&cache, "clip00")).unwrap();
    assert_eq!(c.meta.prompt_digest, ctx.bank.digest());
    // fragments do not depend on prompts
    assert_eq!(fs::read(fragment_cache_path(&cache, "clip00")).unwrap(), frag_before);
}

#[test]
fn train_eval_predict_from_cold_caches() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path(), 10);
    let ctx = Context::new(quick_config()).unwrap();
    let cache = tmp.path().join("cache");
    let out = tmp.path().join("run");

    let trained = cmd_train(&ctx, &manifest, &cache, &out).unwrap();
    assert_eq!(trained.log.len(), 3);
    assert!(semantic_cache_path(&cache, "clip09").exists(), "caches are built on demand");
    let log = fs::read_to_string(&trained.log_path).unwrap();
    assert!(log.starts_with("epoch,total,mon,lin,train_srocc\n"));
    assert_eq!(log.lines().count(), 4);

    let again = cmd_train(&ctx, &manifest, &cache, &tmp.path().join("run2")).unwrap();
    assert_eq!(again.checkpoint.digest, trained.checkpoint.digest);
    assert_eq!(fs::read(&again.log_path).unwrap(), fs::read(&trained.log_path).unwrap());

    let eval = cmd_eval(&ctx, &manifest, &cache, &trained.checkpoint_dir, &out.join("eval")).unwrap();
    assert_eq!(eval.report.n, 10);
    for f in ["eval_report.json", "eval_report.csv", "predictions.csv"] {
        assert!(out.join("eval").join(f).exists(), "{f}");
    }

    let video = &manifest.entries[0].path;
    let a = cmd_predict(&ctx, &trained.checkpoint_dir, video).unwrap();
    let b = cmd_predict(&ctx, &trained.checkpoint_dir, video).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(a.is_finite());
    let from_eval = eval.predictions.iter().find(|(id, _, _)| id == "clip00").unwrap().2;
    assert!((a - from_eval).abs() < 1e-9, "predict {a} vs eval {from_eval}");
}

#[test]
fn checkpoint_refuses_another_prompt_bank() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path(), 4);
    let mut cfg = quick_config();
    cfg.train.epochs = 1;
    let ctx = Context::new(cfg.clone()).unwrap();
    let trained = cmd_train(&ctx, &manifest, &tmp.path().join("cache"), &tmp.path().join("run")).unwrap();

    cfg.prompts.template = "a <d> video".into();
    let other = Context::new(cfg).unwrap();
    let err = cmd_predict(&other, &trained.checkpoint_dir, &manifest.entries[0].path).unwrap_err();
    assert!(matches!(err, Error::DigestMismatch { .. }), "{err}");
}

#[test]
fn split_planning_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path(), 10);
    let mut cfg = quick_config();
    cfg.eval.train_frac = 1.0;
    let ctx = Context::new(cfg).unwrap();
    let err = cmd_splits(&ctx, &manifest, &tmp.path().join("cache"), &tmp.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("empty test split"), "{err}");

    let small = manifest.select(&[0, 1, 2, 3, 4]);
    let ctx = Context::new(quick_config()).unwrap();
    let err = cmd_splits(&ctx, &small, &tmp.path().join("cache"), &tmp.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("too small"), "{err}");
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_clif-vqa")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));

    let missing = cli(&["extract", "--manifest", &format!("{dir}/nope.csv"), "--cache", dir]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    let bad_key = cli(&["--set", "train.nope=1", "synth", "--out", dir]);
    assert_eq!(bad_key.status.code(), Some(1));

    let frames = tmp.path().join("clip");
    fs::create_dir(&frames).unwrap();
    write_frame_png(&Array3::from_elem((240, 320, 3), 0.5), frames.join("0.png")).unwrap();
    let no_ckpt = cli(&["predict", "--checkpoint", &format!("{dir}/nothing"), frames.to_str().unwrap()]);
    assert_eq!(no_ckpt.status.code(), Some(2));
}

#[test]
fn probe_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = dataset(tmp.path(), 10);
    let mut cfg = quick_config();
    cfg.eval.splits = 2;
    let ctx = Context::new(cfg).unwrap();

    let videos: Vec<PathBuf> = manifest.entries[..2].iter().map(|e| e.path.clone()).collect();
    let csv_path = tmp.path().join("curve.csv");
    let curves = cmd_probe_curves(&ctx, &videos, &csv_path).unwrap();
    assert_eq!(curves.len(), 2);
    assert!(curves.iter().all(|c| c.responses.len() == 5 && c.description == "bright"));
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("video,description,kind,level,response\n"), "{csv}");
    assert_eq!(csv.lines().count(), 1 + 10);

    let rows = cmd_probe_compare(&ctx, &manifest, &tmp.path().join("cmp")).unwrap();
    let banks: Vec<&str> = rows.iter().map(|r| r.bank.as_str()).collect();
    assert_eq!(banks, ["all", "objective", "subjective"]);
    assert!(tmp.path().join("cmp/comparison.csv").exists());
}
