use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use refsr::io::save_png;
use refsr::manifest::Manifest;
use refsr_core::data::procedural_texture;
use serde_json::Value;

fn refsr(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refsr")).current_dir(cwd).args(args).env_remove("REFSR_DATA_ROOT").output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "command failed: {}", stderr(&o));
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn png(path: &Path, seed: u64, h: usize, w: usize) {
    save_png(path, &procedural_texture(seed, h, w)).unwrap();
}

fn report(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const TINY_MATCHER: &str = "encoder_channels = [4, 4, 4]\ndescriptor_dim = 4\nsteps = 1\nbatch_size = 1\ncrop = 32\n";

fn tiny_pairs(dir: &Path) -> PathBuf {
    write(&dir.join("matcher.toml"), TINY_MATCHER);
    ok(refsr(dir, &["make-pairs", "--out", "pairs", "--count", "2", "--config", "matcher.toml", "--seed", "3"]));
    dir.join("pairs/manifest.jsonl")
}

#[test]
fn help_documents_every_subcommand_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let top = String::from_utf8(ok(refsr(dir.path(), &["--help"])).stdout).unwrap();
    for sub in ["make-pairs", "make-benchmark", "assemble-dataset", "train-teacher", "train-student", "train-sr", "infer-sr", "train-vsr", "infer-vsr", "eval"] {
        assert!(top.contains(sub), "{sub} missing from --help");
        let help = String::from_utf8(ok(refsr(dir.path(), &[sub, "--help"])).stdout).unwrap();
        let lines: Vec<&str> = help.lines().collect();
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| l.trim_start().starts_with("--")) {
            let flag = line.split_whitespace().next().unwrap();
            let inline = line.split_whitespace().skip(1).any(|t| !t.starts_with('<'));
            let next = lines.get(i + 1).map_or("", |l| l.trim());
            assert!(inline || (!next.is_empty() && !next.starts_with('-')), "{sub} {flag} lacks a description");
        }
    }
    assert!(top.contains("REFSR_DATA_ROOT"));
}

#[test]
fn student_stage_without_teacher_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pairs(dir.path());
    let o = refsr(dir.path(), &["train-student", "--config", "matcher.toml", "--data", data.to_str().unwrap(), "--out", "s.ckpt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("teacher checkpoint"), "{}", stderr(&o));
    assert!(!dir.path().join("s.ckpt").exists());
}

#[test]
fn sr_stages_without_student_name_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pairs(dir.path());
    let data = data.to_str().unwrap();
    for stage in ["train-sr", "train-vsr"] {
        let o = refsr(dir.path(), &[stage, "--data", data, "--out", "x.ckpt"]);
        assert_eq!(code(&o), 2, "{stage}: {}", stderr(&o));
        assert!(stderr(&o).contains("student checkpoint"), "{stage}: {}", stderr(&o));
        let o = refsr(dir.path(), &[stage, "--data", data, "--out", "x.ckpt", "--matcher", "nope.ckpt"]);
        assert_eq!(code(&o), 2, "{stage}: {}", stderr(&o));
        assert!(stderr(&o).contains("nope.ckpt"), "{stage}: {}", stderr(&o));
    }
    assert!(!dir.path().join("x.ckpt").exists());
}

#[test]
fn no_contrastive_preset_trains_without_a_student() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_pairs(dir.path());
    write(
        &dir.path().join("sr.toml"),
        "channels = 4\ntrunk_blocks = 1\nlevel_blocks = [1, 1, 1]\nref_channels = [4, 4, 4]\ncritic_channels = 4\nsteps = 1\nrec_only_iters = 1\nbatch_size = 1\ncrop = 32\n",
    );
    ok(refsr(dir.path(), &["train-sr", "--config", "sr.toml", "--data", data.to_str().unwrap(), "--out", "sr.ckpt", "--preset", "no-contrastive"]));
    assert!(dir.path().join("sr.ckpt").exists());
    let run = report(&dir.path().join("sr.ckpt.run.json"));
    assert_eq!(run["stage"], "train-sr");
    assert!(run["artifacts"].as_object().unwrap().keys().any(|k| k.ends_with("sr.ckpt")));
}

#[test]
fn eighty_pair_manifest_round_trips_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    ok(refsr(dir.path(), &["make-pairs", "--out", "p", "--count", "80", "--crop", "16", "--side", "32", "--seed", "9"]));
    let path = dir.path().join("p/manifest.jsonl");
    let bytes = fs::read(&path).unwrap();
    let m = Manifest::load(&path).unwrap();
    assert_eq!(m.records.len(), 80);
    assert_eq!(m.to_jsonl().as_bytes(), &bytes[..]);
    let copy = dir.path().join("p/copy.jsonl");
    m.save(&copy).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), bytes);
    assert_eq!(Manifest::load(&copy).unwrap().records, m.records);
}

fn bench(dir: &Path) {
    ok(refsr(dir, &["make-benchmark", "--out", "b", "--count", "2", "--crop", "32", "--seed", "4"]));
}

#[test]
fn bicubic_eval_is_finite_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    bench(dir.path());
    for r in ["r1.json", "r2.json"] {
        ok(refsr(dir.path(), &["eval", "--weights", "bicubic", "--manifest", "b/manifest.jsonl", "--mode", "image", "--report", r, "--plots", "plots"]));
    }
    let (mut a, mut b) = (report(&dir.path().join("r1.json")), report(&dir.path().join("r2.json")));
    let psnr = a["aggregate"]["psnr"].as_f64().unwrap();
    assert!(psnr.is_finite() && psnr > 10.0, "{psnr}");
    assert_eq!(a["groups"].as_object().unwrap().len(), 3);
    assert!(a["run"]["timestamp"].is_u64());
    a.as_object_mut().unwrap().remove("run");
    b.as_object_mut().unwrap().remove("run");
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert!(!dir.path().join("plots/aee_by_group.svg").exists());
    for plot in ["psnr_by_group.svg"] {
        let svg = fs::read_to_string(dir.path().join("plots").join(plot)).unwrap();
        for g in ["small", "medium", "large"] {
            assert!(svg.contains(g), "{plot} lacks {g}");
        }
    }
}

#[test]
fn empty_manifest_is_an_error_without_report() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("empty.jsonl"), "");
    let o = refsr(dir.path(), &["eval", "--weights", "bicubic", "--manifest", "empty.jsonl", "--mode", "image", "--report", "r.json"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!dir.path().join("r.json").exists());
    let o = refsr(dir.path(), &["eval", "--weights", "bicubic", "--manifest", "absent.jsonl", "--mode", "image", "--report", "r.json"]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn eval_of_missing_weights_names_them() {
    let dir = tempfile::tempdir().unwrap();
    bench(dir.path());
    let o = refsr(dir.path(), &["eval", "--weights", "student.ckpt", "--manifest", "b/manifest.jsonl", "--mode", "image", "--report", "r.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("student.ckpt"));
}

#[test]
fn metric_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    png(&dir.path().join("tiny.png"), 1, 8, 8);
    write(&dir.path().join("m.jsonl"), "{\"input_path\":\"tiny.png\",\"ref_paths\":[\"tiny.png\"],\"split\":\"test\"}\n");
    let o = refsr(dir.path(), &["eval", "--weights", "bicubic", "--manifest", "m.jsonl", "--mode", "image", "--report", "r.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!dir.path().join("r.json").exists());

    // A one-frame clip whose only frame is its reference leaves nothing to score.
    png(&dir.path().join("clip/0000.png"), 2, 32, 32);
    write(&dir.path().join("v.jsonl"), "{\"input_path\":\"clip\",\"ref_paths\":[\"clip/0000.png\"],\"split\":\"test\"}\n");
    let o = refsr(dir.path(), &["eval", "--weights", "bicubic", "--manifest", "v.jsonl", "--mode", "video", "--report", "r.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn video_eval_skips_a_first_frame_reference() {
    let dir = tempfile::tempdir().unwrap();
    ok(refsr(dir.path(), &["make-pairs", "--kind", "clips", "--out", "c", "--count", "1", "--frames", "3", "--lr-size", "8", "--seed", "2"]));
    let m = Manifest::load(&dir.path().join("c/manifest.jsonl")).unwrap();
    let clip = m.records[0].input_path.clone();
    let first = format!("{clip}/0000.png");
    let copy = dir.path().join("c/first_copy.png");
    fs::copy(dir.path().join("c").join(&first), &copy).unwrap();
    png(&dir.path().join("c/other.png"), 77, 32, 32);
    let line = |r: &str| format!("{{\"input_path\":\"{clip}\",\"ref_paths\":[\"{r}\"],\"split\":\"test\"}}\n");
    for (name, r, skipped) in [("same", first.as_str(), true), ("bytes", "first_copy.png", true), ("other", "other.png", false)] {
        write(&dir.path().join(format!("c/{name}.jsonl")), &line(r));
        let out = format!("{name}.json");
        ok(refsr(dir.path(), &["eval", "--weights", "bicubic", "--manifest", &format!("c/{name}.jsonl"), "--mode", "video", "--report", &out]));
        let rep = report(&dir.path().join(&out));
        let rec = &rep["records"][0];
        let frames = rec["frames"].as_array().unwrap();
        assert_eq!(frames.len(), if skipped { 2 } else { 3 }, "{name}");
        assert_eq!(frames[0]["index"].as_u64().unwrap(), if skipped { 1 } else { 0 });
        assert_eq!(rec["skipped_first_frame"].as_bool().unwrap_or(false), skipped, "{name}");
    }
}

fn pool(dir: &Path) {
    png(&dir.join("q/a.png"), 1, 40, 32);
    png(&dir.join("q/b.png"), 2, 32, 32);
    png(&dir.join("q/c.png"), 3, 32, 32);
    png(&dir.join("pool/big.png"), 4, 80, 60);
    png(&dir.join("pool/near.png"), 5, 34, 34);
}

fn assemble(dir: &Path, selection: &str) -> Output {
    write(&dir.join("sel.txt"), selection);
    refsr(dir, &["assemble-dataset", "--queries", "q", "--pool", "pool", "--selection", "sel.txt", "--out", "out"])
}

#[test]
fn assemble_rescales_and_counts_dropped_queries() {
    let dir = tempfile::tempdir().unwrap();
    pool(dir.path());
    ok(assemble(dir.path(), "# picks\na.png big.png\nb.png near.png\n"));
    let m = Manifest::load(&dir.path().join("out/manifest.jsonl")).unwrap();
    assert_eq!(m.records.len(), 2);
    for r in &m.records {
        let q = refsr::io::load_png(&m.resolve(&r.input_path)).unwrap();
        let rf = refsr::io::load_png(&m.resolve(&r.ref_paths[0])).unwrap();
        let (qs, rs) = (q.height().max(q.width()) as f64, rf.height().max(rf.width()) as f64);
        assert!((rs / qs - 1.0).abs() <= 0.1 + 1e-12, "{}: {rs} vs {qs}", r.input_path);
    }
    let big = m.records.iter().find(|r| r.input_path.ends_with("a.png")).unwrap();
    let rf = refsr::io::load_png(&m.resolve(&big.ref_paths[0])).unwrap();
    assert_eq!((rf.height(), rf.width()), (40, 30));
    let near = m.records.iter().find(|r| r.input_path.ends_with("b.png")).unwrap();
    assert_eq!(refsr::io::load_png(&m.resolve(&near.ref_paths[0])).unwrap().height(), 34);
    let rep = report(&dir.path().join("out/assemble_report.json"));
    assert_eq!(rep["dropped_count"], 1);
    assert_eq!(rep["dropped"][0], "c.png");
}

#[test]
fn assemble_with_empty_selection_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    pool(dir.path());
    ok(assemble(dir.path(), "# nothing selected\n"));
    assert_eq!(fs::read(dir.path().join("out/manifest.jsonl")).unwrap(), b"");
    let rep = report(&dir.path().join("out/assemble_report.json"));
    assert_eq!(rep["dropped_count"], 3);
    assert_eq!(rep["kept"], 0);
}

#[test]
fn assemble_itemizes_dangling_entries() {
    let dir = tempfile::tempdir().unwrap();
    pool(dir.path());
    let o = assemble(dir.path(), "a.png gone.png\nzz.png big.png\nb.png near.png\nb.png big.png\n");
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for needle in ["gone.png", "zz.png", "b.png is selected more than once"] {
        assert!(err.contains(needle), "{needle} not itemized: {err}");
    }
    assert!(!dir.path().join("out/manifest.jsonl").exists());
}
