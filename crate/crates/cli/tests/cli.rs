use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ucc(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ucc"));
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("spawn ucc")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn metric(dir: &Path, key: &str) -> Option<String> {
    read(dir.join("metrics.txt")).lines().find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

const SMALL: &[&str] = &[
    "gen.per_class=60",
    "gen.dim=4",
    "model.features=4",
    "model.ucc_hi=3",
    "bags.size=8",
    "bags.per_label=20",
    "bags.val_per_label=10",
    "train.max_iters=200",
    "train.patience=100",
    "train.val_period=50",
    "eval.bags_per_label=10",
];

/// Generates a small blob pool and returns the data directory.
fn gen_blobs(root: &Path, seed: u64) -> PathBuf {
    let dir = root.join(format!("data{seed}"));
    let o = ucc(&["gen-data", "--seed", &seed.to_string(), "--out", dir.to_str().unwrap()], SMALL);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let train = format!("data.train={}", data.join("train.txt").display());
    let val = format!("data.val={}", data.join("val.txt").display());
    let mut sets: Vec<&str> = SMALL.to_vec();
    sets.push(&train);
    sets.push(&val);
    sets.extend_from_slice(extra);
    ucc(&["train", "--seed", "4", "--out", out.to_str().unwrap()], &sets)
}

#[test]
fn missing_pool_is_an_input_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere.txt");
    let o = ucc(
        &["train", "--out", tmp.path().join("out").to_str().unwrap()],
        &[&format!("data.train={}", missing.display())],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_bad_value_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = ucc(&["gen-data", "--out", out], &["model.colour=red", "train.lr=fast"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("model.colour") && err.contains("train.lr"), "{err}");
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = gen_blobs(tmp.path(), 3);
    let b = tmp.path().join("again");
    let o = ucc(&["gen-data", "--seed", "3", "--out", b.to_str().unwrap()], SMALL);
    assert_eq!(code(&o), 0);
    for f in ["pool.txt", "train.txt", "val.txt", "test.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let header = read(a.join("pool.txt")).lines().next().unwrap().to_string();
    assert_eq!(header, "240 4 4");
}

#[test]
fn zero_iterations_still_writes_a_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = gen_blobs(tmp.path(), 1);
    let out = tmp.path().join("run");
    let o = train_small(&data, &out, &["train.max_iters=0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("model.ucc").is_file());
    assert_eq!(metric(&out, "best_iteration").as_deref(), Some("0"));
}

#[test]
fn divergent_learning_rate_is_a_numeric_error() {
    let tmp = TempDir::new().unwrap();
    let data = gen_blobs(tmp.path(), 1);
    let o = train_small(&data, &tmp.path().join("run"), &["train.lr=1e12"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn checkpoint_round_trip_and_downstream_commands() {
    let tmp = TempDir::new().unwrap();
    let data = gen_blobs(tmp.path(), 2);
    let run = tmp.path().join("run");
    let o = train_small(&data, &run, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = run.join("model.ucc");

    // load and save again through the library
    let model: ucc_core::UccModel64 = ucc_core::checkpoint::load(&ckpt).unwrap();
    let again = tmp.path().join("again.ucc");
    ucc_core::checkpoint::save(&model, &again).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&again).unwrap());

    let ck = format!("checkpoint={}", ckpt.display());
    let test = format!("data.eval={}", data.join("test.txt").display());

    let c1 = tmp.path().join("c1");
    let c2 = tmp.path().join("c2");
    for dir in [&c1, &c2] {
        let o = ucc(&["cluster", "--seed", "9", "--out", dir.to_str().unwrap()], &[&ck, &test]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(read(c1.join("assignments.txt")), read(c2.join("assignments.txt")));
    assert_eq!(read(c1.join("js.tsv")), read(c2.join("js.tsv")));
    let acc: f64 = metric(&c1, "accuracy").unwrap().parse().unwrap();
    assert!((0.25..=1.0).contains(&acc));
    assert_eq!(read(c1.join("assignments.txt")).lines().count(), 48);

    let e = tmp.path().join("e");
    let o = ucc(&["eval-ucc", "--out", e.to_str().unwrap()], &[&ck, &test, "eval.bags_per_label=10", "bags.size=8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let conf = read(e.join("confusion.tsv"));
    let rows: Vec<&str> = conf.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let total: usize = row.split('\t').skip(1).map(|c| c.parse::<usize>().unwrap()).sum();
        assert_eq!(total, 10, "{row}");
    }

    let v = tmp.path().join("v");
    let o = ucc(&["verify-props", "--out", v.to_str().unwrap()], &[&ck, &test, "props.trials=50", "props.universe=40", "props.set_size=4", "props.bag_size=4"]);
    assert!(matches!(code(&o), 0), "{}", stderr(&o));
    let report = read(v.join("report.txt"));
    assert_eq!(report.lines().count(), 5);
    assert!(report.lines().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
    assert!(report.lines().next().unwrap().starts_with("PASS "), "{report}");
}

#[test]
fn unlabeled_pool_omits_accuracy() {
    let tmp = TempDir::new().unwrap();
    let data = gen_blobs(tmp.path(), 5);
    let run = tmp.path().join("run");
    assert_eq!(code(&train_small(&data, &run, &["train.max_iters=20"])), 0);

    let labeled = read(data.join("test.txt"));
    let mut lines = labeled.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    let mut text = format!("{} {} 0\n", header[0], header[1]);
    for l in lines {
        let mut cols: Vec<&str> = l.split_whitespace().collect();
        cols.pop();
        text.push_str(&cols.join(" "));
        text.push('\n');
    }
    let pool = tmp.path().join("unlabeled.txt");
    fs::write(&pool, text).unwrap();

    let out = tmp.path().join("c");
    let ck = format!("checkpoint={}", run.join("model.ucc").display());
    let ev = format!("data.eval={}", pool.display());
    let o = ucc(&["cluster", "--out", out.to_str().unwrap()], &[&ck, &ev]);
    assert_eq!(code(&o), 2, "k is required without labels");
    let o = ucc(&["cluster", "--out", out.to_str().unwrap()], &[&ck, &ev, "cluster.k=4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(metric(&out, "accuracy").is_none());
    assert!(!out.join("js.tsv").exists());
    assert_eq!(read(out.join("assignments.txt")).lines().count(), 48);
}

#[test]
fn one_class_pool_with_single_label_range_is_exact() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d");
    let o = ucc(&["gen-data", "--out", data.to_str().unwrap()], &["gen.classes=1", "gen.per_class=80", "gen.dim=3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = tmp.path().join("run");
    let train = format!("data.train={}", data.join("train.txt").display());
    let o = ucc(
        &["train", "--out", run.to_str().unwrap()],
        &[&train, "model.ucc_lo=1", "model.ucc_hi=1", "bags.size=4", "bags.per_label=10", "bags.val_per_label=5", "train.max_iters=10"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = tmp.path().join("e");
    let o = ucc(
        &["eval-ucc", "--out", e.to_str().unwrap()],
        &[
            &format!("checkpoint={}", run.join("model.ucc").display()),
            &format!("data.eval={}", data.join("test.txt").display()),
            "bags.size=4",
            "eval.bags_per_label=7",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(metric(&e, "accuracy").as_deref(), Some("1.000000"));
}

#[test]
fn infeasible_ucc_range_exits_two() {
    let tmp = TempDir::new().unwrap();
    let data = gen_blobs(tmp.path(), 6);
    let o = train_small(&data, &tmp.path().join("run"), &["model.ucc_hi=6"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn same_seed_gives_identical_training_outputs() {
    let tmp = TempDir::new().unwrap();
    let data = gen_blobs(tmp.path(), 7);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&train_small(&data, d, &["train.max_iters=50"])), 0);
    }
    for f in ["model.ucc", "train_report.tsv", "metrics.txt", "config.resolved"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn texture_segmentation_round() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("tex");
    let gen: &[&str] = &[
        "gen.kind=textures",
        "gen.height=32",
        "gen.width=32",
        "gen.train_images=6",
        "gen.val_images=3",
        "gen.test_images=2",
    ];
    let o = ucc(&["gen-data", "--out", data.to_str().unwrap()], gen);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = tmp.path().join("run");
    let common = [
        "data.format=images".to_string(),
        format!("data.train={}", data.join("train").display()),
        format!("data.val={}", data.join("val").display()),
        "seg.patch=8".into(),
        "seg.bag_size=4".into(),
        "seg.bags_per_image=4".into(),
        "seg.val_bags_per_image=2".into(),
        "train.max_iters=30".into(),
    ];
    let sets: Vec<&str> = common.iter().map(String::as_str).collect();
    let o = ucc(&["train", "--out", run.to_str().unwrap()], &sets);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let seg = tmp.path().join("seg");
    let mut eval = sets.clone();
    let ck = format!("checkpoint={}", run.join("model.ucc").display());
    let ev = format!("data.eval={}", data.join("test").display());
    eval.push(&ck);
    eval.push(&ev);
    let o = ucc(&["eval-seg", "--out", seg.to_str().unwrap()], &eval);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = read(seg.join("segmentation.tsv"));
    assert_eq!(table.lines().count(), 1 + 2 + 1);
    for line in table.lines().skip(1) {
        let v: Vec<f64> = line.split('\t').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)), "{line}");
        assert!((v[0] + v[3] - 1.0).abs() < 1e-5 && (v[1] + v[2] - 1.0).abs() < 1e-5, "{line}");
    }
    assert_eq!(fs::read_dir(seg.join("masks")).unwrap().count(), 2);
}
