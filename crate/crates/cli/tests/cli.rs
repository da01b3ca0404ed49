use std::path::Path;
use std::process::{Command, Output};

fn fdp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn fdp")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fdp(dir, args);
    assert!(
        out.status.success(),
        "fdp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_run_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-o", "corpus", "--count", "2", "--seed", "5"]);
    ok(
        d,
        &[
            "run",
            "--pages",
            "corpus",
            "--gt",
            "corpus/formulas.csv",
            "-o",
            "out",
            "--render-overlays",
        ],
    );
    for f in [
        "detections.csv",
        "manifest.txt",
        "report.csv",
        "overlays/synth000_1.png",
    ] {
        assert!(d.join("out").join(f).exists(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(d.join("out/manifest.txt")).unwrap();
    assert!(manifest.starts_with("command=run\n"));
    assert!(manifest.contains("output ") && manifest.contains("config_hash="));

    let report = ok(
        d,
        &[
            "evaluate",
            "--gt",
            "corpus/formulas.csv",
            "--detections",
            "out/detections.csv",
            "-o",
            "r.csv",
        ],
    );
    assert!(report.contains("all"));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.starts_with("scope,iou,precision,recall,fscore\n"));
    // the oracle never produces a false positive
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("1.000000"), "{line}");
    }
}

#[test]
fn staged_commands_match_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-o", "corpus", "--count", "1"]);
    ok(
        d,
        &[
            "run",
            "--pages",
            "corpus",
            "--gt",
            "corpus/formulas.csv",
            "-o",
            "out",
        ],
    );
    ok(
        d,
        &[
            "detect",
            "--pages",
            "corpus",
            "--gt",
            "corpus/formulas.csv",
            "-o",
            "wd.csv",
        ],
    );
    ok(
        d,
        &[
            "pool",
            "--pages",
            "corpus",
            "--detections",
            "wd.csv",
            "-o",
            "pd.csv",
            "--heatmaps",
            "hm",
        ],
    );
    let staged = std::fs::read(d.join("pd.csv")).unwrap();
    assert_eq!(staged, std::fs::read(d.join("out/detections.csv")).unwrap());
    assert!(d.join("hm/synth000_1_uniform.png").exists());

    ok(
        d,
        &[
            "--set",
            "detector=external",
            "run",
            "--pages",
            "corpus",
            "--detections",
            "wd.csv",
            "-o",
            "ext",
        ],
    );
    assert_eq!(staged, std::fs::read(d.join("ext/detections.csv")).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-o", "corpus", "--count", "2"]);
    let noisy = [
        "--set",
        "oracle.position_px=6",
        "--set",
        "oracle.drop_prob=0.2",
        "--set",
        "oracle.confidence=0.3..1",
        "--set",
        "vote_method=sum",
        "--seed",
        "11",
    ];
    for (out, workers) in [("a", "1"), ("b", "4")] {
        let mut args = noisy.to_vec();
        args.extend([
            "--workers",
            workers,
            "run",
            "--pages",
            "corpus",
            "--gt",
            "corpus/formulas.csv",
            "-o",
            out,
        ]);
        ok(d, &args);
    }
    for f in ["detections.csv", "report.csv", "manifest.txt"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        if f == "manifest.txt" {
            // output paths differ between the two runs
            let strip = |v: Vec<u8>| {
                String::from_utf8(v)
                    .unwrap()
                    .lines()
                    .filter(|l| !l.starts_with("output") && !l.starts_with("config.workers"))
                    .map(String::from)
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(a), strip(b));
        } else {
            assert_eq!(a, b, "{f} differs between worker counts");
        }
    }
}

#[test]
fn missing_pages_exit_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fdp(
        tmp.path(),
        &[
            "run",
            "--pages",
            "no_such_dir",
            "--gt",
            "x.csv",
            "-o",
            "out",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("no_such_dir") && err.contains("load pages"),
        "{err}"
    );
}

#[test]
fn malformed_ground_truth_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-o", "corpus", "--count", "1"]);
    std::fs::write(
        d.join("bad.csv"),
        "doc_id,page,formula_id,left,top,right,bottom\nd,1,f,10,10,5,20\n",
    )
    .unwrap();
    let out = fdp(
        d,
        &["run", "--pages", "corpus", "--gt", "bad.csv", "-o", "out"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(fdp(d, &["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        fdp(d, &["--set", "stride=0", "synth", "-o", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        fdp(d, &["--set", "nonsense=1", "synth", "-o", "x"])
            .status
            .code(),
        Some(1)
    );
    std::fs::create_dir(d.join("pages")).unwrap();
    // oracle without ground truth
    ok(d, &["synth", "-o", "pages", "--count", "1"]);
    assert_eq!(
        fdp(d, &["detect", "--pages", "pages", "-o", "w.csv"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(fdp(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn ingest_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gt = "\
doc_id,page,char_id,left,top,right,bottom,label,is_math,parent_id,relationship
d,1,a,100,100,120,130,x,1,,
d,1,b,130,100,150,130,y,1,a,horizontal
d,1,c,400,400,420,430,z,1,,
d,1,t,600,600,620,630,w,0,,
";
    std::fs::write(d.join("chars.csv"), gt).unwrap();
    let stats = ok(d, &["stats", "chars.csv"]);
    assert!(stats.contains("formulas              2"), "{stats}");
    ok(
        d,
        &[
            "ingest",
            "chars.csv",
            "-o",
            "f.csv",
            "--scale",
            "1/2",
            "--translate",
            "3,4",
        ],
    );
    let f = std::fs::read_to_string(d.join("f.csv")).unwrap();
    assert!(f.contains(",53,54,78,69"), "{f}");
}
