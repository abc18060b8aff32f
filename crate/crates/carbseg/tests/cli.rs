use std::fs;
use std::path::Path;

use carbseg::cli::run;

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["carbseg"];
    v.extend_from_slice(args);
    run(v)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "scene_count=4\nwidth=64\nheight=64\nstage1_iters=60\nstage2_iters=60\nview=dual\nbalance=carb\ncrop_w=32\ncrop_h=32\neval_every=50\n";

#[test]
fn usage_and_validation_exit_codes() {
    assert_eq!(cli(&["bogus"]), 1);
    assert_eq!(cli(&["train", "--out", "x"]), 1, "missing --seed");
    assert_eq!(cli(&["synth", "--out", "x"]), 1, "missing --seed");
    assert_eq!(cli(&["eval", "--pred", "a", "--gt", "b"]), 1, "missing --catalog");
    assert_eq!(cli(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cfg");
    assert_eq!(cli(&["train", "--config", p(&missing), "--seed", "1", "--out", p(dir.path())]), 2);
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "lr=-3\n").unwrap();
    assert_eq!(cli(&["train", "--config", p(&bad), "--seed", "1", "--out", p(dir.path())]), 1);
}

#[test]
fn synth_pseudomask_stats_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("a.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let syn = d.join("syn");
    assert_eq!(cli(&["synth", "--config", p(&cfg), "--seed", "3", "--out", p(&syn)]), 0);
    assert!(syn.join("manifest.txt").is_file());
    let cat = syn.join("catalog.tsv");
    let labels = syn.join("labels");
    assert_eq!(cli(&["eval", "--pred", p(&labels), "--gt", p(&labels), "--catalog", p(&cat)]), 0);

    let pm = d.join("pm");
    let text = syn.join("text.dtn1");
    let code = cli(&[
        "pseudomask", "--features", p(&syn.join("features")), "--text", p(&text), "--out", p(&pm),
        "--stride", "4", "--allowed-from-labels", p(&labels),
    ]);
    assert_eq!(code, 0);
    assert_eq!(fs::read_dir(&pm).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm")).count(), 4);
    let ev = d.join("ev");
    assert_eq!(cli(&["eval", "--pred", p(&pm), "--gt", p(&labels), "--catalog", p(&cat), "--out", p(&ev)]), 0);
    assert!(ev.join("eval.csv").is_file() && ev.join("manifest.txt").is_file());

    let st = d.join("st");
    assert_eq!(cli(&["stats", "--labels", p(&labels), "--catalog", p(&cat), "--out", p(&st)]), 0);
    for f in ["classes_per_image.csv", "cooccurrence.csv", "positives_negatives.csv", "manifest.txt"] {
        assert!(st.join(f).is_file(), "{f}");
    }
    assert_eq!(cli(&["stats", "--labels", p(&labels), "--catalog", p(&cat), "--out", p(&st), "--min-pixels", "0"]), 1);
}

#[test]
fn pseudomask_missing_view_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = d.join("feat").join("s0");
    fs::create_dir_all(&scene).unwrap();
    let t = carbseg::dtn1::Tensor::new(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    carbseg::dtn1::write_tensor(scene.join("global.dtn1"), &t).unwrap();
    let text = d.join("text.dtn1");
    carbseg::dtn1::write_tensor(&text, &carbseg::dtn1::Tensor::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let out = d.join("out");
    assert_eq!(cli(&["pseudomask", "--features", p(&d.join("feat")), "--text", p(&text), "--out", p(&out), "--stride", "4"]), 0);
    let m = carbseg::labels::read_label_map(out.join("s0.pgm"), Some(2)).unwrap();
    assert_eq!((m.width(), m.height()), (8, 8));
    assert_eq!(m.get(0, 0), 0);
    assert_eq!(m.get(4, 0), 1);
    // a local-view file whose grid does not match its name
    carbseg::dtn1::write_tensor(scene.join("0_0_4_4_1000.dtn1"), &t).unwrap();
    assert_eq!(cli(&["pseudomask", "--features", p(&d.join("feat")), "--text", p(&text), "--out", p(&out), "--stride", "4"]), 1);
}

#[test]
fn train_is_reproducible_and_manifest_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("a.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b, c) = (d.join("a"), d.join("b"), d.join("c"));
    assert_eq!(cli(&["train", "--config", p(&cfg), "--seed", "9", "--out", p(&a)]), 0);
    assert_eq!(cli(&["train", "--config", p(&cfg), "--seed", "9", "--out", p(&b), "--threads", "3"]), 0);
    assert_eq!(cli(&["train", "--config", p(&a.join("manifest.txt")), "--seed", "9", "--out", p(&c)]), 0);
    for f in ["telemetry.csv", "checkpoint/weights.dtn1", "checkpoint/bias.dtn1", "checkpoint/head.meta", "eval.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, fs::read(c.join(f)).unwrap(), "{f}");
    }
    let tel = fs::read_to_string(a.join("telemetry.csv")).unwrap();
    assert_eq!(tel.lines().count(), 121);
    assert!(tel.starts_with("iter,stage,loss_total,loss_c,loss_i,w,n_c,n_i,train_miou_every_100\n"));

    let ev = d.join("ev");
    let code = cli(&["eval", "--checkpoint", p(&a.join("checkpoint")), "--config", p(&cfg), "--seed", "9", "--out", p(&ev)]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(ev.join("eval.csv")).unwrap(), fs::read(a.join("eval.csv")).unwrap());

    let cv = d.join("cv");
    assert_eq!(cli(&["export-curves", "--telemetry", p(&a.join("telemetry.csv")), "--out", p(&cv)]), 0);
    let w = fs::read_to_string(cv.join("weight_curve.csv")).unwrap();
    assert_eq!(w.lines().count(), 121);
}

fn write_telemetry(path: &Path, body: &str) {
    fs::write(path, format!("{}\n{body}", carbseg::telemetry::HEADER)).unwrap();
}

#[test]
fn export_curves_windows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tel = d.join("t.csv");
    write_telemetry(&tel, "1,1,3,1,2,1,10,6,\n2,1,2,0.5,3,1,12,4,\n3,2,1.5,0.25,5,0.5,14,2,0.75\n");
    let one = d.join("one");
    assert_eq!(cli(&["export-curves", "--telemetry", p(&tel), "--out", p(&one), "--window", "1"]), 0);
    assert_eq!(
        fs::read_to_string(one.join("loss_curve.csv")).unwrap(),
        "iter,loss_c,loss_i\n1,1.000000,2.000000\n2,0.500000,3.000000\n3,0.250000,5.000000\n"
    );
    assert_eq!(fs::read_to_string(one.join("weight_curve.csv")).unwrap(), "iter,w\n1,1.000000\n2,1.000000\n3,0.500000\n");
    let two = d.join("two");
    assert_eq!(cli(&["export-curves", "--telemetry", p(&tel), "--out", p(&two), "--window", "2"]), 0);
    assert_eq!(
        fs::read_to_string(two.join("loss_curve.csv")).unwrap(),
        "iter,loss_c,loss_i\n1,1.000000,2.000000\n2,0.750000,2.500000\n3,0.375000,4.000000\n"
    );
    assert_eq!(
        fs::read_to_string(two.join("area_curve.csv")).unwrap(),
        "iter,n_c,n_i\n1,10.000000,6.000000\n2,11.000000,5.000000\n3,13.000000,3.000000\n"
    );
    assert_eq!(fs::read_to_string(two.join("weight_curve.csv")).unwrap(), "iter,w\n1,1.000000\n2,1.000000\n3,0.750000\n");

    let bad = d.join("bad.csv");
    write_telemetry(&bad, "1,1,3,1,2,1,10,6,\n2,1,oops,0.5,3,1,12,4,\n");
    assert_eq!(cli(&["export-curves", "--telemetry", p(&bad), "--out", p(&d.join("x"))]), 1);
}

#[test]
fn fixed_unit_weight_gives_flat_weight_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("w.cfg");
    fs::write(&cfg, format!("{SMALL}weight=1\n")).unwrap();
    let run = d.join("run");
    assert_eq!(cli(&["train", "--config", p(&cfg), "--seed", "2", "--out", p(&run)]), 0);
    let cv = d.join("cv");
    assert_eq!(cli(&["export-curves", "--telemetry", p(&run.join("telemetry.csv")), "--out", p(&cv), "--window", "7"]), 0);
    let w = fs::read_to_string(cv.join("weight_curve.csv")).unwrap();
    assert!(w.lines().skip(1).all(|l| l.ends_with(",1.000000")));
}
