use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn scd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scd")).args(args).env("RUST_LOG", "warn").current_dir(dir).output().expect("binary runs")
}

fn plot(dir: &Path, out: &str, summaries: &[&Path]) -> Output {
    let mut args = vec!["plot", "-o", out];
    args.extend(summaries.iter().map(|p| p.to_str().unwrap()));
    scd(dir, &args)
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn alpha_summary(points: usize) -> String {
    let mut s = String::from("alpha,mAP,AP50,AP75\n");
    for i in 0..points {
        let a = i as f64 / 10.0;
        s.push_str(&format!("{a},{},{},\n", 0.3 + 0.02 * i as f64, 0.5));
    }
    s
}

#[test]
fn single_point_summary_gives_a_single_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = tmp.path().join("summary.csv");
    write(&summary, &alpha_summary(1));
    let out = plot(tmp.path(), "plots", &[&summary]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = fs::read_to_string(tmp.path().join("plots/alpha.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert_eq!(svg.matches("<polyline").count(), 0);
    assert_eq!(fs::read_to_string(tmp.path().join("plots/alpha.csv")).unwrap(), "alpha,mAP\n0,0.300000\n");
}

#[test]
fn eleven_point_alpha_summary_gives_one_curve_with_eleven_markers() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = tmp.path().join("summary.csv");
    write(&summary, &alpha_summary(11));
    assert!(plot(tmp.path(), "plots", &[&summary]).status.success());
    let svg = fs::read_to_string(tmp.path().join("plots/alpha.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches("<circle").count(), 11);
    let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(points.split(' ').count(), 11);
    assert_eq!(fs::read_to_string(tmp.path().join("plots/alpha.csv")).unwrap().lines().count(), 12);
}

#[test]
fn identical_summaries_give_byte_identical_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("x/summary.csv"), tmp.path().join("y/summary.csv"));
    let text = "thickness,mAP,AP50,AP75\n16,0.41,0.7,0.3\n40,0.45,0.72,0.33\n96,0.43,0.71,0.31\n";
    write(&a, text);
    write(&b, text);
    assert!(plot(tmp.path(), "pa", &[&a]).status.success());
    assert!(plot(tmp.path(), "pb", &[&b]).status.success());
    let digest = |p: &str| hex_digest(&fs::read(tmp.path().join(p)).unwrap());
    assert_eq!(digest("pa/thickness.csv"), digest("pb/thickness.csv"));
    assert_eq!(digest("pa/thickness.svg"), digest("pb/thickness.svg"));
    let manifest = |d: &str| fs::read(tmp.path().join(d).join("manifest.json")).unwrap();
    assert_eq!(manifest("pa"), manifest("pb"));
}

fn hex_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn several_summaries_of_each_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"), tmp.path().join("c.csv"));
    write(&a, &alpha_summary(3));
    write(&b, &alpha_summary(4));
    write(&c, "bgs_loss,mAP,AP50,AP75\nfocal,0.5,0.8,0.4\nbce,0.45,0.78,0.4\ndice,,,\n");
    assert!(plot(tmp.path(), "plots", &[&a, &b, &c]).status.success());
    let dir = tmp.path().join("plots");
    assert_eq!(fs::read_to_string(dir.join("alpha_2.svg")).unwrap().matches("<circle").count(), 4);
    let bars = fs::read_to_string(dir.join("bgs_loss.svg")).unwrap();
    assert_eq!(bars.matches("class=\"bar\"").count(), 2);
}

#[test]
fn empty_or_malformed_summaries_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    write(&empty, "alpha,mAP,AP50,AP75\n");
    let out = plot(tmp.path(), "plots", &[&empty]);
    assert_eq!(out.status.code(), Some(3));
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap().to_string();
    let err: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert!(err["message"].as_str().unwrap().contains("no rows"));

    let unknown = tmp.path().join("unknown.csv");
    write(&unknown, "lr,mAP\n0.1,0.3\n");
    assert_eq!(plot(tmp.path(), "plots", &[&unknown]).status.code(), Some(3));

    let no_args = scd(tmp.path(), &["plot"]);
    assert_eq!(no_args.status.code(), Some(2));
}
