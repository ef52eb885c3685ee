use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lae_core::autolabel::mock::{MockConfig, MockServer};
use lae_core::formats::{manifest_to_bytes, read_manifest_bytes};
use lae_core::{BBox, DatasetManifest, ImageRecord, Instance};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn lae(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lae"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env_remove("LAE_SAM_ENDPOINT")
        .env_remove("LAE_LVLM_ENDPOINT")
        .env_remove("LAE_LVLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn manifest(path: &Path) -> DatasetManifest {
    read_manifest_bytes(&fs::read(path).unwrap()).unwrap()
}

fn pool_args() -> Vec<String> {
    let mut pools: Vec<_> = fs::read_dir(fixtures().join("pools")).unwrap().map(|e| e.unwrap().path()).collect();
    pools.sort();
    pools.into_iter().flat_map(|p| ["--pool".to_owned(), p.display().to_string()]).collect()
}

#[test]
fn tile_fixture_gives_nine_records() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lae(dir.path(), &["tile", "--input", &fx("manifests/scene_2048.json")]));
    let tiles = manifest(&dir.path().join("tiles.json"));
    assert_eq!(tiles.images.len(), 9);
    assert_eq!(tiles.images[1].image_id, "scene0@819,0");
    assert_eq!(tiles.images[1].uri, "imgs/scene0.png#xywh=819,0,1024,1024");
    let run = json(&dir.path().join("run.json"));
    assert_eq!(run["command"], "tile");
    assert_eq!(run["params"]["tile.size"], "1024");
}

#[test]
fn config_file_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# smaller tiles\ntile.size = 512\ntile.overlap = 0.0\n").unwrap();
    let out = dir.path().join("a");
    ok(&lae(&out, &["--config", cfg.to_str().unwrap(), "tile", "--input", &fx("manifests/scene_2048.json")]));
    assert_eq!(manifest(&out.join("tiles.json")).images.len(), 16);

    let out = dir.path().join("b");
    ok(&lae(
        &out,
        &["--config", cfg.to_str().unwrap(), "tile", "--input", &fx("manifests/scene_2048.json"), "--tile-size", "1024"],
    ));
    assert_eq!(manifest(&out.join("tiles.json")).images.len(), 4);

    fs::write(&cfg, "tile.sise = 3\n").unwrap();
    let bad = lae(&dir.path().join("c"), &["--config", cfg.to_str().unwrap(), "check-math"]);
    assert!(!bad.status.success());
}

#[test]
fn benchmark_has_eighty_categories() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["assemble-benchmark".to_owned(), "--selections".into(), fx("lae80c_selections.json")];
    args.extend(pool_args());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&lae(dir.path(), &args));
    let bench = manifest(&dir.path().join("benchmark.json"));
    assert_eq!(bench.categories.len(), 80);
    assert_eq!(bench.name, "LAE-80C");

    // every benchmark image holds at most 6 categories, well under the vocabulary length
    let reg = dir.path().join("benchmark.json");
    let out = dir.path().join("dvc");
    ok(&lae(
        &out,
        &["--seed", "5", "dvc-sample", "--registry", reg.to_str().unwrap(), "--input", reg.to_str().unwrap()],
    ));
    let text = fs::read_to_string(out.join("batches.jsonl")).unwrap();
    assert_eq!(text.lines().count(), bench.images.len());
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let n = v["positives"].as_array().unwrap().len() + v["negatives"].as_array().unwrap().len();
        assert_eq!(n, 60);
    }
}

#[test]
fn check_math_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lae(dir.path(), &["check-math"]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().count() >= 10);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    let checks = json(&dir.path().join("math.json"));
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn stats_counts() {
    let dir = tempfile::tempdir().unwrap();
    let names = [
        "airplane",
        "ship",
        "storage tank",
        "baseball diamond",
        "tennis court",
        "basketball court",
        "ground track field",
        "harbor",
        "bridge",
        "vehicle",
    ];
    let mut m = DatasetManifest::new("vhr10-like");
    m.categories = names.iter().map(|s| s.to_string()).collect();
    for i in 0..80 {
        let mut im = ImageRecord::new(format!("img{i:03}"), 900, 600, format!("img{i:03}.png"));
        let n = if i < 51 { 46 } else { 45 };
        for j in 0..n {
            let k = i * 46 + j;
            im.instances.push(Instance::new(BBox::new(j as f64, 1.0, 5.0, 5.0), names[k % 10], format!("v:{k}")));
        }
        m.images.push(im);
    }
    assert_eq!(m.instance_count(), 3651);
    let path = dir.path().join("vhr.json");
    fs::write(&path, manifest_to_bytes(&m).unwrap()).unwrap();
    ok(&lae(dir.path(), &["stats", "--input", path.to_str().unwrap()]));
    let s = json(&dir.path().join("stats.json"));
    assert_eq!(s["instance_count"], 3651);
    assert_eq!(s["category_count"], 10);
    assert_eq!(s["image_count"], 80);

    let empty = dir.path().join("empty.json");
    fs::write(&empty, manifest_to_bytes(&DatasetManifest::new("none")).unwrap()).unwrap();
    ok(&lae(dir.path(), &["stats", "--input", empty.to_str().unwrap()]));
    let s = json(&dir.path().join("stats.json"));
    assert_eq!((s["instance_count"].as_u64(), s["image_count"].as_u64()), (Some(0), Some(0)));
}

#[test]
fn merged_stats_subtract_dedup_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let dota = manifest(&fixtures().join("pools/dota.json"));
    // a second copy of the first two DOTA images under another name shares their source ids
    let mut copy = DatasetManifest::new("dota-copy");
    copy.categories = dota.categories.clone();
    copy.images = dota.images[..2].to_vec();
    let overlap: usize = copy.images.iter().map(|i| i.instances.len()).sum();
    let copy_path = dir.path().join("copy.json");
    fs::write(&copy_path, manifest_to_bytes(&copy).unwrap()).unwrap();

    ok(&lae(
        dir.path(),
        &["merge", "--input", &fx("pools/dota.json"), "--input", copy_path.to_str().unwrap(), "--dedup"],
    ));
    let merged = dir.path().join("merged.json");
    ok(&lae(dir.path(), &["stats", "--input", merged.to_str().unwrap()]));
    let s = json(&dir.path().join("stats.json"));
    assert_eq!(s["instance_count"].as_u64().unwrap() as usize, dota.instance_count() + copy.instance_count() - overlap);
    assert_eq!(s["image_count"].as_u64().unwrap() as usize, dota.images.len() + 2);
}

#[test]
fn failures_emit_error_record_and_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lae(dir.path(), &["stats", "--input", "/does/not/exist.json"]);
    assert!(!out.status.success());
    let rec: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(rec["error"]["kind"], "io");
    assert_eq!(rec["error"]["command"], "stats");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"annotations\": [").unwrap();
    let outdir = dir.path().join("o");
    let out = lae(&outdir, &["sample", "--input", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let rec: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(rec["error"]["kind"], "malformed-json");
    assert!(!outdir.exists() || fs::read_dir(&outdir).unwrap().next().is_none());

    let out = lae(dir.path(), &["sample", "--input", &fx("manifests/small.json"), "--rate", "1.5"]);
    let rec: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(rec["error"]["kind"], "invalid-parameter");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&lae(&out, &["--seed", "17", "sample", "--input", &fx("pools/xview.json"), "--threshold", "1"]));
    }
    for f in ["sampled.json", "run.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn convert_coco_then_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lae(dir.path(), &["convert", "--input", &fx("manifests/coco_sample.json"), "--name", "sample"]));
    let first = fs::read(dir.path().join("manifest.json")).unwrap();
    let m = read_manifest_bytes(&first).unwrap();
    assert_eq!(m.categories, vec!["ship", "storage tank"]);
    assert_eq!(m.instance_count(), 2);

    let again = dir.path().join("again");
    let src = dir.path().join("manifest.json");
    ok(&lae(&again, &["convert", "--from", "manifest", "--input", src.to_str().unwrap()]));
    assert_eq!(fs::read(again.join("manifest.json")).unwrap(), first);
}

#[test]
fn filter_drops_unrecognized() {
    let dir = tempfile::tempdir().unwrap();
    let csv = fs::read_to_string(fixtures().join("proposals_sample.csv")).unwrap();
    let six: Vec<&str> = csv.lines().take(7).collect();
    let proposals = dir.path().join("six.csv");
    fs::write(&proposals, six.join("\n") + "\n").unwrap();
    ok(&lae(
        dir.path(),
        &["filter", "--proposals", proposals.to_str().unwrap(), "--names", &fx("naming_sample.jsonl")],
    ));
    let kept = json(&dir.path().join("instances.json"));
    let cats: Vec<&str> = kept.as_array().unwrap().iter().map(|i| i["category"].as_str().unwrap()).collect();
    assert_eq!(cats, vec!["road", "airport runway", "airport", "runway", "airplanes"]);

    let out = lae(
        dir.path(),
        &["filter", "--proposals", &fx("proposals_sample.csv"), "--names", &fx("naming_sample.jsonl")],
    );
    assert!(!out.status.success());
}

#[test]
fn autolabel_against_mock_is_reproducible() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let server = rt
        .block_on(MockServer::start_local(MockConfig {
            seed: 2,
            failure_rate: 0.2,
            ..MockConfig::default()
        }))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_lae"))
            .arg("--out-dir")
            .arg(&out)
            .args(["autolabel", "--input", &fx("autolabel/raw_images.json")])
            .env("LAE_SAM_ENDPOINT", server.proposal_endpoint())
            .env("LAE_LVLM_ENDPOINT", server.naming_endpoint())
            .output()
            .unwrap();
        ok(&status);
        outputs.push((fs::read(out.join("labels.json")).unwrap(), fs::read(out.join("audit.jsonl")).unwrap()));
        assert_eq!(fs::read_to_string(out.join("failures.jsonl")).unwrap(), "");
        let run = json(&out.join("run.json"));
        assert!(run["params"].get("service.proposal_endpoint").is_some());
        assert!(!fs::read_to_string(out.join("run.json")).unwrap().contains("api_key"));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(server.injected_failures() > 0);
    rt.block_on(server.stop());
}

#[test]
fn autolabel_without_endpoints_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lae(dir.path(), &["autolabel", "--input", &fx("autolabel/raw_images.json")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LAE_SAM_ENDPOINT"));
}

#[test]
fn eval_reports_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = lae(
        dir.path(),
        &["eval", "--detections", &fx("detections/small.jsonl"), "--benchmark", &fx("manifests/small.json")],
    );
    ok(&out);
    let report = json(&dir.path().join("eval.json"));
    assert_eq!(report["ap50"], 1.0);
    let map = report["map"].as_f64().unwrap();
    assert!((map - (0.8 + 0.8 + 0.9) / 3.0).abs() < 1e-12, "{map}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("AP50"));
}
