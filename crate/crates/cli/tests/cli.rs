mod common;

use std::fs;
use std::path::Path;

use common::{repo_file, run, write_spec, Server, TOKEN};
use reqwest::blocking::multipart::Form;
use reqwest::StatusCode;
use wirecheck_core::pipeline::{load_profile, save_profile, InspectionResult};
use wirecheck_core::synth::HarnessSpec;

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains the bundled eight-wire profile from five generated samples.
fn trained_profile(dir: &Path) -> std::path::PathBuf {
    let spec = repo_file("specs/eight_wire.json");
    let good = dir.join("good");
    assert_eq!(run(&["gen", "--spec", p(&spec), "--count", "5", "--seed", "1", "--out", p(&good)]).code, 0);
    fs::remove_file(good.join("manifest.csv")).unwrap();
    let out = dir.join("profile.harnessprofile.json");
    let views = repo_file("specs/eight_wire_views.json");
    let r = run(&["train", "--samples", p(&good), "--views", p(&views), "--out", p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.stdout.matches("8 wires").count(), 5);
    out
}

fn gen_one(dir: &Path, name: &str, spec: &Path, defect: &str, seed: u64) -> std::path::PathBuf {
    let out = dir.join(name);
    let r = run(&["gen", "--spec", p(spec), "--defect", defect, "--seed", &seed.to_string(), "--out", p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out.join("img_00000.png")
}

#[test]
fn gen_is_deterministic_and_labels_defects() {
    let dir = tempfile::tempdir().unwrap();
    let spec = repo_file("specs/eight_wire.json");
    let a = gen_one(dir.path(), "a", &spec, "swap:2,5", 42);
    let b = gen_one(dir.path(), "b", &spec, "swap:2,5", 42);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = fs::read_to_string(dir.path().join("a/manifest.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(manifest.as_bytes());
    assert_eq!(rdr.headers().unwrap(), vec!["image", "spec", "seed", "expected"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(&rows[0][3], "Fail");
    assert_eq!(&rows[0][2], "42");

    assert_eq!(run(&["gen", "--spec", p(&spec), "--defect", "swap:1,9", "--out", p(dir.path())]).code, 3);
    assert_eq!(run(&["gen", "--spec", p(&spec), "--defect", "twist", "--out", p(dir.path())]).code, 3);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, b"{\"frame_width\": 3}").unwrap();
    assert_eq!(run(&["gen", "--spec", p(&bad), "--out", p(dir.path())]).code, 3);
}

#[test]
fn gen_five_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let spec = repo_file("specs/eight_wire.json");
    let out = dir.path().join("corpus");
    assert_eq!(run(&["gen", "--spec", p(&spec), "--count", "500", "--seed", "1000", "--out", p(&out)]).code, 0);
    let pngs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count();
    assert_eq!(pngs, 500);
    let rows = csv::Reader::from_path(out.join("manifest.csv")).unwrap().records().count();
    assert_eq!(rows, 500);
}

#[test]
fn train_contract() {
    let dir = tempfile::tempdir().unwrap();
    let spec = repo_file("specs/eight_wire.json");
    let views = repo_file("specs/eight_wire_views.json");
    let four = dir.path().join("four");
    run(&["gen", "--spec", p(&spec), "--count", "4", "--out", p(&four)]);
    fs::remove_file(four.join("manifest.csv")).unwrap();
    let r = run(&["train", "--samples", p(&four), "--views", p(&views), "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("minimum of five"), "{}", r.stderr);

    let malformed = dir.path().join("views.json");
    fs::write(&malformed, b"{\"views\": 12}").unwrap();
    let r = run(&["train", "--samples", p(&four), "--views", p(&malformed), "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(r.code, 3);
    assert_eq!(run(&["train", "--views"]).code, 3);

    let blurred = write_spec(dir.path(), "blur.json", &HarnessSpec { blur_radius: 6, ..HarnessSpec::eight_wire() });
    run(&["gen", "--spec", p(&blurred), "--seed", "9", "--out", p(&dir.path().join("blur"))]);
    fs::rename(dir.path().join("blur/img_00000.png"), four.join("zz_blurred.png")).unwrap();
    let r = run(&["train", "--samples", p(&four), "--views", p(&views), "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("zz_blurred.png"), "{}", r.stderr);
}

#[test]
fn inspect_exit_codes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let profile = trained_profile(dir.path());
    let spec = repo_file("specs/eight_wire.json");

    let good = gen_one(dir.path(), "ok", &spec, "none", 500);
    assert_eq!(run(&["inspect", "--profile", p(&profile), "--frames", p(&good)]).code, 0);

    let swapped = gen_one(dir.path(), "swap", &spec, "swap:2,5", 501);
    let report = dir.path().join("report.json");
    let r = run(&["inspect", "--profile", p(&profile), "--frames", p(&swapped), "--report", p(&report)]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("mismatched wires in front: [2, 5]"), "{}", r.stdout);
    let parsed: InspectionResult = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed.views[0].wires.iter().filter(|w| w.verdict == wirecheck_core::WireVerdict::Mismatch).count(), 2);

    let blur_spec = write_spec(dir.path(), "blur.json", &HarnessSpec { blur_radius: 6, ..HarnessSpec::eight_wire() });
    let blurred = gen_one(dir.path(), "blur", &blur_spec, "none", 502);
    let r = run(&["inspect", "--profile", p(&profile), "--frames", p(&blurred)]);
    assert_eq!(r.code, 2);
    assert!(r.stdout.contains("Image not clear"));

    let r = run(&["inspect", "--profile", p(&profile), "--frames", p(&good), "--json"]);
    let parsed: InspectionResult = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(serde_json::to_string(&parsed).unwrap(), serde_json::to_string(&serde_json::from_str::<InspectionResult>(&r.stdout).unwrap()).unwrap());
    assert_eq!(parsed.overall, wirecheck_core::Overall::Pass);

    let mut stale = load_profile(&profile).unwrap();
    stale.extractor_version = "older-descriptor-v0".into();
    let stale_path = dir.path().join("stale.json");
    save_profile(&stale, &stale_path).unwrap();
    let r = run(&["inspect", "--profile", p(&stale_path), "--frames", p(&good)]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("version mismatch"));

    let missing = dir.path().join("none.json");
    assert_eq!(run(&["inspect", "--profile", p(&missing), "--frames", p(&good)]).code, 4);
}

#[test]
fn serve_requires_token_and_inspects() {
    let dir = tempfile::tempdir().unwrap();
    let profile = trained_profile(dir.path());
    let loaded = load_profile(&profile).unwrap();
    let installed = wirecheck_core::pipeline::profile_path(&dir.path().join("profiles"), &loaded.harness_type, &loaded.profile_id);
    fs::create_dir_all(installed.parent().unwrap()).unwrap();
    fs::copy(&profile, &installed).unwrap();

    let server = Server::start(dir.path());
    let client = reqwest::blocking::Client::new();
    assert_eq!(client.get(server.url("/sessions")).send().unwrap().status(), StatusCode::UNAUTHORIZED);
    let created: serde_json::Value = client
        .post(server.url("/sessions"))
        .bearer_auth(TOKEN)
        .json(&serde_json::json!({ "operator": "op", "harness_type": loaded.harness_type, "profile_id": loaded.profile_id }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let id = created["session_id"].as_str().unwrap();
    let frame = gen_one(dir.path(), "f", &repo_file("specs/eight_wire.json"), "none", 700);
    let resp = client
        .post(server.url(&format!("/sessions/{id}/inspect")))
        .bearer_auth(TOKEN)
        .multipart(Form::new().part("frame", common::png_part(fs::read(frame).unwrap(), "f.png")))
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body: serde_json::Value = resp.json().unwrap();
    assert_eq!(body["result"]["overall"], "Pass");

    // a second server on the same port cannot bind
    let r = run(&[
        "serve", "--port", &server.port.to_string(),
        "--profiles-dir", p(&dir.path().join("profiles")),
        "--auth-token-file", p(&dir.path().join("token")),
        "--sessions-db", p(&dir.path().join("db2")),
    ]);
    assert_eq!(r.code, 4);
}
