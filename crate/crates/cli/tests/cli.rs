use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mscarve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscarve"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mscarve(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(&["synth", "--out", p(dir), "--poses", "10", "--size", "160,90", "--seed", "3"]);
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mean_line(stdout: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with("mean_psnr = ")).unwrap();
    line["mean_psnr = ".len()..].parse().unwrap()
}

#[test]
fn staged_commands_match_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene);

    let out = tmp.path().join("run");
    let text = ok(&["pipeline", "--scene", p(&scene), "--out", p(&out), "--scales", "0.5,0.25", "--jobs", "2"]);
    assert!(text.contains("test.mean_psnr = "));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let pipeline_test = report["test"]["mean_psnr"].as_f64().unwrap();

    let models = tmp.path().join("models");
    let carve = ok(&["carve", "--scene", p(&scene), "--out", p(&models), "--scales", "0.5,0.25", "--text"]);
    assert_eq!(carve.lines().filter(|l| l.starts_with("scale ")).count(), 2);
    assert!(models.join("scale_0.25.msvc").is_file());
    assert!(models.join("scale_0.25.txt").is_file());
    assert_eq!(
        fs::read(models.join("scale_0.25.msvc")).unwrap(),
        fs::read(out.join("models/scale_0.25.msvc")).unwrap()
    );

    let renders = tmp.path().join("renders");
    ok(&["render", "--scene", p(&scene), "--models", p(&models), "--out", p(&renders), "--split", "test"]);
    assert!(renders.join("test/000008_s0.5.png").is_file());
    assert!(!renders.join("train").exists());

    let blended = tmp.path().join("blended");
    ok(&["blend", "--renders", p(&renders.join("test")), "--out", p(&blended)]);
    for id in ["000008", "000009"] {
        assert_eq!(
            fs::read(blended.join(format!("{id}.png"))).unwrap(),
            fs::read(out.join(format!("blended/test/{id}.png"))).unwrap()
        );
    }

    let scores = tmp.path().join("scores.json");
    let eval = ok(&["eval", "--scene", p(&scene), "--pred", p(&blended), "--out", p(&scores)]);
    assert!((mean_line(&eval) - pipeline_test).abs() < 1e-3);
    let parsed: serde_json::Value = serde_json::from_slice(&fs::read(&scores).unwrap()).unwrap();
    let parsed = parsed.as_array().unwrap();
    assert_eq!(parsed.len(), 2);
    let frames = report["frames"].as_array().unwrap();
    for s in parsed {
        let f = frames.iter().find(|f| f["id"] == s["id"]).unwrap();
        assert_eq!(s["psnr"], f["psnr"]);
        assert_eq!(s["psnr_unmasked"], f["psnr_unmasked"]);
    }
}

#[test]
fn config_file_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene);
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "scales = [0.5]\nwrite_images = false\neps_hsv = 0.9\n").unwrap();
    let out = tmp.path().join("out");
    ok(&["pipeline", "--scene", p(&scene), "--out", p(&out), "--config", p(&cfg), "--eps-hsv", "0.35"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let scales = report["scales"].as_array().unwrap();
    assert_eq!(scales.len(), 1);
    assert_eq!(scales[0]["params"]["eps_hsv"].as_f64(), Some(0.35));
    assert!(!out.join("blended").exists());
}

#[test]
fn failures_are_stage_tagged() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = mscarve(&["pipeline", "--scene", p(&tmp.path().join("nope")), "--out", p(&out)]);
    assert!(!missing.status.success());
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.contains("load: "), "{err}");
    assert!(out.join("FAILED").is_file());

    let scene = tmp.path().join("scene");
    synth(&scene);
    let bad = mscarve(&["pipeline", "--scene", p(&scene), "--out", p(&out), "--scales", "0.5,-1"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("carve: "));
    assert!(fs::read_to_string(out.join("FAILED")).unwrap().contains("carve"));

    let few = mscarve(&["carve", "--scene", p(&scene), "--out", p(&out), "--stride", "20"]);
    assert!(String::from_utf8_lossy(&few.stderr).contains("split: "));

    let zero = mscarve(&["--jobs", "0", "synth", "--out", p(&out)]);
    assert!(!zero.status.success());

    let usage = mscarve(&["carve", "--scene"]);
    assert!(!usage.status.success());
}

#[test]
fn import_builds_a_loadable_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth(&scene);
    let manifest = fs::read_to_string(scene.join("manifest.toml")).unwrap();
    fs::remove_file(scene.join("manifest.toml")).unwrap();

    let mut csv = String::from("frame,x,y,z,yaw,pitch,roll\n");
    for (id, block) in manifest.split("[[frames]]").skip(1).enumerate() {
        let field = |name: &str| -> String {
            let line = block.lines().find(|l| l.starts_with(&format!("{name} ="))).unwrap();
            line.split_once('=').unwrap().1.trim().trim_matches(['[', ']']).to_string()
        };
        csv.push_str(&format!("{id},{},{}\n", field("position"), field("ypr_deg")));
    }
    fs::write(scene.join("telemetry.csv"), csv).unwrap();
    let fx = 80.0 / (30f64).to_radians().tan();
    let text = ok(&[
        "import",
        p(&scene),
        "--fx",
        &fx.to_string(),
        "--stride",
        "1",
        "--grid-origin=-26,-26,-1",
        "--grid-extent=52,52,6",
    ]);
    assert!(text.contains("10 frames"), "{text}");
    ok(&["carve", "--scene", p(&scene), "--out", p(&tmp.path().join("m")), "--scales", "0.5"]);
}
