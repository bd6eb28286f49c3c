use std::path::Path;
use std::process::{Command, Output};

fn spk(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spk")).args(args).current_dir(cwd).output().unwrap()
}

fn frame_count(dir: &Path, prefix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(prefix))
        .count()
}

const SCENE: &str = "[scene]
kind = oscillating_bar
height = 16
width = 16
duration = 256
bar_width = 4
amplitude = 1
frequency = 625
";

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("scene.ini"), SCENE).unwrap();

    let out = spk(&["simulate", "--scene", "scene.ini", "--noise", "0.05", "--seed", "3", "-o", "s.spk"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let info = spk(&["info", "s.spk"], d);
    assert!(String::from_utf8_lossy(&info.stdout).contains("16x16 pixels, 256 steps"));

    let out = spk(&["encode", "--stream", "s.spk", "--mode", "tfp", "--window", "32", "--stride", "16", "-o", "frames"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // centres 16, 32, ..., 240
    assert_eq!(frame_count(&d.join("frames"), "frame"), 15);

    let out = spk(&["metrics", "--in", "frames", "-o", "report.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(csv.contains("sigma_s"), "{csv}");

    // an identity plugin leaves the frames as they were
    let out = spk(
        &["magnify", "--in", "frames", "--alpha", "5", "--band", "100:400", "--fps", "1250", "--plugin-cmd", "cp \"$SPK_IN\"/* \"$SPK_OUT\"/", "-o", "mag"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..15 {
        let name = format!("frame_{i:06}.png");
        assert_eq!(std::fs::read(d.join("frames").join(&name)).unwrap(), std::fs::read(d.join("mag").join(&name)).unwrap());
    }
}

#[test]
fn failures_exit_nonzero_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = spk(&["encode", "--stream", "missing.spk", "-o", "f"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[encode]"));

    std::fs::create_dir(dir.path().join("frames")).unwrap();
    std::fs::write(dir.path().join("s.ini"), SCENE).unwrap();
    spk(&["simulate", "--scene", "s.ini", "-o", "s.spk"], dir.path());
    spk(&["encode", "--stream", "s.spk", "-o", "frames"], dir.path());
    let out = spk(&["magnify", "--in", "frames", "--band", "100:400", "--fps", "1250", "--plugin-cmd", "exit 3", "-o", "m"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[magnify]"));
}
