use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

/// The extension library cargo built next to this test binary.
fn extension() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    let name = format!("{}ppc{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX);
    [deps.join(&name), deps.parent()?.join(&name)].into_iter().find(|p| p.exists())
}

#[test]
fn python_smoke_script() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let lib = extension().expect("extension library not built");
    let dir = tempfile::tempdir().unwrap();
    let module = if cfg!(windows) { "ppc.pyd" } else { "ppc.so" };
    fs::copy(&lib, dir.path().join(module)).unwrap();

    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let out = Command::new("python3")
        .arg(&script)
        .env("PYTHONPATH", dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("ppc smoke test ok"));
}
