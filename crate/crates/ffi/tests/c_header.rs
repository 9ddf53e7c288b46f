use std::path::{Path, PathBuf};
use std::process::Command;

// test binaries live in target/<profile>/deps next to the library artifacts
fn archive() -> PathBuf {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let here = deps.join("libpshe_ffi.a");
    if here.exists() {
        here
    } else {
        deps.parent().unwrap().join("libpshe_ffi.a")
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/pshe.h");
    assert!(header.exists(), "header not generated");
    let archive = archive();
    assert!(archive.exists(), "static library missing at {}", archive.display());
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pshe_smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/smoke.c"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}
