use std::path::{Path, PathBuf};
use std::process::Command;

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/minvar.h")).unwrap();
    for symbol in [
        "MINVAR_STATUS_OK = 0",
        "MINVAR_STATUS_PANIC",
        "typedef struct MinvarNetwork MinvarNetwork;",
        "typedef struct MinvarDataset MinvarDataset;",
        "const char *minvar_last_error_message(void);",
        "minvar_network_forward(",
        "minvar_spectral_embedding(",
        "minvar_cli_main(",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libminvar_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "compilation failed");
    let output = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "{}{}", stdout, String::from_utf8_lossy(&output.stderr));
    assert!(stdout.starts_with(&format!("minvar {} penalty", env!("CARGO_PKG_VERSION"))), "{stdout}");
}
