//! Compiles and runs a small C program against the generated header and
//! the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "smoothing.h"

int main(void) {
    const char *json = "{\"label\":\"det\",\"offspring\":{\"family\":\"Fixed\",\"n\":2},"
                       "\"weight\":{\"family\":\"Deterministic\",\"value\":0.4},"
                       "\"inhom\":{\"family\":\"Constant\",\"b\":1.0}}";
    SmModel *m = NULL;
    if (sm_model_from_json(json, &m) != SM_STATUS_OK) return 1;
    double v = 0.0;
    if (sm_mellin(m, 1.0, &v) != SM_STATUS_OK || fabs(v - 0.8) > 1e-12) return 2;
    char *report = NULL;
    if (sm_analyze(m, 0, &report) != SM_STATUS_OK) return 3;
    sm_string_free(report);
    if (sm_model_from_json("{", &m) != SM_STATUS_INVALID_MODEL || m != NULL) return 4;
    if (sm_last_error() == NULL) return 5;
    printf("ok %.3f\n", v);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libsmoothing_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_links() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not found; skipping");
        return;
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok 0.800");
}
