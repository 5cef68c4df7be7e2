//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "aftmed.h"

int main(void) {
    double t1[120], t2[120], a[120], m[120];
    for (int i = 0; i < 120; i++) {
        a[i] = i % 2;
        m[i] = 0.4 * a[i] + ((i * 37) % 23) / 23.0 - 0.5;
        t1[i] = exp(1.0 + 0.5 * a[i] - 0.3 * m[i] + ((i * 53) % 29) / 29.0 - 0.5);
        t2[i] = (i % 5 == 0) ? NAN : t1[i];
    }
    AftmedDataset *ds = NULL;
    if (aftmed_dataset_from_arrays(120, t1, t2, a, m, &ds) != AFTMED_STATUS_OK) return 1;
    AftmedFit *fit = NULL;
    if (aftmed_fit(ds, AFTMED_LAW_WEIBULL, AFTMED_TIME_SCALE_DEFAULT, true, &fit) != AFTMED_STATUS_OK) return 2;
    double coef[3];
    if (aftmed_fit_coefficients(fit, coef, 3) != AFTMED_STATUS_OK) return 3;
    AftmedEstimates est;
    if (aftmed_mediate(ds, AFTMED_LAW_WEIBULL, AFTMED_TIME_SCALE_DEFAULT, 1.0, 0.0, 0, 1, &est) != AFTMED_STATUS_OK) return 4;
    if (fabs(est.total_product - est.nde - est.nie_product) > 1e-12) return 5;
    if (aftmed_fit(NULL, AFTMED_LAW_NORMAL, AFTMED_TIME_SCALE_DEFAULT, true, &fit) != AFTMED_STATUS_NULL_POINTER) return 6;
    if (aftmed_last_error_message() == NULL) return 7;
    printf("%s %.6f %.6f\n", aftmed_version(), coef[1], est.nie_product);
    aftmed_fit_free(fit);
    aftmed_dataset_free(ds);
    return 0;
}
"#;

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links() {
    let dir = tempfile_dir();
    let src = dir.join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let lib = profile_dir().join("libaftmed_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = dir.join("smoke");
    let out = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler is available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
}

#[test]
fn header_is_valid_cplusplus() {
    let dir = tempfile_dir();
    let src = dir.join("check.cpp");
    std::fs::write(&src, "#include \"aftmed.h\"\nint main() { return AFTMED_STATUS_OK; }\n").unwrap();
    let out = Command::new("c++")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .output()
        .expect("a C++ compiler is available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!(
        "ffi-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
