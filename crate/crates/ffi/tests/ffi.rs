use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use afecl_ffi::*;

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(afecl_last_error()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut AfeclGraph {
    let mut g = ptr::null_mut();
    let s = unsafe { afecl_graph_load(fixture(name).as_ptr(), &mut g) };
    assert_eq!(s, AfeclStatus::Ok, "{}", last_error());
    g
}

fn train(g: *const AfeclGraph, cfg: &str) -> (AfeclStatus, *mut AfeclModel) {
    let cfg = CString::new(cfg).unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { afecl_train(g, cfg.as_ptr(), &mut m) };
    (s, m)
}

#[test]
fn train_and_copy_embeddings() {
    let g = load("triangle");
    let (mut n, mut e, mut f) = (0, 0, 0);
    assert_eq!(unsafe { afecl_graph_shape(g, &mut n, &mut e, &mut f) }, AfeclStatus::Ok);
    assert_eq!((n, e, f), (3, 3, 2));

    let (s, m) = train(g, r#"{"temperature": 0.5, "epochs": 3, "heads": 2, "hidden": 3, "data": "ignored"}"#);
    assert_eq!(s, AfeclStatus::Ok, "{}", last_error());
    let (mut rows, mut cols) = (0, 0);
    assert_eq!(unsafe { afecl_model_embedding_shape(m, &mut rows, &mut cols) }, AfeclStatus::Ok);
    assert_eq!((rows, cols), (3, 6));
    let mut buf = vec![f64::NAN; rows * cols];
    assert_eq!(unsafe { afecl_model_copy_embeddings(m, buf.as_mut_ptr(), buf.len()) }, AfeclStatus::Ok);
    assert!(buf.iter().all(|v| v.is_finite()));

    let mut small = vec![0.0; 5];
    assert_eq!(
        unsafe { afecl_model_copy_embeddings(m, small.as_mut_ptr(), small.len()) },
        AfeclStatus::BufferTooSmall
    );
    assert!(last_error().contains("18"));

    let mut loss = f64::NAN;
    assert_eq!(unsafe { afecl_model_final_loss(m, &mut loss) }, AfeclStatus::Ok);
    assert!(loss.is_finite() && loss >= 0.0);

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { afecl_model_save(m, d.as_ptr()) }, AfeclStatus::Ok);
    assert!(dir.path().join("params.json").is_file());
    assert!(dir.path().join("params.bin").is_file());

    unsafe {
        afecl_model_free(m);
        afecl_graph_free(g);
    }
}

#[test]
fn same_config_gives_identical_embeddings() {
    let g = load("communities");
    let cfg = r#"{"temperature": 1.0, "epochs": 4, "heads": 1, "hidden": 4, "seed": 9}"#;
    let grab = |m: *mut AfeclModel| {
        let mut buf = vec![0.0; 42 * 4];
        assert_eq!(unsafe { afecl_model_copy_embeddings(m, buf.as_mut_ptr(), buf.len()) }, AfeclStatus::Ok);
        unsafe { afecl_model_free(m) };
        buf
    };
    let a = grab(train(g, cfg).1);
    let b = grab(train(g, cfg).1);
    assert_eq!(a, b);
    unsafe { afecl_graph_free(g) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut g = ptr::null_mut();
    let missing = CString::new("/definitely/not/here").unwrap();
    assert_eq!(unsafe { afecl_graph_load(missing.as_ptr(), &mut g) }, AfeclStatus::Data);
    assert!(g.is_null());
    assert!(last_error().contains("meta.json"));
    assert_eq!(unsafe { afecl_graph_load(ptr::null(), &mut g) }, AfeclStatus::NullPointer);
    let bad_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { afecl_graph_load(bad_utf8.as_ptr().cast(), &mut g) }, AfeclStatus::InvalidUtf8);

    let g = load("triangle");
    let (s, m) = train(g, "{}");
    assert_eq!(s, AfeclStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("temperature"));
    assert_eq!(train(g, "not json").0, AfeclStatus::Config);
    assert_eq!(train(g, r#"{"temperature": -1}"#).0, AfeclStatus::Config);
    assert_eq!(train(ptr::null(), r#"{"temperature": 1}"#).0, AfeclStatus::NullPointer);
    unsafe {
        afecl_graph_free(g);
        afecl_graph_free(ptr::null_mut());
        afecl_model_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(afecl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_exported_symbols() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/afecl.h")).unwrap();
    for sym in [
        "afecl_version",
        "afecl_last_error",
        "afecl_graph_load",
        "afecl_graph_free",
        "afecl_graph_shape",
        "afecl_train",
        "afecl_model_free",
        "afecl_model_embedding_shape",
        "afecl_model_copy_embeddings",
        "afecl_model_final_loss",
        "afecl_model_save",
        "typedef struct AfeclGraph AfeclGraph",
        "AFECL_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

fn static_lib() -> Option<PathBuf> {
    // target/<profile>/deps/ffi-<hash> → target/<profile>/libafecl_ffi.a
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libafecl_ffi.a");
    lib.is_file().then_some(lib)
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; checking the header compiles only");
        let ok = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
            .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c"))
            .status();
        if let Ok(s) = ok {
            assert!(s.success());
        }
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("no C compiler available");
        return;
    };
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).arg(fixture("triangle").to_str().unwrap()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rows 3 cols 2"), "{text}");
}
