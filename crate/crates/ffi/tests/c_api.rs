use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use latte::dataio::{gen_synthetic_latent_var, Scaler, ScalerKind, VarSpec};
use latte::latte::{save_checkpoint, LatteModel, ModelConfig};
use latte::metrics::{crps_empirical, crps_sum, nmse, EnsembleForecast};
use latte::rng::SeededRng;
use latte_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    path: CString,
    model: LatteModel,
    scaler: Scaler,
    data: Vec<f64>,
    rows: usize,
}

fn fixture() -> Fixture {
    let (series, _) = gen_synthetic_latent_var(&VarSpec::new(5, 2, 80), 3).unwrap();
    let config = ModelConfig {
        num_series: 5,
        latent_dim: 2,
        hidden_size: 6,
        context_len: 8,
        horizon: 3,
        flow_depth: 2,
        batch_size: 4,
        epochs: 2,
        seed: 9,
        ..Default::default()
    };
    let scaler = Scaler::fit(&series, ScalerKind::Standard, 60).unwrap();
    let mut model = LatteModel::new(&config).unwrap();
    model.train(&scaler.apply(&series).unwrap(), 60).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.ckpt");
    save_checkpoint(&file, &model, &scaler).unwrap();
    Fixture {
        path: CString::new(file.to_str().unwrap()).unwrap(),
        _dir: dir,
        model,
        scaler,
        data: series.time_major(0, 80).unwrap(),
        rows: 80,
    }
}

fn last_error() -> String {
    let p = latte_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(f: &Fixture) -> *mut LatteHandle {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { latte_model_load(f.path.as_ptr(), &mut h) }, LatteStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn load_reports_dimensions() {
    let f = fixture();
    let h = load(&f);
    let (mut n, mut d, mut t, mut tau) = (0, 0, 0, 0);
    assert_eq!(
        unsafe { latte_model_dims(h, &mut n, &mut d, &mut t, &mut tau) },
        LatteStatus::Ok
    );
    assert_eq!((n, d, t, tau), (5, 2, 8, 3));
    assert_eq!(
        unsafe { latte_model_dims(h, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), &mut tau) },
        LatteStatus::Ok
    );
    unsafe { latte_model_free(h) };
    unsafe { latte_model_free(ptr::null_mut()) };
}

#[test]
fn forecast_matches_library_in_original_units() {
    let f = fixture();
    let h = load(&f);
    let context = &f.data[..40 * 5];
    let mut out = vec![0.0; 7 * 4 * 5];
    let status = unsafe {
        latte_model_forecast(
            h,
            context.as_ptr(),
            context.len(),
            4,
            7,
            11,
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(status, LatteStatus::Ok);
    let mut scaled = context.to_vec();
    f.scaler.apply_rows(&mut scaled).unwrap();
    let expected = f.model.forecast(&scaled, 4, 7, 11).unwrap().descale(&f.scaler).unwrap();
    assert_eq!(out, expected.samples);

    let mut short = vec![0.0; 3];
    let status = unsafe { latte_model_forecast(h, context.as_ptr(), context.len(), 4, 7, 11, short.as_mut_ptr(), 3) };
    assert_eq!(status, LatteStatus::Dimension);
    assert!(last_error().contains("output buffer"));
    unsafe { latte_model_free(h) };
}

#[test]
fn export_latent_matches_library() {
    let f = fixture();
    let h = load(&f);
    let mut out = vec![0.0; f.rows * 2];
    let status = unsafe { latte_model_export_latent(h, f.data.as_ptr(), f.rows, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, LatteStatus::Ok);
    let names = (0..5).map(|i| format!("s{i}")).collect();
    let series = latte::dataio::SeriesMatrix::from_time_major(names, &f.data).unwrap();
    let codes = f.model.export_latent(&f.scaler.apply(&series).unwrap()).unwrap();
    assert_eq!(out, codes.data());
    unsafe { latte_model_free(h) };
}

#[test]
fn failures_map_to_status_codes() {
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { latte_model_load(ptr::null(), &mut h) },
        LatteStatus::NullArgument
    );
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { latte_model_load(missing.as_ptr(), &mut h) }, LatteStatus::Io);
    assert!(h.is_null());

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a model").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { latte_model_load(junk.as_ptr(), &mut h) }, LatteStatus::Parse);

    let mut out = 0.0;
    let one = [1.0];
    assert_eq!(
        unsafe { latte_crps_empirical(one.as_ptr(), 1, 0.0, &mut out) },
        LatteStatus::Contract
    );
    assert_eq!(
        unsafe { latte_model_dims(ptr::null(), &mut 0, &mut 0, &mut 0, &mut 0) },
        LatteStatus::NullArgument
    );

    let zeros = [0.0; 4];
    let mut per = [0.0; 2];
    let status = unsafe { latte_nmse(zeros.as_ptr(), zeros.as_ptr(), 2, 2, per.as_mut_ptr()) };
    assert_eq!(status, LatteStatus::UndefinedMetric);

    let ok = [0.0, 1.0];
    assert_eq!(
        unsafe { latte_crps_empirical(ok.as_ptr(), 2, 0.0, &mut out) },
        LatteStatus::Ok
    );
    assert!(latte_last_error().is_null());
}

#[test]
fn metrics_match_library() {
    let mut rng = SeededRng::new(5);
    let (s, tau, n) = (20, 3, 4);
    let samples = rng.normal_vec(s * tau * n);
    let truth: Vec<f64> = rng.normal_vec(tau * n).iter().map(|v| v + 3.0).collect();

    let mut out = 0.0;
    assert_eq!(
        unsafe { latte_crps_empirical(samples.as_ptr(), s, 0.4, &mut out) },
        LatteStatus::Ok
    );
    assert_eq!(out, crps_empirical(&samples[..s], 0.4).unwrap());

    let names: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let c = crps_sum(&EnsembleForecast::new(samples.clone(), truth.clone(), s, tau, names.clone()).unwrap()).unwrap();
    for (mode, want) in [
        (LatteCrpsSumMode::Normalized, c.normalized),
        (LatteCrpsSumMode::Raw, c.raw),
    ] {
        let status = unsafe { latte_crps_sum(samples.as_ptr(), truth.as_ptr(), s, tau, n, mode, &mut out) };
        assert_eq!(status, LatteStatus::Ok);
        assert_eq!(out, want);
    }

    let pred = &samples[..tau * n];
    let mut per = vec![0.0; n];
    assert_eq!(
        unsafe { latte_nmse(pred.as_ptr(), truth.as_ptr(), tau, n, per.as_mut_ptr()) },
        LatteStatus::Ok
    );
    assert_eq!(per, nmse(pred, &truth, tau, &names).unwrap());
}

#[test]
fn generated_header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/latte.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "typedef struct LatteHandle LatteHandle",
        "LATTE_STATUS_OK = 0",
        "LATTE_STATUS_UNDEFINED_METRIC",
        "latte_last_error(void)",
        "latte_model_load(",
        "latte_model_free(",
        "latte_model_dims(",
        "latte_model_forecast(",
        "latte_model_export_latent(",
        "latte_crps_empirical(",
        "latte_crps_sum(",
        "latte_nmse(",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/latte.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "latte.h"

int main(int argc, char **argv) {
    LatteHandle *model = NULL;
    if (latte_model_load("/nonexistent", &model) != LATTE_STATUS_IO || latte_last_error() == NULL) return 2;
    if (latte_model_load(argv[1], &model) != LATTE_STATUS_OK) return 3;
    size_t n, d, t, tau;
    latte_model_dims(model, &n, &d, &t, &tau);
    double context[40 * 5];
    for (int i = 0; i < 40 * 5; i++) context[i] = (i % 7) * 0.5;
    double out[10 * 3 * 5];
    if (latte_model_forecast(model, context, 40 * n, tau, 10, 1, out, 10 * tau * n) != LATTE_STATUS_OK) return 4;
    double crps;
    double samples[3] = {0.0, 1.0, 2.0};
    if (latte_crps_empirical(samples, 3, 1.0, &crps) != LATTE_STATUS_OK) return 5;
    printf("%zu %zu %zu %zu %.17g %.6f\n", n, d, t, tau, out[0], crps);
    latte_model_free(model);
    (void)argc;
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let f = fixture();
    let Ok(exe) = std::env::current_exe() else { return };
    let target = exe.parent().and_then(Path::parent).unwrap();
    let lib = target.join("liblatte_ffi.a");
    if !lib.exists() {
        eprintln!("static library not found at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let Ok(status) = std::process::Command::new("cc")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success(), "C program failed to build");
    let out = std::process::Command::new(&bin)
        .arg(f.path.to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&fields[..4], ["5", "2", "8", "3"]);

    let context: Vec<f64> = (0..200).map(|i| (i % 7) as f64 * 0.5).collect();
    let mut scaled = context.clone();
    f.scaler.apply_rows(&mut scaled).unwrap();
    let expected = f.model.forecast(&scaled, 3, 10, 1).unwrap().descale(&f.scaler).unwrap();
    assert_eq!(fields[4].parse::<f64>().unwrap(), expected.samples[0]);
    let crps = crps_empirical(&[0.0, 1.0, 2.0], 1.0).unwrap();
    assert_eq!(fields[5], format!("{crps:.6}"));
}
