use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use gabor_cine::io;
use gabor_cine::phantom::{make_coils, make_mask, simulate, MaskKind, MaskSpec, PhantomSpec};
use gabor_cine_ffi::*;

fn write_dataset(dir: &Path) {
    let spec = PhantomSpec::beating_ring(16, 16, 4);
    let coils = make_coils(2, 16, 16, 1).unwrap();
    let mask = MaskSpec {
        kind: MaskKind::VariableDensity,
        accel: 2.0,
        acs_lines: 4,
        spokes: None,
        seed: 2,
    };
    let pattern = make_mask(&mask, 4, 16, 16).unwrap();
    let ds = simulate(&spec, &coils, &pattern, 1e-3, 3).unwrap();
    io::write_dataset(dir, &ds).unwrap();
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = gc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn small_config() -> GcFitConfig {
    GcFitConfig {
        n_init: 20,
        n_max: 30,
        rank_geom: 2,
        rank_contrast: 2,
        iters: 30,
        ..gc_fit_config_default()
    }
}

#[test]
fn default_config_matches_core_defaults() {
    let c = gc_fit_config_default();
    let d = gabor_cine::optim::FitConfig::default();
    assert_eq!(c.mode, GcMode::Gabor);
    assert_eq!((c.n_init, c.n_max, c.iters), (d.n_init, d.n_max, d.iters));
    assert_eq!((c.lambda_s, c.lambda_t), (d.lambda_s, d.lambda_t));
    let v = unsafe { CStr::from_ptr(gc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_fit_render_save_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("ds"));
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(gc_dataset_load(cstr(&dir.path().join("ds")).as_ptr(), &mut ds), GcStatus::Ok);
        assert!(gc_last_error_message().is_null());
        let (mut h, mut w, mut t, mut c) = (0, 0, 0, 0);
        assert_eq!(gc_dataset_dims(ds, &mut h, &mut w, &mut t, &mut c), GcStatus::Ok);
        assert_eq!((h, w, t, c), (16, 16, 4, 2));

        let mut model = ptr::null_mut();
        let mut summary = GcFitSummary {
            final_data_loss: 0.0,
            final_count: 0,
            psnr_db: 0.0,
            ssim: 0.0,
            wall_time_s: 0.0,
        };
        assert_eq!(gc_fit(ds, &small_config(), &mut model, &mut summary), GcStatus::Ok);
        assert!(summary.final_data_loss.is_finite() && summary.psnr_db.is_finite());
        assert!((20..=30).contains(&summary.final_count));

        let mut n = 0;
        assert_eq!(gc_model_dims(model, ptr::null_mut(), ptr::null_mut(), &mut t, &mut n), GcStatus::Ok);
        assert_eq!((t, n), (4, summary.final_count));

        let mut re = vec![0.0; 256];
        let mut im = vec![0.0; 256];
        assert_eq!(gc_model_render(model, 1, 16, 16, re.as_mut_ptr(), im.as_mut_ptr(), 256), GcStatus::Ok);
        assert!(re.iter().any(|v| *v != 0.0));

        let path = dir.path().join("m.gcm");
        assert_eq!(gc_model_save(model, cstr(&path).as_ptr()), GcStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(gc_model_load(cstr(&path).as_ptr(), &mut loaded), GcStatus::Ok);
        let mut re2 = vec![0.0; 256];
        let mut im2 = vec![0.0; 256];
        assert_eq!(gc_model_render(loaded, 1, 16, 16, re2.as_mut_ptr(), im2.as_mut_ptr(), 256), GcStatus::Ok);
        assert_eq!((re, im), (re2, im2));

        gc_model_free(loaded);
        gc_model_free(model);
        gc_dataset_free(ds);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = cstr(&dir.path().join("nope"));
        assert_eq!(gc_dataset_load(missing.as_ptr(), &mut ds), GcStatus::Io);
        assert!(ds.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(gc_dataset_load(ptr::null(), &mut ds), GcStatus::NullPointer);
        assert_eq!(last_error(), "path is null");

        write_dataset(&dir.path().join("ds"));
        assert_eq!(gc_dataset_load(cstr(&dir.path().join("ds")).as_ptr(), &mut ds), GcStatus::Ok);
        let mut model = ptr::null_mut();
        let bad = GcFitConfig {
            n_init: 40,
            n_max: 10,
            ..small_config()
        };
        assert_eq!(gc_fit(ds, &bad, &mut model, ptr::null_mut()), GcStatus::InvalidArgument);
        assert!(model.is_null());
        assert!(last_error().contains("invalid configuration"));

        assert_eq!(gc_fit(ds, &small_config(), &mut model, ptr::null_mut()), GcStatus::Ok);
        let mut re = vec![0.0; 10];
        let mut im = vec![0.0; 10];
        assert_eq!(gc_model_render(model, 0, 16, 16, re.as_mut_ptr(), im.as_mut_ptr(), 10), GcStatus::InvalidArgument);
        let mut big = vec![0.0; 256];
        let mut big_im = vec![0.0; 256];
        assert_eq!(gc_model_render(model, 9, 16, 16, big.as_mut_ptr(), big_im.as_mut_ptr(), 256), GcStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        gc_model_free(model);
        gc_dataset_free(ds);
        gc_dataset_free(ptr::null_mut());
        gc_model_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include.join("gabor_cine.h").is_file());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"gabor_cine.h\"\n\
         int main(void) {\n\
           GcFitConfig c = gc_fit_config_default();\n\
           GcDataset *d = NULL; GcModel *m = NULL; GcFitSummary s;\n\
           if (gc_dataset_load(\"x\", &d) != GC_STATUS_OK) return 1;\n\
           if (gc_fit(d, &c, &m, &s) != GC_STATUS_OK) return 2;\n\
           gc_model_free(m); gc_dataset_free(d);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .expect("a C compiler named cc");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
