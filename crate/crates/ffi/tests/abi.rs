use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use msmd::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(msmd_last_error()) }.to_string_lossy().into_owned()
}

fn gaussian(ids: &[usize], mean: &[f64], cov: &[f64]) -> *mut MsmdGaussian {
    let mut g = ptr::null_mut();
    let s = unsafe { msmd_gaussian_from_moments(ids.len(), ids.as_ptr(), mean.as_ptr(), cov.as_ptr(), &mut g) };
    assert_eq!(s, MsmdStatus::Ok, "{}", last_error());
    g
}

#[test]
fn gaussian_round_trip_and_marginal() {
    let g = gaussian(&[0, 1], &[1.0, -2.0], &[2.0, 0.5, 0.5, 1.0]);
    unsafe {
        assert_eq!(msmd_gaussian_dim(g), 2);
        let mut mean = [0.0; 2];
        assert_eq!(msmd_gaussian_mean(g, mean.as_mut_ptr(), 2), MsmdStatus::Ok);
        assert!((mean[0] - 1.0).abs() < 1e-12 && (mean[1] + 2.0).abs() < 1e-12);
        let mut cov = [0.0; 4];
        assert_eq!(msmd_gaussian_covariance(g, cov.as_mut_ptr(), 4), MsmdStatus::Ok);
        for (a, b) in cov.iter().zip([2.0, 0.5, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut m = ptr::null_mut();
        assert_eq!(msmd_gaussian_marginalize(g, [1usize].as_ptr(), 1, &mut m), MsmdStatus::Ok);
        let mut v = [0.0];
        msmd_gaussian_covariance(m, v.as_mut_ptr(), 1);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert_eq!(msmd_gaussian_mean(g, mean.as_mut_ptr(), 3), MsmdStatus::InvalidArgument);
        msmd_gaussian_free(m);
        msmd_gaussian_free(g);
    }
}

#[test]
fn kl_matches_closed_form() {
    let p = gaussian(&[0], &[0.0], &[1.0]);
    let q = gaussian(&[0], &[1.0], &[4.0]);
    let mut kl = f64::NAN;
    unsafe {
        assert_eq!(msmd_gaussian_kl(p, q, &mut kl), MsmdStatus::Ok);
        let expect = 0.5 * (1.0 / 4.0 + 1.0 / 4.0 - 1.0 + 4.0f64.ln());
        assert!((kl - expect).abs() < 1e-12);

        let hs = [p as *const MsmdGaussian, q as *const MsmdGaussian];
        let mut m = ptr::null_mut();
        assert_eq!(msmd_gaussian_geometric_mean(hs.as_ptr(), [0.5, 0.5].as_ptr(), 2, &mut m), MsmdStatus::Ok);
        let mut var = [0.0];
        msmd_gaussian_covariance(m, var.as_mut_ptr(), 1);
        assert!((var[0] - 1.0 / (0.5 + 0.125)).abs() < 1e-12);
        msmd_gaussian_free(m);
        msmd_gaussian_free(p);
        msmd_gaussian_free(q);
    }
}

#[test]
fn invalid_covariance_is_reported() {
    let mut g = ptr::null_mut();
    let s = unsafe { msmd_gaussian_from_moments(1, [0usize].as_ptr(), [0.0].as_ptr(), [-1.0].as_ptr(), &mut g) };
    assert_ne!(s, MsmdStatus::Ok);
    assert!(g.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_rejected() {
    unsafe {
        assert_eq!(msmd_experiment_from_preset(ptr::null(), &mut ptr::null_mut()), MsmdStatus::NullPointer);
        assert!(last_error().contains("name"));
        assert_eq!(msmd_gaussian_kl(ptr::null(), ptr::null(), ptr::null_mut()), MsmdStatus::NullPointer);
        assert_eq!(msmd_gaussian_dim(ptr::null()), 0);
        msmd_gaussian_free(ptr::null_mut());
        msmd_experiment_free(ptr::null_mut());
        msmd_string_free(ptr::null_mut());
    }
}

#[test]
fn experiment_runs_from_preset() {
    let dir = tempfile::tempdir().unwrap();
    let name = CString::new("mapping-desk").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(msmd_experiment_from_preset(name.as_ptr(), &mut e), MsmdStatus::Ok);
        assert_eq!(msmd_experiment_set_rounds(e, 4), MsmdStatus::Ok);
        assert_eq!(msmd_experiment_set_seed(e, 9), MsmdStatus::Ok);
        assert_eq!(msmd_experiment_set_jobs(e, 1), MsmdStatus::Ok);
        assert_eq!(msmd_experiment_set_output(e, out.as_ptr()), MsmdStatus::Ok);

        let mut json = ptr::null_mut();
        assert_eq!(msmd_experiment_to_json(e, &mut json), MsmdStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        msmd_string_free(json);
        let mut e2 = ptr::null_mut();
        let c = CString::new(text).unwrap();
        assert_eq!(msmd_experiment_from_json(c.as_ptr(), &mut e2), MsmdStatus::Ok);

        let mut runs = 0;
        assert_eq!(msmd_experiment_run(e2, &mut runs), MsmdStatus::Ok, "{}", last_error());
        assert_eq!(runs, 1);
        assert!(dir.path().join("mapping-desk_marginal_seed9.csv").exists());
        msmd_experiment_free(e);
        msmd_experiment_free(e2);
    }
}

#[test]
fn bad_config_maps_to_config_status() {
    let name = CString::new("no-such-preset").unwrap();
    let json = CString::new(r#"{"schema_version":2}"#).unwrap();
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(msmd_experiment_from_preset(name.as_ptr(), &mut e), MsmdStatus::Config);
        assert_eq!(msmd_experiment_from_json(json.as_ptr(), &mut e), MsmdStatus::Config);
        assert!(e.is_null());
    }
}

#[test]
fn verify_suite_reports_json() {
    let name = CString::new("pinsker").unwrap();
    unsafe {
        let mut report = ptr::null_mut();
        assert_eq!(msmd_verify(name.as_ptr(), 1, &mut report), MsmdStatus::Ok, "{}", last_error());
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
        assert_eq!(v["passed"], true);
        msmd_string_free(report);
        let bad = CString::new("bogus").unwrap();
        assert_eq!(msmd_verify(bad.as_ptr(), 1, ptr::null_mut()), MsmdStatus::Config);
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(msmd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/msmd.h");
    assert!(header.exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"msmd.h\"\nint main(void) { MsmdGaussian *g = 0; MsmdStatus s = msmd_gaussian_kl(g, g, 0); return s == MSMD_STATUS_OK; }\n",
    )
    .unwrap();
    let out = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("cc not found; skipping header check");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
