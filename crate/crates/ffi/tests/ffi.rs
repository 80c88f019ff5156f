use std::ffi::{c_void, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use shapfed_ffi::*;

fn last_error() -> String {
    let p = shapfed_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const CONFIG: &str = "participants = 3\n\
    data.classes = 2\ndata.dim = 3\ndata.per_class = 40\n\
    train.rounds = 3\ntrain.eta = 0.05\ntrain.batch_size = 8\n\
    strategies = fedavg, shapfed\n";

fn experiment(text: &str) -> *mut ShapfedExperiment {
    let text = CString::new(text).unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { shapfed_experiment_from_str(text.as_ptr(), &mut exp) };
    assert_eq!(st, ShapfedStatus::Ok, "{}", last_error());
    exp
}

#[test]
fn config_errors_carry_status_and_message() {
    let text = CString::new(format!("{CONFIG}not.a.key = 3\n")).unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { shapfed_experiment_from_str(text.as_ptr(), &mut exp) };
    assert_eq!(st, ShapfedStatus::Config);
    assert!(exp.is_null());
    assert!(last_error().contains("line 9"), "{}", last_error());

    let st = unsafe { shapfed_experiment_from_str(ptr::null(), &mut exp) };
    assert_eq!(st, ShapfedStatus::NullPointer);

    let missing = CString::new("/nonexistent/exp.cfg").unwrap();
    let st = unsafe { shapfed_experiment_from_file(missing.as_ptr(), &mut exp) };
    assert_eq!(st, ShapfedStatus::Config);

    let bad_utf8 = [0xffu8, 0xfe, 0];
    let st = unsafe { shapfed_experiment_from_str(bad_utf8.as_ptr().cast(), &mut exp) };
    assert_eq!(st, ShapfedStatus::InvalidUtf8);
}

#[test]
fn train_and_read_back_a_run_log() {
    let exp = experiment(CONFIG);
    unsafe {
        let mut n = 0;
        let mut strategies = 0;
        assert_eq!(shapfed_experiment_participants(exp, &mut n), ShapfedStatus::Ok);
        assert_eq!(
            shapfed_experiment_strategy_count(exp, &mut strategies),
            ShapfedStatus::Ok
        );
        assert_eq!((n, strategies), (3, 2));

        let mut log = ptr::null_mut();
        assert_eq!(shapfed_experiment_train(exp, 1, 2, &mut log), ShapfedStatus::Ok);
        let (mut rounds, mut participants, mut classes) = (0, 0, 0);
        shapfed_run_log_dims(log, &mut rounds, &mut participants, &mut classes);
        assert_eq!((rounds, participants, classes), (3, 3, 2));

        let mut raw = [0.0; 3];
        let mut norm = [0.0; 3];
        assert_eq!(
            shapfed_run_log_gamma(log, 2, raw.as_mut_ptr(), norm.as_mut_ptr(), 3),
            ShapfedStatus::Ok
        );
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(raw.iter().all(|g| (0.0..=1.0).contains(g)));

        let mut gamma = [0.0; 6];
        assert_eq!(
            shapfed_run_log_contributions(log, 0, gamma.as_mut_ptr(), 6),
            ShapfedStatus::Ok
        );
        assert!(gamma.iter().all(|g| (-1.0..=1.0).contains(g)));
        assert_eq!(
            shapfed_run_log_contributions(log, 0, gamma.as_mut_ptr(), 5),
            ShapfedStatus::Shape
        );
        assert_eq!(
            shapfed_run_log_contributions(log, 3, gamma.as_mut_ptr(), 6),
            ShapfedStatus::Input
        );

        let mut global = 0.0;
        let mut accs = [0.0; 3];
        assert_eq!(
            shapfed_run_log_accuracy(log, 2, &mut global, accs.as_mut_ptr(), 3),
            ShapfedStatus::Ok
        );
        assert!((0.0..=1.0).contains(&global));

        let mut r = f64::NAN;
        let mut degenerate = true;
        assert_eq!(
            shapfed_run_log_fairness(log, &mut r, &mut degenerate),
            ShapfedStatus::Ok
        );
        assert!((-1.0..=1.0).contains(&r));
        shapfed_run_log_free(log);

        let mut log = ptr::null_mut();
        assert_eq!(
            shapfed_experiment_train(exp, 7, 1, &mut log),
            ShapfedStatus::Input
        );
        assert!(log.is_null());
        shapfed_experiment_free(exp);
    }
}

#[test]
fn file_outputs_match_the_cli_and_are_seeded() {
    let exp = experiment(CONFIG);
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str| std::fs::read(dir.path().join(sub).join("metrics_shapfed.csv")).unwrap();
    let path = |sub: &str| CString::new(dir.path().join(sub).to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(
            shapfed_experiment_run(exp, path("a").as_ptr(), 1),
            ShapfedStatus::Ok
        );
        assert_eq!(
            shapfed_experiment_run(exp, path("b").as_ptr(), 4),
            ShapfedStatus::Ok
        );
        assert_eq!(read("a"), read("b"));
        assert_eq!(shapfed_experiment_set_seed(exp, 99), ShapfedStatus::Ok);
        assert_eq!(
            shapfed_experiment_run(exp, path("c").as_ptr(), 1),
            ShapfedStatus::Ok
        );
        assert_ne!(read("a"), read("c"));

        let mut agree = usize::MAX;
        assert_eq!(
            shapfed_experiment_audit(exp, path("d").as_ptr(), 1, &mut agree),
            ShapfedStatus::Ok
        );
        assert!(agree <= 2);
        assert!(dir.path().join("d/audit.json").is_file());
        assert_eq!(
            shapfed_experiment_partition_report(exp, path("d").as_ptr()),
            ShapfedStatus::Ok
        );
        assert!(dir.path().join("d/partition.csv").is_file());
        shapfed_experiment_free(exp);
        shapfed_experiment_free(ptr::null_mut());
        shapfed_run_log_free(ptr::null_mut());
    }
}

#[test]
fn math_entry_points() {
    let spec = ShapfedModelSpec {
        kind: ShapfedModelKind::Mlp,
        input_dim: 3,
        hidden: 4,
        num_classes: 2,
    };
    unsafe {
        let mut len = 0;
        assert_eq!(shapfed_param_count(&spec, &mut len), ShapfedStatus::Ok);
        assert_eq!(len, 26);

        let mut w = vec![0.0; len];
        assert_eq!(
            shapfed_init_params(&spec, 0, w.as_mut_ptr(), len),
            ShapfedStatus::Ok
        );
        let ones = vec![1.0; len];
        let mut out = vec![0.0; len];
        assert_eq!(
            shapfed_personalize(&spec, ones.as_ptr(), w.as_ptr(), len, 1.0, out.as_mut_ptr()),
            ShapfedStatus::Ok
        );
        assert_eq!(out, ones);
        assert_eq!(
            shapfed_personalize(&spec, ones.as_ptr(), w.as_ptr(), len, 0.0, out.as_mut_ptr()),
            ShapfedStatus::Ok
        );
        assert_eq!(out, w);
        assert_eq!(
            shapfed_personalize(&spec, ones.as_ptr(), w.as_ptr(), len, 1.5, out.as_mut_ptr()),
            ShapfedStatus::Input
        );
        assert_eq!(
            shapfed_personalize(&spec, ones.as_ptr(), w.as_ptr(), len - 1, 0.5, out.as_mut_ptr()),
            ShapfedStatus::Shape
        );

        // Two participants, two classes, feature_dim 2; participant 1 has its class-1 column negated.
        let agg = [1.0, 0.0, 0.0, 1.0];
        let updates = [1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, -1.0];
        let mut gamma = [0.0; 4];
        assert_eq!(
            shapfed_cssv(updates.as_ptr(), agg.as_ptr(), 2, 2, 2, gamma.as_mut_ptr()),
            ShapfedStatus::Ok
        );
        assert_eq!(gamma, [1.0, 1.0, 1.0, -1.0]);

        let mut raw = [0.0; 2];
        let mut norm = [0.0; 2];
        let table = [-1.0, -1.0, 1.0, 1.0];
        assert_eq!(
            shapfed_importance(table.as_ptr(), 2, 2, raw.as_mut_ptr(), norm.as_mut_ptr()),
            ShapfedStatus::Ok
        );
        assert_eq!((raw, norm), ([0.0, 1.0], [0.0, 1.0]));

        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 1.0, 3.0];
        let mut r = 0.0;
        let mut degenerate = true;
        assert_eq!(
            shapfed_pearson(x.as_ptr(), y.as_ptr(), 3, &mut r, &mut degenerate),
            ShapfedStatus::Ok
        );
        assert!((r - 0.5).abs() < 1e-12 && !degenerate);
        assert_eq!(
            shapfed_pearson(x.as_ptr(), y.as_ptr(), 1, &mut r, ptr::null_mut()),
            ShapfedStatus::Input
        );
    }
}

unsafe extern "C" fn single_carrier(coalition: u32, out: *mut f64, classes: usize, _: *mut c_void) -> i32 {
    for j in 0..classes {
        *out.add(j) = if coalition & 1 != 0 { 1.0 } else { 0.0 };
    }
    0
}

unsafe extern "C" fn failing(_: u32, _: *mut f64, _: usize, _: *mut c_void) -> i32 {
    -3
}

unsafe extern "C" fn additive(coalition: u32, out: *mut f64, classes: usize, data: *mut c_void) -> i32 {
    let values = data as *const f64;
    for j in 0..classes {
        *out.add(j) = (0..4)
            .filter(|i| coalition & (1 << i) != 0)
            .map(|i| *values.add(i * classes + j))
            .sum();
    }
    0
}

#[test]
fn exact_shapley_through_callbacks() {
    unsafe {
        let mut phi = [f64::NAN; 6];
        let mut calls = 0;
        let st = shapfed_exact_shapley(
            3,
            2,
            Some(single_carrier),
            ptr::null_mut(),
            1,
            phi.as_mut_ptr(),
            &mut calls,
        );
        assert_eq!(st, ShapfedStatus::Ok);
        assert_eq!(phi, [1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(calls, 7);

        let mut values = [0.5, -1.0, 2.0, 0.0, 0.25, 3.0, -0.75, 1.0];
        let mut phi = [0.0; 8];
        let data = values.as_mut_ptr().cast();
        let st = shapfed_exact_shapley(4, 2, Some(additive), data, 4, phi.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, ShapfedStatus::Ok);
        for (p, v) in phi.iter().zip(values) {
            assert!((p - v).abs() < 1e-12);
        }

        let st = shapfed_exact_shapley(
            3,
            2,
            Some(failing),
            ptr::null_mut(),
            1,
            phi.as_mut_ptr(),
            ptr::null_mut(),
        );
        assert_eq!(st, ShapfedStatus::Callback);
        assert!(last_error().contains("-3"));

        let st = shapfed_exact_shapley(3, 2, None, ptr::null_mut(), 1, phi.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, ShapfedStatus::NullPointer);

        let mut big = vec![0.0; 17 * 2];
        let st = shapfed_exact_shapley(
            17,
            2,
            Some(single_carrier),
            ptr::null_mut(),
            1,
            big.as_mut_ptr(),
            ptr::null_mut(),
        );
        assert_eq!(st, ShapfedStatus::Config);
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/shapfed.h")).unwrap();
    let source = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() > 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct ShapfedExperiment ShapfedExperiment;"));
    assert!(header.contains("SHAPFED_STATUS_OK = 0"));
}

/// Compiles and runs a C program against the header and the static library
/// when a C compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    }) else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libshapfed_ffi.a");
    if !lib.is_file() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).arg("ok").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
