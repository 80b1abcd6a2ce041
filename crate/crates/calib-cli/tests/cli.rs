//! End-to-end tests of the `calib` binary: the simulate -> calibrate ->
//! evaluate flow, remap with image warping, exit codes, and cross-process
//! determinism.

use calib_core::camera::CameraIntrinsics;
use calib_core::geometry::{Pose, Quaternion};
use calib_core::io::{load_calibration, save_calibration, save_correspondences, save_raster};
use calib_core::nalgebra::Vector3;
use calib_core::remap::{Raster, RemapField};
use calib_core::residuals::ParamBlock;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn calib(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calib"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn truth_params() -> ParamBlock {
    let intrinsics = CameraIntrinsics {
        fx: 718.0,
        fy: 716.2,
        cx: 620.5,
        cy: 187.9,
        k1: -0.30,
        k2: 0.08,
        k3: -0.004,
        t1: 0.0006,
        t2: -0.0004,
        width: 1242,
        height: 376,
    };
    let rot = Quaternion::from_axis_angle(&Vector3::new(0.1, -1.0, 0.2), 1.4);
    ParamBlock::new(intrinsics, Pose::new(rot, Vector3::new(0.05, -0.08, -0.27)))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// A scratch directory with `truth.json` and a simulate config in it.
fn sim_setup(seed: u64, n_points: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    save_calibration(&truth_params(), None, dir.path().join("truth.json")).unwrap();
    let config = dir.path().join("sim.json");
    write(
        &config,
        &format!(
            "{{\"schema_version\": \"runconfig/1\",
              \"ground_truth\": \"truth.json\",
              \"seed\": {seed},
              \"scene_spec\": {{\"n_points\": {n_points}, \"depth_min\": 2.0, \"depth_max\": 50.0}}}}"
        ),
    );
    (dir, config)
}

#[test]
fn simulate_calibrate_evaluate_flow() {
    let (dir, sim_config) = sim_setup(11, 600);
    let root = dir.path();

    let out = calib(&["simulate", "--config", "sim.json", "--out", "sim"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    for file in
        ["scene.csv", "correspondences.csv", "initial_params.json", "ground_truth.json", "runconfig.json"]
    {
        assert!(root.join("sim").join(file).exists(), "missing {file}");
    }
    drop(sim_config);

    let out = calib(&["calibrate", "--config", "sim/runconfig.json", "--out", "cal"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let loaded = load_calibration(root.join("cal/calibration.json")).unwrap();
    let truth = truth_params();
    assert!((loaded.params.intrinsics.fx - truth.intrinsics.fx).abs() < 5.0);
    assert!((loaded.params.intrinsics.fy - truth.intrinsics.fy).abs() < 5.0);
    let trace = loaded.refinement.expect("trace embedded");
    assert_eq!(trace.iterations.len(), 11);

    write(
        &root.join("eval.json"),
        "{\"schema_version\": \"runconfig/1\",
          \"estimated\": \"cal/calibration.json\",
          \"ground_truth\": \"truth.json\",
          \"n_rays\": 2000,
          \"seed\": 5}",
    );
    let out = calib(&["evaluate", "--config", "eval.json", "--out", "evalout"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    assert!(report["translation_cm"].as_f64().unwrap() < 10.0);
    assert!(report["rotation_deg"].as_f64().unwrap() < 1.0);
    assert!(report["intrinsic_reproj_px"].as_f64().unwrap() < 10.0);
    assert_eq!(report["n_rays"].as_u64().unwrap(), 2000);
    let written = std::fs::read_to_string(root.join("evalout/error_report.json")).unwrap();
    let rewritten: serde_json::Value = serde_json::from_str(&written).unwrap();
    assert_eq!(rewritten, report);
}

#[test]
fn calibrate_runs_are_byte_identical() {
    let (dir, _) = sim_setup(21, 300);
    let root = dir.path();
    let out = calib(&["simulate", "--config", "sim.json", "--out", "sim"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));

    for target in ["cal_a", "cal_b"] {
        let out = calib(&["calibrate", "--config", "sim/runconfig.json", "--out", target], root);
        assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    }
    let a = std::fs::read(root.join("cal_a/calibration.json")).unwrap();
    let b = std::fs::read(root.join("cal_b/calibration.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_is_seeded_and_seed_flag_overrides() {
    let (dir, _) = sim_setup(33, 200);
    let root = dir.path();
    for target in ["s1", "s2"] {
        let out = calib(&["simulate", "--config", "sim.json", "--out", target], root);
        assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    }
    let a = std::fs::read(root.join("s1/correspondences.csv")).unwrap();
    let b = std::fs::read(root.join("s2/correspondences.csv")).unwrap();
    assert_eq!(a, b);

    let out = calib(&["simulate", "--config", "sim.json", "--out", "s3", "--seed", "34"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let c = std::fs::read(root.join("s3/correspondences.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn kitti_ground_truth_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let truth = truth_params();
    let m = truth.extrinsics.rotation.to_rotation_matrix();
    let r: Vec<String> =
        m.row_iter().flat_map(|row| [row[0], row[1], row[2]]).map(|v| format!("{v:.17e}")).collect();
    write(
        &root.join("calib.txt"),
        &format!(
            "S_00: 1242 376\n\
             K_00: 718 0 620.5 0 716.2 187.9 0 0 1\n\
             D_00: -0.3 0.08 0.0006 -0.0004 -0.004\n\
             R_00: {}\n\
             T_00: 0.05 -0.08 -0.27\n",
            r.join(" ")
        ),
    );
    write(
        &root.join("sim.json"),
        "{\"schema_version\": \"runconfig/1\",
          \"ground_truth\": \"calib.txt\",
          \"seed\": 2,
          \"scene_spec\": {\"n_points\": 150, \"depth_min\": 2.0, \"depth_max\": 50.0}}",
    );
    let out = calib(&["simulate", "--config", "sim.json", "--out", "sim"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let converted = load_calibration(root.join("sim/ground_truth.json")).unwrap().params;
    assert_eq!(converted.intrinsics.fx, 718.0);
    assert_eq!(converted.intrinsics.k3, -0.004);
    assert_eq!(converted.extrinsics.translation, truth.extrinsics.translation);
    let angle = calib_core::geometry::rotation_angle_between_deg(
        &converted.extrinsics.rotation,
        &truth.extrinsics.rotation,
    );
    assert!(angle < 1e-9);
}

#[test]
fn remap_writes_a_loadable_field_and_warped_image() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let source = CameraIntrinsics {
        fx: 160.0,
        fy: 158.0,
        cx: 81.0,
        cy: 59.5,
        k1: -0.18,
        k2: 0.05,
        k3: -0.002,
        t1: 0.0008,
        t2: -0.0005,
        width: 160,
        height: 120,
    };
    let mut target = source;
    target.cx -= 6.0;
    target.k1 = -0.12;
    save_calibration(&ParamBlock::new(source, Pose::IDENTITY), None, root.join("source.json"))
        .unwrap();
    save_calibration(&ParamBlock::new(target, Pose::IDENTITY), None, root.join("target.json"))
        .unwrap();
    let data: Vec<u8> = (0..160 * 120).map(|i| (i % 251) as u8).collect();
    save_raster(&Raster::new(160, 120, 1, data).unwrap(), root.join("input.png")).unwrap();
    write(
        &root.join("remap.json"),
        "{\"schema_version\": \"runconfig/1\",
          \"source_params\": \"source.json\",
          \"target_params\": \"target.json\",
          \"image\": \"input.png\"}",
    );
    let out = calib(&["remap", "--config", "remap.json", "--out", "rm"], root);
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));

    let file = std::fs::File::open(root.join("rm/remap.rmap")).unwrap();
    let field = RemapField::read_from(std::io::BufReader::new(file)).unwrap();
    assert_eq!((field.width(), field.height()), (160, 120));
    assert!(field.valid_count() > 0);

    let warped = calib_core::io::load_raster(root.join("rm/warped.png")).unwrap();
    assert_eq!((warped.width, warped.height, warped.channels), (160, 120, 1));
}

#[test]
fn bad_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // Missing config file.
    let out = calib(&["calibrate", "--config", "absent.json"], root);
    assert_eq!(exit_code(&out), 1, "{}", stderr_of(&out));

    // Unknown config field.
    write(&root.join("bad.json"), "{\"schema_version\": \"runconfig/1\", \"surprise\": 1}");
    let out = calib(&["calibrate", "--config", "bad.json"], root);
    assert_eq!(exit_code(&out), 1);

    // Valid file, but no mode fields for calibrate.
    write(&root.join("empty.json"), "{\"schema_version\": \"runconfig/1\"}");
    let out = calib(&["calibrate", "--config", "empty.json", "--out", "x"], root);
    assert_eq!(exit_code(&out), 1);

    // Missing required --config flag.
    let out = calib(&["calibrate"], root);
    assert_eq!(exit_code(&out), 1);

    // No subcommand.
    let out = calib(&[], root);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"][..], &["calibrate", "--help"][..]] {
        let out = calib(args, dir.path());
        assert_eq!(exit_code(&out), 0);
    }
}

#[test]
fn numerical_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let truth = truth_params();
    save_calibration(&truth, None, root.join("truth.json")).unwrap();

    // Too few usable correspondences for a joint solve.
    let point = truth.extrinsics.inverse().apply(&Vector3::new(0.2, 0.1, 10.0));
    let pixel = truth.intrinsics.project(&point, &truth.extrinsics).pixel;
    let frame = calib_core::io::CorrespondenceFrame {
        frame_id: 0,
        correspondences: vec![
            calib_core::Correspondence { point, pixel, weight: 1.0 };
            4
        ],
    };
    save_correspondences(&[frame], root.join("tiny.csv")).unwrap();
    write(
        &root.join("cal.json"),
        "{\"schema_version\": \"runconfig/1\",
          \"correspondences\": \"tiny.csv\",
          \"initial_params\": \"truth.json\"}",
    );
    let out = calib(&["calibrate", "--config", "cal.json", "--out", "cal"], root);
    assert_eq!(exit_code(&out), 2, "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("iteration 0"), "{}", stderr_of(&out));

    // Ground truth whose valid radius covers none of its own image: every
    // sampled ray fails to unproject.
    let mut broken = truth;
    broken.intrinsics.cx = -4000.0;
    broken.intrinsics.k1 = -1.5;
    broken.intrinsics.k2 = 0.0;
    broken.intrinsics.k3 = 0.0;
    save_calibration(&broken, None, root.join("broken.json")).unwrap();
    write(
        &root.join("eval.json"),
        "{\"schema_version\": \"runconfig/1\",
          \"estimated\": \"truth.json\",
          \"ground_truth\": \"broken.json\",
          \"n_rays\": 500,
          \"seed\": 1}",
    );
    let out = calib(&["evaluate", "--config", "eval.json"], root);
    assert_eq!(exit_code(&out), 2, "{}", stderr_of(&out));
}
