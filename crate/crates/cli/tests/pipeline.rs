use std::path::Path;
use std::process::Command;

use approx::assert_relative_eq;
use flowstab::lie::{exp_rot, AffineTransform, GroupTag};
use flowstab::render::metric_stability;
use flowstab::scene::read_flow;
use flowstab_cli::io::{flow_path, format_transforms, image_path, read_transforms};
use flowstab_cli::{
    cmd_estimate, cmd_metrics, cmd_stabilize, cmd_synth, cmd_warp, mask_path, stab_image_path, PipelineConfig,
    Trajectory, CAMERA_CSV, RENDER_CSV, STABILIZED_CSV, TRANSFORMS_CSV,
};
use nalgebra::{Matrix4, Vector3};
use tempfile::TempDir;

fn config_in(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        out: dir.to_path_buf(),
        ..Default::default()
    }
}

fn synth(dir: &Path, traj: Trajectory, steps: usize, seed: u64) -> PipelineConfig {
    let mut c = config_in(dir);
    c.seed = seed;
    cmd_synth(&c, &traj, steps).unwrap();
    c
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_with_same_seed_is_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(a.path(), Trajectory::Jitter, 6, 42);
    synth(b.path(), Trajectory::Jitter, 6, 42);
    let (fa, fb) = (sorted_files(a.path()), sorted_files(b.path()));
    assert_eq!(fa.len(), 6 + 7 + 7 + 4);
    assert_eq!(fa, fb);
}

#[test]
fn static_synth_writes_zero_flows() {
    let d = TempDir::new().unwrap();
    synth(d.path(), Trajectory::Static, 10, 0);
    for i in 0..10 {
        let f = read_flow(&flow_path(d.path(), i)).unwrap();
        assert!(f.data.iter().all(|v| *v == [0.0f32; 3]));
    }
    assert!(!flow_path(d.path(), 10).exists());
}

#[test]
fn constant_translation_flow_is_uniform() {
    let d = TempDir::new().unwrap();
    synth(d.path(), Trajectory::Constant, 3, 0);
    let f = read_flow(&flow_path(d.path(), 1)).unwrap();
    for v in &f.data {
        assert_relative_eq!(f64::from(v[0]), 0.01, epsilon = 1e-9);
        assert_eq!((v[1], v[2]), (0.0, 0.0));
    }
}

#[test]
fn estimate_recovers_pure_translation() {
    let d = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    let mut c = synth(d.path(), Trajectory::Constant, 4, 0);
    c.out = out.path().to_path_buf();
    let report = cmd_estimate(&c, d.path()).unwrap();
    assert!(report.low_confidence_steps.is_empty());
    let steps = read_transforms(&out.path().join(TRANSFORMS_CSV)).unwrap();
    assert_eq!(steps.len(), 4);
    for g in &steps {
        assert!((g.translation() - Vector3::new(0.01, 0.0, 0.0)).amax() < 1e-6);
    }

    c.recenter = true;
    cmd_estimate(&c, d.path()).unwrap();
    for g in read_transforms(&out.path().join(TRANSFORMS_CSV)).unwrap() {
        assert!((g.translation() - Vector3::new(0.01, 0.0, 0.0)).amax() < 1e-6);
        assert!((g.linear() - nalgebra::Matrix3::identity()).amax() < 1e-6);
    }
}

#[test]
fn missing_flow_is_reported_with_its_frame() {
    let d = TempDir::new().unwrap();
    let c = synth(d.path(), Trajectory::Static, 5, 0);
    std::fs::remove_file(flow_path(d.path(), 3)).unwrap();
    let err = cmd_estimate(&config_in(&c.out.join("out")), d.path()).unwrap_err();
    assert!(format!("{err:#}").contains("frame 3"), "{err:#}");
}

fn write_steps(dir: &Path, steps: &[AffineTransform]) -> std::path::PathBuf {
    let p = dir.join("steps.csv");
    std::fs::write(&p, format_transforms(steps)).unwrap();
    p
}

#[test]
fn ninety_frames_split_at_default_keyframes() {
    let d = TempDir::new().unwrap();
    let steps: Vec<AffineTransform> = (0..89)
        .map(|i| {
            let w = Vector3::new(0.003 * (i as f64 * 1.3).sin(), 0.002 * (i as f64 * 0.7).cos(), 0.0);
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&exp_rot(&w));
            m[(0, 3)] = 0.01;
            AffineTransform::new(GroupTag::Se3, m).unwrap()
        })
        .collect();
    let input = write_steps(d.path(), &steps);
    let r = cmd_stabilize(&config_in(d.path()), &input, None).unwrap();
    let spans: Vec<(usize, usize)> = r.segments.iter().map(|s| (s.start, s.end)).collect();
    assert_eq!(spans, vec![(0, 30), (30, 60), (60, 89)]);
    assert!(r.segments.iter().all(|s| s.converged));
    assert_eq!(read_transforms(&d.path().join(STABILIZED_CSV)).unwrap().len(), 90);
    assert_eq!(read_transforms(&d.path().join(CAMERA_CSV)).unwrap().len(), 90);
}

#[test]
fn pure_noise_path_gains_stability() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let d = TempDir::new().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 0.002).unwrap();
    let steps: Vec<AffineTransform> = (0..29)
        .map(|_| {
            let c: Vec<f64> = (0..6).map(|_| noise.sample(&mut rng)).collect();
            flowstab::lie::group_from_twist(&flowstab::lie::Twist::from_slice(GroupTag::Se3, &c).unwrap())
        })
        .collect();
    let input = write_steps(d.path(), &steps);
    let r = cmd_stabilize(&config_in(d.path()), &input, None).unwrap();
    let camera = read_transforms(&d.path().join(CAMERA_CSV)).unwrap();
    assert!(metric_stability(&r.stabilized).unwrap() > metric_stability(&camera).unwrap());
}

#[test]
fn identity_steps_stabilize_to_identity() {
    let d = TempDir::new().unwrap();
    let input = write_steps(d.path(), &vec![AffineTransform::identity(GroupTag::Se3); 20]);
    let r = cmd_stabilize(&config_in(d.path()), &input, None).unwrap();
    for g in r.stabilized.iter().chain(&r.render_transforms) {
        assert!((g.matrix() - Matrix4::identity()).amax() < 1e-12);
    }
}

#[test]
fn identity_render_reproduces_frames_and_scores_perfectly() {
    let d = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    synth(d.path(), Trajectory::Static, 9, 0);
    let c = config_in(out.path());
    let renders = vec![AffineTransform::identity(GroupTag::Se3); 10];
    std::fs::write(out.path().join(RENDER_CSV), format_transforms(&renders)).unwrap();
    std::fs::write(out.path().join(STABILIZED_CSV), format_transforms(&renders)).unwrap();

    let w = cmd_warp(&c, d.path(), &out.path().join(RENDER_CSV)).unwrap();
    assert!(w.failed_frames.is_empty());
    for i in 0..10 {
        let src = image::open(image_path(d.path(), i)).unwrap().to_luma8();
        let dst = image::open(stab_image_path(out.path(), i)).unwrap().to_luma8();
        assert_eq!(src.as_raw(), dst.as_raw(), "frame {i}");
        let mask = image::open(mask_path(out.path(), i)).unwrap().to_luma8();
        assert!(mask.pixels().all(|p| p.0[0] == 255));
    }

    let m = cmd_metrics(&c, d.path(), out.path()).unwrap();
    assert_eq!((m.cropping, m.distortion, m.stability, m.failed), (1.0, 1.0, 1.0, false));
}

#[test]
fn view_pushed_out_of_frame_fails_every_metric() {
    let d = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    synth(d.path(), Trajectory::Static, 9, 0);
    let mut renders = vec![AffineTransform::identity(GroupTag::Se3); 10];
    renders[4] = AffineTransform::translation_only(GroupTag::Se3, &Vector3::new(50.0, 0.0, 0.0));
    std::fs::write(out.path().join(RENDER_CSV), format_transforms(&renders)).unwrap();
    std::fs::write(
        out.path().join(STABILIZED_CSV),
        format_transforms(&vec![AffineTransform::identity(GroupTag::Se3); 10]),
    )
    .unwrap();
    let m = cmd_metrics(&config_in(out.path()), d.path(), out.path()).unwrap();
    assert!(m.failed);
    assert_eq!(m.failed_frames, vec![4]);
    assert_eq!((m.cropping, m.distortion, m.stability), (0.0, 0.0, 0.0));
}

#[test]
fn warp_rejects_count_mismatch_and_missing_images() {
    let d = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    synth(d.path(), Trajectory::Static, 4, 0);
    let c = config_in(out.path());
    let render = out.path().join(RENDER_CSV);
    std::fs::write(&render, format_transforms(&vec![AffineTransform::identity(GroupTag::Se3); 4])).unwrap();
    assert!(cmd_warp(&c, d.path(), &render).is_err());
    std::fs::write(&render, format_transforms(&vec![AffineTransform::identity(GroupTag::Se3); 5])).unwrap();
    std::fs::remove_file(image_path(d.path(), 2)).unwrap();
    let err = cmd_warp(&c, d.path(), &render).unwrap_err();
    assert!(err.to_string().contains("frame 2"), "{err}");
}

fn flowstab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_flowstab")).args(args).output().unwrap()
}

#[test]
fn binary_runs_the_whole_pipeline() {
    let root = TempDir::new().unwrap();
    let p = |s: &str| root.path().join(s).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let o = flowstab(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth", "--trajectory", "jitter", "--steps", "39", "--seed", "3", "--out", &p("data")]);
    run(&["estimate", &p("data"), "--out", &p("est")]);
    run(&["stabilize", &p("est/transforms.csv"), "--out", &p("stab")]);
    run(&["warp", &p("data"), &p("stab/render.csv"), "--out", &p("warp")]);
    run(&["metrics", &p("data"), &p("stab"), "--out", &p("stab")]);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.path().join("stab/metrics.json")).unwrap()).unwrap();
    assert_eq!(report["failed"], false);
    let camera = read_transforms(&root.path().join("stab").join(CAMERA_CSV)).unwrap();
    let stab = read_transforms(&root.path().join("stab").join(STABILIZED_CSV)).unwrap();
    assert!(metric_stability(&stab).unwrap() > metric_stability(&camera).unwrap());
    assert!(root.path().join("warp/stab_0039.png").exists());
}

#[test]
fn binary_rejects_bad_arguments() {
    let o = flowstab(&["--group", "so3", "synth"]);
    assert!(!o.status.success());
    let o = flowstab(&["estimate", "/nonexistent/dataset"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("intrinsics are required"));
}
