use std::fs;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relocbench::fixture::{perfect_predictions, write_fixture, FixtureOptions};
use relocbench::geometry::Pose;
use relocbench::io::poses::{qualified, write_predictions, FrameKeys};
use relocbench::io::report::{
    encode_curves_csv, encode_curves_svg, encode_frames_csv, read_curves_csv, read_frames_csv, read_summary,
    write_report, TABLE_COLUMNS,
};
use relocbench::io::{
    load_scene, read_ply, read_predictions, read_trajectory, write_ply, write_trajectory, PlyFormat, SceneManifest,
};
use relocbench::metrics::{CurveMetric, EvaluationReport, FrameRecord, MetricsConfig};
use relocbench::pipeline::{evaluate, frame_keys, EvaluateOptions};
use relocbench::synthetic::{unit_cube, SyntheticRoom};
use relocbench::{Error, SceneModel};

fn assert_same_model(a: &SceneModel, b: &SceneModel) {
    assert_eq!(a.vertices(), b.vertices());
    assert_eq!(a.colors(), b.colors());
    assert_eq!(a.labels(), b.labels());
    assert_eq!(a.triangles(), b.triangles());
}

#[test]
fn ply_round_trips_in_every_format() {
    let room = SyntheticRoom::new(3);
    let dir = tempfile::tempdir().unwrap();
    for fmt in [
        PlyFormat::Ascii,
        PlyFormat::BinaryLittleEndian,
        PlyFormat::BinaryBigEndian,
    ] {
        let p = dir.path().join(format!("{fmt:?}.ply"));
        write_ply(&p, &room.reference, fmt).unwrap();
        assert_same_model(&read_ply(&p).unwrap(), &room.reference);
    }
}

#[test]
fn ply_reads_float_colors_and_object_id_spelling() {
    let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n\
                property float red\nproperty float green\nproperty float blue\nproperty int ObjectID\n\
                element face 1\nproperty list uchar uint vertex_indices\nend_header\n\
                0 0 0 1 0 0.5 7\n1 0 0 0 1 0 7\n0 1 0 0 0 1 0\n3 0 1 2\n";
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ply");
    fs::write(&p, text).unwrap();
    let m = read_ply(&p).unwrap();
    assert_eq!(m.colors()[0], [255, 0, 128]);
    assert_eq!(m.labels(), &[7, 7, 0]);
    assert_eq!(m.triangles(), &[[0, 1, 2]]);
}

#[test]
fn ply_errors_carry_line_numbers() {
    let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
                end_header\n0 0 0\n0 zero 0\n";
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ply");
    fs::write(&p, text).unwrap();
    match read_ply(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn trajectory_round_trip_is_bit_identical() {
    let room = SyntheticRoom::new(1);
    let frames: Vec<(String, Pose)> = room
        .random_poses(200, 9)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("f{i}"), p))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.txt");
    write_trajectory(&p, &frames).unwrap();
    let back = read_trajectory(&p).unwrap();
    assert_eq!(back.len(), frames.len());
    for ((a, pa), (b, pb)) in frames.iter().zip(&back) {
        assert_eq!(a, b);
        assert_eq!(pa.to_row_major_3x4(), pb.to_row_major_3x4());
    }
}

#[test]
fn reflection_in_trajectory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.txt");
    fs::write(&p, "# header\n0 1 0 0 0 0 1 0 0 0 0 1 0\n1 -1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
    match read_trajectory(&p) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("improper rotation"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn trajectory_rejects_duplicates_and_non_rigid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.txt");
    fs::write(&p, "a 1 0 0 0 0 1 0 0 0 0 1 0\na 1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
    assert!(matches!(read_trajectory(&p), Err(Error::Parse { line: 2, .. })));
    fs::write(&p, "a 2 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
    match read_trajectory(&p) {
        Err(Error::Parse { message, .. }) => assert!(message.contains("non-rigid"), "{message}"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn prediction_round_trip_within_tolerance() {
    let room = SyntheticRoom::new(2);
    let poses = room.random_poses(1000, 4);
    let entries: Vec<(String, Option<Pose>)> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("{i:05}"), Some(*p)))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    write_predictions(&p, "my method", &entries).unwrap();
    let set = read_predictions(&p, None).unwrap();
    assert_eq!(set.method, "my method");
    assert_eq!(set.poses.len(), 1000);
    for (k, pose) in &entries {
        let back = set.get(k).unwrap();
        let a = pose.unwrap().to_matrix();
        let b = back.to_matrix();
        assert!((a - b).abs().max() <= 1e-6, "{k}");
    }
}

#[test]
fn prediction_parsing_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("method_a.txt");
    fs::write(
        &p,
        "# comment\n\
         s/0 1 0 0 0 0 0 0\n\
         s/1 nan 0 0 0 0 0 0\n\
         s/2 2 0 0 0 0 0 0\n\
         s/3 1.0004 0 0 0 1 2 3\n\
         s/9 1 0 0 0 0 0 0\n\
         4 1 0 0 0 0 0 0\n",
    )
    .unwrap();
    let keys = FrameKeys::new((0..5).map(|i| ("s", ["0", "1", "2", "3", "4"][i])));
    let set = read_predictions(&p, Some(&keys)).unwrap();
    assert_eq!(set.method, "method_a");
    let id = set.get("s/0").unwrap();
    assert_eq!(id.to_matrix(), Pose::identity().to_matrix());
    assert!(set.get("s/1").is_none());
    assert!(set.get("s/2").is_none());
    let renorm = set.get("s/3").unwrap();
    assert!((renorm.quaternion().quaternion().norm() - 1.0).abs() < 1e-15);
    assert_eq!(*renorm.translation(), Vector3::new(1.0, 2.0, 3.0));
    // Bare frame ID resolves to its qualified key.
    assert!(set.get("s/4").is_some());
    assert_eq!(set.stats.unknown_skipped, 1);
    assert_eq!(set.stats.non_finite, 1);
    assert_eq!(set.stats.rejected_quaternions, 1);
    assert_eq!(set.stats.renormalized, 1);
    assert_eq!(set.warnings.len(), 2);
}

#[test]
fn duplicate_prediction_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    fs::write(&p, "a 1 0 0 0 0 0 0\nb 1 0 0 0 0 0 0\na 1 0 0 0 0 0 0\n").unwrap();
    match read_predictions(&p, None) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("first on line 1"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn bare_ids_shared_by_sequences_are_not_aliases() {
    let keys = FrameKeys::new([("a", "0"), ("b", "0"), ("b", "1")]);
    assert_eq!(keys.canonical("0"), None);
    assert_eq!(keys.canonical("1"), Some("b/1"));
    assert_eq!(keys.canonical("a/0"), Some("a/0"));
}

#[test]
fn manifest_sequence_order_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(dir.path(), &FixtureOptions::default()).unwrap();
    let mut m = SceneManifest::read(&fx.manifest).unwrap();
    m.sequences.reverse();
    let text = toml::to_string(&m).unwrap();
    let shuffled = dir.path().join("shuffled.toml");
    fs::write(&shuffled, text).unwrap();
    let a = load_scene(&fx.manifest).unwrap();
    let b = load_scene(&shuffled).unwrap();
    let ids = |s: &relocbench::io::Scene| s.sequences.iter().map(|q| q.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
    assert_eq!(ids(&a), vec!["test01", "test02", "train01"]);
    // The reference model is shared by the training sequence.
    assert!(std::sync::Arc::ptr_eq(&a.reference, &a.sequences[2].model));
}

#[test]
fn minimal_cube_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    write_ply(
        &dir.path().join("cube.ply"),
        &unit_cube([200, 200, 200], 1),
        PlyFormat::Ascii,
    )
    .unwrap();
    fs::write(dir.path().join("traj.txt"), "0 1 0 0 0 0 1 0 0 0 0 1 -3\n").unwrap();
    fs::write(
        dir.path().join("scene.toml"),
        r#"scene_id = "cube"
reference_model = "cube.ply"

[[sequence]]
id = "s"
split = "test"
model = "cube.ply"
trajectory = "traj.txt"
intrinsics = { width = 32, height = 24, fx = 30.0, fy = 30.0, cx = 15.5, cy = 11.5 }
"#,
    )
    .unwrap();
    let scene = load_scene(&dir.path().join("scene.toml")).unwrap();
    assert_eq!(scene.sequences.len(), 1);
    assert_eq!(scene.sequences[0].frames.len(), 1);
    assert_eq!(scene.reference.triangles().len(), 12);
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("scene.toml");
    fs::write(&p, "scene_id = \"x\"\nreference_model = \"r.ply\"\nbogus = 3\n").unwrap();
    match SceneManifest::read(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

fn fixture_run(dir: &std::path::Path, drop_every: usize) -> relocbench::pipeline::MethodRun {
    let fx = write_fixture(dir, &FixtureOptions::default()).unwrap();
    let scene = load_scene(&fx.manifest).unwrap();
    let mut preds = perfect_predictions(&fx.test_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (i, p) in preds.iter_mut().enumerate() {
        if drop_every > 0 && i % drop_every == 0 {
            p.1 = None;
        } else if let Some(pose) = &mut p.1 {
            let r = Matrix3::identity();
            *pose = pose.compose(&Pose::new(r, Vector3::new(rng.gen_range(-0.1..0.1), 0.0, 0.0)).unwrap());
        }
    }
    let pp = dir.join("preds.txt");
    write_predictions(&pp, "noisy", &preds).unwrap();
    let keys = frame_keys(std::slice::from_ref(&scene), &EvaluateOptions::default().splits);
    let set = read_predictions(&pp, Some(&keys)).unwrap();
    let opts = EvaluateOptions {
        difficulty: true,
        change: true,
        ..Default::default()
    };
    evaluate(std::slice::from_ref(&scene), &set, &opts).unwrap()
}

#[test]
fn summary_and_frames_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture_run(dir.path(), 3);
    let out = dir.path().join("out");
    let summary = run.write(&out, true).unwrap();
    assert_eq!(read_summary(&out.join("summary.json")).unwrap(), summary);
    let frames = read_frames_csv(&out.join("frames.csv")).unwrap();
    assert_eq!(encode_frames_csv(&frames), encode_frames_csv(&run.frames));
    assert_eq!(frames.len(), run.frames.len());
    for (a, b) in frames.iter().zip(&run.frames) {
        assert_eq!(a.dt.map(f64::to_bits), b.dt.map(f64::to_bits));
        assert_eq!(a.dcre.mean_normalized.to_bits(), b.dcre.mean_normalized.to_bits());
        assert_eq!(a.object_check, b.object_check);
        assert_eq!(
            a.difficulty.as_ref().map(|d| d.pose_novelty.to_bits()),
            b.difficulty.as_ref().map(|d| d.pose_novelty.to_bits())
        );
        assert_eq!(
            a.change.as_ref().map(|c| c.zeta_g.to_bits()),
            b.change.as_ref().map(|c| c.zeta_g.to_bits())
        );
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let table = json["table"].as_object().unwrap();
    let keys: Vec<&str> = table.keys().map(String::as_str).collect();
    let mut expected = TABLE_COLUMNS.to_vec();
    expected.sort_unstable();
    let mut got = keys.clone();
    got.sort_unstable();
    assert_eq!(got, expected);
}

#[test]
fn svg_points_equal_curve_csv_values() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture_run(dir.path(), 4);
    let out = dir.path().join("out");
    run.write(&out, true).unwrap();
    let svg = fs::read_to_string(out.join("curves.svg")).unwrap();
    let mut csv_curves = read_curves_csv(&out.join("curve_dcre.csv")).unwrap();
    csv_curves.extend(read_curves_csv(&out.join("curve_abs.csv")).unwrap());
    let polylines: Vec<&str> = svg
        .split("points=\"")
        .skip(1)
        .map(|s| s.split('"').next().unwrap())
        .collect();
    assert_eq!(polylines.len(), csv_curves.len());
    for ((_, curve), pts) in csv_curves.iter().zip(polylines) {
        let parsed: Vec<(f64, f64)> = pts
            .split(' ')
            .map(|p| {
                let (t, f) = p.split_once(',').unwrap();
                (t.parse().unwrap(), f.parse().unwrap())
            })
            .collect();
        let expected: Vec<(f64, f64)> = curve
            .thresholds
            .iter()
            .copied()
            .zip(curve.fractions.iter().copied())
            .collect();
        assert_eq!(parsed, expected);
    }
}

#[test]
fn curve_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = fixture_run(dir.path(), 0);
    let c = run.report.curve(CurveMetric::Rotation).unwrap();
    let p = dir.path().join("c.csv");
    fs::write(&p, encode_curves_csv(&[("m,1", c)])).unwrap();
    let back = read_curves_csv(&p).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].0, "m,1");
    assert_eq!(&back[0].1, c);
    // Rendering several methods keeps one polyline per method and metric.
    let svg = encode_curves_svg(&[("a", vec![c]), ("b", vec![c])]);
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn empty_predictions_give_full_na() {
    let dir = tempfile::tempdir().unwrap();
    let k = FixtureOptions::default().intrinsics().unwrap();
    let frames: Vec<_> = (0..5)
        .map(|i| {
            relocbench::metrics::FrameEvaluation::from_frame(
                &FrameRecord::new("s", i.to_string(), Pose::identity(), k, None),
                relocbench::metrics::DcreResult::no_prediction(),
            )
        })
        .collect();
    let report = EvaluationReport::from_frames("none", frames.clone(), &MetricsConfig::default()).unwrap();
    let summary = write_report(dir.path(), &report, &frames, "no-filter", false).unwrap();
    assert_eq!(summary.table.na, 1.0);
    assert_eq!(summary.table.recall_abs, 0.0);
    assert_eq!(summary.table.outlier_abs, 0.0);
    assert_eq!(summary.table.median_dt, None);
    assert_eq!(summary.table.obj, None);
    assert_eq!(read_summary(&dir.path().join("summary.json")).unwrap(), summary);
    assert!(!dir.path().join("curves.svg").exists());
}

#[test]
fn qualified_keys_join_with_slash() {
    assert_eq!(qualified("seq", "000001"), "seq/000001");
}
