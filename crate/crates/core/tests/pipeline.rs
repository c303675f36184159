use std::path::Path;

use relocbench::difficulty::FilterPreset;
use relocbench::fixture::{
    drop_predictions, noisy_predictions, perfect_predictions, write_fixture, Fixture, FixtureOptions,
};
use relocbench::geometry::Pose;
use relocbench::io::manifest::Scene;
use relocbench::io::poses::write_predictions;
use relocbench::io::{load_scene, read_predictions, SceneManifest};
use relocbench::metrics::ObjectCheck;
use relocbench::pipeline::{evaluate, frame_keys, reaggregate, EvaluateOptions, MethodRun};
use relocbench::Error;

fn setup(dir: &Path) -> (Fixture, Scene) {
    let fx = write_fixture(dir, &FixtureOptions::default()).unwrap();
    let scene = load_scene(&fx.manifest).unwrap();
    (fx, scene)
}

fn run(dir: &Path, scene: &Scene, name: &str, preds: &[(String, Option<Pose>)], opts: &EvaluateOptions) -> MethodRun {
    let p = dir.join(format!("{name}.txt"));
    write_predictions(&p, name, preds).unwrap();
    let keys = frame_keys(std::slice::from_ref(scene), &opts.splits);
    let set = read_predictions(&p, Some(&keys)).unwrap();
    assert_eq!(set.stats.unknown_skipped, 0);
    evaluate(std::slice::from_ref(scene), &set, opts).unwrap()
}

fn full() -> EvaluateOptions {
    EvaluateOptions {
        difficulty: true,
        change: true,
        ..Default::default()
    }
}

#[test]
fn perfect_predictions_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, scene) = setup(dir.path());
    let r = run(dir.path(), &scene, "gt", &perfect_predictions(&fx.test_frames), &full());
    let a = &r.report.aggregates;
    assert_eq!(a.frame_count, 20);
    assert_eq!(a.na_fraction, 0.0);
    assert!(a.recall_abs.iter().all(|v| v.value == 1.0));
    assert!(a.recall_dcre.iter().all(|v| v.value == 1.0));
    // Prediction files carry 9 significant digits.
    assert!(r.frames.iter().all(|f| f.dcre.mean_normalized <= 1e-6));
    assert_eq!(a.obj_fraction, None);
    // Training frames are not evaluated, but are the novelty reference.
    let d = r.frames[0].difficulty.as_ref().unwrap();
    assert!(d.nearest_train.as_deref().unwrap().starts_with("train01/"));
    assert!(d.pose_novelty > 0.0);
    // The moved box shows up as change in frames that see it.
    assert!(r.frames.iter().any(|f| f.change.as_ref().unwrap().zeta_s > 0.0));
}

#[test]
fn dropped_predictions_count_as_not_available() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, scene) = setup(dir.path());
    let preds = drop_predictions(&perfect_predictions(&fx.test_frames), 0.3, 11);
    let r = run(dir.path(), &scene, "dropped", &preds, &EvaluateOptions::default());
    let a = &r.report.aggregates;
    assert_eq!(a.na_fraction, 0.3);
    assert!((a.recall_abs[0].value - 0.7).abs() < 1e-15);
    assert_eq!(a.outlier_abs[0].value, 0.0);
    assert_eq!(a.predicted_count, 14);
}

#[test]
fn localizing_against_the_moved_object_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, scene) = setup(dir.path());
    // A method that registers the camera to the moved box reports the pose
    // consistent with the box's reference placement.
    let mut preds = Vec::new();
    for seq in scene.sequences.iter().filter(|s| !s.object_transforms.is_empty()) {
        let moved = seq.object_transforms.iter().find(|o| o.is_moved()).unwrap();
        for (f, gt) in &seq.frames {
            let p = moved.transform.inverse().compose(gt);
            preds.push((format!("{}/{f}", seq.id), Some(p)));
        }
    }
    assert_eq!(preds.len(), fx.test_frames.len());
    let r = run(dir.path(), &scene, "object", &preds, &EvaluateOptions::default());
    let failures = r.frames.iter().filter(|f| f.dcre.mean_normalized >= 0.15).count();
    let flagged = r
        .frames
        .iter()
        .filter(|f| matches!(f.object_check, ObjectCheck::Flagged(_)))
        .count();
    assert!(failures > 0);
    assert!(flagged > 0);
    let checked = r
        .frames
        .iter()
        .filter(|f| f.object_check != ObjectCheck::NotEvaluated)
        .count();
    assert_eq!(checked, failures);
    assert_eq!(r.report.aggregates.obj_fraction, Some(flagged as f64 / checked as f64));
    assert_eq!(flagged, checked);
}

#[test]
fn complementary_presets_partition_the_frames() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, scene) = setup(dir.path());
    let preds = noisy_predictions(&fx.test_frames, 0.05, 3.0, 0.2, 3);
    let r = run(dir.path(), &scene, "noisy", &preds, &full());
    let out = dir.path().join("out");
    r.write(&out, false).unwrap();
    let count = |name: &str| {
        let p = FilterPreset::by_name(name).unwrap();
        relocbench::difficulty::apply_filter(&r.frames, &p).unwrap().len()
    };
    assert_eq!(count("no-filter"), 20);
    assert_eq!(count("well-textured") + count("texture-less"), count("default"));
    assert!(count("novel") + count("not-novel") <= count("default"));
    // Every preset re-aggregates from frames.csv to the same numbers.
    for p in FilterPreset::all() {
        let mut opts = full();
        opts.preset = p.clone();
        let direct = match evaluate(
            std::slice::from_ref(&scene),
            &read_predictions(
                &dir.path().join("noisy.txt"),
                Some(&frame_keys(std::slice::from_ref(&scene), &opts.splits)),
            )
            .unwrap(),
            &opts,
        ) {
            Ok(d) => d,
            Err(Error::Precondition(_)) => continue,
            Err(e) => panic!("{}: {e}", p.name),
        };
        let again = reaggregate(&out.join("frames.csv"), "noisy", &p, &opts.metrics).unwrap();
        assert_eq!(
            serde_json::to_string(&direct.report.aggregates).unwrap(),
            serde_json::to_string(&again.report.aggregates).unwrap(),
            "{}",
            p.name
        );
    }
}

#[test]
fn presets_need_their_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (fx, scene) = setup(dir.path());
    let opts = EvaluateOptions {
        preset: FilterPreset::by_name("hard-changes").unwrap(),
        ..Default::default()
    };
    let p = dir.path().join("m.txt");
    write_predictions(&p, "m", &perfect_predictions(&fx.test_frames)).unwrap();
    let set = read_predictions(&p, None).unwrap();
    let err = evaluate(std::slice::from_ref(&scene), &set, &opts).unwrap_err();
    assert!(err.is_usage(), "{err}");
}

#[test]
fn keep_going_leaves_failed_scores_empty() {
    let dir = tempfile::tempdir().unwrap();
    let fx = write_fixture(dir.path(), &FixtureOptions::default()).unwrap();
    // Without training frames pose novelty cannot be computed.
    let mut m = SceneManifest::read(&fx.manifest).unwrap();
    m.sequences.retain(|s| s.id != "train01");
    let path = dir.path().join("no_train.toml");
    m.write(&path).unwrap();
    let scene = load_scene(&path).unwrap();
    let p = dir.path().join("m.txt");
    write_predictions(&p, "m", &perfect_predictions(&fx.test_frames)).unwrap();
    let set = read_predictions(&p, None).unwrap();

    let mut opts = full();
    let err = evaluate(std::slice::from_ref(&scene), &set, &opts).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("sequence test01") && msg.contains("frame 000000"), "{msg}");

    opts.keep_going = true;
    let r = evaluate(std::slice::from_ref(&scene), &set, &opts).unwrap();
    assert!(r.frames.iter().all(|f| f.difficulty.is_none() && f.change.is_some()));
    assert_eq!(r.report.aggregates.recall_abs[0].value, 1.0);
}
