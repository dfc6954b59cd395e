use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semflow::io::{read_flo, write_labels, SequenceManifest};
use semflow::pipeline::{flow_file_name, refine_sequence, run_eval, run_refine, synth_dataset, RefineConfig, RefineOptions, SequenceInput};
use semflow::synth::{render, Motion, SceneSpec};
use semflow::{Category, ClassId, ClassTaxonomy, SegMap};

fn small_scene() -> SceneSpec {
    let mut s = SceneSpec::square_over_homography();
    s.width = 64;
    s.height = 56;
    s.frames = 3;
    s.background = vec![[1.004, 0.0, 0.8, 0.0, 1.003, 0.3, 0.0, 0.0, 1.0]];
    s.objects[0].center = [30.0, 28.0];
    s.objects[0].half_size = [8.0, 7.0];
    s.objects[0].motion = vec![Motion::Translate([1.5, 0.5])];
    s.flow_noise = 0.3;
    s.mask_dilation = 2;
    s
}

fn dataset(spec: &SceneSpec, dir: &Path, window: usize) -> PathBuf {
    synth_dataset(spec, dir, window).unwrap()
}

fn options(out: &Path) -> RefineOptions {
    RefineOptions {
        output: Some(out.to_path_buf()),
        ..Default::default()
    }
}

fn report_values(path: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn unknown_labels_leave_flow_files_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = dataset(&small_scene(), dir.path(), 3);
    let manifest = SequenceManifest::load(&manifest_path).unwrap();
    for f in &manifest.frames {
        write_labels(&SegMap::filled(64, 56, ClassId::UNKNOWN), &dir.path().join(&f.labels)).unwrap();
    }
    let out = dir.path().join("refined");
    let report = run_refine(&manifest_path, &options(&out)).unwrap();
    assert!(report.tracks.is_empty());
    for (t, f) in manifest.frames[..2].iter().enumerate() {
        let input = std::fs::read(dir.path().join(f.flow.as_ref().unwrap())).unwrap();
        let output = std::fs::read(out.join(flow_file_name(t, false))).unwrap();
        assert_eq!(input, output);
    }
}

#[test]
fn refine_is_deterministic_and_reports_consistent_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&small_scene(), dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run_refine(&manifest, &options(&a)).unwrap();
    let mut opts = options(&b);
    opts.jobs = Some(1);
    run_refine(&manifest, &opts).unwrap();
    for name in ["flow_0000.flo", "flow_0001.flo", "masks/mask_0000.png", "masks/mask_0002.png"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }

    assert_eq!(ra.tracks.len(), 1);
    let values = report_values(&a.join("report.txt"));
    let trace: Vec<f64> = values["track.0.energy"].split(' ').map(|e| e.parse().unwrap()).collect();
    assert!(trace.len() >= 3);
    assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    assert_eq!(values["track.0.class"], "car");
    assert!(ra.metrics["refined.epe_all"] < ra.metrics["initial.epe_all"]);

    let gt = dir.path().join("gt");
    let eval = run_eval(&a, &gt.join("flow"), Some(&gt.join("fg")), Some(&gt.join("noc"))).unwrap();
    assert_eq!(eval.per_file.len(), 2);
    let ev = eval.aggregate.to_map("");
    for key in ["epe_all", "epe_fg", "epe_bg", "epe_noc", "fl_all"] {
        let (x, y) = (ev[key], ra.metrics[&format!("refined.{key}")]);
        assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{key}: eval {x} vs report {y}");
    }
}

#[test]
fn window_length_and_kitti_output() {
    let mut spec = small_scene();
    spec.frames = 4;
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&spec, dir.path(), 5);
    let out = dir.path().join("k");
    let mut opts = options(&out);
    opts.window = Some(2);
    opts.kitti = true;
    opts.visualize = true;
    let report = run_refine(&manifest, &opts).unwrap();
    // One track per two-frame window.
    assert_eq!(report.tracks.len(), 3);
    assert_eq!(report.tracks.iter().map(|t| t.start_frame).collect::<Vec<_>>(), vec![0, 1, 2]);
    for t in 0..3 {
        assert!(out.join(flow_file_name(t, true)).exists());
        assert!(out.join(format!("viz/flow_{t:04}.png")).exists());
    }
    for t in 0..4 {
        assert!(out.join(format!("masks/mask_{t:04}.png")).exists());
    }
    opts.window = Some(1);
    assert!(run_refine(&manifest, &opts).is_err());
}

#[test]
fn plane_only_scene_with_outliers_recovers_the_homography_flow() {
    let tax = ClassTaxonomy::default();
    let mut spec = SceneSpec::square_over_homography();
    spec.objects.clear();
    spec.flow_noise = 0.0;
    spec.frames = 3;
    let data = render(&spec, &tax).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut flows = data.initial_flows.clone();
    let mut outlier = vec![vec![false; flows[0].len()]; flows.len()];
    for (f, o) in flows.iter_mut().zip(&mut outlier) {
        for i in 0..f.len() {
            if rng.random::<f64>() < 0.2 {
                o[i] = true;
                f.u[i] += rng.random_range(-20.0..20.0);
                f.v[i] += rng.random_range(-20.0..20.0);
            }
        }
    }
    let input = SequenceInput {
        images: data.images,
        labels: data.labels.clone(),
        flows,
    };
    let out = refine_sequence(&input, &tax, &RefineConfig::default()).unwrap();
    for t in 0..2 {
        let plane = data.labels[t].category_mask(Category::Plane, &tax);
        let (f, gt) = (&out.flows[t], &data.gt_flows[t]);
        for i in (0..f.len()).filter(|&i| plane.data()[i] && !outlier[t][i]) {
            let r = ((f.u[i] - gt.u[i]) as f64).hypot((f.v[i] - gt.v[i]) as f64);
            assert!(r < 0.1, "pair {t} pixel {i}: residual {r}");
        }
    }
}

#[test]
fn missing_inputs_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_refine(&dir.path().join("nope.toml"), &RefineOptions::default()).is_err());
    let manifest_path = dataset(&small_scene(), dir.path(), 3);
    let manifest = SequenceManifest::load(&manifest_path).unwrap();
    std::fs::remove_file(dir.path().join(manifest.frames[1].flow.as_ref().unwrap())).unwrap();
    assert!(run_refine(&manifest_path, &options(&dir.path().join("o"))).is_err());
    assert!(read_flo(&dir.path().join("missing.flo")).is_err());
}
