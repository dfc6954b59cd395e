mod common;

use common::*;
use rand::Rng;
use semflow::layered::{
    data_energy, layer_energy, motion_energy, space_energy, time_energy, total_energy, update_flow, update_segmentation,
    optimize_thing, AffineParams, EnergyBreakdown, BG, FG, LayerAssignment, LayerFlow, LayeredConfig, LayeredProblem,
};
use semflow::{ClassId, EnergyWeights, FlowField, ImageBuf, Mask};

fn constant_problem(w: usize, h: usize, frames: usize, weights: EnergyWeights) -> LayeredProblem {
    let img = ImageBuf::from_fn_gray(w, h, |x, y| ((x * 7 + y * 3) % 11) as f32 / 11.0);
    LayeredProblem::new(
        vec![img; frames],
        vec![FlowField::zeros(w, h); frames - 1],
        vec![Mask::new(w, h); frames],
        ClassId::CAR,
        weights,
        LayeredConfig::default(),
    )
    .unwrap()
}

#[test]
fn terms_match_reference_on_random_instances() {
    let mut rng = rng(100);
    for _ in 0..40 {
        let (w, h) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let p = random_problem(&mut rng, w, h, 2);
        let o = Oracle::new(&p);
        let g = assignment_of(&p);
        for k in 0..2 {
            assert!(rel_close(data_energy(&p, 0, k), o.data(&g, 0, k), 1e-9));
            assert!(rel_close(motion_energy(&p, 0, k), o.motion(&g, 0, k), 1e-9));
            assert!(rel_close(time_energy(&p, 0, k), o.time(&g, 0, k), 1e-9));
        }
        for t in 0..2 {
            assert_eq!(layer_energy(&g[t], &p.semantic[t]), oracle_layer(&g[t], &p.semantic[t]));
            let s = space_energy(&g[t], &p.images[t], &p.config.space);
            assert!(rel_close(s, o.space(&g[t], t), 1e-9));
        }
        assert!(rel_close(total_energy(&p), o.total(&g), 1e-9));
    }
}

#[test]
fn identical_frames_zero_flow_uniform_assignment() {
    let p = constant_problem(6, 5, 2, EnergyWeights::default());
    assert_eq!(data_energy(&p, 0, FG), 0.0);
    assert_eq!(data_energy(&p, 0, BG), 0.0);
    assert_eq!(time_energy(&p, 0, BG), 0.0);
}

#[test]
fn full_occlusion_costs_lambda_d_per_pixel() {
    let mut p = constant_problem(6, 5, 2, EnergyWeights::default());
    // Frame 0 all background, frame 1 all foreground: every correspondence changes layer.
    p.assignment.frame_mut(1).fill(true);
    let n = p.len() as f64;
    let total = data_energy(&p, 0, 0) + data_energy(&p, 0, 1);
    assert!((total - n * p.weights.lambda_d).abs() < 1e-12);
    assert_eq!(time_energy(&p, 0, 0) + time_energy(&p, 0, 1), n);
}

#[test]
fn motion_examples() {
    let mut p = constant_problem(5, 4, 2, EnergyWeights::default());
    let th = AffineParams([0.7, 0.0, 0.0, -0.2, 0.0, 0.0]);
    p.theta[0][BG] = th;
    p.flows[0][BG] = LayerFlow::from_affine(&th, 5, 4);
    assert_eq!(motion_energy(&p, 0, BG), 0.0);
    let d = 0.3;
    p.flows[0][BG].u.iter_mut().for_each(|u| *u += d);
    let want = 20.0 * p.weights.lambda_aff * p.config.rho_affine.rho(d);
    assert!((motion_energy(&p, 0, BG) - want).abs() < 1e-12);
    // The foreground layer uses the class weight.
    p.theta[0][FG] = th;
    p.flows[0][FG] = p.flows[0][BG].clone();
    let want_fg = 20.0 * p.weights.lambda_aff_for(ClassId::CAR) * p.config.rho_affine.rho(d);
    assert!((motion_energy(&p, 0, FG) - want_fg).abs() < 1e-9);
}

#[test]
fn layer_examples() {
    let m = Mask::from_fn(4, 4, |x, _| x < 2);
    let mut g = m.data().to_vec();
    assert_eq!(layer_energy(&g, &m), 0.0);
    g[5] = !g[5];
    assert_eq!(layer_energy(&g, &m), 1.0);
    let c: Vec<bool> = m.data().iter().map(|b| !b).collect();
    assert_eq!(layer_energy(&c, &m), 16.0);
}

#[test]
fn foreground_layer_index_is_one() {
    assert_eq!((FG, BG), (1, 0));
}

#[test]
fn total_examples() {
    let p = constant_problem(6, 6, 3, EnergyWeights::zero());
    assert_eq!(total_energy(&p), 0.0);
    let mut w = EnergyWeights::zero();
    w.lambda_layer = 1.0;
    let p = constant_problem(6, 6, 3, w);
    assert_eq!(total_energy(&p), 0.0);
}

#[test]
fn total_is_sum_of_terms_and_switch_halves_shared_terms() {
    let mut rng = rng(7);
    for _ in 0..10 {
        let mut p = random_problem(&mut rng, 7, 6, 3);
        let b = EnergyBreakdown::of(&p);
        let mut sum = 0.0;
        for t in 0..2 {
            for k in 0..2 {
                sum += data_energy(&p, t, k)
                    + p.weights.lambda_motion * motion_energy(&p, t, k)
                    + p.weights.lambda_time * time_energy(&p, t, k);
            }
        }
        let mut shared = 0.0;
        for t in 0..3 {
            let g = p.assignment.frame(t);
            shared += p.weights.lambda_layer * layer_energy(g, &p.semantic[t])
                + p.weights.lambda_space * space_energy(g, &p.images[t], &p.config.space);
        }
        assert!(rel_close(total_energy(&p), sum + 2.0 * shared, 1e-12));
        assert!(rel_close(b.total(), total_energy(&p), 1e-15));
        p.config.count_shared_terms_once = true;
        assert!(rel_close(total_energy(&p), sum + shared, 1e-12));
    }
}

fn assert_monotone(before: f64, after: f64) {
    assert!(after <= before * (1.0 + 1e-9) + 1e-12, "energy rose from {before} to {after}");
}

#[test]
fn updates_never_increase_energy() {
    let mut rng = rng(21);
    for _ in 0..8 {
        let (w, h) = (rng.random_range(4..=20), rng.random_range(4..=20));
        let frames = rng.random_range(2..=4);
        let mut p = random_problem(&mut rng, w, h, frames);
        for _ in 0..2 {
            let s = update_flow(&mut p);
            assert_monotone(s.energy_before, s.energy_after);
            let s = update_segmentation(&mut p);
            assert_monotone(s.energy_before, s.energy_after);
        }
        assert!(total_energy(&p).is_finite() && total_energy(&p) >= 0.0);
    }
}

#[test]
fn segmentation_fixed_point_and_dominant_coupling() {
    let mut rng = rng(3);
    let mut p = random_problem(&mut rng, 9, 8, 3);
    p.weights.lambda_layer = 1e6;
    let ghat = LayerAssignment::from_masks(&p.semantic);
    update_segmentation(&mut p);
    assert_eq!(p.assignment, ghat);
    let again = update_segmentation(&mut p);
    assert_eq!(again.flips, 0);
    assert_eq!(p.assignment, ghat);
}

#[test]
fn segmentation_near_exhaustive_minimum() {
    let mut rng = rng(55);
    for trial in 0..6 {
        let mut p = random_problem(&mut rng, 3, 3, 2);
        let o = Oracle::new(&p);
        let best = o.exhaustive_minimum();
        drop(o);
        update_segmentation(&mut p);
        let got = total_energy(&p);
        assert!(got <= best * 1.05 + 1e-12, "trial {trial}: {got} vs exhaustive {best}");
    }
}

#[test]
fn flow_step_reaches_data_minimum_on_two_pixels() {
    // Ramp in the second frame: pixel values 0.3 and 0.6 are found at x = 1/6 and x = 2/3.
    let i0 = ImageBuf::new(2, 1, 1, vec![0.3, 0.6]).unwrap();
    let i1 = ImageBuf::new(2, 1, 1, vec![0.2, 0.8]).unwrap();
    let mut w = EnergyWeights::zero();
    w.lambda_d = 1e6;
    let mut p = LayeredProblem::new(
        vec![i0, i1],
        vec![FlowField::zeros(2, 1)],
        vec![Mask::new(2, 1); 2],
        ClassId::CAR,
        w,
        LayeredConfig::default(),
    )
    .unwrap();
    for _ in 0..4 {
        update_flow(&mut p);
    }
    // Dense grid search of the data term per pixel.
    let i1f = [0.2f32 as f64, 0.8f32 as f64];
    let i0f = [0.3f32 as f64, 0.6f32 as f64];
    for x in 0..2 {
        let mut best = (f64::INFINITY, 0.0);
        for s in 0..=20000 {
            let u = -(x as f64) + s as f64 / 20000.0;
            let q = x as f64 + u;
            let e = p.config.rho_data.rho(i0f[x] - (i1f[0] * (1.0 - q) + i1f[1] * q));
            if e < best.0 {
                best = (e, u);
            }
        }
        let got = p.flows[0][BG].u[x];
        assert!((got - best.1).abs() < 0.05, "pixel {x}: {got} vs {}", best.1);
    }
}

fn synthetic_track(noise: f64) -> (semflow::regions::ThingTrack, semflow::synth::SceneData) {
    use semflow::regions::{filter_small, match_things, thing_regions};
    use semflow::synth::{render, Motion, SceneSpec};
    let tax = semflow::ClassTaxonomy::default();
    let mut spec = SceneSpec::square_over_homography();
    spec.width = 72;
    spec.height = 64;
    spec.frames = 3;
    spec.objects[0].center = [34.0, 30.0];
    spec.objects[0].half_size = [9.0, 8.0];
    spec.objects[0].motion = vec![Motion::Translate([1.5, 0.5])];
    spec.flow_noise = noise;
    spec.mask_dilation = 0;
    let data = render(&spec, &tax).unwrap();
    let per: Vec<_> = data.labels.iter().enumerate().map(|(t, s)| filter_small(thing_regions(s, &tax, t))).collect();
    let mut tracks = match_things(&per, 72, 64);
    assert_eq!(tracks.len(), 1);
    (tracks.remove(0), data)
}

#[test]
fn dominant_layer_weight_returns_the_semantic_masks() {
    let (track, data) = synthetic_track(0.5);
    let mut w = EnergyWeights::default();
    w.lambda_layer = 1e6;
    let r = optimize_thing(&track, &data.images, &data.initial_flows, &w, &LayeredConfig::default()).unwrap();
    assert!(r.refined);
    assert_eq!(r.assignment, LayerAssignment::from_masks(&track.masks));
    assert!(r.energy_trace.windows(2).all(|e| e[1] <= e[0] * (1.0 + 1e-9)));
}

#[test]
fn ground_truth_start_stays_put() {
    let (track, data) = synthetic_track(0.0);
    let r = optimize_thing(&track, &data.images, &data.gt_flows, &EnergyWeights::default(), &LayeredConfig::default()).unwrap();
    assert!(r.energy_trace.windows(2).all(|e| e[1] <= e[0] * (1.0 + 1e-9)));
    assert!(!r.suspect);
    let b = track.bbox;
    for t in 0..2 {
        let gt = data.gt_flows[t].crop(&b);
        let truth = data.gt_masks[t].crop(&b);
        let fg = &r.fg_flows[t];
        let epe: f64 = (0..fg.len())
            .filter(|&i| truth.data()[i])
            .map(|i| ((fg.u[i] - gt.u[i]) as f64).hypot((fg.v[i] - gt.v[i]) as f64))
            .sum::<f64>()
            / truth.count() as f64;
        assert!(epe < 0.05, "pair {t}: fg EPE {epe}");
        let m = r.assignment.to_mask(t);
        let iou = m.and(&truth).count() as f64 / m.or(&truth).count() as f64;
        assert!(iou > 0.95, "pair {t}: IoU {iou}");
    }
}

#[test]
fn degenerate_track_passes_inputs_through() {
    let (mut track, data) = synthetic_track(0.5);
    // Masks too thin to survive erosion.
    for m in &mut track.masks {
        let (w, h) = m.dims();
        *m = Mask::from_fn(w, h, |x, y| x == w / 2 && y > 2 && y < h - 2);
    }
    let r = optimize_thing(&track, &data.images, &data.initial_flows, &EnergyWeights::default(), &LayeredConfig::default()).unwrap();
    assert!(!r.refined);
    assert_eq!(r.assignment, LayerAssignment::from_masks(&track.masks));
    assert_eq!(r.fg_flows[0], data.initial_flows[0].crop(&track.bbox));
    assert!(r.energy_trace.is_empty());
}
