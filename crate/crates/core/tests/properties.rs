use proptest::prelude::*;
use semflow::composite::{compose, SourceTag, ThingFrame, ThingLayers};
use semflow::eval::{flow_metrics, EvalMasks, FlowMetrics};
use semflow::planar::{fit_homography_ransac, homography_flow, Homography, PlaneFit, RansacConfig};
use semflow::regions::{filter_small, match_things, stuff_fallback, thing_regions, MIN_THING_AREA};
use semflow::{BBox, ClassId, ClassTaxonomy, FlowField, Mask, SegMap};

fn rect() -> impl Strategy<Value = (usize, usize, usize, usize, u8)> {
    (0usize..30, 0usize..24, 3usize..20, 3usize..16, prop_oneof![Just(6u8), Just(15), Just(0), Just(9)])
}

fn scene(rects: &[(usize, usize, usize, usize, u8)], shift: (usize, usize), frames: usize) -> Vec<SegMap> {
    let (w, h) = (48, 40);
    (0..frames)
        .map(|t| {
            let mut s = SegMap::filled(w, h, ClassId::ROAD);
            for &(x, y, rw, rh, c) in rects {
                let (x, y) = (x + t * shift.0, y + t * shift.1);
                for yy in y..(y + rh).min(h) {
                    for xx in x..(x + rw).min(w) {
                        s.set(xx, yy, ClassId(c));
                    }
                }
            }
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thing_pixels_go_to_exactly_one_track_or_stuff(
        rects in proptest::collection::vec(rect(), 1..5),
        shift in (0usize..3, 0usize..3),
        frames in 2usize..4,
    ) {
        let tax = ClassTaxonomy::default();
        let segs = scene(&rects, shift, frames);
        let raw: Vec<_> = segs.iter().enumerate().map(|(t, s)| thing_regions(s, &tax, t)).collect();
        for r in &raw {
            let kept = filter_small(r.clone());
            for region in r.iter().filter(|g| g.area >= MIN_THING_AREA) {
                prop_assert!(kept.contains(region));
            }
        }
        let per: Vec<_> = raw.into_iter().map(filter_small).collect();
        let tracks = match_things(&per, 48, 40);
        for tr in &tracks {
            prop_assert_eq!(tr.frames(), frames);
            prop_assert_eq!(tr.masks.len(), frames);
            for (t, r) in tr.regions.iter().enumerate() {
                prop_assert!(tr.bbox.contains_box(&r.bbox));
                prop_assert_eq!(tr.masks[t].count(), r.area);
                for y in r.bbox.y0..=r.bbox.y1 {
                    for x in r.bbox.x0..=r.bbox.x1 {
                        if r.contains(x, y) {
                            prop_assert!(tr.masks[t].get(x - tr.bbox.x0, y - tr.bbox.y0));
                        }
                    }
                }
            }
        }
        let fallback = stuff_fallback(&segs[0], &tax, &tracks, 0);
        let things = segs[0].category_mask(semflow::Category::Thing, &tax);
        for y in 0..40 {
            for x in 0..48 {
                let owners = tracks.iter().filter(|tr| tr.regions[0].contains(x, y)).count()
                    + usize::from(fallback.get(x, y));
                prop_assert_eq!(owners, usize::from(things.get(x, y)));
            }
        }
    }

    #[test]
    fn composite_sources_and_blends(
        seed_flows in proptest::collection::vec((-5.0f32..5.0, -5.0f32..5.0), 3),
        boxes in proptest::collection::vec((0usize..20, 0usize..16, 4usize..14, 4usize..12, any::<u64>(), any::<bool>()), 0..3),
        plane_rows in 0usize..24,
    ) {
        let (w, h) = (32, 24);
        let mut stuff = FlowField::zeros(w, h);
        for i in 0..w * h {
            let k = (i * 7 + i / w) % 3;
            stuff.set(i, seed_flows[k].0 + (i % 5) as f32 * 0.1, seed_flows[k].1);
        }
        stuff.valid[5] = false;
        let plane_mask = Mask::from_fn(w, h, |_, y| y >= h - plane_rows);
        let planes: Vec<PlaneFit> = plane_mask.bbox().into_iter().map(|bbox| PlaneFit {
            class: ClassId::ROAD,
            bbox,
            mask: plane_mask.clone(),
            homography: Homography::translation(0.5, -0.5),
            inliers: 0,
        }).collect();
        let things: Vec<ThingFrame> = boxes.iter().map(|&(x, y, bw, bh, bits, present)| {
            let b = BBox::new(x, y, (x + bw - 1).min(w - 1), (y + bh - 1).min(h - 1));
            if !present {
                return ThingFrame::missing(b);
            }
            let (lw, lh) = (b.width(), b.height());
            let fg = Mask::from_fn(lw, lh, |xx, yy| (bits >> ((xx * 3 + yy * 5) % 64)) & 1 == 1);
            let mut fg_flow = FlowField::uniform(lw, lh, 3.0, -1.0);
            fg_flow.u[0] = 2.5;
            ThingFrame { bbox: b, layers: Some(ThingLayers { fg, fg_flow, bg_flow: FlowField::uniform(lw, lh, -2.0, 4.0) }) }
        }).collect();
        let (out, map) = compose(&stuff, &planes, &things);
        prop_assert_eq!(compose(&stuff, &planes, &things), (out.clone(), map.clone()));
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let in_box = things.iter().any(|t| t.bbox.contains(x, y));
                let tag = map.tag(x, y);
                if !in_box {
                    prop_assert!(matches!(tag, SourceTag::Stuff | SourceTag::Plane(_)));
                }
                if let Some(a) = map.alpha(x, y) {
                    prop_assert!((0.0..=1.0).contains(&a));
                }
                match tag {
                    SourceTag::ThingFg(k) => {
                        let t = &things[k];
                        let l = t.layers.as_ref().unwrap();
                        let j = (y - t.bbox.y0) * t.bbox.width() + x - t.bbox.x0;
                        prop_assert!(l.fg.data()[j]);
                        prop_assert_eq!((out.u[i], out.v[i]), (l.fg_flow.u[j], l.fg_flow.v[j]));
                    }
                    SourceTag::ThingBgOverStuff(_) if stuff.valid[i] => {
                        let between = |o: f32, a: f32, b: f32| o >= a.min(b) - 1e-5 && o <= a.max(b) + 1e-5;
                        prop_assert!(between(out.u[i], stuff.u[i], -2.0) && between(out.v[i], stuff.v[i], 4.0));
                    }
                    SourceTag::Plane(_) | SourceTag::ThingBgOverPlane { .. } => {
                        prop_assert!(plane_mask.get(x, y));
                        prop_assert_eq!((out.u[i], out.v[i]), (0.5, -0.5));
                    }
                    SourceTag::Stuff => {
                        prop_assert_eq!((out.u[i], out.v[i], out.valid[i]), (stuff.u[i], stuff.v[i], stuff.valid[i]));
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn metrics_ignore_pixel_order(
        values in proptest::collection::vec((-20.0f32..20.0, -20.0f32..20.0, -20.0f32..20.0, -20.0f32..20.0, any::<bool>(), any::<bool>()), 2..60),
        rotate in 0usize..60,
    ) {
        let n = values.len();
        let build = |order: &[usize]| {
            let (mut est, mut gt) = (FlowField::zeros(n, 1), FlowField::zeros(n, 1));
            let (mut fg, mut noc) = (Mask::new(n, 1), Mask::new(n, 1));
            for (i, &j) in order.iter().enumerate() {
                let (a, b, c, d, f, o) = values[j];
                est.set(i, a, b);
                gt.set(i, c, d);
                fg.set(i, 0, f);
                noc.set(i, 0, o || j == 0);
            }
            (est, gt, EvalMasks { fg: Some(fg), noc: Some(noc) })
        };
        let id: Vec<usize> = (0..n).collect();
        let mut perm = id.clone();
        perm.rotate_left(rotate % n);
        perm.reverse();
        let (e1, g1, m1) = build(&id);
        let (e2, g2, m2) = build(&perm);
        let a = flow_metrics(&e1, &g1, &m1).unwrap().to_map("");
        let b = flow_metrics(&e2, &g2, &m2).unwrap().to_map("");
        prop_assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, x) in &a {
            prop_assert!((x - b[k]).abs() <= 1e-9 * x.abs().max(1.0), "{}: {} vs {}", k, x, b[k]);
        }
        let zero: FlowMetrics = flow_metrics(&g1, &g1, &m1).unwrap();
        for (k, x) in zero.to_map("") {
            if !k.starts_with("pixels") {
                prop_assert_eq!(x, 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ransac_is_reproducible_and_inliers_respect_the_threshold(
        m in proptest::array::uniform8(-1.0f64..1.0),
        outliers in proptest::collection::vec((0usize..1200, -25.0f32..25.0, -25.0f32..25.0), 0..240),
        seed in any::<u64>(),
    ) {
        let truth = Homography::new(nalgebra::Matrix3::new(
            1.0 + 0.04 * m[0], 0.04 * m[1], 4.0 * m[2],
            0.04 * m[3], 1.0 + 0.04 * m[4], 4.0 * m[5],
            2e-4 * m[6], 2e-4 * m[7], 1.0,
        )).unwrap();
        let (w, h) = (40, 30);
        let mask = Mask::full(w, h);
        let mut flow = homography_flow(&truth, &mask, w, h);
        for &(i, du, dv) in &outliers {
            flow.u[i] += du;
            flow.v[i] += dv;
        }
        let cfg = RansacConfig::default();
        let (h1, inl) = fit_homography_ransac(&flow, &mask, &cfg, seed).unwrap();
        let (h2, inl2) = fit_homography_ransac(&flow, &mask, &cfg, seed).unwrap();
        prop_assert_eq!(h1.matrix(), h2.matrix());
        prop_assert_eq!(&inl, &inl2);
        for i in (0..flow.len()).filter(|&i| inl.data()[i]) {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let (px, py) = h1.apply(x, y).unwrap();
            prop_assert!((px - x - flow.u[i] as f64).hypot(py - y - flow.v[i] as f64) <= cfg.threshold);
        }
    }
}
