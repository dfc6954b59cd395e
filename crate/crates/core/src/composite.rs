//! Merging of Stuff, Plane and Thing flows into one field per frame pair.

use std::collections::BTreeMap;

use crate::layered::ThingResult;
use crate::planar::PlaneFit;
use crate::types::{BBox, FlowField, Mask};

/// Which model produced a composed pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    Stuff,
    Plane(usize),
    ThingFg(usize),
    ThingBgOverPlane { track: usize, plane: usize },
    ThingBgOverStuff(usize),
}

impl SourceTag {
    pub fn kind(&self) -> &'static str {
        match self {
            SourceTag::Stuff => "stuff",
            SourceTag::Plane(_) => "plane",
            SourceTag::ThingFg(_) => "thing_fg",
            SourceTag::ThingBgOverPlane { .. } => "thing_bg_over_plane",
            SourceTag::ThingBgOverStuff(_) => "thing_bg_over_stuff",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeMap {
    width: usize,
    height: usize,
    tags: Vec<SourceTag>,
    /// Blend weight of the layer flow, present exactly on `ThingBgOverStuff` pixels.
    alpha: Vec<Option<f32>>,
    /// Tracks whose box fell back to Stuff and Plane composition.
    pub fallback_tracks: Vec<usize>,
}

impl CompositeMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn tags(&self) -> &[SourceTag] {
        &self.tags
    }

    pub fn tag(&self, x: usize, y: usize) -> SourceTag {
        self.tags[y * self.width + x]
    }

    pub fn alpha(&self, x: usize, y: usize) -> Option<f32> {
        self.alpha[y * self.width + x]
    }

    pub fn alphas(&self) -> &[Option<f32>] {
        &self.alpha
    }

    /// Pixel count per tag kind.
    pub fn histogram(&self) -> BTreeMap<&'static str, usize> {
        let mut h = BTreeMap::new();
        for t in &self.tags {
            *h.entry(t.kind()).or_insert(0) += 1;
        }
        h
    }
}

/// One track's refined layers for a single frame pair, in box coordinates.
#[derive(Debug, Clone)]
pub struct ThingLayers {
    pub fg: Mask,
    pub fg_flow: FlowField,
    pub bg_flow: FlowField,
}

#[derive(Debug, Clone)]
pub struct ThingFrame {
    pub bbox: BBox,
    /// `None` when the track has no optimization result.
    pub layers: Option<ThingLayers>,
}

impl ThingFrame {
    /// Layers of pair `t` of a track result.
    pub fn from_result(r: &ThingResult, t: usize) -> Self {
        Self {
            bbox: r.bbox,
            layers: Some(ThingLayers {
                fg: r.assignment.to_mask(t),
                fg_flow: r.fg_flows[t].clone(),
                bg_flow: r.bg_flows[t].clone(),
            }),
        }
    }

    pub fn missing(bbox: BBox) -> Self {
        Self { bbox, layers: None }
    }
}

/// Euclidean distance from every pixel to the nearest set pixel of `mask`.
///
/// Returns infinity everywhere for an empty mask.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let big = 1e20;
    let mut f: Vec<f64> = mask.data().iter().map(|&m| if m { 0.0 } else { big }).collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| f[y * w + x]));
        edt_1d(&line, &mut out);
        for y in 0..h {
            f[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        line.clear();
        line.extend_from_slice(&f[y * w..(y + 1) * w]);
        edt_1d(&line, &mut out);
        f[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    f.into_iter().map(|d| if d >= big { f64::INFINITY } else { d.sqrt() }).collect()
}

/// Squared distance transform of a sampled function along one line (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, 0.0);
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        let (q, p) = (q as f64, p as f64);
        ((f[q as usize] + q * q) - (f[p as usize] + p * p)) / (2.0 * (q - p))
    };
    for q in 1..n {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Blend weight `clamp(1 - d / d_max, 0, 1)`, where `d` is the distance to the
/// foreground and `d_max` its largest value over the box. Zero for an empty mask.
pub fn fg_distance_weights(fg: &Mask) -> Vec<f32> {
    weights_from_distance(&distance_transform(fg))
}

fn weights_from_distance(d: &[f64]) -> Vec<f32> {
    if d.iter().any(|v| !v.is_finite()) {
        return vec![0.0; d.len()];
    }
    let d_max = d.iter().cloned().fold(0.0, f64::max);
    if d_max == 0.0 {
        return vec![1.0; d.len()];
    }
    d.iter().map(|&v| (1.0 - v / d_max).clamp(0.0, 1.0) as f32).collect()
}

struct Prepared<'a> {
    frame: &'a ThingFrame,
    layers: &'a ThingLayers,
    dist: Vec<f64>,
    alpha: Vec<f32>,
}

/// Composes one frame pair.
///
/// `stuff` is the initial flow, `planes` the fitted Plane regions of the source
/// frame and `things` the tracks present in it.
pub fn compose(stuff: &FlowField, planes: &[PlaneFit], things: &[ThingFrame]) -> (FlowField, CompositeMap) {
    let (w, h) = stuff.dims();
    let mut plane_of: Vec<Option<usize>> = vec![None; w * h];
    for (id, pl) in planes.iter().enumerate() {
        assert_eq!(pl.mask.dims(), (w, h), "plane mask must cover the frame");
        for (i, &m) in pl.mask.data().iter().enumerate() {
            if m {
                plane_of[i] = Some(id);
            }
        }
    }
    let plane_flow = |id: usize, x: usize, y: usize| -> Option<(f32, f32)> {
        let (px, py) = planes[id].homography.apply(x as f64, y as f64)?;
        let (u, v) = ((px - x as f64) as f32, (py - y as f64) as f32);
        (u.is_finite() && v.is_finite()).then_some((u, v))
    };

    let mut out = stuff.clone();
    let mut tags = vec![SourceTag::Stuff; w * h];
    let mut alpha = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if let Some(id) = plane_of[i] {
                if let Some((u, v)) = plane_flow(id, x, y) {
                    out.set(i, u, v);
                    tags[i] = SourceTag::Plane(id);
                }
            }
        }
    }

    let mut fallback_tracks = Vec::new();
    let mut prepared = Vec::new();
    for (n, tf) in things.iter().enumerate() {
        match &tf.layers {
            None => fallback_tracks.push(n),
            Some(l) => {
                assert_eq!(l.fg.dims(), (tf.bbox.width(), tf.bbox.height()), "layers must match the box");
                let dist = distance_transform(&l.fg);
                let alpha = weights_from_distance(&dist);
                prepared.push((n, Prepared { frame: tf, layers: l, dist, alpha }));
            }
        }
    }
    if prepared.is_empty() {
        return (out, CompositeMap { width: w, height: h, tags, alpha, fallback_tracks });
    }

    // Owner of every boxed pixel: the track whose foreground is nearest, lower index on ties.
    let mut owner: Vec<Option<(f64, usize, usize)>> = vec![None; w * h];
    for (slot, (n, pr)) in prepared.iter().enumerate() {
        let b = pr.frame.bbox;
        for ly in 0..b.height() {
            for lx in 0..b.width() {
                let d = pr.dist[ly * b.width() + lx];
                let i = (b.y0 + ly) * w + b.x0 + lx;
                let better = match owner[i] {
                    None => true,
                    Some((od, on, _)) => d < od || (d == od && *n < on),
                };
                if better {
                    owner[i] = Some((d, *n, slot));
                }
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let Some((_, n, slot)) = owner[i] else { continue };
            let pr = &prepared[slot].1;
            let b = pr.frame.bbox;
            let li = (y - b.y0) * b.width() + (x - b.x0);
            let l = pr.layers;
            if l.fg.data()[li] {
                out.set(i, l.fg_flow.u[li], l.fg_flow.v[li]);
                tags[i] = SourceTag::ThingFg(n);
                alpha[i] = None;
                continue;
            }
            if let SourceTag::Plane(id) = tags[i] {
                tags[i] = SourceTag::ThingBgOverPlane { track: n, plane: id };
                continue;
            }
            let a = pr.alpha[li];
            let (bu, bv) = (l.bg_flow.u[li], l.bg_flow.v[li]);
            let (u, v, a) = if stuff.valid[i] {
                (a * bu + (1.0 - a) * stuff.u[i], a * bv + (1.0 - a) * stuff.v[i], a)
            } else {
                (bu, bv, 1.0)
            };
            out.set(i, u, v);
            tags[i] = SourceTag::ThingBgOverStuff(n);
            alpha[i] = Some(a);
        }
    }
    (out, CompositeMap { width: w, height: h, tags, alpha, fallback_tracks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planar::Homography;
    use proptest::prelude::*;

    fn brute_distance(mask: &Mask) -> Vec<f64> {
        let (w, h) = mask.dims();
        let set: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| mask.get(x, y)).collect();
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                set.iter()
                    .map(|&(a, b)| ((a as f64 - x as f64).powi(2) + (b as f64 - y as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn distance_matches_all_pairs(w in 1usize..=32, h in 1usize..=32, bits in prop::collection::vec(0u8..20, 1024)) {
            let mask = Mask::from_fn(w, h, |x, y| bits[y * 32 + x] == 0);
            let fast = distance_transform(&mask);
            let slow = brute_distance(&mask);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!(a == b || (a - b).abs() < 1e-9, "{a} vs {b}");
            }
            let alpha = fg_distance_weights(&mask);
            let want = weights_from_distance(&slow);
            for (a, b) in alpha.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-6);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }

    #[test]
    fn weight_examples() {
        let mask = Mask::from_fn(10, 1, |x, _| x == 0);
        let a = fg_distance_weights(&mask);
        assert_eq!(a[0], 1.0);
        assert!((a[1] - (1.0 - 1.0 / 9.0) as f32).abs() < 1e-7);
        assert_eq!(a[9], 0.0);
        assert!(fg_distance_weights(&Mask::new(4, 4)).iter().all(|&v| v == 0.0));
    }

    fn thing(bbox: BBox, fg: Mask, fg_uv: (f32, f32), bg_uv: (f32, f32)) -> ThingFrame {
        let (bw, bh) = (bbox.width(), bbox.height());
        ThingFrame {
            bbox,
            layers: Some(ThingLayers {
                fg,
                fg_flow: FlowField::uniform(bw, bh, fg_uv.0, fg_uv.1),
                bg_flow: FlowField::uniform(bw, bh, bg_uv.0, bg_uv.1),
            }),
        }
    }

    #[test]
    fn pass_through_without_models() {
        let f = FlowField::uniform(7, 5, 0.3, -1.0);
        let (out, map) = compose(&f, &[], &[]);
        assert_eq!(out, f);
        assert!(map.tags().iter().all(|t| *t == SourceTag::Stuff));
    }

    #[test]
    fn full_foreground_box_is_pasted() {
        let f = FlowField::uniform(12, 10, 0.0, 0.0);
        let b = BBox::new(2, 3, 6, 8);
        let tf = thing(b, Mask::full(b.width(), b.height()), (2.0, 1.0), (9.0, 9.0));
        let (out, map) = compose(&f, &[], &[tf]);
        for y in 0..10 {
            for x in 0..12 {
                let i = y * 12 + x;
                if b.contains(x, y) {
                    assert_eq!((out.u[i], out.v[i]), (2.0, 1.0));
                    assert_eq!(map.tag(x, y), SourceTag::ThingFg(0));
                } else {
                    assert_eq!((out.u[i], out.v[i]), (0.0, 0.0));
                    assert_eq!(map.tag(x, y), SourceTag::Stuff);
                }
            }
        }
    }

    #[test]
    fn background_blends_and_planes_win() {
        let (w, h) = (16, 12);
        let f = FlowField::uniform(w, h, 1.0, 0.0);
        let plane_mask = Mask::from_fn(w, h, |_, y| y >= 8);
        let plane = PlaneFit {
            class: crate::taxonomy::ClassId::ROAD,
            bbox: plane_mask.bbox().unwrap(),
            mask: plane_mask.clone(),
            homography: Homography::translation(-0.5, 0.25),
            inliers: 0,
        };
        let b = BBox::new(2, 2, 11, 9);
        let fg = Mask::from_fn(10, 8, |x, y| (3..6).contains(&x) && (2..5).contains(&y));
        let tf = thing(b, fg.clone(), (4.0, 4.0), (3.0, -2.0));
        let (out, map) = compose(&f, &[plane], &[tf]);
        let alpha = fg_distance_weights(&fg);
        let mut seen = std::collections::HashSet::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let tag = map.tag(x, y);
                seen.insert(tag.kind());
                assert_eq!(map.alpha(x, y).is_some(), matches!(tag, SourceTag::ThingBgOverStuff(_)));
                match tag {
                    SourceTag::Plane(0) | SourceTag::ThingBgOverPlane { .. } => {
                        assert_eq!((out.u[i], out.v[i]), (-0.5, 0.25));
                    }
                    SourceTag::ThingFg(0) => assert_eq!((out.u[i], out.v[i]), (4.0, 4.0)),
                    SourceTag::ThingBgOverStuff(0) => {
                        let a = alpha[(y - 2) * 10 + x - 2];
                        assert_eq!(map.alpha(x, y), Some(a));
                        assert!((out.u[i] - (a * 3.0 + (1.0 - a))).abs() < 1e-6);
                        assert!(out.u[i] >= 1.0 && out.u[i] <= 3.0);
                        assert!(out.v[i] >= -2.0 && out.v[i] <= 0.0);
                    }
                    SourceTag::Stuff => assert_eq!((out.u[i], out.v[i]), (1.0, 0.0)),
                    other => panic!("unexpected tag {other:?}"),
                }
            }
        }
        assert_eq!(seen.len(), 5);
        let again = compose(&f, &[plane_clone(&plane_mask)], &[thing(b, fg, (4.0, 4.0), (3.0, -2.0))]);
        assert_eq!(again.0, out);
        assert_eq!(again.1, map);
    }

    fn plane_clone(mask: &Mask) -> PlaneFit {
        PlaneFit {
            class: crate::taxonomy::ClassId::ROAD,
            bbox: mask.bbox().unwrap(),
            mask: mask.clone(),
            homography: Homography::translation(-0.5, 0.25),
            inliers: 0,
        }
    }

    #[test]
    fn overlap_goes_to_nearer_foreground() {
        let f = FlowField::zeros(20, 6);
        let a = thing(BBox::new(0, 0, 11, 5), Mask::from_fn(12, 6, |x, _| x < 2), (1.0, 0.0), (1.0, 0.0));
        let b = thing(BBox::new(8, 0, 19, 5), Mask::from_fn(12, 6, |x, _| x >= 10), (2.0, 0.0), (2.0, 0.0));
        let (_, map) = compose(&f, &[], &[a, b]);
        // Column 8 is 7 px from track 0's foreground and 10 px from track 1's.
        assert!(matches!(map.tag(8, 0), SourceTag::ThingBgOverStuff(0)));
        assert!(matches!(map.tag(11, 0), SourceTag::ThingBgOverStuff(1)));
    }

    #[test]
    fn missing_result_falls_back_and_is_flagged() {
        let f = FlowField::uniform(8, 8, 0.5, 0.5);
        let (out, map) = compose(&f, &[], &[ThingFrame::missing(BBox::new(1, 1, 4, 4))]);
        assert_eq!(out, f);
        assert_eq!(map.fallback_tracks, vec![0]);
    }
}
