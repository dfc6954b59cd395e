//! Thing regions: connected components, small-region filtering, tracking across a
//! window, and the disc morphology used to keep motion fits away from boundaries.

use std::collections::VecDeque;

use crate::taxonomy::{Category, ClassId, ClassTaxonomy, SegMap};
use crate::types::{BBox, Mask};

/// Regions smaller than this many pixels are treated as Stuff.
pub const MIN_THING_AREA: usize = 200;
/// Minimum IoU for associating a region with a track in the next frame.
pub const MIN_TRACK_IOU: f64 = 0.1;
/// Union-box margin as a fraction of the box diagonal.
pub const BOX_MARGIN_FRACTION: f64 = 0.1;
/// Default erosion radius for motion-model initialization.
pub const DEFAULT_EROSION_RADIUS: usize = 5;

/// A 4-connected component of one class in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub frame: usize,
    pub class: ClassId,
    /// Tight bounds of the component.
    pub bbox: BBox,
    /// Pixels of the component, local to `bbox`.
    pub mask: Mask,
    pub area: usize,
}

impl Region {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bbox.contains(x, y) && self.mask.get(x - self.bbox.x0, y - self.bbox.y0)
    }

    pub fn iou(&self, other: &Region) -> f64 {
        let x0 = self.bbox.x0.max(other.bbox.x0);
        let y0 = self.bbox.y0.max(other.bbox.y0);
        let x1 = self.bbox.x1.min(other.bbox.x1);
        let y1 = self.bbox.y1.min(other.bbox.y1);
        let mut inter = 0usize;
        if x0 <= x1 && y0 <= y1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if self.contains(x, y) && other.contains(x, y) {
                        inter += 1;
                    }
                }
            }
        }
        let union = self.area + other.area - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// The region painted into a full `width x height` mask.
    pub fn full_mask(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::new(width, height);
        self.paint(&mut m, 0, 0);
        m
    }

    /// Sets the region's pixels in `target`, whose origin is at `(ox, oy)` in frame coordinates.
    pub fn paint(&self, target: &mut Mask, ox: usize, oy: usize) {
        for y in self.bbox.y0..=self.bbox.y1 {
            for x in self.bbox.x0..=self.bbox.x1 {
                if self.contains(x, y) && x >= ox && y >= oy {
                    let (lx, ly) = (x - ox, y - oy);
                    if lx < target.width() && ly < target.height() {
                        target.set(lx, ly, true);
                    }
                }
            }
        }
    }
}

/// A Thing followed through every frame of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ThingTrack {
    pub class: ClassId,
    /// One region per window frame.
    pub regions: Vec<Region>,
    /// Union of the per-frame boxes, grown by the margin and clamped to the frame.
    pub bbox: BBox,
    /// Per-frame semantic foreground mask, local to `bbox`.
    pub masks: Vec<Mask>,
}

impl ThingTrack {
    pub fn frames(&self) -> usize {
        self.regions.len()
    }
}

/// 4-connected components of `class`, ordered by their first pixel in scan order.
pub fn connected_components(seg: &SegMap, class: ClassId, frame: usize) -> Vec<Region> {
    let mask = seg.class_mask(class);
    components_of_mask(&mask)
        .into_iter()
        .map(|(bbox, local)| {
            let area = local.count();
            Region {
                frame,
                class,
                bbox,
                mask: local,
                area,
            }
        })
        .collect()
}

/// 4-connected components of a binary mask as `(tight bbox, bbox-local mask)`.
pub fn components_of_mask(mask: &Mask) -> Vec<(BBox, Mask)> {
    let (w, h) = mask.dims();
    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut pixels = Vec::new();
        label[start] = id;
        queue.push_back(start);
        let (sx, sy) = (start % w, start / w);
        let mut bb = BBox::new(sx, sy, sx, sy);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            bb = bb.including(x, y);
            let mut visit = |j: usize| {
                if mask.data()[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let mut local = Mask::new(bb.width(), bb.height());
        for (x, y) in pixels {
            local.set(x - bb.x0, y - bb.y0, true);
        }
        out.push((bb, local));
    }
    out
}

/// Thing components of every Thing class in one frame, before size filtering.
pub fn thing_regions(seg: &SegMap, taxonomy: &ClassTaxonomy, frame: usize) -> Vec<Region> {
    taxonomy
        .classes_in(Category::Thing)
        .into_iter()
        .flat_map(|c| connected_components(seg, c, frame))
        .collect()
}

/// Drops regions smaller than [`MIN_THING_AREA`] pixels.
pub fn filter_small(regions: Vec<Region>) -> Vec<Region> {
    regions.into_iter().filter(|r| r.area >= MIN_THING_AREA).collect()
}

/// Associates regions across frames and keeps tracks present in every frame.
///
/// Tracks start from the first frame's regions. In each later frame, candidate
/// pairs of the same class with IoU >= [`MIN_TRACK_IOU`] are assigned greedily by
/// decreasing IoU, ties broken by larger candidate area, then lower candidate index.
pub fn match_things(per_frame: &[Vec<Region>], width: usize, height: usize) -> Vec<ThingTrack> {
    let Some(first) = per_frame.first() else {
        return Vec::new();
    };
    let mut tracks: Vec<Vec<Region>> = first.iter().map(|r| vec![r.clone()]).collect();
    for candidates in &per_frame[1..] {
        let mut pairs = Vec::new();
        for (ti, track) in tracks.iter().enumerate() {
            let last = track.last().expect("non-empty track");
            for (ci, cand) in candidates.iter().enumerate() {
                if cand.class != last.class {
                    continue;
                }
                let iou = last.iou(cand);
                if iou >= MIN_TRACK_IOU {
                    pairs.push((iou, cand.area, ci, ti));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let mut track_next: Vec<Option<usize>> = vec![None; tracks.len()];
        let mut used = vec![false; candidates.len()];
        for (_, _, ci, ti) in pairs {
            if track_next[ti].is_none() && !used[ci] {
                track_next[ti] = Some(ci);
                used[ci] = true;
            }
        }
        tracks = tracks
            .into_iter()
            .zip(track_next)
            .filter_map(|(mut t, next)| {
                next.map(|ci| {
                    t.push(candidates[ci].clone());
                    t
                })
            })
            .collect();
    }
    tracks
        .into_iter()
        .map(|regions| build_track(regions, width, height))
        .collect()
}

fn build_track(regions: Vec<Region>, width: usize, height: usize) -> ThingTrack {
    let union = regions
        .iter()
        .map(|r| r.bbox)
        .reduce(|a, b| a.union(&b))
        .expect("track has regions");
    let margin = (BOX_MARGIN_FRACTION * union.diagonal()).ceil() as usize;
    let bbox = union.expand(margin, width, height);
    let masks = regions
        .iter()
        .map(|r| {
            let mut m = Mask::new(bbox.width(), bbox.height());
            r.paint(&mut m, bbox.x0, bbox.y0);
            m
        })
        .collect();
    ThingTrack {
        class: regions[0].class,
        regions,
        bbox,
        masks,
    }
}

/// Thing-class pixels of `frame` that are not covered by any track; these are handled as Stuff.
pub fn stuff_fallback(seg: &SegMap, taxonomy: &ClassTaxonomy, tracks: &[ThingTrack], frame: usize) -> Mask {
    let mut fallback = seg.category_mask(Category::Thing, taxonomy);
    for t in tracks {
        let r = &t.regions[frame];
        for y in r.bbox.y0..=r.bbox.y1 {
            for x in r.bbox.x0..=r.bbox.x1 {
                if r.contains(x, y) {
                    fallback.set(x, y, false);
                }
            }
        }
    }
    fallback
}

fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = r * r;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion by the disc `{dx^2 + dy^2 <= radius^2}`; pixels outside the mask frame count as unset.
pub fn erode_mask(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disc_offsets(radius);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        offsets.iter().all(|&(dx, dy)| {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            sx >= 0 && sy >= 0 && sx < w && sy < h && mask.get(sx as usize, sy as usize)
        })
    })
}

/// Dilation by the same disc.
pub fn dilate_mask(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let offsets = disc_offsets(radius);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        offsets.iter().any(|&(dx, dy)| {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            sx >= 0 && sy >= 0 && sx < w && sy < h && mask.get(sx as usize, sy as usize)
        })
    })
}
