//! Training-time prompt simulation from a ground-truth mask.
//!
//! Every sampler is a pure function of `(mask, cfg, rng state)`.

use super::polygon::is_simple_polygon;
use super::raster::scribble_voxels;
use super::{GuidanceConfig, Polarity, Prompt, PromptError, PromptType, Result};
use crate::volgrid::BinaryMask;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use std::collections::VecDeque;
use std::f64::consts::TAU;

fn weighted_index<R: Rng + ?Sized>(weights: &[usize], rng: &mut R) -> Option<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return None;
    }
    let mut r = rng.random_range(0..total);
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return Some(i);
        }
        r -= w;
    }
    unreachable!("r < total")
}

/// Axial slice drawn with probability proportional to its foreground area.
pub fn select_slice_weighted<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R) -> Result<usize> {
    weighted_index(&mask.slice_areas(), rng).ok_or(PromptError::EmptyMask)
}

/// One axial slice of a mask, with 8-connected component labels.
struct SliceFg {
    h: usize,
    w: usize,
    fg: Vec<bool>,
    label: Vec<usize>,
    components: Vec<Vec<[usize; 2]>>,
}

const NONE: usize = usize::MAX;

impl SliceFg {
    fn new(mask: &BinaryMask, z: usize) -> Self {
        let [_, h, w] = mask.shape();
        let fg: Vec<bool> = mask.slice(z).iter().map(|&v| v != 0).collect();
        let mut label = vec![NONE; h * w];
        let mut components = Vec::new();
        for start in 0..h * w {
            if !fg[start] || label[start] != NONE {
                continue;
            }
            let id = components.len();
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            label[start] = id;
            while let Some(i) = queue.pop_front() {
                let (y, x) = (i / w, i % w);
                comp.push([y, x]);
                for (ny, nx) in neighbors8(y, x, h, w) {
                    let j = ny * w + nx;
                    if fg[j] && label[j] == NONE {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        SliceFg { h, w, fg, label, components }
    }

    fn is_fg(&self, y: usize, x: usize) -> bool {
        self.fg[y * self.w + x]
    }

    fn largest_component(&self) -> usize {
        self.components.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Component drawn with probability proportional to its size, among those of at least `min_size`.
    fn pick_component<R: Rng + ?Sized>(&self, min_size: usize, rng: &mut R) -> Option<usize> {
        let weights: Vec<usize> =
            self.components.iter().map(|c| if c.len() >= min_size { c.len() } else { 0 }).collect();
        weighted_index(&weights, rng)
    }

    /// Shortest 8-connected path inside component `id` from `a` to `b`, excluding `a`.
    fn path_within(&self, id: usize, a: [usize; 2], b: [usize; 2]) -> Vec<[usize; 2]> {
        let w = self.w;
        let mut parent = vec![NONE; self.h * w];
        let (start, goal) = (a[0] * w + a[1], b[0] * w + b[1]);
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            if i == goal {
                break;
            }
            for (ny, nx) in neighbors8(i / w, i % w, self.h, w) {
                let j = ny * w + nx;
                if self.label[j] == id && parent[j] == NONE {
                    parent[j] = i;
                    queue.push_back(j);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = goal;
        while cur != start {
            path.push([cur / w, cur % w]);
            cur = parent[cur];
        }
        path.reverse();
        path
    }
}

fn neighbors8(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(|dy| (-1i64..=1).map(move |dx| (dy, dx)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dy, dx)| {
            let (ny, nx) = (y as i64 + dy, x as i64 + dx);
            (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then_some((ny as usize, nx as usize))
        })
}

/// Slice drawn by area among slices that have a component of at least `min_component` voxels.
fn select_eligible_slice<R: Rng + ?Sized>(
    mask: &BinaryMask,
    min_component: usize,
    what: &'static str,
    rng: &mut R,
) -> Result<(usize, SliceFg)> {
    let areas = mask.slice_areas();
    if areas.iter().all(|&a| a == 0) {
        return Err(PromptError::EmptyMask);
    }
    let mut slices: Vec<Option<SliceFg>> = Vec::with_capacity(areas.len());
    let weights: Vec<usize> = areas
        .iter()
        .enumerate()
        .map(|(z, &area)| {
            if area < min_component {
                slices.push(None);
                return 0;
            }
            let s = SliceFg::new(mask, z);
            let ok = s.largest_component() >= min_component;
            slices.push(Some(s));
            if ok {
                area
            } else {
                0
            }
        })
        .collect();
    let z = weighted_index(&weights, rng).ok_or(PromptError::DegenerateSlice(what))?;
    Ok((z, slices[z].take().expect("eligible slice analysed")))
}

fn ball_inside(mask: &BinaryMask, c: [usize; 3], r: u32) -> bool {
    let shape = mask.shape();
    let r = r as i64;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dz * dz + dy * dy + dx * dx > r * r {
                    continue;
                }
                let p = [c[0] as i64 + dz, c[1] as i64 + dy, c[2] as i64 + dx];
                if (0..3).any(|a| p[a] < 0 || p[a] as usize >= shape[a]) {
                    return false;
                }
                if !mask.get(p[0] as usize, p[1] as usize, p[2] as usize) {
                    return false;
                }
            }
        }
    }
    true
}

/// Largest radius ≤ `r` whose ball stays inside `mask`, never below 1.
fn fit_radius(mask: &BinaryMask, c: [usize; 3], r: u32) -> u32 {
    (1..=r).rev().find(|&rr| ball_inside(mask, c, rr)).unwrap_or(1)
}

fn sample_radius<R: Rng + ?Sized>(cfg: &GuidanceConfig, rng: &mut R) -> u32 {
    rng.random_range(cfg.point_radius[0]..=cfg.point_radius[1])
}

/// One or two positive clicks inside the mask.
///
/// Centers are drawn uniformly from interior voxels (whose 6-neighbourhood is
/// foreground) when any exist, otherwise from all foreground voxels. The
/// sampled radius shrinks until the stamp fits inside the mask.
pub fn simulate_point_prompts<R: Rng + ?Sized>(
    mask: &BinaryMask,
    rng: &mut R,
    cfg: &GuidanceConfig,
) -> Result<Vec<Prompt>> {
    let fg = mask.foreground_indices();
    if fg.is_empty() {
        return Err(PromptError::EmptyMask);
    }
    let interior: Vec<[usize; 3]> = fg.iter().copied().filter(|&c| ball_inside(mask, c, 1)).collect();
    let pool = if interior.is_empty() { &fg } else { &interior };
    let count = rng.random_range(1..=2);
    Ok((0..count)
        .map(|_| {
            let center = *pool.choose(rng).expect("non-empty pool");
            let radius = fit_radius(mask, center, sample_radius(cfg, rng));
            Prompt::point(center, radius, Polarity::Positive)
        })
        .collect())
}

fn signed_jitter<R: Rng + ?Sized>(rng: &mut R, amp: usize) -> i64 {
    if amp == 0 {
        0
    } else {
        rng.random_range(-(amp as i64)..=amp as i64)
    }
}

fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.random_range(-amp..amp)
    } else {
        0.0
    }
}

/// A box around the foreground of an area-weighted slice with random margin
/// and corner jitter; always covers ≥ 90% of that slice's foreground.
pub fn simulate_box_prompt<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R, cfg: &GuidanceConfig) -> Result<Prompt> {
    let z = select_slice_weighted(mask, rng)?;
    let [_, h, w] = mask.shape();
    let slice = mask.slice(z);
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    let mut area = 0usize;
    for (i, &v) in slice.iter().enumerate() {
        if v != 0 {
            let (y, x) = (i / w, i % w);
            y0 = y0.min(y);
            y1 = y1.max(y + 1);
            x0 = x0.min(x);
            x1 = x1.max(x + 1);
            area += 1;
        }
    }
    let margin = |rng: &mut R| rng.random_range(cfg.box_margin[0]..=cfg.box_margin[1]);
    let (mt, mb, ml, mr) = (margin(rng), margin(rng), margin(rng), margin(rng));
    let base = [
        y0.saturating_sub(mt) as i64,
        x0.saturating_sub(ml) as i64,
        (y1 + mb).min(h) as i64,
        (x1 + mr).min(w) as i64,
    ];
    let covered = |b: &[i64; 4]| {
        let mut n = 0usize;
        for y in b[0] as usize..b[2] as usize {
            for x in b[1] as usize..b[3] as usize {
                n += slice[y * w + x] as usize;
            }
        }
        n * 10 >= area * 9
    };
    let finish = |b: [i64; 4]| Prompt::bbox(z, [b[0] as usize, b[1] as usize], [b[2] as usize, b[3] as usize], Polarity::Positive);
    if cfg.box_jitter > 0 {
        for _ in 0..10 {
            let mut b = base;
            for v in b.iter_mut() {
                *v += signed_jitter(rng, cfg.box_jitter);
            }
            b[0] = b[0].clamp(0, h as i64 - 1);
            b[1] = b[1].clamp(0, w as i64 - 1);
            b[2] = b[2].clamp(b[0] + 1, h as i64);
            b[3] = b[3].clamp(b[1] + 1, w as i64);
            if covered(&b) {
                return Ok(finish(b));
            }
        }
    }
    Ok(finish(base))
}

/// A simulated scribble together with the control points it was drawn through.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedScribble {
    pub prompt: Prompt,
    /// The 2–8 randomly ordered control points, before jitter and waviness.
    pub control_points: Vec<[usize; 2]>,
}

/// Freehand-like stroke through 2–8 random foreground points of one slice
/// component, perturbed by jitter and a sinusoidal wobble.
///
/// The stored vertex list is the densified stroke: consecutive vertices are
/// 8-adjacent, so every rasterized voxel is a vertex and lies inside the mask.
pub fn simulate_scribble<R: Rng + ?Sized>(
    mask: &BinaryMask,
    rng: &mut R,
    cfg: &GuidanceConfig,
) -> Result<SimulatedScribble> {
    let (z, sl) = select_eligible_slice(mask, 2, "scribble", rng)?;
    let id = sl.pick_component(2, rng).expect("eligible slice has a component");
    let comp = &sl.components[id];

    let n = rng.random_range(2..=8usize).min(comp.len());
    let mut control: Vec<[usize; 2]> = comp.choose_multiple(rng, n).copied().collect();
    control.shuffle(rng);

    let jittered: Vec<[f64; 2]> = control
        .iter()
        .map(|p| [p[0] as f64 + uniform_sym(rng, cfg.scribble_jitter), p[1] as f64 + uniform_sym(rng, cfg.scribble_jitter)])
        .collect();
    let phase = if cfg.wavy_amplitude > 0.0 { rng.random_range(0.0..TAU) } else { 0.0 };

    let seg_len = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let total: f64 = jittered.windows(2).map(|s| seg_len(s[0], s[1])).sum();
    let mut samples: Vec<[f64; 2]> = Vec::new();
    let mut arc = 0.0;
    for s in jittered.windows(2) {
        let (a, b) = (s[0], s[1]);
        let len = seg_len(a, b);
        let steps = ((len / 0.5).ceil() as usize).max(1);
        let normal = if len > 0.0 { [(b[1] - a[1]) / len, -(b[0] - a[0]) / len] } else { [0.0, 0.0] };
        for i in 0..steps {
            let t = i as f64 / steps as f64;
            let s_here = arc + t * len;
            let off = if total > 0.0 { cfg.wavy_amplitude * (TAU * cfg.wavy_frequency * s_here / total + phase).sin() } else { 0.0 };
            samples.push([a[0] + t * (b[0] - a[0]) + off * normal[0], a[1] + t * (b[1] - a[1]) + off * normal[1]]);
        }
        arc += len;
    }
    samples.push(*jittered.last().expect("n >= 2"));

    let snap = |p: [f64; 2]| -> [usize; 2] {
        let y = p[0].round().clamp(0.0, (sl.h - 1) as f64) as usize;
        let x = p[1].round().clamp(0.0, (sl.w - 1) as f64) as usize;
        if sl.label[y * sl.w + x] == id {
            return [y, x];
        }
        *comp
            .iter()
            .min_by_key(|q| {
                let dy = q[0] as i64 - y as i64;
                let dx = q[1] as i64 - x as i64;
                dy * dy + dx * dx
            })
            .expect("non-empty component")
    };

    let mut path: Vec<[usize; 2]> = vec![snap(samples[0])];
    for &s in &samples[1..] {
        let q = snap(s);
        let last = *path.last().unwrap();
        if q == last {
            continue;
        }
        let cheb = (q[0] as i64 - last[0] as i64).abs().max((q[1] as i64 - last[1] as i64).abs());
        if cheb <= 1 {
            path.push(q);
        } else {
            path.extend(sl.path_within(id, last, q));
        }
    }
    if path.len() < 2 {
        let p = path[0];
        let next = neighbors8(p[0], p[1], sl.h, sl.w)
            .map(|(y, x)| [y, x])
            .find(|q| sl.label[q[0] * sl.w + q[1]] == id)
            .expect("component of size >= 2 is 8-connected");
        path.push(next);
    }

    let mut thickness = rng.random_range(cfg.scribble_thickness[0]..=cfg.scribble_thickness[1]);
    if thickness > 1 {
        let brushed = scribble_voxels(&path, thickness, sl.h, sl.w);
        let fits = path.iter().all(|v| v[0] + 1 < sl.h && v[1] + 1 < sl.w)
            && brushed.iter().all(|v| sl.is_fg(v[0], v[1]));
        if !fits {
            thickness = 1;
        }
    }
    Ok(SimulatedScribble { prompt: Prompt::scribble(z, path, thickness, Polarity::Positive), control_points: control })
}

pub fn simulate_scribble_prompt<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R, cfg: &GuidanceConfig) -> Result<Prompt> {
    simulate_scribble(mask, rng, cfg).map(|s| s.prompt)
}

/// Farthest candidate per angular sector around `center`, in angular order.
fn sector_extremes(cands: &[[i64; 2]], center: [f64; 2], n: usize, theta0: f64) -> Vec<[i64; 2]> {
    let step = TAU / n as f64;
    let mut best: Vec<Option<(f64, f64, [i64; 2])>> = vec![None; n];
    for &p in cands {
        let dy = p[0] as f64 - center[0];
        let dx = p[1] as f64 - center[1];
        let r = (dy * dy + dx * dx).sqrt();
        if r < 0.5 {
            continue;
        }
        let rel = (dy.atan2(dx) - theta0).rem_euclid(TAU);
        let k = ((rel / step) as usize).min(n - 1);
        let better = match best[k] {
            None => true,
            Some((br, brel, bp)) => r > br || (r == br && (rel < brel || (rel == brel && p < bp))),
        };
        if better {
            best[k] = Some((r, rel, p));
        }
    }
    best.into_iter().flatten().map(|(_, _, p)| p).collect()
}

fn lasso_ok(v: &[[i64; 2]]) -> bool {
    (4..=12).contains(&v.len()) && is_simple_polygon(v)
}

/// Closed polygon of 4–12 radially jittered boundary points of one slice component.
pub fn simulate_lasso_prompt<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R, cfg: &GuidanceConfig) -> Result<Prompt> {
    let (z, sl) = select_eligible_slice(mask, 4, "lasso", rng)?;
    let id = sl.pick_component(4, rng).expect("eligible slice has a component");
    let comp = &sl.components[id];
    let (h, w) = (sl.h, sl.w);

    let inv = 1.0 / comp.len() as f64;
    let center = [
        comp.iter().map(|p| p[0] as f64 + 0.5).sum::<f64>() * inv,
        comp.iter().map(|p| p[1] as f64 + 0.5).sum::<f64>() * inv,
    ];
    let in_comp = |y: i64, x: i64| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && sl.label[y as usize * w + x as usize] == id;
    let mut cands: Vec<[i64; 2]> = Vec::new();
    for p in comp {
        let (y, x) = (p[0] as i64, p[1] as i64);
        let boundary = !(in_comp(y - 1, x) && in_comp(y + 1, x) && in_comp(y, x - 1) && in_comp(y, x + 1));
        if boundary {
            cands.extend([[y, x], [y, x + 1], [y + 1, x], [y + 1, x + 1]]);
        }
    }
    cands.sort_unstable();
    cands.dedup();

    let n = rng.random_range(4..=12usize);
    let theta0 = rng.random_range(0.0..TAU / n as f64);
    let base = sector_extremes(&cands, center, n, theta0);

    if cfg.lasso_jitter > 0.0 {
        for _ in 0..10 {
            let jittered: Vec<[i64; 2]> = base
                .iter()
                .map(|p| {
                    let dy = p[0] as f64 - center[0];
                    let dx = p[1] as f64 - center[1];
                    let r = (dy * dy + dx * dx).sqrt();
                    let scale = (r + uniform_sym(rng, cfg.lasso_jitter)).max(0.5) / r;
                    [
                        (center[0] + dy * scale).round().clamp(0.0, h as f64) as i64,
                        (center[1] + dx * scale).round().clamp(0.0, w as f64) as i64,
                    ]
                })
                .collect();
            if lasso_ok(&jittered) {
                return Ok(Prompt::lasso(z, jittered, Polarity::Positive));
            }
        }
    }
    if lasso_ok(&base) {
        return Ok(Prompt::lasso(z, base, Polarity::Positive));
    }
    let four = sector_extremes(&cands, center, 4, 0.0);
    if lasso_ok(&four) {
        return Ok(Prompt::lasso(z, four, Polarity::Positive));
    }
    let (ymin, ymax) = (comp.iter().map(|p| p[0]).min().unwrap() as i64, comp.iter().map(|p| p[0]).max().unwrap() as i64 + 1);
    let (xmin, xmax) = (comp.iter().map(|p| p[1]).min().unwrap() as i64, comp.iter().map(|p| p[1]).max().unwrap() as i64 + 1);
    Ok(Prompt::lasso(z, vec![[ymin, xmin], [ymin, xmax], [ymax, xmax], [ymax, xmin]], Polarity::Positive))
}

/// Prompts for one simulated interaction of the given type.
pub fn simulate_prompts<R: Rng + ?Sized>(
    kind: PromptType,
    mask: &BinaryMask,
    rng: &mut R,
    cfg: &GuidanceConfig,
) -> Result<Vec<Prompt>> {
    Ok(match kind {
        PromptType::None => Vec::new(),
        PromptType::Point => simulate_point_prompts(mask, rng, cfg)?,
        PromptType::Box => vec![simulate_box_prompt(mask, rng, cfg)?],
        PromptType::Lasso => vec![simulate_lasso_prompt(mask, rng, cfg)?],
        PromptType::Scribble => vec![simulate_scribble_prompt(mask, rng, cfg)?],
    })
}

fn corrective<R: Rng + ?Sized>(region: &BinaryMask, polarity: Polarity, rng: &mut R, cfg: &GuidanceConfig) -> Option<Prompt> {
    let voxels = region.foreground_indices();
    let center = *voxels.choose(rng)?;
    let radius = fit_radius(region, center, sample_radius(cfg, rng));
    Some(Prompt::point(center, radius, polarity))
}

/// Positive click at a uniformly drawn false-negative voxel; `None` when nothing was missed.
pub fn corrective_point<R: Rng + ?Sized>(
    gt: &BinaryMask,
    pred: &BinaryMask,
    rng: &mut R,
    cfg: &GuidanceConfig,
) -> Result<Option<Prompt>> {
    let missed = gt.minus(pred).map_err(|_| PromptError::ShapeMismatch { expected: gt.shape(), got: pred.shape() })?;
    Ok(corrective(&missed, Polarity::Positive, rng, cfg))
}

/// Negative click at a uniformly drawn false-positive voxel.
pub fn corrective_negative_point<R: Rng + ?Sized>(
    gt: &BinaryMask,
    pred: &BinaryMask,
    rng: &mut R,
    cfg: &GuidanceConfig,
) -> Result<Option<Prompt>> {
    let extra = pred.minus(gt).map_err(|_| PromptError::ShapeMismatch { expected: gt.shape(), got: pred.shape() })?;
    Ok(corrective(&extra, Polarity::Negative, rng, cfg))
}

#[cfg(test)]
mod tests {
    use super::super::{rasterize_prompt, PromptKind};
    use super::*;
    use crate::volgrid::Geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ellipsoid(shape: [usize; 3], c: [f64; 3], r: [f64; 3]) -> BinaryMask {
        BinaryMask::from_fn(Geometry::isotropic(shape), |z, y, x| {
            let p = [z as f64, y as f64, x as f64];
            (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
        })
    }

    fn mask_with_slice_areas(areas: &[usize]) -> BinaryMask {
        BinaryMask::from_fn(Geometry::isotropic([areas.len(), 8, 8]), |z, y, x| y * 8 + x < areas[z])
    }

    #[test]
    fn slice_frequencies_follow_area() {
        let mask = mask_with_slice_areas(&[0, 10, 30, 0]);
        let mut r = rng(3);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[select_slice_weighted(&mask, &mut r).unwrap()] += 1;
        }
        assert_eq!(counts[0] + counts[3], 0);
        // 3-sigma multinomial band around p = 0.25
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((counts[1] as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
    }

    #[test]
    fn single_slice_and_empty_mask() {
        let mask = mask_with_slice_areas(&[0, 0, 5]);
        for s in 0..20 {
            assert_eq!(select_slice_weighted(&mask, &mut rng(s)).unwrap(), 2);
        }
        let empty = mask_with_slice_areas(&[0, 0]);
        assert_eq!(select_slice_weighted(&empty, &mut rng(0)), Err(PromptError::EmptyMask));
        assert!(simulate_point_prompts(&empty, &mut rng(0), &GuidanceConfig::default()).is_err());
        assert!(simulate_box_prompt(&empty, &mut rng(0), &GuidanceConfig::default()).is_err());
    }

    #[test]
    fn single_voxel_mask_forces_point_location() {
        let mut mask = BinaryMask::zeros(Geometry::isotropic([5, 5, 5]));
        mask.set(2, 3, 1, true);
        for s in 0..10 {
            for p in simulate_point_prompts(&mask, &mut rng(s), &GuidanceConfig::default()).unwrap() {
                match p.kind {
                    PromptKind::Point(pt) => {
                        assert_eq!(pt.center, [2, 3, 1]);
                        assert_eq!(pt.radius, 1);
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn point_stamps_stay_inside_ellipsoid() {
        let mask = ellipsoid([24, 24, 24], [12.0, 11.0, 12.5], [6.0, 8.0, 5.0]);
        let cfg = GuidanceConfig::default();
        let mut r = rng(11);
        let mut counts = [0usize; 3];
        for _ in 0..300 {
            let ps = simulate_point_prompts(&mask, &mut r, &cfg).unwrap();
            counts[ps.len()] += 1;
            for p in ps {
                let raster = rasterize_prompt(&p, mask.geometry()).unwrap();
                assert_eq!(raster.minus(&mask).unwrap().count(), 0);
            }
        }
        assert_eq!(counts[0], 0);
        assert!(counts[1] > 100 && counts[2] > 100);
    }

    #[test]
    fn box_margin_arithmetic() {
        let mask = BinaryMask::from_fn(Geometry::isotropic([3, 32, 32]), |z, y, x| {
            z == 1 && (10..20).contains(&y) && (10..20).contains(&x)
        });
        let cfg = GuidanceConfig { box_margin: [3, 3], box_jitter: 0, ..Default::default() };
        let p = simulate_box_prompt(&mask, &mut rng(0), &cfg).unwrap();
        assert_eq!(p, Prompt::bbox(1, [7, 7], [23, 23], Polarity::Positive));
        let tight = GuidanceConfig { box_margin: [0, 0], box_jitter: 0, ..Default::default() };
        let p = simulate_box_prompt(&mask, &mut rng(0), &tight).unwrap();
        assert_eq!(p, Prompt::bbox(1, [10, 10], [20, 20], Polarity::Positive));
    }

    #[test]
    fn two_voxel_slice_scribble_joins_them() {
        let mut mask = BinaryMask::zeros(Geometry::isotropic([3, 8, 8]));
        mask.set(1, 4, 3, true);
        mask.set(1, 4, 4, true);
        for s in 0..20 {
            let sc = simulate_scribble(&mask, &mut rng(s), &GuidanceConfig::default()).unwrap();
            let PromptKind::Scribble(sp) = &sc.prompt.kind else { unreachable!() };
            assert_eq!(sp.slice, 1);
            let mut v = sp.vertices.clone();
            v.sort();
            v.dedup();
            assert_eq!(v, vec![[4, 3], [4, 4]]);
            assert_eq!(sp.thickness, 1);
        }
    }

    #[test]
    fn scribble_voxels_inside_mask_and_control_count() {
        let mask = ellipsoid([20, 32, 32], [10.0, 15.0, 16.0], [5.0, 9.0, 7.0]);
        let cfg = GuidanceConfig::default();
        let mut r = rng(5);
        for _ in 0..200 {
            let sc = simulate_scribble(&mask, &mut r, &cfg).unwrap();
            assert!((2..=8).contains(&sc.control_points.len()));
            let raster = rasterize_prompt(&sc.prompt, mask.geometry()).unwrap();
            assert_eq!(raster.minus(&mask).unwrap().count(), 0);
        }
    }

    #[test]
    fn square_lasso_without_jitter_hits_corners() {
        let mask = BinaryMask::from_fn(Geometry::isotropic([1, 30, 30]), |_, y, x| {
            (10..20).contains(&y) && (10..20).contains(&x)
        });
        let cfg = GuidanceConfig { lasso_jitter: 0.0, ..Default::default() };
        // With 4 sectors each corner is the unique farthest point; more sectors add edge points.
        let mut saw_four = false;
        for s in 0..64 {
            let p = simulate_lasso_prompt(&mask, &mut rng(s), &cfg).unwrap();
            let PromptKind::Lasso(l) = &p.kind else { unreachable!() };
            for corner in [[10, 10], [10, 20], [20, 20], [20, 10]] {
                assert!(l.vertices.contains(&corner), "{:?}", l.vertices);
            }
            if l.vertices.len() == 4 {
                saw_four = true;
                let fill = rasterize_prompt(&p, mask.geometry()).unwrap();
                assert_eq!(fill, mask);
            }
        }
        assert!(saw_four);
    }

    #[test]
    fn lasso_polygons_simple_and_sized() {
        let mask = ellipsoid([16, 32, 32], [8.0, 15.0, 16.0], [4.0, 6.0, 9.0]);
        let cfg = GuidanceConfig { lasso_jitter: 2.0, ..Default::default() };
        let mut r = rng(9);
        for _ in 0..300 {
            let p = simulate_lasso_prompt(&mask, &mut r, &cfg).unwrap();
            let PromptKind::Lasso(l) = &p.kind else { unreachable!() };
            assert!((4..=12).contains(&l.vertices.len()));
            assert!(is_simple_polygon(&l.vertices));
        }
    }

    #[test]
    fn samplers_are_deterministic() {
        let mask = ellipsoid([16, 24, 24], [8.0, 12.0, 12.0], [4.0, 6.0, 5.0]);
        let cfg = GuidanceConfig::default();
        for kind in PromptType::ALL {
            let a = simulate_prompts(kind, &mask, &mut rng(42), &cfg).unwrap();
            let b = simulate_prompts(kind, &mask, &mut rng(42), &cfg).unwrap();
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn corrective_point_targets_missed_voxels() {
        let gt = ellipsoid([12, 12, 12], [6.0, 6.0, 6.0], [4.0, 4.0, 4.0]);
        let pred = BinaryMask::from_fn(gt.geometry().clone(), |z, y, x| gt.get(z, y, x) && x < 6);
        for s in 0..30 {
            let p = corrective_point(&gt, &pred, &mut rng(s), &GuidanceConfig::default()).unwrap().unwrap();
            let PromptKind::Point(pt) = p.kind else { unreachable!() };
            assert!(gt.get(pt.center[0], pt.center[1], pt.center[2]) && pt.center[2] >= 6);
        }
        assert!(corrective_point(&gt, &gt, &mut rng(0), &GuidanceConfig::default()).unwrap().is_none());
        let neg = corrective_negative_point(&pred, &gt, &mut rng(1), &GuidanceConfig::default()).unwrap().unwrap();
        assert_eq!(neg.polarity, Polarity::Negative);
    }
}
