//! Mask post-processing: per-class closing and small-component removal.
//!
//! Applying the operation twice is not guaranteed to be a no-op: removing a
//! component can open gaps that a second closing then bridges differently.

use std::collections::VecDeque;

use crate::raster::Mask;

pub const DEFAULT_CLOSE_RADIUS: usize = 1;
pub const DEFAULT_MIN_COMPONENT: usize = 16;

/// Sliding-window count of `true` cells along one axis, window `[i-r, i+r]`
/// clipped to the bounds. Returns `(hits, window_len)` per cell.
fn window_counts(line: &[bool], r: usize) -> Vec<(usize, usize)> {
    let n = line.len();
    let mut prefix = vec![0usize; n + 1];
    for (i, &b) in line.iter().enumerate() {
        prefix[i + 1] = prefix[i] + b as usize;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(n);
            (prefix[hi] - prefix[lo], hi - lo)
        })
        .collect()
}

/// Separable square-window pass. `all = false` dilates, `all = true` erodes;
/// cells outside the image never constrain the result.
fn square_pass(bits: &[bool], w: usize, h: usize, r: usize, all: bool) -> Vec<bool> {
    let keep = |(hits, len): (usize, usize)| if all { hits == len } else { hits > 0 };
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for (x, c) in window_counts(&bits[y * w..(y + 1) * w], r).into_iter().enumerate() {
            rows[y * w + x] = keep(c);
        }
    }
    let mut out = vec![false; w * h];
    let mut column = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = rows[y * w + x];
        }
        for (y, c) in window_counts(&column, r).into_iter().enumerate() {
            out[y * w + x] = keep(c);
        }
    }
    out
}

/// Dilation followed by erosion with a `(2r+1)²` square, evaluated as if the
/// mask continued as background beyond its edges.
pub fn close(bits: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return bits.to_vec();
    }
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let mut padded = vec![false; pw * ph];
    for y in 0..h {
        padded[(y + r) * pw + r..(y + r) * pw + r + w].copy_from_slice(&bits[y * w..(y + 1) * w]);
    }
    let dilated = square_pass(&padded, pw, ph, r, false);
    let closed = square_pass(&dilated, pw, ph, r, true);
    (0..h)
        .flat_map(|y| closed[(y + r) * pw + r..(y + r) * pw + r + w].iter().copied())
        .collect()
}

/// 4-connected components of `label` in `classes`, as pixel index lists.
pub fn components(classes: &[u8], w: usize, h: usize, label: u8) -> Vec<Vec<usize>> {
    let mut seen = vec![false; classes.len()];
    let mut out = Vec::new();
    for start in 0..classes.len() {
        if seen[start] || classes[start] != label {
            continue;
        }
        seen[start] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (x, y) = (p % w, p / w);
            let neighbors = [
                (x > 0).then(|| p - 1),
                (x + 1 < w).then(|| p + 1),
                (y > 0).then(|| p - w),
                (y + 1 < h).then(|| p + w),
            ];
            for q in neighbors.into_iter().flatten() {
                if !seen[q] && classes[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Closes every class with radius `close_radius` (smaller class id wins where
/// closed classes overlap), then clears components under `min_component`
/// pixels.
pub fn morph_postprocess(mask: &Mask, close_radius: usize, min_component: usize) -> Mask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut out = vec![0u8; mask.len()];
    for class in mask.present_ids() {
        let bits: Vec<bool> = mask.raw().iter().map(|&c| c == class).collect();
        for (o, b) in out.iter_mut().zip(close(&bits, w, h, close_radius)) {
            if b && *o == 0 {
                *o = class;
            }
        }
    }
    if min_component > 0 {
        for class in mask.present_ids() {
            for comp in components(&out, w, h, class) {
                if comp.len() < min_component {
                    for p in comp {
                        out[p] = 0;
                    }
                }
            }
        }
    }
    Mask::from_raw(mask.width(), mask.height(), out, mask.class_table().clone())
        .expect("labels come from the input mask")
        .pruned()
}
