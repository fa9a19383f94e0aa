//! Brute-force reference implementations of the geometry kernels, written
//! without reusing any kernel code. Shared with the `apf` acceptance target.
#![allow(dead_code)]

use std::cmp::Ordering;

pub type P = [f32; 3];

/// Same f32 arithmetic as the kernels, so near-ties are decided identically.
pub fn d2(a: &P, b: &P) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Interleaves the bits as a binary string, z y x from the top bit down.
pub fn morton_string(q: [u32; 3], bits: u32) -> u64 {
    let mut s = String::new();
    for i in (0..bits).rev() {
        for a in [2, 1, 0] {
            s.push(if q[a] >> i & 1 == 1 { '1' } else { '0' });
        }
    }
    if s.is_empty() {
        return 0;
    }
    u64::from_str_radix(&s, 2).unwrap()
}

pub fn quantize(p: &P, lo: &P, hi: &P, bits: u32) -> [u32; 3] {
    let cells = (2u64.pow(bits) - 1) as f64;
    let mut q = [0; 3];
    for a in 0..3 {
        let span = hi[a] as f64 - lo[a] as f64;
        if span > 0.0 {
            let t = ((p[a] as f64 - lo[a] as f64) / span * cells).floor();
            q[a] = t.max(0.0).min(cells) as u32;
        }
    }
    q
}

pub fn bbox(pts: &[P]) -> (P, P) {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

fn lex(a: &P, b: &P) -> Ordering {
    for i in 0..3 {
        match a[i].total_cmp(&b[i]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Greedy sampling that recomputes every candidate's distance to the whole
/// selected set at each step. Canonical start: smallest bounding-box Morton
/// code at 10 bits, then coordinates, then index.
pub fn fps(pts: &[P], n_s: usize) -> Vec<usize> {
    let (lo, hi) = bbox(pts);
    let code = |i: usize| morton_string(quantize(&pts[i], &lo, &hi, 10), 10);
    let key = |a: usize, b: usize| code(a).cmp(&code(b)).then(lex(&pts[a], &pts[b])).then(a.cmp(&b));
    let mut sel = vec![(0..pts.len()).min_by(|&a, &b| key(a, b)).unwrap()];
    while sel.len() < n_s {
        let mut best: Option<(usize, f32)> = None;
        for c in 0..pts.len() {
            if sel.contains(&c) {
                continue;
            }
            let dmin = sel.iter().map(|&s| d2(&pts[c], &pts[s])).fold(f32::INFINITY, f32::min);
            best = match best {
                None => Some((c, dmin)),
                Some((b, db)) => {
                    let better = dmin > db || (dmin == db && key(c, b) == Ordering::Less);
                    Some(if better { (c, dmin) } else { (b, db) })
                }
            };
        }
        sel.push(best.unwrap().0);
    }
    sel
}

/// Sorts every point by (distance, index) and keeps the first `k`.
pub fn knn(pts: &[P], center: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<(f32, usize)> = pts.iter().enumerate().map(|(j, p)| (d2(p, &pts[center]), j)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|x| x.1).collect()
}
