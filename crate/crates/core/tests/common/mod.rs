#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.partial_cmp(&self.0).unwrap()
    }
}

/// Shortest path on an `n x n` lattice over the box with a 32 direction stencil.
pub fn dijkstra_distance(
    w: impl Fn(f64, f64) -> f64,
    lo: [f64; 2],
    hi: [f64; 2],
    n: usize,
    from: [f64; 2],
    to: [f64; 2],
) -> f64 {
    let hx = (hi[0] - lo[0]) / (n - 1) as f64;
    let hy = (hi[1] - lo[1]) / (n - 1) as f64;
    let coord = |i: usize, j: usize| (lo[0] + i as f64 * hx, lo[1] + j as f64 * hy);
    let f: Vec<f64> = (0..n * n)
        .map(|k| {
            let (x, y) = coord(k % n, k / n);
            (2.0 * w(x, y)).sqrt()
        })
        .collect();
    let snap = |p: [f64; 2]| {
        let i = ((p[0] - lo[0]) / hx).round() as usize;
        let j = ((p[1] - lo[1]) / hy).round() as usize;
        j * n + i
    };
    let mut moves = Vec::new();
    for a in -3i64..=3 {
        for b in -3i64..=3 {
            if (a, b) != (0, 0) && gcd(a, b) == 1 {
                moves.push((a, b));
            }
        }
    }
    assert_eq!(moves.len(), 32);
    let (src, dst) = (snap(from), snap(to));
    let mut dist = vec![f64::INFINITY; n * n];
    dist[src] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Item(0.0, src));
    while let Some(Item(d, k)) = heap.pop() {
        if k == dst {
            return d;
        }
        if d > dist[k] {
            continue;
        }
        let (i, j) = ((k % n) as i64, (k / n) as i64);
        for &(a, b) in &moves {
            let (ii, jj) = (i + a, j + b);
            if ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                continue;
            }
            let kk = jj as usize * n + ii as usize;
            // midpoint refinement of the edge integral for long stencil moves
            let (x0, y0) = coord(i as usize, j as usize);
            let (x1, y1) = coord(ii as usize, jj as usize);
            let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            let fm = (2.0 * w(0.5 * (x0 + x1), 0.5 * (y0 + y1))).sqrt();
            let cost = len * (f[k] + 4.0 * fm + f[kk]) / 6.0;
            let nd = d + cost;
            if nd < dist[kk] {
                dist[kk] = nd;
                heap.push(Item(nd, kk));
            }
        }
    }
    dist[dst]
}

/// sigma for (u^2-1)^2 by composite Simpson on sqrt(2W) over [-1, 1].
pub fn double_well_sigma() -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    let f = |u: f64| (2.0 * (u * u - 1.0).powi(2)).sqrt();
    let mut s = f(-1.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(-1.0 + i as f64 * h);
    }
    s * h / 3.0
}
