//! Zero sets of cell-centred samples by marching squares (2D) and marching tetrahedra (3D).

use rayon::prelude::*;

use crate::torus::TorusGrid;

/// One piece of a zero set: barycenter (unwrapped, may leave `[0, L)`) and measure.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Piece {
    pub x: [f64; 3],
    pub area: f64,
}

fn corner_cells(grid: &TorusGrid<f64>, origin: [usize; 3]) -> Vec<usize> {
    let d = grid.dim();
    (0..1usize << d)
        .map(|c| {
            let idx: Vec<i64> = (0..d).map(|a| (origin[a] + ((c >> a) & 1)) as i64).collect();
            grid.flatten(&idx)
        })
        .collect()
}

/// Corner offsets in cell units; bit `a` of the corner index is the step along axis `a`.
fn corner_offset(c: usize) -> [f64; 3] {
    [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64]
}

fn lerp(p: [f64; 3], q: [f64; 3], gp: f64, gq: f64) -> [f64; 3] {
    let t = gp / (gp - gq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), p[2] + t * (q[2] - p[2])]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn segments(g: [f64; 4], out: &mut Vec<([f64; 3], [f64; 3])>) {
    // corners in cyclic order (0,0) (1,0) (1,1) (0,1)
    let pos = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    let inside: Vec<bool> = g.iter().map(|&v| v >= 0.0).collect();
    let mut cuts = [None; 4];
    for e in 0..4 {
        let (a, b) = (e, (e + 1) % 4);
        if inside[a] != inside[b] {
            cuts[e] = Some(lerp(pos[a], pos[b], g[a], g[b]));
        }
    }
    let found: Vec<usize> = (0..4).filter(|&e| cuts[e].is_some()).collect();
    match found.len() {
        2 => out.push((cuts[found[0]].unwrap(), cuts[found[1]].unwrap())),
        4 => {
            let centre = 0.25 * g.iter().sum::<f64>();
            let pairs = if (centre >= 0.0) == inside[0] { [(0, 1), (2, 3)] } else { [(3, 0), (1, 2)] };
            for (a, b) in pairs {
                out.push((cuts[a].unwrap(), cuts[b].unwrap()));
            }
        }
        _ => {}
    }
}

const TETS: [[usize; 4]; 6] = [[0, 1, 3, 7], [0, 3, 2, 7], [0, 2, 6, 7], [0, 6, 4, 7], [0, 4, 5, 7], [0, 5, 1, 7]];

fn triangles(g: &[f64], out: &mut Vec<[[f64; 3]; 3]>) {
    for tet in TETS {
        let (pos_v, neg_v): (Vec<usize>, Vec<usize>) = tet.iter().partition(|&&c| g[c] >= 0.0);
        let cut = |a: usize, b: usize| lerp(corner_offset(a), corner_offset(b), g[a], g[b]);
        match (pos_v.len(), neg_v.len()) {
            (1, 3) | (3, 1) => {
                let (lone, rest) = if pos_v.len() == 1 { (pos_v[0], &neg_v) } else { (neg_v[0], &pos_v) };
                out.push([cut(lone, rest[0]), cut(lone, rest[1]), cut(lone, rest[2])]);
            }
            (2, 2) => {
                let p = [
                    cut(pos_v[0], neg_v[0]),
                    cut(pos_v[0], neg_v[1]),
                    cut(pos_v[1], neg_v[1]),
                    cut(pos_v[1], neg_v[0]),
                ];
                out.push([p[0], p[1], p[2]]);
                out.push([p[0], p[2], p[3]]);
            }
            _ => {}
        }
    }
}

/// Zero set of `g`, the `>= 0` side counting as inside.
pub(crate) fn zero_set(grid: &TorusGrid<f64>, g: &[f64]) -> Vec<Piece> {
    let d = grid.dim();
    let h = grid.h();
    let cubes = grid.cells();
    let chunks: Vec<Vec<Piece>> = (0..cubes)
        .into_par_iter()
        .chunks(1024)
        .map(|block| {
            let mut pieces = Vec::new();
            let mut segs = Vec::new();
            let mut tris = Vec::new();
            for cube in block {
                let origin = grid.unflatten(cube);
                let cells = corner_cells(grid, origin);
                let vals: Vec<f64> = cells.iter().map(|&c| g[c]).collect();
                let any_in = vals.iter().any(|&v| v >= 0.0);
                let any_out = vals.iter().any(|&v| v < 0.0);
                if !(any_in && any_out) {
                    continue;
                }
                let base: [f64; 3] = std::array::from_fn(|a| if a < d { (origin[a] as f64 + 0.5) * h } else { 0.0 });
                if d == 2 {
                    segs.clear();
                    segments([vals[0], vals[1], vals[3], vals[2]], &mut segs);
                    for &(p, q) in &segs {
                        let len = norm(sub(q, p)) * h;
                        if len > 0.0 {
                            let x = std::array::from_fn(|a| base[a] + 0.5 * (p[a] + q[a]) * h);
                            pieces.push(Piece { x, area: len });
                        }
                    }
                } else {
                    tris.clear();
                    triangles(&vals, &mut tris);
                    for t in &tris {
                        let area = 0.5 * norm(cross(sub(t[1], t[0]), sub(t[2], t[0]))) * h * h;
                        if area > 0.0 {
                            let x = std::array::from_fn(|a| base[a] + (t[0][a] + t[1][a] + t[2][a]) / 3.0 * h);
                            pieces.push(Piece { x, area });
                        }
                    }
                }
            }
            pieces
        })
        .collect();
    chunks.into_iter().flatten().collect()
}

/// Origins of cubes whose corners carry at least three distinct labels, with those labels.
pub(crate) fn junction_cubes(grid: &TorusGrid<f64>, labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    (0..grid.cells())
        .into_par_iter()
        .filter_map(|cube| {
            let cells = corner_cells(grid, grid.unflatten(cube));
            let mut seen: Vec<usize> = cells.iter().map(|&c| labels[c]).collect();
            seen.sort_unstable();
            seen.dedup();
            (seen.len() >= 3).then_some((cube, seen))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_length_2d() {
        let grid = TorusGrid::<f64>::new(2, 64, 1.0).unwrap();
        let g: Vec<f64> = (0..grid.cells())
            .map(|c| {
                let x = grid.position(c);
                0.3 - ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt()
            })
            .collect();
        let len: f64 = zero_set(&grid, &g).iter().map(|p| p.area).sum();
        assert!((len - std::f64::consts::TAU * 0.3).abs() < 2e-3, "{len}");
    }

    #[test]
    fn sphere_area_3d() {
        let grid = TorusGrid::<f64>::new(3, 32, 1.0).unwrap();
        let g: Vec<f64> = (0..grid.cells())
            .map(|c| {
                let x = grid.position(c);
                0.3 - x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        let area: f64 = zero_set(&grid, &g).iter().map(|p| p.area).sum();
        let exact = 4.0 * std::f64::consts::PI * 0.09;
        assert!((area - exact).abs() / exact < 1e-2, "{area} vs {exact}");
    }

    #[test]
    fn plane_is_flat() {
        let grid = TorusGrid::<f64>::new(2, 16, 1.0).unwrap();
        let g: Vec<f64> = (0..grid.cells()).map(|c| 0.41 - grid.position(c)[0]).collect();
        let pieces = zero_set(&grid, &g);
        // the plane x = 0.41 and its periodic partner at the seam
        let near: f64 = pieces.iter().filter(|p| (p.x[0] - 0.41).abs() < 1e-12).map(|p| p.area).sum();
        assert!((near - 1.0).abs() < 1e-12);
    }
}
