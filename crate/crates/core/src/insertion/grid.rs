use crate::camera::Vec3;

use super::TriangleMesh;

const COARSE: usize = 8;
const FINE: usize = 4;

/// Ray `origin + t * dir` restricted to `t` in `[t_min, t_max]`. The
/// direction need not be normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self {
            origin,
            dir,
            t_min: 0.0,
            t_max: f64::INFINITY,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: u32,
    /// Barycentric weights of the second and third vertex.
    pub u: f64,
    pub v: f64,
    /// Unit geometric normal facing the ray origin.
    pub normal: Vec3,
}

/// A grid cell crossed by a ray over `[t_enter, t_exit]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellVisit {
    pub cell: [usize; 3],
    pub t_enter: f64,
    pub t_exit: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct FineGrid {
    cells: Vec<Vec<u32>>,
}

/// Two-level uniform grid: 8^3 coarse cells over the mesh bounds, each
/// occupied coarse cell split into 4^3 cells holding triangle lists.
#[derive(Clone, Debug, PartialEq)]
pub struct TriGrid {
    mesh: TriangleMesh,
    min: Vec3,
    max: Vec3,
    cell: Vec3,
    coarse: Vec<Option<FineGrid>>,
}

fn flat(c: [usize; 3], n: usize) -> usize {
    (c[2] * n + c[1]) * n + c[0]
}

/// Double-sided Moller-Trumbore test; returns `(t, u, v)`.
pub fn intersect_triangle(ray: &Ray, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() <= 1e-14 * e1.norm() * e2.norm() * ray.dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t >= ray.t_min && t <= ray.t_max).then_some((t, u, v))
}

fn make_hit(mesh: &TriangleMesh, ray: &Ray, id: u32, (t, u, v): (f64, f64, f64)) -> Hit {
    let [a, b, c] = mesh.triangles[id as usize].map(|k| mesh.vertices[k as usize]);
    let mut n = (b - a).cross(&(c - a)).normalize();
    if n.dot(&ray.dir) > 0.0 {
        n = -n;
    }
    Hit {
        t,
        triangle: id,
        u,
        v,
        normal: n,
    }
}

// nearest by t, lower triangle id on ties
fn closer(t: f64, id: u32, best: &Option<(f64, u32, f64, f64)>) -> bool {
    match best {
        None => true,
        Some((bt, bid, _, _)) => t < *bt || (t == *bt && id < *bid),
    }
}

/// Tests every triangle; the reference for [`TriGrid::intersect`].
pub fn intersect_brute_force(mesh: &TriangleMesh, ray: &Ray) -> Option<Hit> {
    let mut best = None;
    for (id, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|k| mesh.vertices[k as usize]);
        if let Some((t, u, v)) = intersect_triangle(ray, &a, &b, &c) {
            if closer(t, id as u32, &best) {
                best = Some((t, id as u32, u, v));
            }
        }
    }
    best.map(|(t, id, u, v)| make_hit(mesh, ray, id, (t, u, v)))
}

/// Slab test against `[lo, hi]`, clipped to `[t0, t1]`.
fn box_span(ray: &Ray, lo: &Vec3, hi: &Vec3, t0: f64, t1: f64) -> Option<(f64, f64)> {
    let (mut a, mut b) = (t0, t1);
    for i in 0..3 {
        let d = ray.dir[i];
        if d == 0.0 {
            if ray.origin[i] < lo[i] || ray.origin[i] > hi[i] {
                return None;
            }
            continue;
        }
        let (mut n, mut f) = ((lo[i] - ray.origin[i]) / d, (hi[i] - ray.origin[i]) / d);
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        a = a.max(n);
        b = b.min(f);
    }
    (a <= b).then_some((a, b))
}

/// Walks the cells of an `n^3` grid at `lo` with cell size `cell` that the
/// ray crosses over `[t0, t1]`, in order of increasing `t`. Stops when
/// `visit` returns false.
fn dda(ray: &Ray, lo: &Vec3, cell: &Vec3, n: usize, t0: f64, t1: f64, mut visit: impl FnMut(CellVisit) -> bool) {
    let p = ray.at(t0);
    let mut idx = [0usize; 3];
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        let f = ((p[i] - lo[i]) / cell[i]).floor();
        idx[i] = f.clamp(0.0, (n - 1) as f64) as usize;
        let d = ray.dir[i];
        if d > 0.0 {
            step[i] = 1;
            t_next[i] = (lo[i] + (idx[i] + 1) as f64 * cell[i] - ray.origin[i]) / d;
            t_delta[i] = cell[i] / d;
        } else if d < 0.0 {
            step[i] = -1;
            t_next[i] = (lo[i] + idx[i] as f64 * cell[i] - ray.origin[i]) / d;
            t_delta[i] = -cell[i] / d;
        }
    }
    let mut t = t0;
    loop {
        let exit = t_next[0].min(t_next[1]).min(t_next[2]).max(t);
        let end = exit.min(t1);
        if !visit(CellVisit { cell: idx, t_enter: t, t_exit: end }) || exit >= t1 {
            return;
        }
        // advance every axis that reaches the boundary at `exit` together
        for i in 0..3 {
            if t_next[i] <= exit {
                let next = idx[i] as i64 + step[i];
                if next < 0 || next >= n as i64 {
                    return;
                }
                idx[i] = next as usize;
                t_next[i] += t_delta[i];
            }
        }
        t = exit;
    }
}

impl TriGrid {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let (lo, hi) = mesh.bounds();
        let pad = 1e-6 * (hi - lo).norm().max(1e-9);
        let min = lo.add_scalar(-pad);
        let max = hi.add_scalar(pad);
        let cell = (max - min) / COARSE as f64;
        let tri_boxes: Vec<(Vec3, Vec3)> = mesh
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|k| mesh.vertices[k as usize]);
                (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
            })
            .collect();
        let overlap_range = |lo_t: f64, hi_t: f64, origin: f64, size: f64, n: usize| {
            // inclusive, with slack so that boundary points hit both sides
            let eps = 1e-9 * size;
            let a = ((lo_t - eps - origin) / size).floor().max(0.0) as usize;
            let b = (((hi_t + eps - origin) / size).floor().max(0.0) as usize).min(n - 1);
            a..=b
        };
        let mut coarse_lists: Vec<Vec<u32>> = vec![Vec::new(); COARSE.pow(3)];
        for (id, (tlo, thi)) in tri_boxes.iter().enumerate() {
            for z in overlap_range(tlo.z, thi.z, min.z, cell.z, COARSE) {
                for y in overlap_range(tlo.y, thi.y, min.y, cell.y, COARSE) {
                    for x in overlap_range(tlo.x, thi.x, min.x, cell.x, COARSE) {
                        coarse_lists[flat([x, y, z], COARSE)].push(id as u32);
                    }
                }
            }
        }
        let fine_cell = cell / FINE as f64;
        let coarse = coarse_lists
            .into_iter()
            .enumerate()
            .map(|(ci, list)| {
                if list.is_empty() {
                    return None;
                }
                let c = [ci % COARSE, (ci / COARSE) % COARSE, ci / (COARSE * COARSE)];
                let origin = min + Vec3::new(c[0] as f64 * cell.x, c[1] as f64 * cell.y, c[2] as f64 * cell.z);
                let mut cells = vec![Vec::new(); FINE.pow(3)];
                for id in list {
                    let (tlo, thi) = &tri_boxes[id as usize];
                    for z in overlap_range(tlo.z, thi.z, origin.z, fine_cell.z, FINE) {
                        for y in overlap_range(tlo.y, thi.y, origin.y, fine_cell.y, FINE) {
                            for x in overlap_range(tlo.x, thi.x, origin.x, fine_cell.x, FINE) {
                                cells[flat([x, y, z], FINE)].push(id);
                            }
                        }
                    }
                }
                Some(FineGrid { cells })
            })
            .collect();
        Self {
            mesh: mesh.clone(),
            min,
            max,
            cell,
            coarse,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.min, self.max)
    }

    /// Triangles listed in a fine cell; `None` for an empty coarse cell.
    pub fn cell_triangles(&self, coarse: [usize; 3], fine: [usize; 3]) -> Option<&[u32]> {
        self.coarse[flat(coarse, COARSE)]
            .as_ref()
            .map(|g| g.cells[flat(fine, FINE)].as_slice())
    }

    /// World-space box of a fine cell.
    pub fn fine_cell_bounds(&self, coarse: [usize; 3], fine: [usize; 3]) -> (Vec3, Vec3) {
        let f = self.cell / FINE as f64;
        let lo = Vec3::from_fn(|i, _| self.min[i] + coarse[i] as f64 * self.cell[i] + fine[i] as f64 * f[i]);
        (lo, lo + f)
    }

    /// Coarse cells crossed by the ray, in order.
    pub fn coarse_cells(&self, ray: &Ray) -> Vec<CellVisit> {
        let mut out = Vec::new();
        if let Some((t0, t1)) = box_span(ray, &self.min, &self.max, ray.t_min, ray.t_max) {
            dda(ray, &self.min, &self.cell, COARSE, t0, t1, |v| {
                out.push(v);
                true
            });
        }
        out
    }

    /// Nearest hit, front or back face.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let (t0, t1) = box_span(ray, &self.min, &self.max, ray.t_min, ray.t_max)?;
        let fine_cell = self.cell / FINE as f64;
        let mut best: Option<(f64, u32, f64, f64)> = None;
        dda(ray, &self.min, &self.cell, COARSE, t0, t1, |cv| {
            let Some(fine) = &self.coarse[flat(cv.cell, COARSE)] else {
                return true;
            };
            let origin = Vec3::from_fn(|i, _| self.min[i] + cv.cell[i] as f64 * self.cell[i]);
            let mut done = false;
            dda(ray, &origin, &fine_cell, FINE, cv.t_enter, cv.t_exit, |fv| {
                for &id in &fine.cells[flat(fv.cell, FINE)] {
                    let [a, b, c] = self.mesh.triangles[id as usize].map(|k| self.mesh.vertices[k as usize]);
                    if let Some((t, u, v)) = intersect_triangle(ray, &a, &b, &c) {
                        if closer(t, id, &best) {
                            best = Some((t, id, u, v));
                        }
                    }
                }
                done = best.is_some_and(|b| b.0 <= fv.t_exit);
                !done
            });
            !done
        });
        best.map(|(t, id, u, v)| make_hit(&self.mesh, ray, id, (t, u, v)))
    }
}
