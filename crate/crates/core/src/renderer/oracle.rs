//! Brute-force reference marcher: uniform half-leaf steps, finest level
//! only, unit weights. Node lookup goes through its own hash map rather than
//! the octree's descent so it can serve as an independent check.

use std::collections::HashMap;

use crate::camera::Cone;
use crate::octree::{LightingOctree, NodeFeatures};

pub struct OracleField {
    max_depth: u8,
    cells: HashMap<(u8, u32, u32, u32), NodeFeatures>,
}

impl OracleField {
    pub fn new(octree: &LightingOctree) -> Self {
        let mut cells = HashMap::new();
        for (d, level) in octree.levels().iter().enumerate() {
            for (k, f) in level.keys.iter().zip(&level.features) {
                let (i, j, l) = k.decode(d as u8);
                cells.insert((d as u8, i, j, l), *f);
            }
        }
        Self {
            max_depth: octree.max_depth(),
            cells,
        }
    }

    /// Features of the deepest stored cell containing `p`.
    fn lookup(&self, p: [f64; 3]) -> NodeFeatures {
        if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
            return NodeFeatures::ZERO;
        }
        let top = 1.0 - 2f64.powi(-20);
        for d in (0..=self.max_depth).rev() {
            let n = 2f64.powi(d as i32);
            let cell = |v: f64| (v.clamp(0.0, top) * n).floor() as u32;
            if let Some(f) = self.cells.get(&(d, cell(p[0]), cell(p[1]), cell(p[2]))) {
                return *f;
            }
        }
        NodeFeatures::ZERO
    }

    pub fn trace(&self, cone: &Cone) -> [f64; 3] {
        let (o, dir) = (cone.apex, cone.axis);
        // slab test against the unit cube
        let mut t_in = 0.0f64;
        let mut t_out = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if o[a] < 0.0 || o[a] > 1.0 {
                    return [0.0; 3];
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let t0 = (0.0 - o[a]) * inv;
            let t1 = (1.0 - o[a]) * inv;
            t_in = t_in.max(t0.min(t1));
            t_out = t_out.min(t0.max(t1));
        }
        if t_in > t_out {
            return [0.0; 3];
        }
        let step = 0.5 * 2f64.powi(-(self.max_depth as i32));
        let end = 3f64.sqrt().min(t_out - t_in);
        let mut radiance = [0.0; 3];
        let mut optical = 0.0f64;
        let mut n = 1usize;
        loop {
            let s = n as f64 * step;
            if s > end {
                break;
            }
            let t = t_in + s;
            let p = o + dir * t;
            let f = self.lookup([p.x, p.y, p.z]);
            let alpha = 1.0 - (-f.sigma * step).exp();
            let trans = (-optical).exp();
            for c in 0..3 {
                radiance[c] += trans * alpha * f.color[c];
            }
            optical += f.sigma * step;
            n += 1;
        }
        radiance
    }
}

pub fn trace_cone_oracle(octree: &LightingOctree, cone: &Cone) -> [f64; 3] {
    OracleField::new(octree).trace(cone)
}
