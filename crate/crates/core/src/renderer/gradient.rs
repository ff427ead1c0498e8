use crate::octree::LightingOctree;

/// Per-node derivatives of a scalar loss, laid out like the octree levels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBuffer {
    pub color: Vec<Vec<[f64; 3]>>,
    pub sigma: Vec<Vec<f64>>,
}

impl GradientBuffer {
    pub fn zeros_like(octree: &LightingOctree) -> Self {
        Self {
            color: octree.levels().iter().map(|l| vec![[0.0; 3]; l.len()]).collect(),
            sigma: octree.levels().iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    pub fn matches(&self, octree: &LightingOctree) -> bool {
        self.color.len() == octree.levels().len()
            && self.sigma.len() == octree.levels().len()
            && octree
                .levels()
                .iter()
                .zip(self.color.iter().zip(&self.sigma))
                .all(|(l, (c, s))| c.len() == l.len() && s.len() == l.len())
    }

    pub fn clear(&mut self) {
        self.color.iter_mut().flatten().for_each(|c| *c = [0.0; 3]);
        self.sigma.iter_mut().flatten().for_each(|s| *s = 0.0);
    }

    /// Element-wise `self += other`. Shapes must agree.
    pub fn add_assign(&mut self, other: &GradientBuffer) {
        for (a, b) in self.color.iter_mut().flatten().zip(other.color.iter().flatten()) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
        for (a, b) in self.sigma.iter_mut().flatten().zip(other.sigma.iter().flatten()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.color.iter_mut().flatten().flatten().for_each(|v| *v *= k);
        self.sigma.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.color.iter().flatten().flatten().all(|v| v.is_finite())
            && self.sigma.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.color
            .iter()
            .flatten()
            .flatten()
            .chain(self.sigma.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
