//! Morton-interleaved cell identifiers.

/// Interleaved (x, y, z) cell coordinates, one bit triple per subdivision
/// step, most significant triple first. Within a triple the order is
/// x (high), y, z (low), so the low three bits are the octant within the
/// parent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShuffleKey(pub u64);

impl ShuffleKey {
    pub const ROOT: ShuffleKey = ShuffleKey(0);

    pub fn encode(i: u32, j: u32, k: u32, depth: u8) -> Self {
        let mut key = 0u64;
        for level in (0..depth).rev() {
            let bx = ((i >> level) & 1) as u64;
            let by = ((j >> level) & 1) as u64;
            let bz = ((k >> level) & 1) as u64;
            key = (key << 3) | (bx << 2) | (by << 1) | bz;
        }
        ShuffleKey(key)
    }

    pub fn decode(self, depth: u8) -> (u32, u32, u32) {
        let (mut i, mut j, mut k) = (0u32, 0u32, 0u32);
        for level in 0..depth {
            let triple = (self.0 >> (3 * level as u32)) & 7;
            i |= (((triple >> 2) & 1) as u32) << level;
            j |= (((triple >> 1) & 1) as u32) << level;
            k |= ((triple & 1) as u32) << level;
        }
        (i, j, k)
    }

    /// Key of the cell containing `p` (unit-cube coordinates) at `depth`.
    /// Coordinates are clamped to `[0, 1 - 2^-20]` before flooring.
    pub fn from_point(p: [f64; 3], depth: u8) -> Self {
        let n = (1u64 << depth) as f64;
        let cell = |v: f64| (clamp_unit(v) * n).floor() as u32;
        Self::encode(cell(p[0]), cell(p[1]), cell(p[2]), depth)
    }

    pub fn parent(self) -> Self {
        ShuffleKey(self.0 >> 3)
    }

    pub fn child(self, octant: u8) -> Self {
        ShuffleKey((self.0 << 3) | (octant as u64 & 7))
    }

    pub fn octant(self) -> u8 {
        (self.0 & 7) as u8
    }

    /// Ancestor `levels_up` subdivision steps above this key.
    pub fn ancestor(self, levels_up: u8) -> Self {
        ShuffleKey(self.0 >> (3 * levels_up as u32))
    }

    /// Lower corner of the cell in unit-cube coordinates.
    pub fn min_corner(self, depth: u8) -> [f64; 3] {
        let (i, j, k) = self.decode(depth);
        let side = cell_side(depth);
        [i as f64 * side, j as f64 * side, k as f64 * side]
    }

    pub fn center(self, depth: u8) -> [f64; 3] {
        let c = self.min_corner(depth);
        let h = 0.5 * cell_side(depth);
        [c[0] + h, c[1] + h, c[2] + h]
    }
}

/// Largest coordinate accepted by point location.
pub const UNIT_MAX: f64 = 1.0 - 1.0 / (1u64 << 20) as f64;

pub fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, UNIT_MAX)
}

/// Side length of a cell at `depth` in unit-cube coordinates.
pub fn cell_side(depth: u8) -> f64 {
    1.0 / (1u64 << depth) as f64
}
