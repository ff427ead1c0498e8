//! `LOC1` binary octree layout, little-endian throughout:
//!
//! ```text
//! "LOC1" | u32 version = 1 | u32 max_depth | f64 min_x, min_y, min_z, side
//! per level 0..=max_depth:
//!     u64 count | count x u64 key | count x u8 split | count x 4 x f32 (r, g, b, sigma)
//! ```
//!
//! Features are held as `f64` in memory and stored as `f32`, so a tree read
//! from a file writes back to identical bytes.

use std::io::{Read, Write};

use super::{LightingOctree, NodeFeatures, OctreeLevel, ShuffleKey, WorldBBox};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LOC1";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 4 + 8 * 4;
const NODE_LEN: usize = 8 + 1 + 16;

pub fn serialized_len(tree: &LightingOctree) -> usize {
    HEADER_LEN + tree.levels().iter().map(|l| 8 + l.len() * NODE_LEN).sum::<usize>()
}

pub fn encode(tree: &LightingOctree) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_len(tree));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tree.max_depth() as u32).to_le_bytes());
    let bbox = tree.bbox();
    for v in bbox.min.iter().chain(std::iter::once(&bbox.side)) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for level in tree.levels() {
        out.extend_from_slice(&(level.len() as u64).to_le_bytes());
        for k in &level.keys {
            out.extend_from_slice(&k.0.to_le_bytes());
        }
        out.extend(level.split.iter().map(|s| *s as u8));
        for f in &level.features {
            for v in f.color.iter().chain(std::iter::once(&f.sigma)) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write<W: Write>(tree: &LightingOctree, mut w: W) -> Result<()> {
    w.write_all(&encode(tree))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<LightingOctree> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<LightingOctree> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c
        .take(4)
        .map_err(|_| Error::Format("file shorter than magic".into()))?
        .try_into()
        .unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let max_depth = c.u32()?;
    if max_depth == 0 || max_depth > super::MAX_SUPPORTED_DEPTH as u32 {
        return Err(Error::Format(format!("max depth {max_depth}")));
    }
    let bbox = WorldBBox {
        min: [c.f64()?, c.f64()?, c.f64()?],
        side: c.f64()?,
    };
    let mut levels = Vec::with_capacity(max_depth as usize + 1);
    for _ in 0..=max_depth {
        let count = c.u64()? as usize;
        if count > (bytes.len() - c.pos) / NODE_LEN {
            return Err(Error::Format(format!("level count {count} exceeds file size")));
        }
        let keys = c
            .take(count * 8)?
            .chunks_exact(8)
            .map(|b| ShuffleKey(u64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let split = c
            .take(count)?
            .iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Format(format!("split label {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let features = c
            .take(count * 16)?
            .chunks_exact(16)
            .map(|b| {
                let v: Vec<f64> = b
                    .chunks_exact(4)
                    .map(|x| f32::from_le_bytes(x.try_into().unwrap()) as f64)
                    .collect();
                NodeFeatures {
                    color: [v[0], v[1], v[2]],
                    sigma: v[3],
                }
            })
            .collect();
        levels.push(OctreeLevel {
            keys,
            split,
            features,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    LightingOctree::from_levels(max_depth as u8, levels, bbox)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::{build_octree, BuildConfig, CloudPoint, PointCloud};

    fn small_tree() -> LightingOctree {
        let cloud = PointCloud::new(vec![
            CloudPoint {
                position: [0.1, 0.2, 0.3],
                color: [0.5, 0.25, 1.0],
            },
            CloudPoint {
                position: [0.9, 0.8, 0.7],
                color: [2.0, 0.0, 0.125],
            },
        ]);
        build_octree(&cloud, WorldBBox::UNIT, &BuildConfig::new(3)).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small_tree());
        assert_eq!(&bytes[..4], b"LOC1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[36..44].try_into().unwrap()), 1.0);
        // level 0 count
        assert_eq!(u64::from_le_bytes(bytes[44..52].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), serialized_len(&small_tree()));
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode(&small_tree());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn version_two_is_rejected() {
        let mut bytes = encode(&small_tree());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode(&small_tree());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn decoded_tree_reencodes_identically() {
        let bytes = encode(&small_tree());
        let tree = decode(&bytes).unwrap();
        assert_eq!(encode(&tree), bytes);
        assert_eq!(tree, small_tree());
    }
}
