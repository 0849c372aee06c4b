//! "LGM1" dataset shards.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "LGM1" | u32 shape count | u64 file length | u64 offset per shape
//! per shape: u16 name length | name (UTF-8) | u32 n_surface | u32 n_vol | u32 n_near
//!            | f32 xyz surface | f32 xyz vol | f32 xyz near
//!            | vol labels (1 bit each, LSB first) | near labels (same)
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::shape::{Point3f, SampledShape};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: [u8; 4] = *b"LGM1";

fn pack_bits(bits: &[bool], out: &mut Vec<u8>) {
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (i, &b) in chunk.iter().enumerate() {
            byte |= (b as u8) << i;
        }
        out.push(byte);
    }
}

fn put_points(points: &[Point3f], out: &mut Vec<u8>) {
    for p in points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
}

pub fn encode_shard(shapes: &[SampledShape]) -> Result<Vec<u8>> {
    if shapes.is_empty() {
        return Err(Error::contract("shard needs at least one shape"));
    }
    let mut records = Vec::with_capacity(shapes.len());
    for s in shapes {
        s.validate()?;
        let name = s.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::contract(format!("shape name longer than {} bytes", u16::MAX)));
        }
        let mut r = Vec::new();
        r.extend_from_slice(&(name.len() as u16).to_le_bytes());
        r.extend_from_slice(name);
        for n in [s.surface_points.len(), s.vol_queries.len(), s.near_queries.len()] {
            let n = u32::try_from(n).map_err(|_| Error::contract("point count exceeds u32"))?;
            r.extend_from_slice(&n.to_le_bytes());
        }
        put_points(&s.surface_points, &mut r);
        put_points(&s.vol_queries, &mut r);
        put_points(&s.near_queries, &mut r);
        pack_bits(&s.vol_labels, &mut r);
        pack_bits(&s.near_labels, &mut r);
        records.push(r);
    }
    let header = 4 + 4 + 8 + 8 * shapes.len();
    let total = header + records.iter().map(Vec::len).sum::<usize>() + 4;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&SHARD_MAGIC);
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    out.extend_from_slice(&(total as u64).to_le_bytes());
    let mut offset = header;
    for r in &records {
        out.extend_from_slice(&(offset as u64).to_le_bytes());
        offset += r.len();
    }
    for r in &records {
        out.extend_from_slice(r);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("record overruns shard at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn points(&mut self, n: usize) -> Result<Vec<Point3f>> {
        let raw = self.take(n.checked_mul(12).ok_or_else(|| Error::Format("point count overflow".into()))?)?;
        Ok(raw
            .chunks_exact(12)
            .map(|c| {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
                [f(0), f(1), f(2)]
            })
            .collect())
    }
    fn bits(&mut self, n: usize) -> Result<Vec<bool>> {
        let raw = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| raw[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

pub fn decode_shard(bytes: &[u8]) -> Result<Vec<SampledShape>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: 4, found: bytes.len() as u64 });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != SHARD_MAGIC {
        return Err(Error::BadMagic { expected: SHARD_MAGIC, found: magic });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated { expected: 16, found: bytes.len() as u64 });
    }
    let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if declared != bytes.len() as u64 {
        return Err(Error::Truncated { expected: declared, found: bytes.len() as u64 });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let count = r.u32()? as usize;
    r.u64()?;
    let offsets = (0..count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let mut shapes = Vec::with_capacity(count);
    for off in offsets {
        r.pos = usize::try_from(off).map_err(|_| Error::Format("offset overflow".into()))?;
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("shape name: {e}")))?
            .to_string();
        let (ns, nv, nn) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let surface_points = r.points(ns)?;
        let vol_queries = r.points(nv)?;
        let near_queries = r.points(nn)?;
        let vol_labels = r.bits(nv)?;
        let near_labels = r.bits(nn)?;
        shapes.push(SampledShape { name, surface_points, vol_queries, vol_labels, near_queries, near_labels });
    }
    Ok(shapes)
}

pub fn write_shard(shapes: &[SampledShape], path: &Path) -> Result<()> {
    let bytes = encode_shard(shapes)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_shard(path: &Path) -> Result<Vec<SampledShape>> {
    decode_shard(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(name: &str, n: usize, salt: f32) -> SampledShape {
        let pts = |k: f32| (0..n).map(|i| [i as f32 * k + salt, -(i as f32) / 7.0, f32::MIN_POSITIVE * k]).collect();
        SampledShape {
            name: name.into(),
            surface_points: pts(0.5),
            vol_queries: pts(1.5),
            vol_labels: (0..n).map(|i| i % 3 == 0).collect(),
            near_queries: pts(2.5),
            near_labels: (0..n).map(|i| i % 2 == 1).collect(),
        }
    }

    #[test]
    fn round_trip_three_shapes() {
        let shapes = vec![shape("a", 13, 0.1), shape("β", 1, -3.0), shape("", 64, 1e-30)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lgm");
        write_shard(&shapes, &path).unwrap();
        let back = read_shard(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in shapes.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            let bits = |v: &[Point3f]| v.iter().flat_map(|p| p.map(f32::to_bits)).collect::<Vec<_>>();
            assert_eq!(bits(&a.surface_points), bits(&b.surface_points));
            assert_eq!(bits(&a.vol_queries), bits(&b.vol_queries));
            assert_eq!(bits(&a.near_queries), bits(&b.near_queries));
            assert_eq!(a.vol_labels, b.vol_labels);
            assert_eq!(a.near_labels, b.near_labels);
        }
    }

    #[test]
    fn truncated_by_one_byte() {
        let bytes = encode_shard(&[shape("a", 5, 0.0)]).unwrap();
        let err = decode_shard(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = encode_shard(&[shape("a", 5, 0.0)]).unwrap();
        bytes[40] ^= 0x10;
        assert!(matches!(decode_shard(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_shard(&[shape("a", 5, 0.0)]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_shard(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn empty_list_rejected() {
        assert!(matches!(encode_shard(&[]), Err(Error::Contract(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn arbitrary_records_round_trip(
            coords in prop::collection::vec(any::<f32>(), 0..60),
            labels in prop::collection::vec(any::<bool>(), 20),
            name in "[a-z]{0,12}",
        ) {
            let pts: Vec<Point3f> = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            let n = pts.len();
            let s = SampledShape {
                name,
                surface_points: pts.clone(),
                vol_queries: pts.clone(),
                vol_labels: labels[..n].to_vec(),
                near_queries: pts,
                near_labels: labels[..n].iter().map(|b| !b).collect(),
            };
            let back = decode_shard(&encode_shard(std::slice::from_ref(&s)).unwrap()).unwrap();
            let enc = |s: &SampledShape| encode_shard(std::slice::from_ref(s)).unwrap();
            prop_assert_eq!(enc(&s), enc(&back[0]));
        }
    }
}
