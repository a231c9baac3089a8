//! Columnar binary snapshot of an optimizer moment pair plus gradient.
//!
//! Layout, all little-endian:
//!   magic "ADSN" | version u32 | n u64
//!   group count u32, then per group: name length u32, name bytes,
//!   start u64, length u64 (disjoint ranges covering at most n indices)
//!   payload: m, v, g — three contiguous arrays of n f64 each
//!   footer: u64 checksum, the wrapping byte sum of the payload

use crate::CliError;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"ADSN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGroup {
    pub name: String,
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n: u64,
    pub groups: Vec<SnapshotGroup>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub g: Vec<f64>,
}

impl Snapshot {
    pub fn new(
        m: Vec<f64>,
        v: Vec<f64>,
        g: Vec<f64>,
        groups: Vec<SnapshotGroup>,
    ) -> Result<Self, CliError> {
        let n = m.len() as u64;
        if v.len() as u64 != n || g.len() as u64 != n {
            return Err(CliError::Config(format!(
                "array lengths differ: m={} v={} g={}",
                m.len(),
                v.len(),
                g.len()
            )));
        }
        let snap = Snapshot { n, groups, m, v, g };
        snap.validate_groups()?;
        Ok(snap)
    }

    fn validate_groups(&self) -> Result<(), CliError> {
        let mut covered = 0u64;
        let mut spans: Vec<(u64, u64)> = self
            .groups
            .iter()
            .map(|g| (g.start, g.start + g.len))
            .collect();
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(CliError::Config("snapshot groups overlap".into()));
            }
        }
        for g in &self.groups {
            if g.start + g.len > self.n {
                return Err(CliError::Config(format!(
                    "group {:?} exceeds dimension {}",
                    g.name, self.n
                )));
            }
            covered += g.len;
        }
        if covered > self.n {
            return Err(CliError::Config(
                "snapshot groups cover more than n indices".into(),
            ));
        }
        Ok(())
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * 8 * self.n as usize);
        for arr in [&self.m, &self.v, &self.g] {
            for x in arr.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CliError> {
        self.validate_groups()?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.n.to_le_bytes());
        buf.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            let name = g.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&g.start.to_le_bytes());
            buf.extend_from_slice(&g.len.to_le_bytes());
        }
        let payload = self.payload_bytes();
        let checksum = payload
            .iter()
            .fold(0u64, |acc, &b| acc.wrapping_add(b as u64));
        buf.extend_from_slice(&payload);
        buf.extend_from_slice(&checksum.to_le_bytes());

        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", tmp.display())))?;
        f.write_all(&buf)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, CliError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, k: usize, what: &str| -> Result<&[u8], CliError> {
            if *pos + k > bytes.len() {
                return Err(CliError::Corruption(format!(
                    "truncated snapshot while reading {what}"
                )));
            }
            let s = &bytes[*pos..*pos + k];
            *pos += k;
            Ok(s)
        };
        let magic = take(&mut pos, 4, "magic")?;
        if magic != MAGIC {
            return Err(CliError::Corruption(format!(
                "bad magic {:02x?}, expected {:02x?}",
                magic, MAGIC
            )));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(CliError::Corruption(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let n = u64::from_le_bytes(take(&mut pos, 8, "dimension")?.try_into().unwrap());
        let count = u32::from_le_bytes(take(&mut pos, 4, "group count")?.try_into().unwrap());
        let mut groups = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len =
                u32::from_le_bytes(take(&mut pos, 4, "group name length")?.try_into().unwrap());
            let name = String::from_utf8(take(&mut pos, name_len as usize, "group name")?.to_vec())
                .map_err(|_| CliError::Corruption("group name is not valid UTF-8".into()))?;
            let start = u64::from_le_bytes(take(&mut pos, 8, "group start")?.try_into().unwrap());
            let len = u64::from_le_bytes(take(&mut pos, 8, "group length")?.try_into().unwrap());
            groups.push(SnapshotGroup { name, start, len });
        }
        let payload_len = (3 * 8 * n) as usize;
        let payload = take(&mut pos, payload_len, "payload")?;
        let declared =
            u64::from_le_bytes(take(&mut pos, 8, "checksum")?.try_into().unwrap());
        let actual = payload
            .iter()
            .fold(0u64, |acc, &b| acc.wrapping_add(b as u64));
        if declared != actual {
            return Err(CliError::Corruption(format!(
                "checksum mismatch: stored {declared:#x}, computed {actual:#x}"
            )));
        }
        let mut arrays = [Vec::new(), Vec::new(), Vec::new()];
        for (k, arr) in arrays.iter_mut().enumerate() {
            let base = k * 8 * n as usize;
            *arr = (0..n as usize)
                .map(|i| {
                    f64::from_le_bytes(payload[base + 8 * i..base + 8 * i + 8].try_into().unwrap())
                })
                .collect();
        }
        let [m, v, g] = arrays;
        let snap = Snapshot { n, groups, m, v, g };
        snap.validate_groups()
            .map_err(|e| CliError::Corruption(e.to_string()))?;
        Ok(snap)
    }
}
