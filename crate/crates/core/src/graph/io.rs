//! Edge/node TSV files and the binary graph snapshot.
//!
//! Snapshot layout, all integers little-endian:
//!
//! ```text
//! "WAMLGRPH" u32 version
//! u64 node_count
//! node_count x { u8 type, u32 id_len, id bytes }
//! node_count x u8 candidate flag
//! (node_count + 1) x u64 CSR offsets
//! offsets[last] x u32 neighbor indices
//! u32 edge_set_count
//! edge_set_count x { u8 edge type, u64 pair_count, pair_count x (u32, u32) }
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Csr, EdgeSet, EdgeType, HeteroGraph, NodeType, RawEdge};
use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"WAMLGRPH";
pub const SNAPSHOT_VERSION: u32 = 1;

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

/// Reads `raw_id<TAB>node_type` lines.
pub fn read_nodes(path: &Path) -> Result<Vec<(String, NodeType)>> {
    data_lines(path)?
        .into_iter()
        .map(|(no, line)| {
            let mut cols = line.split('\t');
            match (cols.next(), cols.next()) {
                (Some(raw), Some(ty)) if !raw.is_empty() => {
                    let ty = ty.parse().map_err(|e| Error::data(format!("{}:{no}: {e}", path.display())))?;
                    Ok((raw.to_string(), ty))
                }
                _ => Err(Error::data(format!("{}:{no}: expected `raw_id<TAB>node_type`", path.display()))),
            }
        })
        .collect()
}

/// Reads `src_raw<TAB>dst_raw<TAB>edge_type` lines.
pub fn read_edges(path: &Path) -> Result<Vec<RawEdge>> {
    data_lines(path)?
        .into_iter()
        .map(|(no, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(Error::data(format!(
                    "{}:{no}: expected `src<TAB>dst<TAB>edge_type`",
                    path.display()
                )));
            }
            let kind = cols[2].parse().map_err(|e| Error::data(format!("{}:{no}: {e}", path.display())))?;
            Ok(RawEdge::new(cols[0], cols[1], kind))
        })
        .collect()
}

/// One identifier per line (first tab-separated column).
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(data_lines(path)?
        .into_iter()
        .map(|(_, line)| line.split('\t').next().unwrap_or_default().to_string())
        .collect())
}

pub fn write_nodes(path: &Path, nodes: &[(String, NodeType)]) -> Result<()> {
    let mut out = String::new();
    for (raw, ty) in nodes {
        out.push_str(&format!("{raw}\t{}\n", ty.name().to_ascii_lowercase()));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_edges(path: &Path, edges: &[RawEdge]) -> Result<()> {
    let mut out = String::new();
    for e in edges {
        out.push_str(&format!("{}\t{}\t{}\n", e.src, e.dst, e.kind.tag()));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::data("graph too large for the snapshot format"))
}

pub fn save_snapshot(graph: &HeteroGraph, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(graph.node_count() as u64).to_le_bytes());
    for v in 0..graph.node_count() {
        let raw = graph.raw_id(v).as_bytes();
        buf.push(graph.node_type(v).code());
        buf.extend_from_slice(&to_u32(raw.len())?.to_le_bytes());
        buf.extend_from_slice(raw);
    }
    buf.extend(graph.candidate_flags().iter().map(|&c| c as u8));
    let csr = graph.adjacency();
    for &o in csr.offsets() {
        buf.extend_from_slice(&(o as u64).to_le_bytes());
    }
    for &n in csr.neighbor_array() {
        buf.extend_from_slice(&to_u32(n)?.to_le_bytes());
    }
    buf.extend_from_slice(&to_u32(graph.edge_sets().len())?.to_le_bytes());
    for set in graph.edge_sets() {
        buf.push(set.kind.code());
        buf.extend_from_slice(&(set.pairs.len() as u64).to_le_bytes());
        for &(a, b) in &set.pairs {
            buf.extend_from_slice(&to_u32(a)?.to_le_bytes());
            buf.extend_from_slice(&to_u32(b)?.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::data(format!("{}: truncated at byte {}", self.what, self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::data(format!("{}: invalid UTF-8", self.what)))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        if self.take(magic.len())? != magic {
            return Err(Error::data(format!("{}: bad magic bytes", self.what)));
        }
        Ok(())
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn load_snapshot(path: &Path) -> Result<HeteroGraph> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let mut r = Reader::new(&bytes, "graph snapshot");
    r.expect_magic(SNAPSHOT_MAGIC)?;
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::data(format!("graph snapshot: unsupported version {version}")));
    }
    let n = r.u64()? as usize;
    let mut raw_ids = Vec::with_capacity(n);
    let mut types = Vec::with_capacity(n);
    for _ in 0..n {
        let ty = NodeType::from_code(r.u8()?).ok_or_else(|| Error::data("graph snapshot: bad node type"))?;
        types.push(ty);
        raw_ids.push(r.string()?);
    }
    let candidate = r.take(n)?.iter().map(|&b| b != 0).collect();
    let offsets = (0..=n).map(|_| r.u64().map(|o| o as usize)).collect::<Result<Vec<_>>>()?;
    let total = *offsets.last().unwrap_or(&0);
    if offsets.windows(2).any(|w| w[0] > w[1]) || offsets.first() != Some(&0) {
        return Err(Error::data("graph snapshot: offsets not monotone"));
    }
    let neighbors = (0..total).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    if neighbors.iter().any(|&v| v >= n) {
        return Err(Error::data("graph snapshot: neighbor index out of range"));
    }
    let set_count = r.u32()?;
    let mut edge_sets = Vec::with_capacity(set_count as usize);
    for _ in 0..set_count {
        let kind = EdgeType::from_code(r.u8()?).ok_or_else(|| Error::data("graph snapshot: bad edge type"))?;
        let len = r.u64()? as usize;
        let pairs = (0..len)
            .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
            .collect::<Result<Vec<_>>>()?;
        edge_sets.push(EdgeSet { kind, pairs });
    }
    if !r.at_end() {
        return Err(Error::data("graph snapshot: trailing bytes"));
    }
    Ok(HeteroGraph::from_parts(
        raw_ids,
        types,
        Csr::from_parts(offsets, neighbors),
        edge_sets,
        candidate,
    ))
}
