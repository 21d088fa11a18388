//! Single-file index persistence.
//!
//! Layout: magic, format version, manifest JSON, profiles JSON (one profile
//! per dataset), the record block, the optional HNSW graph block, and a
//! trailing SHA-256 over everything before it. All integers are little
//! endian. Serialization is fully deterministic — profiles live in a
//! BTreeMap and records are written in id order — so identical builds
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::profile::DatasetProfile;
use crate::provider::EmbeddingVector;

use super::hnsw::{HnswGraph, Node};
use super::{Backend, IndexError, IndexManifest, PseudoqueryRecord, VectorIndex, INDEX_VERSION};

const MAGIC: &[u8; 8] = b"TSEEKIDX";
const CHECKSUM_LEN: usize = 32;

impl VectorIndex {
    /// Write the index (manifest, profiles, records, graph) to one file.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());

        let manifest = serde_json::to_vec(&self.manifest())
            .map_err(|e| IndexError::Corrupt(format!("manifest encode: {e}")))?;
        write_block(&mut buf, &manifest);

        let profiles = serde_json::to_vec(&self.profiles)
            .map_err(|e| IndexError::Corrupt(format!("profiles encode: {e}")))?;
        write_block(&mut buf, &profiles);

        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for record in &self.records {
            buf.extend_from_slice(&record.pseudoquery_id.to_le_bytes());
            write_str(&mut buf, &record.dataset_id);
            write_str(&mut buf, &record.text);
            let values = record.vector.values();
            buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }

        match self.graph() {
            None => buf.push(0),
            Some(graph) => {
                buf.push(1);
                buf.extend_from_slice(&graph.entry().map(u64::from).unwrap_or(u64::MAX).to_le_bytes());
                let nodes = graph.nodes();
                buf.extend_from_slice(&(nodes.len() as u64).to_le_bytes());
                for node in nodes {
                    buf.extend_from_slice(&(node.level as u32).to_le_bytes());
                    for layer in &node.neighbors {
                        buf.extend_from_slice(&(layer.len() as u32).to_le_bytes());
                        for &n in layer {
                            buf.extend_from_slice(&n.to_le_bytes());
                        }
                    }
                }
            }
        }

        let checksum = Sha256::digest(&buf);
        buf.extend_from_slice(&checksum);
        fs::write(path, &buf)?;
        Ok(())
    }

    /// Load an index. The result is sealed. Any truncation or corruption
    /// fails the trailing checksum before parsing begins.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let data = fs::read(path)?;
        if data.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
            return Err(IndexError::ChecksumFailure("file too short".into()));
        }
        let (body, stored) = data.split_at(data.len() - CHECKSUM_LEN);
        let computed = Sha256::digest(body);
        if computed.as_slice() != stored {
            return Err(IndexError::ChecksumFailure("SHA-256 mismatch".into()));
        }

        let mut cursor = Cursor::new(body);
        if cursor.take(MAGIC.len())? != MAGIC {
            return Err(IndexError::Corrupt("bad magic".into()));
        }
        let version = cursor.read_u32()?;
        if version != INDEX_VERSION {
            return Err(IndexError::IncompatibleIndex {
                found: version,
                supported: INDEX_VERSION,
            });
        }

        let manifest: IndexManifest = serde_json::from_slice(cursor.read_block()?)
            .map_err(|e| IndexError::Corrupt(format!("manifest decode: {e}")))?;
        let profiles: BTreeMap<String, DatasetProfile> = serde_json::from_slice(cursor.read_block()?)
            .map_err(|e| IndexError::Corrupt(format!("profiles decode: {e}")))?;

        let record_count = cursor.read_u64()? as usize;
        let mut records = Vec::with_capacity(record_count);
        for _ in 0..record_count {
            let pseudoquery_id = cursor.read_u64()?;
            let dataset_id = cursor.read_string()?;
            let text = cursor.read_string()?;
            let dim = cursor.read_u32()? as usize;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(cursor.read_f64()?);
            }
            let vector = EmbeddingVector::new(values)
                .map_err(|e| IndexError::Corrupt(format!("record vector: {e}")))?;
            records.push(PseudoqueryRecord {
                pseudoquery_id,
                text,
                dataset_id,
                vector,
            });
        }

        let graph = match cursor.read_u8()? {
            0 => None,
            1 => {
                let entry = match cursor.read_u64()? {
                    u64::MAX => None,
                    v => Some(v as u32),
                };
                let node_count = cursor.read_u64()? as usize;
                let mut nodes = Vec::with_capacity(node_count);
                for _ in 0..node_count {
                    let level = cursor.read_u32()? as usize;
                    let mut neighbors = Vec::with_capacity(level + 1);
                    for _ in 0..=level {
                        let n = cursor.read_u32()? as usize;
                        let mut layer = Vec::with_capacity(n);
                        for _ in 0..n {
                            layer.push(cursor.read_u32()?);
                        }
                        neighbors.push(layer);
                    }
                    nodes.push(Node { level, neighbors });
                }
                Some(HnswGraph::from_parts(manifest.hnsw_params, entry, nodes))
            }
            other => return Err(IndexError::Corrupt(format!("bad graph flag {other}"))),
        };

        if !cursor.at_end() {
            return Err(IndexError::Corrupt("trailing bytes after graph block".into()));
        }
        if records.len() != manifest.record_count {
            return Err(IndexError::Corrupt(format!(
                "manifest claims {} records, file holds {}",
                manifest.record_count,
                records.len()
            )));
        }
        if matches!(manifest.backend, Backend::Hnsw) != graph.is_some() {
            return Err(IndexError::Corrupt("backend/graph block disagree".into()));
        }

        Ok(VectorIndex::from_parts(
            manifest.dimension,
            manifest.backend,
            records,
            profiles,
            graph,
        ))
    }
}

fn write_block(buf: &mut Vec<u8>, block: &[u8]) {
    buf.extend_from_slice(&(block.len() as u64).to_le_bytes());
    buf.extend_from_slice(block);
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.pos + n > self.data.len() {
            return Err(IndexError::Corrupt("unexpected end of file".into()));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn at_end(&self) -> bool {
        self.pos == self.data.len()
    }

    fn read_u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn read_u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64, IndexError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_block(&mut self) -> Result<&'a [u8], IndexError> {
        let len = self.read_u64()? as usize;
        self.take(len)
    }

    fn read_string(&mut self) -> Result<String, IndexError> {
        let len = self.read_u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| IndexError::Corrupt("bad UTF-8".into()))
    }
}
