//! Binary index format, all integers u64 little endian unless noted:
//!
//! ```text
//! "UGPT" version:u32 nodes edges width lossy:u8 bag_count
//! per bag:   covered parent(u64::MAX = root) level node_count nodes.. edge_list
//! root:      node_count nodes.. edge_list
//! edge_list: count, per edge: source target has_base:u8 base:f64
//!            provenance_count (bag:u64 p:f64)..
//! ```

use std::io::{Read, Write};
use std::time::Duration;

use super::{AggregatedEdge, Bag, ProbTreeIndex};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UGPT";
const VERSION: u32 = 1;
const ROOT: u64 = u64::MAX;

struct Writer<W: Write> {
    out: W,
    written: usize,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.out.write_all(b)?;
        self.written += b.len();
        Ok(())
    }

    fn u64(&mut self, x: u64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    fn usize(&mut self, x: usize) -> Result<()> {
        self.u64(x as u64)
    }

    fn f64(&mut self, x: f64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    fn edges(&mut self, edges: &[AggregatedEdge]) -> Result<()> {
        self.usize(edges.len())?;
        for e in edges {
            self.usize(e.source)?;
            self.usize(e.target)?;
            self.bytes(&[e.base.is_some() as u8])?;
            self.f64(e.base.unwrap_or(0.0))?;
            self.usize(e.provenance.len())?;
            for &(bag, p) in &e.provenance {
                self.usize(bag)?;
                self.f64(p)?;
            }
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    input: R,
    nodes: usize,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.input
            .read_exact(&mut buf)
            .map_err(|_| Error::IndexFormat("truncated index".into()))?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::IndexFormat("value too large".into()))
    }

    /// A length prefix; bounded so corrupt input cannot request huge buffers.
    fn len(&mut self) -> Result<usize> {
        let n = self.usize()?;
        if n > 1 << 40 {
            return Err(Error::IndexFormat(format!("implausible length {n}")));
        }
        Ok(n)
    }

    fn node(&mut self) -> Result<usize> {
        let v = self.usize()?;
        if v >= self.nodes {
            return Err(Error::IndexFormat(format!("node {v} out of range")));
        }
        Ok(v)
    }

    fn probability(&mut self) -> Result<f64> {
        let p = f64::from_le_bytes(self.bytes::<8>()?);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::IndexFormat(format!("probability {p} out of range")));
        }
        Ok(p)
    }

    fn nodes(&mut self) -> Result<Vec<usize>> {
        let n = self.len()?;
        (0..n).map(|_| self.node()).collect()
    }

    fn edges(&mut self) -> Result<Vec<AggregatedEdge>> {
        let n = self.len()?;
        let mut edges = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let source = self.node()?;
            let target = self.node()?;
            let has_base = self.bytes::<1>()?[0];
            let base = self.probability()?;
            let mut edge = AggregatedEdge::new(source, target, (has_base != 0).then_some(base));
            for _ in 0..self.len()? {
                let bag = self.usize()?;
                let p = self.probability()?;
                edge.add_contribution(bag, p);
            }
            edges.push(edge);
        }
        Ok(edges)
    }
}

impl ProbTreeIndex {
    /// Writes the index and returns the number of bytes written.
    pub fn write_to<W: Write>(&self, out: W) -> Result<usize> {
        let mut w = Writer { out, written: 0 };
        w.bytes(MAGIC)?;
        w.bytes(&VERSION.to_le_bytes())?;
        w.usize(self.node_count)?;
        w.usize(self.edge_count)?;
        w.usize(self.width)?;
        w.bytes(&[self.lossy as u8])?;
        w.usize(self.bags.len())?;
        for bag in &self.bags {
            w.usize(bag.covered)?;
            w.u64(bag.parent.map_or(ROOT, |p| p as u64))?;
            w.usize(bag.level)?;
            w.usize(bag.nodes.len())?;
            for &v in &bag.nodes {
                w.usize(v)?;
            }
            w.edges(&bag.edges)?;
        }
        w.usize(self.root_nodes.len())?;
        for &v in &self.root_nodes {
            w.usize(v)?;
        }
        w.edges(&self.root_edges)?;
        w.out.flush()?;
        Ok(w.written)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader { input, nodes: 0 };
        if &r.bytes::<4>()? != MAGIC {
            return Err(Error::IndexFormat("not a probabilistic tree index".into()));
        }
        let version = u32::from_le_bytes(r.bytes::<4>()?);
        if version != VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let node_count = r.len()?;
        r.nodes = node_count;
        let edge_count = r.len()?;
        let width = r.usize()?;
        let lossy = r.bytes::<1>()?[0] != 0;
        let bag_count = r.len()?;
        let mut bags = Vec::with_capacity(bag_count.min(1 << 20));
        for id in 0..bag_count {
            let covered = r.node()?;
            let parent = match r.u64()? {
                ROOT => None,
                p if (p as usize) > id && (p as usize) < bag_count => Some(p as usize),
                p => {
                    return Err(Error::IndexFormat(format!(
                        "bag {id} has invalid parent {p}"
                    )))
                }
            };
            let level = r.usize()?;
            let nodes = r.nodes()?;
            let edges = r.edges()?;
            bags.push(Bag {
                id,
                covered,
                nodes,
                edges,
                parent,
                level,
            });
        }
        let root_nodes = r.nodes()?;
        let root_edges = r.edges()?;
        let mut extra = [0u8; 1];
        if r.input.read(&mut extra)? != 0 {
            return Err(Error::IndexFormat("trailing bytes".into()));
        }
        let index = ProbTreeIndex {
            node_count,
            edge_count,
            width,
            lossy,
            bags,
            root_nodes,
            root_edges,
            covered_by: Vec::new(),
            build_time: Duration::ZERO,
        }
        .finish();
        if index.covered_by.iter().filter(|c| c.is_some()).count() != index.bags.len() {
            return Err(Error::IndexFormat("a node is covered by two bags".into()));
        }
        Ok(index)
    }
}
