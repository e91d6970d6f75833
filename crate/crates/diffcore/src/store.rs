//! "ADWT" parameter container.
//!
//! Layout (little endian): magic `ADWT`, `u16` version, `u32` manifest
//! length, JSON manifest, then every parameter and buffer tensor as `f32`
//! in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::graph::{Graph, Mode};
use crate::layer::LayerSpec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ADWT";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    spec: LayerSpec,
    params: Vec<Vec<usize>>,
    buffers: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    input: [usize; 2],
    mode: Mode,
    layers: Vec<LayerEntry>,
}

pub fn save_graph<F: Scalar, W: Write>(graph: &Graph<F>, mut w: W) -> Result<()> {
    let (c, t) = graph.input_dims();
    let manifest = Manifest {
        input: [c, t],
        mode: graph.mode(),
        layers: graph
            .nodes()
            .iter()
            .map(|n| LayerEntry {
                spec: n.spec().clone(),
                params: n.params().iter().map(|t| t.shape().to_vec()).collect(),
                buffers: n.buffers().iter().map(|t| t.shape().to_vec()).collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for node in graph.nodes() {
        for t in node.params().iter().chain(node.buffers()) {
            for v in t.data() {
                w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_tensor<R: Read, F: Scalar>(r: &mut R, shape: &[usize]) -> Result<Tensor<F>> {
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| DiffError::Store(format!("truncated tensor data: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| F::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn load_graph<F: Scalar, R: Read>(mut r: R) -> Result<Graph<F>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::Store(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(DiffError::Store(format!("unsupported version {version}")));
    }
    let mut l = [0u8; 4];
    r.read_exact(&mut l)?;
    let mut json = vec![0u8; u32::from_le_bytes(l) as usize];
    r.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json)?;
    let specs = manifest.layers.iter().map(|e| e.spec.clone()).collect();
    let mut graph = Graph::<F>::build(manifest.input[0], manifest.input[1], specs, 0)?;
    for (li, entry) in manifest.layers.iter().enumerate() {
        let node = &graph.nodes()[li];
        let expected_p: Vec<Vec<usize>> = node.params().iter().map(|t| t.shape().to_vec()).collect();
        let expected_b: Vec<Vec<usize>> = node.buffers().iter().map(|t| t.shape().to_vec()).collect();
        if expected_p != entry.params || expected_b != entry.buffers {
            return Err(DiffError::Store(format!("layer {li} tensor shapes disagree with its spec")));
        }
        for (k, s) in entry.params.iter().enumerate() {
            let t = read_tensor(&mut r, s)?;
            graph.set_param(li, k, t)?;
        }
        for (k, s) in entry.buffers.iter().enumerate() {
            let t = read_tensor(&mut r, s)?;
            graph.set_buffer(li, k, t)?;
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DiffError::Store("trailing bytes after tensors".into()));
    }
    graph.set_mode(manifest.mode);
    Ok(graph)
}

pub fn write_graph<F: Scalar>(graph: &Graph<F>, path: impl AsRef<Path>) -> Result<()> {
    save_graph(graph, BufWriter::new(File::create(path)?))
}

pub fn read_graph<F: Scalar>(path: impl AsRef<Path>) -> Result<Graph<F>> {
    load_graph(BufReader::new(File::open(path)?))
}
