//! Iso-surface extraction: dense SDF grids, marching cubes with shared-edge
//! vertex dedup, per-band meshes, vertex weight colors, and OBJ/PLY export.

mod tables;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::field::{FeatureMode, FieldModel};
use crate::tensor::{Buf, Graph, Real};
use crate::{Error, Result};
use tables::{CORNER_OFFSETS, EDGE_ENDPOINTS, TRI_TABLE};

/// Dense scalar samples on the vertices of an n³ cell grid.
pub struct SdfGrid {
    pub n: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// (n+1)³ values, x fastest, then y, then z.
    pub values: Vec<f64>,
}

impl SdfGrid {
    pub fn from_fn(min: [f64; 3], max: [f64; 3], n: usize, mut f: impl FnMut([f64; 3]) -> f64) -> Result<Self> {
        let mut grid = Self::empty(min, max, n)?;
        let m = n + 1;
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    grid.values[(k * m + j) * m + i] = f(grid.vertex_pos(i, j, k));
                }
            }
        }
        Ok(grid)
    }

    fn empty(min: [f64; 3], max: [f64; 3], n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::Config("grid needs at least one cell per axis".into()));
        }
        if (0..3).any(|c| !(max[c] > min[c])) {
            return Err(Error::Config("grid max must exceed min on every axis".into()));
        }
        Ok(SdfGrid { n, min, max, values: vec![0.0; (n + 1) * (n + 1) * (n + 1)] })
    }

    pub fn vertex_pos(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let t = |c: usize, idx: usize| {
            self.min[c] + (self.max[c] - self.min[c]) * idx as f64 / self.n as f64
        };
        [t(0, i), t(1, j), t(2, k)]
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        let m = self.n + 1;
        self.values[(k * m + j) * m + i]
    }

    pub fn cell_diagonal(&self) -> f64 {
        (0..3)
            .map(|c| ((self.max[c] - self.min[c]) / self.n as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Sample the model's SDF on a cube grid spanning the bounding sphere.
pub fn sample_field_grid<T: Real>(
    model: &FieldModel<T>,
    radius: f64,
    n: usize,
    mode: FeatureMode,
) -> Result<SdfGrid> {
    let mut grid = SdfGrid::empty([-radius; 3], [radius; 3], n)?;
    let m = n + 1;
    let total = m * m * m;
    const CHUNK: usize = 8192;
    let mut start = 0;
    while start < total {
        let len = CHUNK.min(total - start);
        let pts = Buf::from_fn(len, 3, |r, c| {
            let flat = start + r;
            let (i, j, k) = (flat % m, (flat / m) % m, flat / (m * m));
            T::from_f64(grid.vertex_pos(i, j, k)[c])
        });
        let sdf = model.sdf_values(&pts, mode)?;
        for r in 0..len {
            grid.values[start + r] = sdf.get(r, 0).as_f64();
        }
        start += len;
    }
    Ok(grid)
}

#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

/// Classic 256-case marching cubes. Vertices on shared cell edges are
/// emitted once (keyed by the edge's global grid location), so the surface
/// comes out watertight wherever it is closed inside the grid.
pub fn marching_cubes(grid: &SdfGrid, iso: f64) -> Mesh {
    let n = grid.n;
    let cells = (0..n).flat_map(move |k| (0..n).flat_map(move |j| (0..n).map(move |i| (i, j, k))));
    polygonise(grid, iso, cells)
}

fn polygonise(grid: &SdfGrid, iso: f64, cells: impl Iterator<Item = (usize, usize, usize)>) -> Mesh {
    let m = grid.n + 1;
    let mut mesh = Mesh::default();
    // Global edge key: lower-endpoint vertex index and the axis it runs along.
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    for (i, j, k) in cells {
        let mut case = 0usize;
        let mut vals = [0.0; 8];
        for (c, off) in CORNER_OFFSETS.iter().enumerate() {
            vals[c] = grid.value(i + off[0], j + off[1], k + off[2]);
            if vals[c] < iso {
                case |= 1 << c;
            }
        }
        let row = &TRI_TABLE[case];
        let mut t = 0;
        while row[t] >= 0 {
            let mut tri = [0usize; 3];
            for (slot, &e) in tri.iter_mut().zip(&row[t..t + 3]) {
                let (a, b) = EDGE_ENDPOINTS[e as usize];
                // Orient the edge along increasing coordinates so both
                // adjacent cells compute the identical key and position.
                let (lo, hi) = {
                    let (oa, ob) = (CORNER_OFFSETS[a], CORNER_OFFSETS[b]);
                    if oa <= ob { (a, b) } else { (b, a) }
                };
                let ol = CORNER_OFFSETS[lo];
                let oh = CORNER_OFFSETS[hi];
                let axis = (0..3).find(|&c| ol[c] != oh[c]).unwrap();
                let gi = ((k + ol[2]) * m + (j + ol[1])) * m + (i + ol[0]);
                let key = (gi, axis);
                let idx = *edge_vertex.entry(key).or_insert_with(|| {
                    let v0 = vals[lo];
                    let v1 = vals[hi];
                    let t = if (v1 - v0).abs() < 1e-12 { 0.5 } else { (iso - v0) / (v1 - v0) };
                    let p0 = grid.vertex_pos(i + ol[0], j + ol[1], k + ol[2]);
                    let p1 = grid.vertex_pos(i + oh[0], j + oh[1], k + oh[2]);
                    mesh.vertices.push([
                        p0[0] + t * (p1[0] - p0[0]),
                        p0[1] + t * (p1[1] - p0[1]),
                        p0[2] + t * (p1[2] - p0[2]),
                    ]);
                    mesh.vertices.len() - 1
                });
                *slot = idx;
            }
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                mesh.triangles.push(tri);
            }
            t += 3;
        }
    }
    mesh
}

/// Mesh of the zero level set the model produces when only one frequency
/// band's features are kept.
pub fn per_band_mesh<T: Real>(
    model: &FieldModel<T>,
    radius: f64,
    n: usize,
    band: usize,
) -> Result<Mesh> {
    if band > 2 {
        return Err(Error::Config(format!("band index {band} out of range 0..=2")));
    }
    let grid = sample_field_grid(model, radius, n, FeatureMode::Band(band))?;
    Ok(marching_cubes(&grid, 0.0))
}

/// Per-vertex colors from the redundancy weights: R/G/B carry the low/mid/
/// high band weight, min-max normalized into [0.4, 1.0] per channel so even
/// the weakest band stays visible; a constant channel maps to 0.7.
pub fn weight_norm_colors<T: Real>(model: &FieldModel<T>, mesh: &Mesh) -> Result<Vec<[f64; 3]>> {
    let nv = mesh.vertices.len();
    let mut raw = vec![[0.0f64; 3]; nv];
    const CHUNK: usize = 4096;
    let mut start = 0;
    while start < nv {
        let len = CHUNK.min(nv - start);
        let pts = Buf::from_fn(len, 3, |r, c| T::from_f64(mesh.vertices[start + r][c]));
        let mut g = Graph::inference();
        let bind = model.bind(&mut g, false);
        let out = model.decode(&mut g, &bind, &pts, FeatureMode::Standard)?;
        let w = g.value(out.weights);
        for r in 0..len {
            for c in 0..3 {
                raw[start + r][c] = w.get(r, c).as_f64();
            }
        }
        start += len;
    }

    let mut colors = vec![[0.7f64; 3]; nv];
    for c in 0..3 {
        let lo = raw.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            continue; // constant channel stays at 0.7
        }
        for (color, v) in colors.iter_mut().zip(&raw) {
            color[c] = 0.4 + 0.6 * (v[c] - lo) / (hi - lo);
        }
    }
    Ok(colors)
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for v in &mesh.vertices {
            writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for t in &mesh.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(ctx(), e))
}

/// Vertex positions from an OBJ file (faces and other records ignored).
pub fn read_obj_vertices(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut verts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        if it.next() != Some("v") {
            continue;
        }
        let mut v = [0.0; 3];
        for coord in &mut v {
            *coord = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    Error::Format(format!("{}:{}: bad vertex line", path.display(), lineno + 1))
                })?;
        }
        verts.push(v);
    }
    if verts.is_empty() {
        return Err(Error::Format(format!("{}: no vertices", path.display())));
    }
    Ok(verts)
}

/// Binary little-endian PLY; vertex colors (uchar RGB) are optional.
pub fn write_ply(path: &Path, mesh: &Mesh, colors: Option<&[[f64; 3]]>) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != mesh.vertices.len() {
            return Err(Error::Shape(format!(
                "{} colors for {} vertices",
                c.len(),
                mesh.vertices.len()
            )));
        }
    }
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        write!(w, "ply\nformat binary_little_endian 1.0\n")?;
        write!(w, "element vertex {}\n", mesh.vertices.len())?;
        write!(w, "property float x\nproperty float y\nproperty float z\n")?;
        if colors.is_some() {
            write!(w, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
        }
        write!(w, "element face {}\n", mesh.triangles.len())?;
        write!(w, "property list uchar int vertex_indices\n")?;
        write!(w, "end_header\n")?;
        for (i, v) in mesh.vertices.iter().enumerate() {
            for c in 0..3 {
                w.write_all(&(v[c] as f32).to_le_bytes())?;
            }
            if let Some(cols) = colors {
                for c in 0..3 {
                    let byte = (cols[i][c].clamp(0.0, 1.0) * 255.0).round() as u8;
                    w.write_all(&[byte])?;
                }
            }
        }
        for t in &mesh.triangles {
            w.write_all(&[3u8])?;
            for &idx in t {
                w.write_all(&(idx as i32).to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(ctx(), e))
}
