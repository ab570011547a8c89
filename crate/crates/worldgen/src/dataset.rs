//! The `KVD1` little-endian episode container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, WorldError};

const MAGIC: &[u8; 4] = b"KVD1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub u_dim: usize,
    /// `steps * height * width` bytes in {0, 1}, time-major then row-major.
    pub frames: Vec<u8>,
    /// Row-major `steps x u_dim`.
    pub controls: Vec<f64>,
    /// Ball centers, for diagnostics.
    pub positions: Vec<[f64; 2]>,
}

impl Episode {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.pixels();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn control(&self, t: usize) -> &[f64] {
        &self.controls[t * self.u_dim..(t + 1) * self.u_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub u_dim: usize,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    /// Wraps episodes that must all share one shape.
    pub fn new(episodes: Vec<Episode>) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| WorldError::Format("a dataset needs at least one episode".into()))?;
        let (steps, height, width, u_dim) = (first.steps, first.height, first.width, first.u_dim);
        for (i, e) in episodes.iter().enumerate() {
            if (e.steps, e.height, e.width, e.u_dim) != (steps, height, width, u_dim) {
                return Err(WorldError::Format(format!("episode {i} has a different shape")));
            }
            if e.frames.len() != steps * height * width
                || e.controls.len() != steps * u_dim
                || e.positions.len() != steps
            {
                return Err(WorldError::Format(format!("episode {i} has inconsistent buffer sizes")));
            }
            if e.frames.iter().any(|&b| b > 1) {
                return Err(WorldError::Format(format!("episode {i} has non-binary pixels")));
            }
        }
        Ok(Dataset { steps, height, width, u_dim, episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.steps as u32, self.height as u32, self.width as u32, self.u_dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for e in &self.episodes {
            out.extend_from_slice(&e.frames);
            for v in &e.controls {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for p in &e.positions {
                out.extend_from_slice(&p[0].to_le_bytes());
                out.extend_from_slice(&p[1].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(WorldError::Format(format!("bad magic {magic:?}")));
        }
        let mut header = [0u32; 6];
        for h in header.iter_mut() {
            *h = read_u32(&mut r)?;
        }
        let [version, n, steps, height, width, u_dim] = header.map(|v| v as usize);
        if version != VERSION as usize {
            return Err(WorldError::Format(format!("unsupported version {version}")));
        }
        if n == 0 || steps == 0 || height == 0 || width == 0 {
            return Err(WorldError::Format("header has a zero extent".into()));
        }
        let per_episode = steps
            .checked_mul(height * width)
            .and_then(|f| f.checked_add(8 * steps * (u_dim + 2)))
            .ok_or_else(|| WorldError::Format("header sizes overflow".into()))?;
        let expected = n.checked_mul(per_episode).ok_or_else(|| WorldError::Format("header sizes overflow".into()))?;
        if r.len() != expected {
            return Err(WorldError::Format(format!("expected {expected} payload bytes, found {}", r.len())));
        }
        let mut episodes = Vec::with_capacity(n);
        for _ in 0..n {
            let mut frames = vec![0u8; steps * height * width];
            read_exact(&mut r, &mut frames)?;
            let controls = (0..steps * u_dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            let positions = (0..steps)
                .map(|_| Ok([read_f64(&mut r)?, read_f64(&mut r)?]))
                .collect::<Result<Vec<_>>>()?;
            episodes.push(Episode { steps, height, width, u_dim, frames, controls, positions });
        }
        Dataset::new(episodes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| WorldError::Format("truncated file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorldError + '_ {
    move |source| WorldError::Io { path: path.to_path_buf(), source }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&data.to_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(path))?;
    Dataset::from_bytes(&bytes)
}
