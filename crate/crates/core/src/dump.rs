//! PKV1 vector dumps: `"PKV1"`, little-endian `u32` count, `u32` dim, then
//! `count × dim` little-endian `f32` values, row-major.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PKV1";
pub const HEADER_LEN: u64 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorDump {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl VectorDump {
    pub fn new(dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.count() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut header = [0u8; HEADER_LEN as usize];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "missing PKV1 magic"));
        }
        let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "PKV1 dim is zero"));
        }
        let mut bytes = vec![0u8; count * dim * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dim, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// A PKV1 file opened for appending rows and random-access reads.
#[derive(Debug)]
pub struct DumpFile {
    file: File,
    dim: usize,
    count: usize,
}

impl DumpFile {
    pub fn create(path: impl AsRef<Path>, dim: usize) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&0u32.to_le_bytes())?;
        file.write_all(&(dim as u32).to_le_bytes())?;
        Ok(Self { file, dim, count: 0 })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn append(&mut self, row: &[f32]) -> io::Result<()> {
        assert_eq!(row.len(), self.dim);
        let offset = HEADER_LEN + (self.count * self.dim * 4) as u64;
        self.file.seek(SeekFrom::Start(offset))?;
        let bytes: Vec<u8> = row.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.file.write_all(&bytes)?;
        self.count += 1;
        self.file.seek(SeekFrom::Start(4))?;
        self.file.write_all(&(self.count as u32).to_le_bytes())
    }

    pub fn read_row(&mut self, i: usize, out: &mut [f32]) -> io::Result<()> {
        assert!(i < self.count && out.len() == self.dim);
        self.file.seek(SeekFrom::Start(HEADER_LEN + (i * self.dim * 4) as u64))?;
        let mut bytes = vec![0u8; self.dim * 4];
        self.file.read_exact(&mut bytes)?;
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}
