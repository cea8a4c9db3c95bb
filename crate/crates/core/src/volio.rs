//! NIfTI-1 reading and writing for CT volumes and label maps.
//!
//! Only single-file `.nii` / `.nii.gz` images (magic `n+1`) and header/image
//! pairs (magic `ni1`) are accepted; NIfTI-2 and plain Analyze files are
//! rejected. Byte order is detected from `sizeof_hdr`.
//!
//! The voxel-to-world transform is taken from the sform when its code is
//! non-zero and it describes a valid grid, otherwise from the qform, otherwise
//! from the pixdim diagonal. The file affine is trusted as is; no RAS
//! reorientation is applied.
//!
//! Scalar images are rescaled once on load as `raw * scl_slope + scl_inter`,
//! where a zero (or non-finite) slope counts as 1. Label images are never
//! rescaled and must hold integers in `0..=104`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Matrix4};

use crate::error::{Error, Result};
use crate::taxonomy::MAX_STRUCTURE_ID;
use crate::volume::{linear_part, Grid, LabelMap, Volume3D};

pub const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;

/// NIfTI-1 datatype codes handled by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
}

impl DataType {
    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => DataType::U8,
            4 => DataType::I16,
            8 => DataType::I32,
            16 => DataType::F32,
            64 => DataType::F64,
            512 => DataType::U16,
            _ => return None,
        })
    }

    pub fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::I32 => 8,
            DataType::F32 => 16,
            DataType::F64 => 64,
            DataType::U16 => 512,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, DataType::F32 | DataType::F64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// The subset of header fields this crate consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub endian: Endian,
    pub dim: [i16; 8],
    pub datatype: DataType,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
}

/// Which header transform produced the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSource {
    Sform,
    Qform,
    Pixdim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Scalar,
    Label,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedVolume {
    Scalar(Volume3D),
    Label(LabelMap),
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(&self.bytes[off..]),
            Endian::Big => BigEndian::read_i16(&self.bytes[off..]),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(&self.bytes[off..]),
            Endian::Big => BigEndian::read_f32(&self.bytes[off..]),
        }
    }
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::Truncated {
                offset: 0,
                expected: HEADER_SIZE as u64,
                found: bytes.len() as u64,
            });
        }
        let endian = match (
            LittleEndian::read_i32(bytes),
            BigEndian::read_i32(bytes),
        ) {
            (348, _) => Endian::Little,
            (_, 348) => Endian::Big,
            (540, _) | (_, 540) => {
                return Err(Error::header(0, "NIfTI-2 header (sizeof_hdr 540) is not supported"))
            }
            (v, _) => return Err(Error::header(0, format!("sizeof_hdr is {v}, expected 348"))),
        };
        let f = Fields { bytes, endian };

        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        if &magic[..3] != b"n+1" && &magic[..3] != b"ni1" {
            return Err(Error::header(
                344,
                format!("bad magic {:?}; only NIfTI-1 is supported", String::from_utf8_lossy(&magic[..3])),
            ));
        }

        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = f.i16(40 + 2 * i);
        }
        let code = f.i16(70);
        let datatype = DataType::from_code(code).ok_or(Error::UnsupportedDatatype { code })?;
        let bitpix = f.i16(72);
        if bitpix as usize != datatype.bytes() * 8 {
            return Err(Error::header(
                72,
                format!("bitpix {bitpix} inconsistent with datatype {code}"),
            ));
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = f.f32(76 + 4 * i);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f.f32(280 + 16 * r + 4 * c);
            }
        }
        Ok(NiftiHeader {
            endian,
            dim,
            datatype,
            bitpix,
            pixdim,
            vox_offset: f.f32(108),
            scl_slope: f.f32(112),
            scl_inter: f.f32(116),
            qform_code: f.i16(252),
            sform_code: f.i16(254),
            quatern: [f.f32(256), f.f32(260), f.f32(264)],
            qoffset: [f.f32(268), f.f32(272), f.f32(276)],
            srow,
            magic,
        })
    }

    /// Spatial dimensions; rejects time series and non-positive extents.
    pub fn dims(&self) -> Result<[usize; 3]> {
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::header(40, format!("dim[0] = {ndim} out of range")));
        }
        if (4..=ndim as usize).any(|i| self.dim[i] > 1) {
            return Err(Error::header(
                40,
                "multi-frame volumes (dim[0] > 3 with extent > 1) are not supported",
            ));
        }
        let mut dims = [1usize; 3];
        for (a, d) in dims.iter_mut().enumerate().take(ndim.min(3) as usize) {
            let v = self.dim[a + 1];
            if v < 1 {
                return Err(Error::header(42 + 2 * a as u64, format!("dim[{}] = {v}", a + 1)));
            }
            *d = v as usize;
        }
        Ok(dims)
    }

    fn pixdim_spacing(&self) -> Result<[f64; 3]> {
        let mut s = [0.0; 3];
        for a in 0..3 {
            let v = self.pixdim[a + 1].abs() as f64;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::header(80 + 4 * a as u64, format!("pixdim[{}] = {v}", a + 1)));
            }
            s[a] = v;
        }
        Ok(s)
    }

    fn sform_grid(&self, dims: [usize; 3]) -> Result<Grid> {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = self.srow[r][c] as f64;
            }
        }
        let lin = linear_part(&m);
        let spacing = [0, 1, 2].map(|c| lin.column(c).norm());
        Grid::new(dims, spacing, m)
    }

    fn qform_grid(&self, dims: [usize; 3]) -> Result<Grid> {
        let spacing = self.pixdim_spacing()?;
        let [b, c, d] = self.quatern.map(|v| v as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let rot = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        );
        let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for col in 0..3 {
                let scale = spacing[col] * if col == 2 { qfac } else { 1.0 };
                m[(r, col)] = rot[(r, col)] * scale;
            }
            m[(r, 3)] = self.qoffset[r] as f64;
        }
        Grid::new(dims, spacing, m)
    }

    fn pixdim_grid(&self, dims: [usize; 3]) -> Result<Grid> {
        Grid::axis_aligned(dims, self.pixdim_spacing()?)
    }

    /// Grid from sform (if coded and valid), else qform, else pixdim.
    pub fn grid(&self) -> Result<(Grid, GridSource)> {
        let dims = self.dims()?;
        if self.sform_code > 0 {
            if let Ok(g) = self.sform_grid(dims) {
                return Ok((g, GridSource::Sform));
            }
        }
        if self.qform_code > 0 {
            if let Ok(g) = self.qform_grid(dims) {
                return Ok((g, GridSource::Qform));
            }
        }
        Ok((self.pixdim_grid(dims)?, GridSource::Pixdim))
    }

    fn rescale(&self) -> (f64, f64) {
        let slope = self.scl_slope as f64;
        let inter = self.scl_inter as f64;
        let slope = if slope == 0.0 || !slope.is_finite() { 1.0 } else { slope };
        let inter = if inter.is_finite() { inter } else { 0.0 };
        (slope, inter)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn image_companion(path: &Path) -> Option<PathBuf> {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".hdr.gz")
        .or_else(|| s.strip_suffix(".hdr"))?
        .to_string();
    [".img", ".img.gz"]
        .iter()
        .map(|ext| PathBuf::from(format!("{base}{ext}")))
        .find(|p| p.exists())
}

/// Raw voxel values as f64 (no rescale), read from `bytes[offset..]`.
fn decode_voxels(h: &NiftiHeader, bytes: &[u8], offset: usize, n: usize) -> Result<Vec<f64>> {
    let width = h.datatype.bytes();
    let needed = n * width;
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::Truncated {
            offset: offset as u64,
            expected: needed as u64,
            found: available as u64,
        });
    }
    let data = &bytes[offset..offset + needed];
    macro_rules! decode {
        ($read:ident) => {
            match h.endian {
                Endian::Little => data.chunks_exact(width).map(|c| LittleEndian::$read(c) as f64).collect(),
                Endian::Big => data.chunks_exact(width).map(|c| BigEndian::$read(c) as f64).collect(),
            }
        };
    }
    Ok(match h.datatype {
        DataType::U8 => data.iter().map(|&b| b as f64).collect(),
        DataType::I16 => decode!(read_i16),
        DataType::U16 => decode!(read_u16),
        DataType::I32 => decode!(read_i32),
        DataType::F32 => decode!(read_f32),
        DataType::F64 => decode!(read_f64),
    })
}

fn load_raw(path: &Path) -> Result<(NiftiHeader, Grid, Vec<f64>, usize)> {
    let bytes = read_file(path)?;
    let header = NiftiHeader::parse(&bytes)?;
    let (grid, _) = header.grid()?;
    let vox_offset = header.vox_offset;
    if !(vox_offset.is_finite() && vox_offset >= 0.0) {
        return Err(Error::header(108, format!("vox_offset = {vox_offset}")));
    }
    let n = grid.len();
    if &header.magic[..3] == b"ni1" {
        let img = image_companion(path).ok_or_else(|| {
            Error::header(344, "magic ni1 requires a companion .img file next to the .hdr")
        })?;
        let img_bytes = read_file(&img)?;
        let offset = vox_offset as usize;
        let raw = decode_voxels(&header, &img_bytes, offset, n)?;
        return Ok((header, grid, raw, offset));
    }
    let offset = vox_offset as usize;
    if offset < HEADER_SIZE {
        return Err(Error::header(108, format!("vox_offset {offset} inside the header")));
    }
    let raw = decode_voxels(&header, &bytes, offset, n)?;
    Ok((header, grid, raw, offset))
}

/// Load a CT volume, applying the header rescale.
pub fn load_scalar(path: impl AsRef<Path>) -> Result<Volume3D> {
    let (header, grid, mut raw, _) = load_raw(path.as_ref())?;
    let (slope, inter) = header.rescale();
    for v in &mut raw {
        *v = *v * slope + inter;
    }
    Volume3D::new(grid, raw)
}

/// Load a label map; values must be integers in `0..=104`.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (header, grid, raw, offset) = load_raw(path.as_ref())?;
    let width = header.datatype.bytes() as u64;
    let mut data = Vec::with_capacity(raw.len());
    for (index, &v) in raw.iter().enumerate() {
        if header.datatype.is_float() && v.fract() != 0.0 || !v.is_finite() {
            return Err(Error::NonIntegerLabel {
                index,
                offset: offset as u64 + index as u64 * width,
                value: v,
            });
        }
        if v < 0.0 || v > MAX_STRUCTURE_ID as f64 {
            return Err(Error::UnregisteredLabel { index, value: v });
        }
        data.push(v as u16);
    }
    LabelMap::new(grid, data)
}

pub fn load_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<LoadedVolume> {
    Ok(match kind {
        VolumeKind::Scalar => LoadedVolume::Scalar(load_scalar(path)?),
        VolumeKind::Label => LoadedVolume::Label(load_labels(path)?),
    })
}

/// Reads only the header; useful for inspecting the grid without the data section.
pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    NiftiHeader::parse(&read_file(path.as_ref())?)
}

/// Rotation quaternion (b, c, d) and qfac for an affine's normalized linear part.
fn quaternion_of(grid: &Grid) -> ([f32; 3], f32) {
    let lin = linear_part(grid.affine());
    let sp = grid.spacing();
    let mut r = Matrix3::from_fn(|i, j| lin[(i, j)] / sp[j]);
    let qfac = if r.determinant() < 0.0 {
        for i in 0..3 {
            r[(i, 2)] = -r[(i, 2)];
        }
        -1.0
    } else {
        1.0
    };
    let (r11, r12, r13) = (r[(0, 0)], r[(0, 1)], r[(0, 2)]);
    let (r21, r22, r23) = (r[(1, 0)], r[(1, 1)], r[(1, 2)]);
    let (r31, r32, r33) = (r[(2, 0)], r[(2, 1)], r[(2, 2)]);
    let trace = r11 + r22 + r33 + 1.0;
    let (b, c, d) = if trace > 0.5 {
        let a = 0.5 * trace.sqrt();
        (0.25 * (r32 - r23) / a, 0.25 * (r13 - r31) / a, 0.25 * (r21 - r12) / a)
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        let (a, b, c, d) = if xd > 1.0 {
            let b = 0.5 * xd.sqrt();
            (0.25 * (r32 - r23) / b, b, 0.25 * (r12 + r21) / b, 0.25 * (r13 + r31) / b)
        } else if yd > 1.0 {
            let c = 0.5 * yd.sqrt();
            (0.25 * (r13 - r31) / c, 0.25 * (r12 + r21) / c, c, 0.25 * (r23 + r32) / c)
        } else {
            let d = 0.5 * zd.sqrt();
            (0.25 * (r21 - r12) / d, 0.25 * (r13 + r31) / d, 0.25 * (r23 + r32) / d, d)
        };
        // keep the scalar part non-negative; the header stores only (b, c, d)
        if a < 0.0 {
            (-b, -c, -d)
        } else {
            (b, c, d)
        }
    };
    ([b as f32, c as f32, d as f32], qfac)
}

fn encode_header(grid: &Grid, datatype: DataType) -> Vec<u8> {
    let mut h = vec![0u8; DEFAULT_VOX_OFFSET];
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    let dims = grid.dims();
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[70..], datatype.code());
    LittleEndian::write_i16(&mut h[72..], (datatype.bytes() * 8) as i16);
    let (quat, qfac) = quaternion_of(grid);
    let sp = grid.spacing();
    let pixdim = [qfac, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[108..], DEFAULT_VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..], 1.0);
    LittleEndian::write_f32(&mut h[116..], 0.0);
    h[123] = 2 | 8; // mm, seconds
    let descrip = b"ctseg";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    LittleEndian::write_i16(&mut h[252..], 1);
    LittleEndian::write_i16(&mut h[254..], 1);
    let m = grid.affine();
    for (i, q) in quat.iter().enumerate() {
        LittleEndian::write_f32(&mut h[256 + 4 * i..], *q);
    }
    for r in 0..3 {
        LittleEndian::write_f32(&mut h[268 + 4 * r..], m[(r, 3)] as f32);
        for c in 0..4 {
            LittleEndian::write_f32(&mut h[280 + 16 * r + 4 * c..], m[(r, c)] as f32);
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Write `bytes` to `path` through a temporary file in the same directory, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_image(path: &Path, mut bytes: Vec<u8>, body: &[u8]) -> Result<()> {
    bytes.extend_from_slice(body);
    if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)
            .and_then(|_| enc.finish())
            .map_err(|e| Error::io(path, e))
            .and_then(|gz| write_atomic(path, &gz))
    } else {
        write_atomic(path, &bytes)
    }
}

/// Save a label map as uint8 NIfTI-1 (gzip when the path ends in `.gz`).
pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let body: Vec<u8> = map.data().iter().map(|&v| v as u8).collect();
    write_image(path.as_ref(), encode_header(map.grid(), DataType::U8), &body)
}

/// Save a scalar volume as float32 NIfTI-1 in HU (no rescale).
pub fn save_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let mut body = vec![0u8; vol.data().len() * 4];
    for (chunk, &v) in body.chunks_exact_mut(4).zip(vol.data()) {
        LittleEndian::write_f32(chunk, v as f32);
    }
    write_image(path.as_ref(), encode_header(vol.grid(), DataType::F32), &body)
}
