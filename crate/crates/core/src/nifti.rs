//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only the subset needed for 3D CT volumes and binary masks is handled:
//! scalar datatypes, `n+1` single-file layout, either byte order on read,
//! little-endian on write.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, IntensityVolume, LabelVolume, VolumeMeta};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;
pub const DT_INT8: i16 = 256;
pub const DT_UINT16: i16 = 512;
pub const DT_UINT32: i16 = 768;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

/// The header fields this crate consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub qoffset: [f32; 3],
    pub srow_offset: [f32; 3],
}

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    Ok(match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endian::Little => LittleEndian::read_i16(&self.buf[off..]),
            Endian::Big => BigEndian::read_i16(&self.buf[off..]),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endian::Little => LittleEndian::read_f32(&self.buf[off..]),
            Endian::Big => BigEndian::read_f32(&self.buf[off..]),
        }
    }
}

fn parse_header(buf: &[u8]) -> Result<(NiftiHeader, Endian)> {
    if buf.len() < HEADER_SIZE {
        return Err(Error::Nifti(format!(
            "file holds {} bytes, shorter than the {HEADER_SIZE}-byte header",
            buf.len()
        )));
    }
    let endian = if LittleEndian::read_i32(buf) == HEADER_SIZE as i32 {
        Endian::Little
    } else if BigEndian::read_i32(buf) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::Nifti("sizeof_hdr is not 348".into()));
    };
    match &buf[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => {
            return Err(Error::Nifti(
                "two-file (.hdr/.img) NIfTI not supported".into(),
            ))
        }
        _ => return Err(Error::Nifti("missing n+1 magic".into())),
    }
    let r = Reader { buf, endian };
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = r.i16(40 + 2 * i);
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = r.f32(76 + 4 * i);
    }
    let header = NiftiHeader {
        dim,
        datatype: r.i16(70),
        bitpix: r.i16(72),
        pixdim,
        vox_offset: r.f32(108),
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        qoffset: [r.f32(268), r.f32(272), r.f32(276)],
        srow_offset: [r.f32(292), r.f32(308), r.f32(324)],
    };
    Ok((header, endian))
}

fn meta_from_header(h: &NiftiHeader) -> Result<VolumeMeta> {
    let ndim = h.dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Nifti(format!("dim[0] = {ndim} out of range")));
    }
    let ndim = ndim as usize;
    let mut shape = [1usize; 3];
    for (a, s) in shape.iter_mut().enumerate() {
        if a < ndim {
            let d = h.dim[a + 1];
            if d < 1 {
                return Err(Error::Nifti(format!("dim[{}] = {d}", a + 1)));
            }
            *s = d as usize;
        }
    }
    if (4..=ndim).any(|a| h.dim[a] > 1) {
        return Err(Error::Nifti(
            "volumes with more than 3 dimensions are not supported".into(),
        ));
    }
    let mut spacing = [1f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let p = h.pixdim[a + 1].abs();
        if p > 0.0 && p.is_finite() {
            *s = p;
        }
    }
    let origin_offset = if h.qform_code > 0 {
        h.qoffset
    } else if h.sform_code > 0 {
        h.srow_offset
    } else {
        [0.0; 3]
    };
    let meta = VolumeMeta {
        shape,
        spacing,
        origin_offset,
    };
    meta.validate()?;
    Ok(meta)
}

fn decompress_if_needed(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Nifti(format!("gzip: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Decodes an in-memory `.nii` or `.nii.gz` image into real scalars with
/// `scl_slope`/`scl_inter` applied.
pub fn decode_volume(bytes: &[u8]) -> Result<IntensityVolume> {
    let buf = decompress_if_needed(bytes)?;
    let (h, endian) = parse_header(&buf)?;
    let meta = meta_from_header(&h)?;
    let bpv = bytes_per_voxel(h.datatype)?;
    let n = voxel_count(meta.shape);
    let offset = (h.vox_offset.max(DATA_OFFSET as f32)) as usize;
    let available = buf.len().saturating_sub(offset) / bpv;
    if available < n {
        return Err(Error::SizeMismatch {
            expected: n,
            actual: available,
        });
    }
    let payload = &buf[offset..offset + n * bpv];
    let raw = convert(payload, h.datatype, endian, n);
    let (slope, inter) = if h.scl_slope == 0.0 || !h.scl_slope.is_finite() {
        (1.0, 0.0)
    } else {
        (h.scl_slope as f64, h.scl_inter as f64)
    };
    let data = raw
        .into_iter()
        .map(|x| (x * slope + inter) as f32)
        .collect();
    IntensityVolume::new(meta, data)
}

fn convert(payload: &[u8], datatype: i16, endian: Endian, n: usize) -> Vec<f64> {
    macro_rules! read_all {
        ($width:expr, $le:expr, $be:expr) => {
            payload
                .chunks_exact($width)
                .map(|c| match endian {
                    Endian::Little => $le(c) as f64,
                    Endian::Big => $be(c) as f64,
                })
                .collect()
        };
    }
    let out: Vec<f64> = match datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f64).collect(),
        DT_INT8 => payload.iter().map(|&b| b as i8 as f64).collect(),
        DT_INT16 => read_all!(2, LittleEndian::read_i16, BigEndian::read_i16),
        DT_UINT16 => read_all!(2, LittleEndian::read_u16, BigEndian::read_u16),
        DT_INT32 => read_all!(4, LittleEndian::read_i32, BigEndian::read_i32),
        DT_UINT32 => read_all!(4, LittleEndian::read_u32, BigEndian::read_u32),
        DT_FLOAT32 => read_all!(4, LittleEndian::read_f32, BigEndian::read_f32),
        DT_FLOAT64 => read_all!(8, LittleEndian::read_f64, BigEndian::read_f64),
        _ => unreachable!("datatype validated before conversion"),
    };
    debug_assert_eq!(out.len(), n);
    out
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

/// Reads a mask; any nonzero voxel becomes foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let v = read_volume(path)?;
    Ok(v.map(|x| (x != 0.0) as u8))
}

fn encode_header(meta: &VolumeMeta, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    LittleEndian::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    let dims = [
        3i16,
        meta.shape[0] as i16,
        meta.shape[1] as i16,
        meta.shape[2] as i16,
        1,
        1,
        1,
        1,
    ];
    for (i, d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut h[40 + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[70..], datatype);
    LittleEndian::write_i16(&mut h[72..], bitpix);
    let pixdim = [
        1.0f32,
        meta.spacing[0],
        meta.spacing[1],
        meta.spacing[2],
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[76 + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[108..], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..], 1.0);
    LittleEndian::write_f32(&mut h[116..], 0.0);
    // xyzt_units: millimetres
    h[123] = 2;
    let descrip = b"zoomseg";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    // qform_code = scanner, identity rotation
    LittleEndian::write_i16(&mut h[252..], 1);
    for (i, o) in meta.origin_offset.iter().enumerate() {
        LittleEndian::write_f32(&mut h[268 + 4 * i..], *o);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn maybe_gzip(raw: Vec<u8>, gzip: bool) -> Vec<u8> {
    if !gzip {
        return raw;
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
    enc.write_all(&raw).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

fn wants_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Encodes a mask as uint8 NIfTI bytes (`scl_slope = 1`, `scl_inter = 0`).
pub fn encode_mask(mask: &LabelVolume, gzip: bool) -> Vec<u8> {
    let mut out = encode_header(mask.meta(), DT_UINT8, 8);
    out.extend_from_slice(mask.data());
    maybe_gzip(out, gzip)
}

/// Encodes an intensity volume as float32 NIfTI bytes.
pub fn encode_volume(v: &IntensityVolume, gzip: bool) -> Vec<u8> {
    let mut out = encode_header(v.meta(), DT_FLOAT32, 32);
    out.reserve(v.data().len() * 4);
    for &x in v.data() {
        out.write_f32::<LittleEndian>(x)
            .expect("writing to a Vec cannot fail");
    }
    maybe_gzip(out, gzip)
}

/// Writes a mask; the file is gzip-compressed when the path ends in `.gz`.
pub fn write_mask(mask: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(mask, wants_gzip(path))).map_err(|e| Error::io(path, e))
}

pub fn write_volume(v: &IntensityVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_volume(v, wants_gzip(path))).map_err(|e| Error::io(path, e))
}
