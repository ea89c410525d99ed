use super::{LasError, PointCloud, PointRecord, Quantization};
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use std::fs;
use std::io::{Cursor, Read, Seek, SeekFrom, Write};
use std::path::Path;

const SIGNATURE: &[u8; 4] = b"LASF";
const HEADER_SIZE_12: u16 = 227;
const HEADER_SIZE_14: u16 = 375;
const VLR_HEADER_SIZE: usize = 54;
const CRS_USER_ID: &str = "LIDARAGB";
const CRS_RECORD_ID: u16 = 1;
const WKT_USER_ID: &str = "LASF_Projection";
const WKT_RECORD_ID: u16 = 2112;

/// Point record layouts this crate reads and writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    /// 20 bytes, no GPS time.
    Format0,
    /// 28 bytes, GPS time.
    Format1,
    /// 30 bytes, LAS 1.4 extended returns and classes.
    Format6,
}

impl PointFormat {
    fn id(self) -> u8 {
        match self {
            PointFormat::Format0 => 0,
            PointFormat::Format1 => 1,
            PointFormat::Format6 => 6,
        }
    }

    fn from_id(id: u8) -> Result<Self, LasError> {
        match id {
            0 => Ok(PointFormat::Format0),
            1 => Ok(PointFormat::Format1),
            6 => Ok(PointFormat::Format6),
            other => Err(LasError::UnsupportedPointFormat(other)),
        }
    }

    fn record_len(self) -> u16 {
        match self {
            PointFormat::Format0 => 20,
            PointFormat::Format1 => 28,
            PointFormat::Format6 => 30,
        }
    }

    /// Smallest format able to hold every point of `cloud` without loss.
    fn for_cloud(cloud: &PointCloud) -> Self {
        let extended = cloud
            .iter()
            .any(|p| p.number_of_returns > 7 || p.classification > 31);
        if extended {
            PointFormat::Format6
        } else if cloud.iter().any(|p| p.gps_time.is_some()) {
            PointFormat::Format1
        } else {
            PointFormat::Format0
        }
    }
}

/// Read an uncompressed LAS file.
pub fn read_las(path: impl AsRef<Path>) -> Result<PointCloud, LasError> {
    let bytes = fs::read(path)?;
    read_las_from(&bytes)
}

/// Decode a LAS file already loaded into memory.
pub fn read_las_from(bytes: &[u8]) -> Result<PointCloud, LasError> {
    if bytes.len() < 4 || &bytes[..4] != SIGNATURE {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(LasError::UnsupportedFormat(format!(
            "file signature {magic:?} is not \"LASF\""
        )));
    }
    if bytes.len() < HEADER_SIZE_12 as usize {
        return Err(LasError::MalformedHeader(format!(
            "file is {} bytes, shorter than a LAS header",
            bytes.len()
        )));
    }
    let mut c = Cursor::new(bytes);
    c.seek(SeekFrom::Start(24))?;
    let major = c.read_u8()?;
    let minor = c.read_u8()?;
    if major != 1 || !(minor == 2 || minor == 4) {
        return Err(LasError::UnsupportedVersion { major, minor });
    }
    c.seek(SeekFrom::Start(94))?;
    let header_size = c.read_u16::<LE>()?;
    let offset_to_points = c.read_u32::<LE>()? as u64;
    let n_vlrs = c.read_u32::<LE>()?;
    let format_id = c.read_u8()?;
    let record_len = c.read_u16::<LE>()?;
    let legacy_count = c.read_u32::<LE>()? as u64;

    if format_id & 0xC0 != 0 {
        return Err(LasError::UnsupportedFormat(format!(
            "point format byte {format_id:#04x} marks LAZ-compressed data; \
             decompress with an external tool (e.g. laszip) first"
        )));
    }
    let format = PointFormat::from_id(format_id)?;
    if format == PointFormat::Format6 && minor < 4 {
        return Err(LasError::MalformedHeader(
            "point format 6 requires LAS 1.4".into(),
        ));
    }
    let min_header = if minor == 4 {
        HEADER_SIZE_14
    } else {
        HEADER_SIZE_12
    };
    if header_size < min_header || bytes.len() < header_size as usize {
        return Err(LasError::MalformedHeader(format!(
            "header size {header_size} for LAS 1.{minor}"
        )));
    }
    if record_len < format.record_len() {
        return Err(LasError::MalformedHeader(format!(
            "record length {record_len} too short for point format {format_id}"
        )));
    }
    if offset_to_points < header_size as u64 {
        return Err(LasError::MalformedHeader(format!(
            "offset to point data {offset_to_points} inside the header"
        )));
    }

    c.seek(SeekFrom::Start(131))?;
    let mut scale = [0.0; 3];
    let mut offset = [0.0; 3];
    for s in scale.iter_mut() {
        *s = c.read_f64::<LE>()?;
    }
    for o in offset.iter_mut() {
        *o = c.read_f64::<LE>()?;
    }
    let quantization = Quantization::new(scale, offset)?;

    let count = if minor == 4 {
        c.seek(SeekFrom::Start(247))?;
        let extended = c.read_u64::<LE>()?;
        if extended == 0 {
            legacy_count
        } else {
            extended
        }
    } else {
        legacy_count
    };

    let crs_label = read_crs_label(bytes, header_size as u64, n_vlrs, offset_to_points)?;

    let available = (bytes.len() as u64).saturating_sub(offset_to_points) / record_len as u64;
    if available < count {
        return Err(LasError::Truncated {
            expected: count,
            found: available,
        });
    }

    let mut points = Vec::with_capacity(count as usize);
    let start = offset_to_points as usize;
    for i in 0..count as usize {
        let at = start + i * record_len as usize;
        let rec = &bytes[at..at + record_len as usize];
        points.push(decode_point(rec, format, &quantization)?);
    }

    Ok(PointCloud {
        points,
        crs_label,
        quantization,
    })
}

fn read_crs_label(
    bytes: &[u8],
    header_size: u64,
    n_vlrs: u32,
    limit: u64,
) -> Result<String, LasError> {
    let mut label = String::new();
    let mut pos = header_size;
    for _ in 0..n_vlrs {
        if pos + VLR_HEADER_SIZE as u64 > limit {
            return Err(LasError::MalformedHeader(
                "variable-length record overruns point data".into(),
            ));
        }
        let mut c = Cursor::new(&bytes[pos as usize..]);
        c.seek(SeekFrom::Current(2))?;
        let mut user = [0u8; 16];
        c.read_exact(&mut user)?;
        let record_id = c.read_u16::<LE>()?;
        let len = c.read_u16::<LE>()? as u64;
        let body_start = pos + VLR_HEADER_SIZE as u64;
        if body_start + len > limit {
            return Err(LasError::MalformedHeader(
                "variable-length record overruns point data".into(),
            ));
        }
        let user = trim_nul(&user);
        let body = &bytes[body_start as usize..(body_start + len) as usize];
        if (user == CRS_USER_ID && record_id == CRS_RECORD_ID)
            || (user == WKT_USER_ID && record_id == WKT_RECORD_ID && label.is_empty())
        {
            label = trim_nul(body);
        }
        pos = body_start + len;
    }
    Ok(label)
}

fn trim_nul(raw: &[u8]) -> String {
    let end = raw.iter().position(|&b| b == 0).unwrap_or(raw.len());
    String::from_utf8_lossy(&raw[..end]).into_owned()
}

fn decode_point(
    rec: &[u8],
    format: PointFormat,
    q: &Quantization,
) -> Result<PointRecord, LasError> {
    let mut c = Cursor::new(rec);
    let rx = c.read_i32::<LE>()?;
    let ry = c.read_i32::<LE>()?;
    let rz = c.read_i32::<LE>()?;
    let intensity = c.read_u16::<LE>()?;
    let (return_number, number_of_returns, classification, gps_time);
    match format {
        PointFormat::Format0 | PointFormat::Format1 => {
            let bits = c.read_u8()?;
            return_number = bits & 0x07;
            number_of_returns = (bits >> 3) & 0x07;
            classification = c.read_u8()? & 0x1F;
            c.seek(SeekFrom::Current(4))?; // scan angle, user data, point source id
            gps_time = if format == PointFormat::Format1 {
                Some(c.read_f64::<LE>()?)
            } else {
                None
            };
        }
        PointFormat::Format6 => {
            let bits = c.read_u8()?;
            return_number = bits & 0x0F;
            number_of_returns = bits >> 4;
            c.seek(SeekFrom::Current(1))?;
            classification = c.read_u8()?;
            c.seek(SeekFrom::Current(5))?; // user data, scan angle, point source id
            gps_time = Some(c.read_f64::<LE>()?);
        }
    }
    Ok(PointRecord {
        x: rx as f64 * q.scale[0] + q.offset[0],
        y: ry as f64 * q.scale[1] + q.offset[1],
        z: rz as f64 * q.scale[2] + q.offset[2],
        intensity,
        // Some writers leave return fields at zero; treat that as a single return.
        return_number: return_number.max(1),
        number_of_returns: number_of_returns.max(return_number).max(1),
        classification,
        gps_time,
    })
}

/// Write `cloud` using the smallest point format that holds it.
pub fn write_las(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), LasError> {
    let format = PointFormat::for_cloud(cloud);
    write_las_with(cloud, path, format)
}

pub fn write_las_with(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: PointFormat,
) -> Result<(), LasError> {
    let mut buf = Vec::new();
    write_las_to(cloud, &mut buf, format)?;
    fs::write(path, buf)?;
    Ok(())
}

fn quantize(value: f64, axis: usize, q: &Quantization) -> Result<i32, LasError> {
    let raw = ((value - q.offset[axis]) / q.scale[axis]).round();
    if !(raw >= i32::MIN as f64 && raw <= i32::MAX as f64) {
        return Err(LasError::OutOfRange {
            axis: ['x', 'y', 'z'][axis],
            value,
            scale: q.scale[axis],
            offset: q.offset[axis],
        });
    }
    Ok(raw as i32)
}

/// The cloud's quantization, with the offset of any axis whose extent it
/// cannot represent moved to the floor of that axis' minimum.
fn fitted_quantization(cloud: &PointCloud) -> Result<Quantization, LasError> {
    let mut q = Quantization::new(cloud.quantization.scale, cloud.quantization.offset)?;
    for axis in 0..3 {
        let coord = |p: &PointRecord| [p.x, p.y, p.z][axis];
        let (lo, hi) = cloud
            .iter()
            .map(coord)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
        if !(lo.is_finite() && hi.is_finite()) {
            continue;
        }
        if quantize(lo, axis, &q).is_err() || quantize(hi, axis, &q).is_err() {
            q.offset[axis] = lo.floor();
        }
    }
    Ok(q)
}

/// Encode `cloud` as LAS bytes (1.2 for formats 0/1, 1.4 for format 6).
pub fn write_las_to<W: Write>(
    cloud: &PointCloud,
    out: &mut W,
    format: PointFormat,
) -> Result<(), LasError> {
    if cloud.is_empty() {
        return Err(LasError::EmptyCloud);
    }
    let q = fitted_quantization(cloud)?;
    let legacy_limits = format != PointFormat::Format6;
    let mut raws = Vec::with_capacity(cloud.len());
    let mut min = [i32::MAX; 3];
    let mut max = [i32::MIN; 3];
    let mut by_return = [0u64; 15];
    for p in cloud.iter() {
        p.validate()?;
        if legacy_limits && (p.number_of_returns > 7 || p.classification > 31) {
            return Err(LasError::InvalidPoint(format!(
                "return count {} / class {} does not fit point format {}",
                p.number_of_returns,
                p.classification,
                format.id()
            )));
        }
        let raw = [
            quantize(p.x, 0, &q)?,
            quantize(p.y, 1, &q)?,
            quantize(p.z, 2, &q)?,
        ];
        for k in 0..3 {
            min[k] = min[k].min(raw[k]);
            max[k] = max[k].max(raw[k]);
        }
        by_return[p.return_number as usize - 1] += 1;
        raws.push(raw);
    }

    let (minor, header_size) = match format {
        PointFormat::Format6 => (4u8, HEADER_SIZE_14),
        _ => (2u8, HEADER_SIZE_12),
    };
    let crs_bytes = cloud.crs_label.as_bytes();
    if crs_bytes.len() > u16::MAX as usize {
        return Err(LasError::MalformedHeader("CRS label too long".into()));
    }
    let (n_vlrs, vlr_len) = if crs_bytes.is_empty() {
        (0u32, 0usize)
    } else {
        (1, VLR_HEADER_SIZE + crs_bytes.len())
    };
    let offset_to_points = header_size as u32 + vlr_len as u32;
    let n = cloud.len() as u64;

    let mut h = Vec::with_capacity(header_size as usize);
    h.extend_from_slice(SIGNATURE);
    h.write_u16::<LE>(0)?; // file source id
    h.write_u16::<LE>(0)?; // global encoding
    h.extend_from_slice(&[0u8; 16]); // project GUID
    h.write_u8(1)?;
    h.write_u8(minor)?;
    h.extend_from_slice(&fixed::<32>("lidar-agb"));
    h.extend_from_slice(&fixed::<32>("lidar-agb"));
    h.write_u16::<LE>(0)?; // creation day
    h.write_u16::<LE>(0)?; // creation year
    h.write_u16::<LE>(header_size)?;
    h.write_u32::<LE>(offset_to_points)?;
    h.write_u32::<LE>(n_vlrs)?;
    h.write_u8(format.id())?;
    h.write_u16::<LE>(format.record_len())?;
    let legacy_ok = legacy_limits && n <= u32::MAX as u64;
    h.write_u32::<LE>(if legacy_ok { n as u32 } else { 0 })?;
    for count in &by_return[..5] {
        h.write_u32::<LE>(if legacy_ok { *count as u32 } else { 0 })?;
    }
    for s in q.scale {
        h.write_f64::<LE>(s)?;
    }
    for o in q.offset {
        h.write_f64::<LE>(o)?;
    }
    for k in 0..3 {
        h.write_f64::<LE>(max[k] as f64 * q.scale[k] + q.offset[k])?;
        h.write_f64::<LE>(min[k] as f64 * q.scale[k] + q.offset[k])?;
    }
    if minor == 4 {
        h.write_u64::<LE>(0)?; // waveform data packet start
        h.write_u64::<LE>(0)?; // first EVLR
        h.write_u32::<LE>(0)?; // EVLR count
        h.write_u64::<LE>(n)?;
        for count in by_return {
            h.write_u64::<LE>(count)?;
        }
    }
    debug_assert_eq!(h.len(), header_size as usize);
    out.write_all(&h)?;

    if !crs_bytes.is_empty() {
        let mut v = Vec::with_capacity(vlr_len);
        v.write_u16::<LE>(0)?;
        v.extend_from_slice(&fixed::<16>(CRS_USER_ID));
        v.write_u16::<LE>(CRS_RECORD_ID)?;
        v.write_u16::<LE>(crs_bytes.len() as u16)?;
        v.extend_from_slice(&fixed::<32>("CRS label"));
        v.extend_from_slice(crs_bytes);
        out.write_all(&v)?;
    }

    let mut rec = Vec::with_capacity(format.record_len() as usize * cloud.len());
    for (p, raw) in cloud.iter().zip(&raws) {
        for r in raw {
            rec.write_i32::<LE>(*r)?;
        }
        rec.write_u16::<LE>(p.intensity)?;
        match format {
            PointFormat::Format0 | PointFormat::Format1 => {
                rec.write_u8((p.return_number & 0x07) | ((p.number_of_returns & 0x07) << 3))?;
                rec.write_u8(p.classification & 0x1F)?;
                rec.write_i8(0)?;
                rec.write_u8(0)?;
                rec.write_u16::<LE>(0)?;
                if format == PointFormat::Format1 {
                    rec.write_f64::<LE>(p.gps_time.unwrap_or(0.0))?;
                }
            }
            PointFormat::Format6 => {
                rec.write_u8((p.return_number & 0x0F) | ((p.number_of_returns & 0x0F) << 4))?;
                rec.write_u8(0)?;
                rec.write_u8(p.classification)?;
                rec.write_u8(0)?;
                rec.write_i16::<LE>(0)?;
                rec.write_u16::<LE>(0)?;
                rec.write_f64::<LE>(p.gps_time.unwrap_or(0.0))?;
            }
        }
    }
    out.write_all(&rec)?;
    Ok(())
}

fn fixed<const N: usize>(s: &str) -> [u8; N] {
    let mut buf = [0u8; N];
    let b = s.as_bytes();
    let n = b.len().min(N);
    buf[..n].copy_from_slice(&b[..n]);
    buf
}
