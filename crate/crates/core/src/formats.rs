//! Binary interchange formats.
//!
//! Two little-endian formats are defined:
//!
//! * **Field dump** — magic `CFLD`, `u32` version, `u32` height, `u32` width,
//!   `f64` pitch, `f64` wavelength, then `height*width` `(f64 re, f64 im)`
//!   pairs in row-major order.
//! * **Model checkpoint** — magic `D2NN`, `u32` version, a geometry block
//!   (`u32` layer_h, layer_w, fov_h, fov_w, num_layers; `f64` pitch,
//!   wavelength, z_in, z_between, z_out), then per layer: quantizer tag
//!   (`u8`), quantizer range (`f64` lower, upper, step; `u32` levels), the
//!   temperature scalar (`f64`; the learnable parameter when temperatures are
//!   learned, the temperature itself when fixed, the softmax temperature for
//!   Gumbel layers, zero otherwise), and the phase grid (`f64` row-major).
//!
//! Layers trained through the Gumbel relaxation parameterize phases as
//! per-pixel logits; their checkpoint record stores the argmax level per
//! pixel as the phase grid, so a loaded checkpoint always evaluates without
//! the logits.

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex64;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{DiffractiveNetwork, Geometry, LayerQuantizer, Temperature};
use crate::optics::Field;
use crate::quantizers::{QuantizerSpec, TemperatureParam};

pub const FIELD_MAGIC: [u8; 4] = *b"CFLD";
pub const FIELD_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"D2NN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-layer quantizer tags in the checkpoint format.
pub const TAG_FULL_PRECISION: u8 = 0;
pub const TAG_HARD: u8 = 1;
pub const TAG_PSQ: u8 = 2;
pub const TAG_DSQ: u8 = 3;
pub const TAG_STE: u8 = 4;
pub const TAG_GUMBEL: u8 = 5;

/// A complex field together with its sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub field: Field,
    pub pitch: f64,
    pub wavelength: f64,
}

/// Sequential little-endian reader with file-aware error messages.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "{}: truncated file (needed {} more bytes at offset {})",
                self.path.display(),
                self.pos + n - self.buf.len(),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after the payload",
                self.path.display(),
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(cur: &mut Cursor, expected: [u8; 4], version: u32) -> Result<()> {
    let magic = cur.take(4)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            cur.path.display(),
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&expected)
        )));
    }
    let v = cur.u32()?;
    if v != version {
        return Err(Error::Format(format!(
            "{}: unsupported version {v}, expected {version}",
            cur.path.display()
        )));
    }
    Ok(())
}

/// Write a complex field dump.
pub fn write_field_dump(path: &Path, field: &Field, pitch: f64, wavelength: f64) -> Result<()> {
    let (h, w) = field.dim();
    let mut buf = Vec::with_capacity(4 + 4 + 8 + 16 + 16 * h * w);
    buf.write_all(&FIELD_MAGIC)?;
    buf.write_u32::<LittleEndian>(FIELD_VERSION)?;
    buf.write_u32::<LittleEndian>(h as u32)?;
    buf.write_u32::<LittleEndian>(w as u32)?;
    buf.write_f64::<LittleEndian>(pitch)?;
    buf.write_f64::<LittleEndian>(wavelength)?;
    for v in field.iter() {
        buf.write_f64::<LittleEndian>(v.re)?;
        buf.write_f64::<LittleEndian>(v.im)?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Read a complex field dump.
pub fn read_field_dump(path: &Path) -> Result<FieldDump> {
    let data = fs::read(path)?;
    let mut cur = Cursor::new(&data, path);
    check_magic(&mut cur, FIELD_MAGIC, FIELD_VERSION)?;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    if h == 0 || w == 0 {
        return Err(Error::Format(format!(
            "{}: degenerate field shape {h}x{w}",
            path.display()
        )));
    }
    let pitch = cur.f64()?;
    let wavelength = cur.f64()?;
    let mut field = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    for v in field.iter_mut() {
        let re = cur.f64()?;
        let im = cur.f64()?;
        *v = Complex64::new(re, im);
    }
    cur.finish()?;
    Ok(FieldDump {
        field,
        pitch,
        wavelength,
    })
}

/// One layer of a parsed checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub tag: u8,
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
    pub levels: u32,
    /// Temperature scalar; see the module docs for its meaning per tag.
    pub k: f64,
    pub phases: Array2<f64>,
}

/// A parsed model checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub geometry: Geometry,
    pub layers: Vec<LayerRecord>,
}

fn quantizer_record(net: &DiffractiveNetwork, layer: usize) -> LayerRecord {
    let phases_raw = net.phases()[layer].clone();
    let (tag, spec, k, phases) = match &net.quantizers()[layer] {
        LayerQuantizer::FullPrecision => (TAG_FULL_PRECISION, None, 0.0, phases_raw),
        LayerQuantizer::Hard(spec) => (TAG_HARD, Some(*spec), 0.0, phases_raw),
        LayerQuantizer::Ste(spec) => (TAG_STE, Some(*spec), 0.0, phases_raw),
        LayerQuantizer::Psq { spec, temperature } => {
            let k = match temperature {
                Temperature::Fixed(tau) => *tau,
                Temperature::Learned(tp) => tp.k,
            };
            (TAG_PSQ, Some(*spec), k, phases_raw)
        }
        LayerQuantizer::Dsq { spec, temperature } => {
            let k = match temperature {
                Temperature::Fixed(tau) => *tau,
                Temperature::Learned(tp) => tp.k,
            };
            (TAG_DSQ, Some(*spec), k, phases_raw)
        }
        LayerQuantizer::Gumbel {
            spec, temperature, ..
        } => (
            TAG_GUMBEL,
            Some(*spec),
            *temperature,
            net.effective_eval_phase(layer),
        ),
    };
    let (lower, upper, step, levels) = match spec {
        Some(s) => (s.lower, s.upper, s.step, s.levels),
        None => (0.0, 0.0, 0.0, 0),
    };
    LayerRecord {
        tag,
        lower,
        upper,
        step,
        levels,
        k,
        phases,
    }
}

fn write_records(path: &Path, geometry: &Geometry, records: &[LayerRecord]) -> Result<()> {
    let per_layer = 1 + 3 * 8 + 4 + 8 + 8 * geometry.layer_h * geometry.layer_w;
    let mut buf = Vec::with_capacity(8 + 5 * 4 + 5 * 8 + records.len() * per_layer);
    buf.write_all(&CHECKPOINT_MAGIC)?;
    buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    buf.write_u32::<LittleEndian>(geometry.layer_h as u32)?;
    buf.write_u32::<LittleEndian>(geometry.layer_w as u32)?;
    buf.write_u32::<LittleEndian>(geometry.fov_h as u32)?;
    buf.write_u32::<LittleEndian>(geometry.fov_w as u32)?;
    buf.write_u32::<LittleEndian>(geometry.num_layers as u32)?;
    buf.write_f64::<LittleEndian>(geometry.pitch)?;
    buf.write_f64::<LittleEndian>(geometry.wavelength)?;
    buf.write_f64::<LittleEndian>(geometry.z_in)?;
    buf.write_f64::<LittleEndian>(geometry.z_between)?;
    buf.write_f64::<LittleEndian>(geometry.z_out)?;
    for rec in records {
        buf.write_u8(rec.tag)?;
        buf.write_f64::<LittleEndian>(rec.lower)?;
        buf.write_f64::<LittleEndian>(rec.upper)?;
        buf.write_f64::<LittleEndian>(rec.step)?;
        buf.write_u32::<LittleEndian>(rec.levels)?;
        buf.write_f64::<LittleEndian>(rec.k)?;
        for v in rec.phases.iter() {
            buf.write_f64::<LittleEndian>(*v)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Serialize a network to a checkpoint file.
pub fn write_checkpoint(path: &Path, net: &DiffractiveNetwork) -> Result<()> {
    let records: Vec<LayerRecord> = (0..net.geometry().num_layers)
        .map(|l| quantizer_record(net, l))
        .collect();
    write_records(path, net.geometry(), &records)
}

/// Serialize only the hard-quantized phase surfaces, tagged full-precision.
/// Loading such a file evaluates identically to the hard-quantized source
/// model, which is how exported maps are verified.
pub fn write_hard_checkpoint(path: &Path, net: &DiffractiveNetwork) -> Result<()> {
    let geometry = net.geometry();
    let records: Vec<LayerRecord> = (0..geometry.num_layers)
        .map(|l| LayerRecord {
            tag: TAG_FULL_PRECISION,
            lower: 0.0,
            upper: 0.0,
            step: 0.0,
            levels: 0,
            k: 0.0,
            phases: net.effective_eval_phase(l),
        })
        .collect();
    write_records(path, geometry, &records)
}

/// Parse a checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path)?;
    let mut cur = Cursor::new(&data, path);
    check_magic(&mut cur, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let layer_h = cur.u32()? as usize;
    let layer_w = cur.u32()? as usize;
    let fov_h = cur.u32()? as usize;
    let fov_w = cur.u32()? as usize;
    let num_layers = cur.u32()? as usize;
    let geometry = Geometry {
        layer_h,
        layer_w,
        fov_h,
        fov_w,
        num_layers,
        pitch: cur.f64()?,
        wavelength: cur.f64()?,
        z_in: cur.f64()?,
        z_between: cur.f64()?,
        z_out: cur.f64()?,
    };
    geometry
        .validate()
        .map_err(|e| Error::Format(format!("{}: invalid geometry: {e}", path.display())))?;
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let tag = cur.u8()?;
        if tag > TAG_GUMBEL {
            return Err(Error::Format(format!(
                "{}: unknown quantizer tag {tag}",
                path.display()
            )));
        }
        let lower = cur.f64()?;
        let upper = cur.f64()?;
        let step = cur.f64()?;
        let levels = cur.u32()?;
        let k = cur.f64()?;
        let mut phases = Array2::zeros((layer_h, layer_w));
        for v in phases.iter_mut() {
            *v = cur.f64()?;
        }
        layers.push(LayerRecord {
            tag,
            lower,
            upper,
            step,
            levels,
            k,
            phases,
        });
    }
    cur.finish()?;
    Ok(Checkpoint { geometry, layers })
}

fn record_spec(rec: &LayerRecord, path_hint: &str) -> Result<QuantizerSpec> {
    let spec = QuantizerSpec::new(rec.lower, rec.upper, rec.levels)
        .map_err(|e| Error::Format(format!("{path_hint}: invalid quantizer range: {e}")))?;
    if spec.step.to_bits() != rec.step.to_bits() {
        return Err(Error::Format(format!(
            "{path_hint}: stored step {} disagrees with range-derived step {}",
            rec.step, spec.step
        )));
    }
    Ok(spec)
}

/// Instantiate a network from a parsed checkpoint.
///
/// Layers tagged with the sigmoid staircase get a fixed temperature equal to
/// the stored scalar unless `lt_gamma` is given, in which case the scalar is
/// interpreted as the learnable parameter of a learned temperature with that
/// cap parameter (how learned-temperature runs resume).
pub fn network_from_checkpoint(
    ckpt: &Checkpoint,
    lt_gamma: Option<f64>,
) -> Result<DiffractiveNetwork> {
    let mut phases = Vec::with_capacity(ckpt.layers.len());
    let mut quantizers = Vec::with_capacity(ckpt.layers.len());
    for (i, rec) in ckpt.layers.iter().enumerate() {
        let hint = format!("layer {i}");
        let q = match rec.tag {
            TAG_FULL_PRECISION => LayerQuantizer::FullPrecision,
            TAG_HARD => LayerQuantizer::Hard(record_spec(rec, &hint)?),
            TAG_STE => LayerQuantizer::Ste(record_spec(rec, &hint)?),
            TAG_PSQ => {
                let spec = record_spec(rec, &hint)?;
                let temperature = match lt_gamma {
                    Some(gamma) => Temperature::Learned(TemperatureParam::new(rec.k, gamma)?),
                    None => {
                        if !rec.k.is_finite() || rec.k <= 0.0 {
                            return Err(Error::Format(format!(
                                "{hint}: fixed temperature must be positive, got {}",
                                rec.k
                            )));
                        }
                        Temperature::Fixed(rec.k)
                    }
                };
                LayerQuantizer::Psq { spec, temperature }
            }
            TAG_DSQ => {
                let spec = record_spec(rec, &hint)?;
                if !rec.k.is_finite() || rec.k <= 0.0 {
                    return Err(Error::Format(format!(
                        "{hint}: fixed temperature must be positive, got {}",
                        rec.k
                    )));
                }
                LayerQuantizer::Dsq {
                    spec,
                    temperature: Temperature::Fixed(rec.k),
                }
            }
            TAG_GUMBEL => {
                let spec = record_spec(rec, &hint)?;
                LayerQuantizer::gumbel_from_phases(spec, &rec.phases, rec.k)
            }
            _ => unreachable!("tag range checked by read_checkpoint"),
        };
        phases.push(rec.phases.clone());
        quantizers.push(q);
    }
    DiffractiveNetwork::new(ckpt.geometry, phases, quantizers)
}
