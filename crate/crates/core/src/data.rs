//! Dataset ingestion, phase-image scaling, splits, and batching.
//!
//! Two loaders are provided: big-endian IDX image/label pairs (the MNIST
//! container format) and directories of binary 8-bit PGM (P5) files. Both
//! produce [`PhaseSample`]s whose pixel values live in [0, 1]; the network
//! later scales them by pi to form input phases.
//!
//! Splitting and batching are deterministic functions of their seeds: the
//! same seed always yields the same membership and the same per-epoch
//! shuffle order.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{Error, Result};

/// One input sample: a [0,1] grayscale grid, an optional class label, and a
/// stable identifier for reproducibility bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSample {
    pub image: Array2<f64>,
    pub label: Option<u8>,
    pub id: String,
}

const IDX_IMAGE_MAGIC: u32 = 2051;
const IDX_LABEL_MAGIC: u32 = 2049;

fn be_u32(buf: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes([
        buf[offset],
        buf[offset + 1],
        buf[offset + 2],
        buf[offset + 3],
    ])
}

fn idx_header(buf: &[u8], path: &Path, expected_magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header_len = 4 + 4 * dims;
    if buf.len() < header_len {
        return Err(Error::IdxTruncated {
            path: path.display().to_string(),
            expected: header_len,
            found: buf.len(),
        });
    }
    let magic = be_u32(buf, 0);
    if magic != expected_magic {
        return Err(Error::IdxMagic {
            path: path.display().to_string(),
            found: magic,
            expected: expected_magic,
        });
    }
    Ok((0..dims).map(|d| be_u32(buf, 4 + 4 * d) as usize).collect())
}

/// Load an MNIST-style IDX image/label pair. Pixels are scaled byte/255 into
/// [0, 1]; sample ids are `<image file stem>#<index>`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<PhaseSample>> {
    let img_buf = std::fs::read(images_path)?;
    let dims = idx_header(&img_buf, images_path, IDX_IMAGE_MAGIC, 3)?;
    let (count, h, w) = (dims[0], dims[1], dims[2]);
    let payload = count * h * w;
    if img_buf.len() < 16 + payload {
        return Err(Error::IdxTruncated {
            path: images_path.display().to_string(),
            expected: payload,
            found: img_buf.len() - 16,
        });
    }

    let lbl_buf = std::fs::read(labels_path)?;
    let ldims = idx_header(&lbl_buf, labels_path, IDX_LABEL_MAGIC, 1)?;
    let lcount = ldims[0];
    if lbl_buf.len() < 8 + lcount {
        return Err(Error::IdxTruncated {
            path: labels_path.display().to_string(),
            expected: lcount,
            found: lbl_buf.len() - 8,
        });
    }
    if count != lcount {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: lcount,
        });
    }

    let stem = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    let mut samples = Vec::with_capacity(count);
    for s in 0..count {
        let base = 16 + s * h * w;
        let image =
            Array2::from_shape_fn((h, w), |(i, j)| img_buf[base + i * w + j] as f64 / 255.0);
        samples.push(PhaseSample {
            image,
            label: Some(lbl_buf[8 + s]),
            id: format!("{stem}#{s}"),
        });
    }
    Ok(samples)
}

/// Parse one binary PGM (P5) file into `(h, w, pixels in [0,1])`.
fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let err = |msg: &str| Error::MalformedPgm(msg.to_string(), path.display().to_string());
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(err("missing P5 magic"));
    }
    // Header tokens: width, height, maxval — whitespace separated, with
    // '#'-to-end-of-line comments allowed between them.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(err("header field is not a number"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ASCII");
        *field = text.parse().map_err(|_| err("header field out of range"))?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err(err("zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM supported (0 < maxval <= 255)"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing separator before pixel data"));
    }
    pos += 1;
    let need = w * h;
    if bytes.len() - pos < need {
        return Err(err("pixel data truncated"));
    }
    let pixels = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / maxval as f64)
        .collect();
    Ok((h, w, pixels))
}

/// Nearest-neighbor resample to `(th, tw)`. Same-size input is returned
/// value-identical.
fn resize_nearest(src: &Array2<f64>, th: usize, tw: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    Array2::from_shape_fn((th, tw), |(i, j)| src[(i * sh / th, j * sw / tw)])
}

/// Load every `*.pgm` file of a directory (sorted by file name), resizing to
/// `resize_to`. Files without the `.pgm` extension are skipped; the second
/// return value counts them. Samples carry no labels; ids are file stems.
pub fn load_image_dir(dir: &Path, resize_to: (usize, usize)) -> Result<(Vec<PhaseSample>, usize)> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for path in names {
        let is_pgm = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("pgm"))
            .unwrap_or(false);
        if !is_pgm {
            skipped += 1;
            continue;
        }
        let bytes = std::fs::read(&path)?;
        let (h, w, pixels) = parse_pgm(&bytes, &path)?;
        let image = Array2::from_shape_vec((h, w), pixels).expect("shape matches parse");
        let image = resize_nearest(&image, resize_to.0, resize_to.1);
        samples.push(PhaseSample {
            image,
            label: None,
            id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        });
    }
    Ok((samples, skipped))
}

/// Zero-pad an image, centered, to `(h, w)`. Used to place small digit
/// images on a larger field of view without resampling.
pub fn pad_to_shape(image: &Array2<f64>, h: usize, w: usize) -> Result<Array2<f64>> {
    let (sh, sw) = image.dim();
    if sh > h || sw > w {
        return Err(Error::ShapeMismatch(format!(
            "cannot pad {sh}x{sw} image to smaller {h}x{w}"
        )));
    }
    let (r0, c0) = ((h - sh) / 2, (w - sw) / 2);
    let mut out = Array2::zeros((h, w));
    out.slice_mut(ndarray::s![r0..r0 + sh, c0..c0 + sw])
        .assign(image);
    Ok(out)
}

/// Split fractions and the seed that fixes membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

/// The three disjoint partitions produced by [`split`].
#[derive(Debug, Clone)]
pub struct SplitSets {
    pub train: Vec<PhaseSample>,
    pub val: Vec<PhaseSample>,
    pub test: Vec<PhaseSample>,
}

/// Deterministically partition a dataset. Membership is a pure function of
/// the split seed; the fractions must sum to 1.
pub fn split(dataset: Vec<PhaseSample>, spec: &SplitSpec) -> Result<SplitSets> {
    for (name, f) in [
        ("train", spec.train),
        ("val", spec.val),
        ("test", spec.test),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParam(format!(
                "split fraction {name}={f} outside [0,1]"
            )));
        }
    }
    let total = spec.train + spec.val + spec.test;
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParam(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_train = (spec.train * n as f64).floor() as usize;
    let n_val = (spec.val * n as f64).floor() as usize;
    let mut slots: Vec<Option<PhaseSample>> = dataset.into_iter().map(Some).collect();
    let mut take = |idxs: &[usize]| -> Vec<PhaseSample> {
        idxs.iter()
            .map(|&i| slots[i].take().expect("each index moved exactly once"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(SplitSets { train, val, test })
}

/// One splitmix64 scrambling round; used to derive stream seeds from a
/// global seed plus counters (epoch, sample index) so the streams are
/// decorrelated but fully reproducible.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled minibatch index lists for one epoch. The shuffle order is a
/// deterministic function of `(seed, epoch)`; every index appears exactly
/// once and a final partial batch is kept.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidParam("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
