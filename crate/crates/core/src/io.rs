//! File formats: text instance pools, IDX image/label pairs, raw image and
//! mask files, plus atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bags::InstancePool;
use crate::error::{Result, UccError};
use crate::ndcore::Matrix;
use crate::scalar::Scalar;
use crate::segmentation::LabeledImage;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_err<V>(offset: usize, msg: impl Into<String>) -> Result<V> {
    Err(UccError::Format { offset, msg: msg.into() })
}

/// Parsed pool file. `labels` is `None` for unlabeled pools (header `K = 0`).
#[derive(Clone, Debug)]
pub struct PoolFile<T> {
    pub instances: Matrix<T>,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl<T: Scalar> PoolFile<T> {
    pub fn into_pool(self) -> Result<InstancePool<T>> {
        match self.labels {
            Some(labels) => InstancePool::new(self.instances, labels, self.num_classes),
            None => Err(UccError::Contract("pool file carries no labels".into())),
        }
    }
}

/// Header `m d K`, then `m` lines of `d` floats followed by an integer label
/// in `1..=K`. With `K = 0` the label column is absent.
pub fn format_pool<T: Scalar>(instances: &Matrix<T>, labels: Option<&[usize]>, num_classes: usize) -> String {
    let (m, d) = instances.shape();
    let k = if labels.is_some() { num_classes } else { 0 };
    let mut s = format!("{m} {d} {k}\n");
    for i in 0..m {
        for (j, x) in instances.row(i).iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}", x.as_f64());
        }
        if let Some(l) = labels {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn parse_pool<T: Scalar>(text: &str) -> Result<PoolFile<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return fmt_err(0, "empty pool file");
    };
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .or_else(|_| fmt_err(0, format!("bad header {header:?}, expected \"m d K\"")))?;
    let [m, d, k] = nums[..] else {
        return fmt_err(0, format!("bad header {header:?}, expected \"m d K\""));
    };
    let mut data = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(if k > 0 { m } else { 0 });
    let mut offset = header.len() + 1;
    for r in 0..m {
        let Some((lineno, line)) = lines.next() else {
            return fmt_err(text.len(), format!("expected {m} rows, found {r}"));
        };
        offset = text.lines().take(lineno).map(|l| l.len() + 1).sum();
        let toks: Vec<&str> = line.split_whitespace().collect();
        let want = d + usize::from(k > 0);
        if toks.len() != want {
            return fmt_err(offset, format!("line {}: {} fields, expected {want}", lineno + 1, toks.len()));
        }
        for t in &toks[..d] {
            let v: f64 = t.parse().or_else(|_| fmt_err(offset, format!("line {}: bad float {t:?}", lineno + 1)))?;
            data.push(T::lit(v));
        }
        if k > 0 {
            let l: usize = toks[d]
                .parse()
                .or_else(|_| fmt_err(offset, format!("line {}: bad label {:?}", lineno + 1, toks[d])))?;
            labels.push(l);
        }
    }
    if lines.next().is_some() {
        return fmt_err(offset, format!("more than {m} rows"));
    }
    Ok(PoolFile {
        instances: Matrix::from_vec(m, d, data)?,
        labels: (k > 0).then_some(labels),
        num_classes: k,
    })
}

pub fn read_pool<T: Scalar>(path: &Path) -> Result<PoolFile<T>> {
    parse_pool(&fs::read_to_string(path)?)
}

pub fn write_pool<T: Scalar>(pool: &InstancePool<T>, path: &Path) -> Result<()> {
    write_atomic(path, format_pool(pool.instances(), Some(pool.labels()), pool.num_classes()).as_bytes())
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => fmt_err(at, "truncated IDX header"),
    }
}

/// `(count, rows, cols, pixels)` of an IDX3 ubyte image file.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return fmt_err(0, format!("bad IDX image magic {magic:#010x}"));
    }
    let (n, r, c) = (be_u32(bytes, 4)? as usize, be_u32(bytes, 8)? as usize, be_u32(bytes, 12)? as usize);
    let need = n * r * c;
    if bytes.len() - 16 < need {
        return fmt_err(bytes.len(), format!("truncated IDX image data: need {need} bytes after header"));
    }
    Ok((n, r, c, &bytes[16..16 + need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return fmt_err(0, format!("bad IDX label magic {magic:#010x}"));
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() - 8 < n {
        return fmt_err(bytes.len(), format!("truncated IDX label data: need {n} bytes after header"));
    }
    Ok(&bytes[8..8 + n])
}

/// Pool from IDX bytes plus the raw digit behind each internal label.
#[derive(Clone, Debug)]
pub struct IdxPool<T> {
    pub pool: InstancePool<T>,
    /// `digits[l - 1]` is the raw IDX label mapped to internal label `l`.
    pub digits: Vec<u8>,
}

/// Pixels are scaled by 1/255 and flattened. Only images whose raw label is in
/// `keep` (all when `None`) are used, at most `limit` of them. Raw labels
/// present are mapped in increasing order to `1..=K`.
pub fn idx_pool_from_bytes<T: Scalar>(
    images: &[u8],
    labels: &[u8],
    keep: Option<&[u8]>,
    limit: Option<usize>,
) -> Result<IdxPool<T>> {
    let (n, r, c, pixels) = parse_idx_images(images)?;
    let raw = parse_idx_labels(labels)?;
    if raw.len() != n {
        return fmt_err(4, format!("{n} images but {} labels", raw.len()));
    }
    let d = r * c;
    let chosen: Vec<usize> = (0..n)
        .filter(|&i| keep.is_none_or(|k| k.contains(&raw[i])))
        .take(limit.unwrap_or(usize::MAX))
        .collect();
    let mut digits: Vec<u8> = chosen.iter().map(|&i| raw[i]).collect();
    digits.sort_unstable();
    digits.dedup();
    let scale = T::one() / T::lit(255.0);
    let mut data = Vec::with_capacity(chosen.len() * d);
    let mut out_labels = Vec::with_capacity(chosen.len());
    for &i in &chosen {
        data.extend(pixels[i * d..(i + 1) * d].iter().map(|&p| T::from_count(p as usize) * scale));
        out_labels.push(digits.binary_search(&raw[i]).expect("digit present") + 1);
    }
    let pool = InstancePool::new(Matrix::from_vec(chosen.len(), d, data)?, out_labels, digits.len().max(1))?;
    Ok(IdxPool { pool, digits })
}

pub fn load_idx<T: Scalar>(
    images: &Path,
    labels: &Path,
    keep: Option<&[u8]>,
    limit: Option<usize>,
) -> Result<IdxPool<T>> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;
    idx_pool_from_bytes(&img, &lab, keep, limit)
}

/// Encodes an IDX3 image file and its IDX1 label file.
pub fn encode_idx(rows: usize, cols: usize, images: &[Vec<u8>], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

fn parse_header<'a>(bytes: &'a [u8], magic: &str, fields: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let Some(nl) = bytes.iter().position(|&b| b == b'\n') else {
        return fmt_err(0, "missing header line");
    };
    let header = std::str::from_utf8(&bytes[..nl]).or_else(|_| fmt_err(0, "header is not text"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(magic) {
        return fmt_err(0, format!("bad magic, expected {magic}"));
    }
    let dims: Vec<usize> = toks
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .or_else(|_| fmt_err(magic.len(), "bad dimensions"))?;
    if dims.len() != fields {
        return fmt_err(magic.len(), format!("expected {fields} dimensions"));
    }
    Ok((dims, &bytes[nl + 1..]))
}

/// `UCCI H W C\n` followed by `H·W·C` little-endian f64 values in HWC order.
pub fn encode_image<T: Scalar>(img: &LabeledImage<T>) -> Vec<u8> {
    let (h, w, c) = img.dims();
    let mut out = format!("UCCI {h} {w} {c}\n").into_bytes();
    for &p in img.pixels() {
        out.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    out
}

/// `UCCK H W\n` followed by `H·W` bytes in `{0, 1}`.
pub fn encode_mask(mask: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("UCCK {h} {w}\n").into_bytes();
    out.extend_from_slice(mask);
    out
}

pub fn decode_image_pixels<T: Scalar>(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<T>)> {
    let (dims, body) = parse_header(bytes, "UCCI", 3)?;
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let start = bytes.len() - body.len();
    if body.len() != h * w * c * 8 {
        return fmt_err(start, format!("expected {} pixel bytes, found {}", h * w * c * 8, body.len()));
    }
    let px = body.chunks_exact(8).map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes")))).collect();
    Ok((h, w, c, px))
}

pub fn decode_mask(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (dims, body) = parse_header(bytes, "UCCK", 2)?;
    let (h, w) = (dims[0], dims[1]);
    let start = bytes.len() - body.len();
    if body.len() != h * w {
        return fmt_err(start, format!("expected {} mask bytes, found {}", h * w, body.len()));
    }
    if let Some(p) = body.iter().position(|&b| b > 1) {
        return fmt_err(start + p, "mask values must be 0 or 1");
    }
    Ok((h, w, body.to_vec()))
}

/// Writes `<dir>/<name>.ucci` and `<dir>/<name>.ucck`.
pub fn write_labeled_image<T: Scalar>(dir: &Path, name: &str, img: &LabeledImage<T>) -> Result<()> {
    let (h, w, _) = img.dims();
    write_atomic(&dir.join(format!("{name}.ucci")), &encode_image(img))?;
    write_atomic(&dir.join(format!("{name}.ucck")), &encode_mask(img.mask(), h, w))
}

pub fn read_labeled_image<T: Scalar>(image: &Path, mask: &Path) -> Result<LabeledImage<T>> {
    let (h, w, c, px) = decode_image_pixels(&fs::read(image)?)?;
    let (mh, mw, m) = decode_mask(&fs::read(mask)?)?;
    if (mh, mw) != (h, w) {
        return fmt_err(0, format!("mask is {mh}x{mw}, image is {h}x{w}"));
    }
    LabeledImage::new(h, w, c, px, m)
}

/// Every `*.ucci` in `dir` with its `*.ucck` partner, sorted by name.
pub fn read_image_dir<T: Scalar>(dir: &Path) -> Result<Vec<(String, LabeledImage<T>)>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ucci"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let img = read_labeled_image(&p, &p.with_extension("ucck"))?;
            Ok((stem, img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_text_round_trip() {
        let m = Matrix::from_vec(3, 2, vec![0.1, 0.25, 1.0, 0.0, 1e-17, 0.3333333333333333]).unwrap();
        let text = format_pool(&m, Some(&[1, 2, 2]), 2);
        assert!(text.starts_with("3 2 2\n"));
        let back: PoolFile<f64> = parse_pool(&text).unwrap();
        assert_eq!(back.instances, m);
        assert_eq!(back.labels, Some(vec![1, 2, 2]));
        assert_eq!(format_pool(&back.instances, back.labels.as_deref(), 2), text);
    }

    #[test]
    fn unlabeled_pool() {
        let back: PoolFile<f64> = parse_pool("2 1 0\n0.5\n0.7\n").unwrap();
        assert!(back.labels.is_none());
        assert!(back.into_pool().is_err());
    }

    #[test]
    fn pool_errors() {
        assert!(parse_pool::<f64>("").is_err());
        assert!(parse_pool::<f64>("2 1\n").is_err());
        assert!(parse_pool::<f64>("2 1 1\n0.5 1\n").is_err());
        assert!(parse_pool::<f64>("1 2 1\n0.5 1\n").is_err());
        assert!(parse_pool::<f64>("1 1 1\nabc 1\n").is_err());
        assert!(parse_pool::<f64>("1 1 1\n0.5 1\n0.5 1\n").is_err());
    }

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let images: Vec<Vec<u8>> = (0..4u8).map(|k| (0..784).map(|p| ((p + k as usize * 7) % 256) as u8).collect()).collect();
        encode_idx(28, 28, &images, &[3, 0, 3, 7])
    }

    #[test]
    fn idx_fixture_loads() {
        let (img, lab) = fixture();
        let p: IdxPool<f64> = idx_pool_from_bytes(&img, &lab, None, None).unwrap();
        assert_eq!(p.pool.len(), 4);
        assert_eq!(p.pool.dim(), 784);
        assert_eq!(p.digits, vec![0, 3, 7]);
        assert_eq!(p.pool.labels(), &[2, 1, 2, 3]);
        // pixel 255 sits at offset 255 of the first image
        assert_eq!(p.pool.instances()[(0, 255)], 1.0);
        assert_eq!(p.pool.instances()[(0, 0)], 0.0);

        let only3: IdxPool<f64> = idx_pool_from_bytes(&img, &lab, Some(&[3]), None).unwrap();
        assert_eq!(only3.pool.len(), 2);
        let first: IdxPool<f64> = idx_pool_from_bytes(&img, &lab, None, Some(2)).unwrap();
        assert_eq!(first.pool.len(), 2);
    }

    #[test]
    fn idx_errors() {
        let (img, lab) = fixture();
        let (_, short_lab) = encode_idx(28, 28, &[], &[1, 2, 3]);
        assert!(matches!(
            idx_pool_from_bytes::<f64>(&img, &short_lab, None, None),
            Err(UccError::Format { .. })
        ));
        let mut bad = img.clone();
        bad[3] = 0x01;
        assert!(matches!(idx_pool_from_bytes::<f64>(&bad, &lab, None, None), Err(UccError::Format { offset: 0, .. })));
        let cut = &img[..img.len() - 10];
        assert!(matches!(idx_pool_from_bytes::<f64>(cut, &lab, None, None), Err(UccError::Format { .. })));
        assert!(matches!(parse_idx_labels(&lab[..6]), Err(UccError::Format { offset: 4, .. })));
    }

    #[test]
    fn image_and_mask_round_trip() {
        let img = LabeledImage::new(2, 3, 1, vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0], vec![0, 1, 1, 0, 0, 1]).unwrap();
        let bytes = encode_image(&img);
        assert!(bytes.starts_with(b"UCCI 2 3 1\n"));
        let (h, w, c, px) = decode_image_pixels::<f64>(&bytes).unwrap();
        assert_eq!((h, w, c), (2, 3, 1));
        assert_eq!(px, img.pixels());
        let mb = encode_mask(img.mask(), 2, 3);
        assert_eq!(decode_mask(&mb).unwrap().2, img.mask());
        let mut bad = mb.clone();
        *bad.last_mut().unwrap() = 2;
        assert!(decode_mask(&bad).is_err());
        assert!(decode_mask(b"UCCI 1 1\n\x00").is_err());
    }
}
