//! On-disk dataset format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "FCTD" | version u32 | count u32 | height u16 | width u16
//! class_count u16 | flags u16
//! ```
//!
//! Flags: bit0 = masks present, bit1 = triple file, bit2 = test split.
//! A plain file is followed by `count` records; a triple file by three
//! blocks (clean, object-perturbed, image-perturbed), each a view tag `u8`
//! followed by `count` records. One record is
//! `label u16 | pixels f32 * h*w | mask ceil(h*w/8) bytes` (mask bits packed
//! LSB-first, only when bit0 is set).

use super::{AugmentedTriple, Dataset, LabeledImage, Split};
use crate::error::{Error, Result};
use std::path::Path;

pub const DATASET_MAGIC: [u8; 4] = *b"FCTD";
pub const DATASET_VERSION: u32 = 1;

const FLAG_MASKS: u16 = 1 << 0;
const FLAG_TRIPLES: u16 = 1 << 1;
const FLAG_TEST_SPLIT: u16 = 1 << 2;

pub const VIEW_CLEAN: u8 = 0;
pub const VIEW_OBJ: u8 = 1;
pub const VIEW_IMG: u8 = 2;

/// The three stored views of a triple file, index-aligned.
#[derive(Debug, Clone)]
pub struct TripleViews {
    pub clean: Vec<LabeledImage>,
    pub z_obj: Vec<LabeledImage>,
    pub z_img: Vec<LabeledImage>,
    pub class_count: usize,
}

struct Header {
    count: usize,
    height: usize,
    width: usize,
    class_count: usize,
    flags: u16,
}

fn write_header(buf: &mut Vec<u8>, h: &Header) {
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h.count as u32).to_le_bytes());
    buf.extend_from_slice(&(h.height as u16).to_le_bytes());
    buf.extend_from_slice(&(h.width as u16).to_le_bytes());
    buf.extend_from_slice(&(h.class_count as u16).to_le_bytes());
    buf.extend_from_slice(&h.flags.to_le_bytes());
}

fn write_record(buf: &mut Vec<u8>, image: &LabeledImage, masks: bool) {
    buf.extend_from_slice(&(image.label as u16).to_le_bytes());
    for &p in &image.pixels {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    if masks {
        let n = image.mask.len();
        let mut byte = 0u8;
        for (i, &m) in image.mask.iter().enumerate() {
            if m {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 || i == n - 1 {
                buf.push(byte);
                byte = 0;
            }
        }
    }
}

fn check_uniform(images: &[LabeledImage], class_count: usize) -> Result<(usize, usize)> {
    let first = images.first().ok_or_else(|| {
        Error::InvalidArg("cannot save an empty image collection".into())
    })?;
    for im in images {
        if im.height != first.height || im.width != first.width {
            return Err(Error::BadShape {
                op: "save-dataset",
                shape: vec![im.height, im.width],
                reason: "all images in a file share one shape".into(),
            });
        }
        if im.label >= class_count {
            return Err(Error::LabelOutOfRange {
                label: im.label,
                classes: class_count,
            });
        }
    }
    Ok((first.height, first.width))
}

/// Serialize a dataset; byte-for-byte deterministic.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let (height, width) = check_uniform(&dataset.images, dataset.class_count)?;
    let mut flags = FLAG_MASKS;
    if dataset.split == Split::Test {
        flags |= FLAG_TEST_SPLIT;
    }
    let mut buf = Vec::new();
    write_header(
        &mut buf,
        &Header {
            count: dataset.images.len(),
            height,
            width,
            class_count: dataset.class_count,
            flags,
        },
    );
    for im in &dataset.images {
        write_record(&mut buf, im, true);
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Store triples as three consecutive blocks sharing one header.
pub fn save_triples(triples: &[AugmentedTriple], class_count: usize, path: &Path) -> Result<()> {
    let clean: Vec<LabeledImage> = triples.iter().map(|t| t.clean.clone()).collect();
    let (height, width) = check_uniform(&clean, class_count)?;
    let mut buf = Vec::new();
    write_header(
        &mut buf,
        &Header {
            count: triples.len(),
            height,
            width,
            class_count,
            flags: FLAG_MASKS | FLAG_TRIPLES,
        },
    );
    let views: [(u8, fn(&AugmentedTriple) -> &LabeledImage); 3] = [
        (VIEW_CLEAN, |t| &t.clean),
        (VIEW_OBJ, |t| &t.z_obj),
        (VIEW_IMG, |t| &t.z_img),
    ];
    for (tag, view) in views {
        buf.push(tag);
        for t in triples {
            let im = view(t);
            if im.height != height || im.width != width || im.label >= class_count {
                return Err(Error::InvalidArg(
                    "triple views disagree on shape or label".into(),
                ));
            }
            write_record(&mut buf, im, true);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let magic = r.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: DATASET_MAGIC,
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::BadVersion {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let count = r.u32("count")? as usize;
    let height = r.u16("height")? as usize;
    let width = r.u16("width")? as usize;
    let class_count = r.u16("class count")? as usize;
    let flags = r.u16("flags")?;
    if height == 0 || width == 0 || class_count == 0 {
        return Err(Error::InvalidArg(
            "file header has a zero dimension".into(),
        ));
    }
    Ok(Header {
        count,
        height,
        width,
        class_count,
        flags,
    })
}

fn record_size(h: &Header) -> usize {
    let hw = h.height * h.width;
    2 + 4 * hw + if h.flags & FLAG_MASKS != 0 { hw.div_ceil(8) } else { 0 }
}

fn check_payload(h: &Header, blocks: usize, available: usize) -> Result<()> {
    let per_block = (h.count as u64)
        .checked_mul(record_size(h) as u64)
        .ok_or(Error::CountOverflow {
            count: h.count as u64,
        })?;
    let expected = per_block
        .checked_mul(blocks as u64)
        .and_then(|v| v.checked_add(if blocks > 1 { blocks as u64 } else { 0 }))
        .ok_or(Error::CountOverflow {
            count: h.count as u64,
        })?;
    if expected != available as u64 {
        return Err(Error::Truncated(format!(
            "expected {expected} payload bytes, found {available}"
        )));
    }
    Ok(())
}

fn read_record(r: &mut Reader, h: &Header) -> Result<LabeledImage> {
    let label = r.u16("label")? as usize;
    if label >= h.class_count {
        return Err(Error::LabelOutOfRange {
            label,
            classes: h.class_count,
        });
    }
    let hw = h.height * h.width;
    let raw = r.take(4 * hw, "pixels")?;
    let mut pixels = Vec::with_capacity(hw);
    for chunk in raw.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArg(format!("pixel value {v} outside [0, 1]")));
        }
        pixels.push(v);
    }
    let mask = if h.flags & FLAG_MASKS != 0 {
        let raw = r.take(hw.div_ceil(8), "mask")?;
        (0..hw).map(|i| raw[i / 8] & (1 << (i % 8)) != 0).collect()
    } else {
        vec![false; hw]
    };
    LabeledImage::new(h.height, h.width, pixels, label, mask)
}

/// Load a plain dataset file.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let h = read_header(&mut r)?;
    if h.flags & FLAG_TRIPLES != 0 {
        return Err(Error::InvalidArg(
            "file holds triples; use load_triples".into(),
        ));
    }
    check_payload(&h, 1, buf.len() - r.pos)?;
    let images = (0..h.count)
        .map(|_| read_record(&mut r, &h))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        images,
        class_count: h.class_count,
        split: if h.flags & FLAG_TEST_SPLIT != 0 {
            Split::Test
        } else {
            Split::Train
        },
        seed: 0,
    })
}

/// Load a triple file.
pub fn load_triples(path: &Path) -> Result<TripleViews> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let h = read_header(&mut r)?;
    if h.flags & FLAG_TRIPLES == 0 {
        return Err(Error::InvalidArg(
            "file holds a plain dataset; use load_dataset".into(),
        ));
    }
    check_payload(&h, 3, buf.len() - r.pos)?;
    let mut views: Vec<Vec<LabeledImage>> = Vec::with_capacity(3);
    for expected_tag in [VIEW_CLEAN, VIEW_OBJ, VIEW_IMG] {
        let tag = r.u8("view tag")?;
        if tag != expected_tag {
            return Err(Error::InvalidArg(format!(
                "view tag {tag} where {expected_tag} was expected"
            )));
        }
        views.push(
            (0..h.count)
                .map(|_| read_record(&mut r, &h))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let z_img = views.pop().unwrap();
    let z_obj = views.pop().unwrap();
    let clean = views.pop().unwrap();
    Ok(TripleViews {
        clean,
        z_obj,
        z_img,
        class_count: h.class_count,
    })
}
