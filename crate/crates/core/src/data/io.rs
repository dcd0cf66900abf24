//! Dataset files.
//!
//! * IDX: big-endian `0x0000_08RR` magic (`RR` = rank), `u32` dims, raw `u8`
//!   payload. Images and labels live in separate files; pixels are divided
//!   by 255.
//! * CSV: header row, label column first, one sample per row. Values outside
//!   `[0, 1]` are divided by 255 when they fit in `[0, 255]`, otherwise
//!   min-max scaled.
//! * Internal: little-endian container `SMXDATA1`, `u32` classes, `i64`
//!   domain (-1 for none), `u32` rank, `u64` dims (leading dim = samples),
//!   `u32` labels, `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{DataError, Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    IdxBinary,
    Csv,
    Internal,
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const INTERNAL_MAGIC: &[u8; 8] = b"SMXDATA1";

fn infer_classes(labels: &[usize], classes: Option<usize>) -> Result<usize> {
    let needed = labels.iter().max().map_or(0, |m| m + 1);
    match classes {
        Some(c) => match labels.iter().find(|&&l| l >= c) {
            Some(&label) => Err(DataError::LabelOutOfRange { label, classes: c }.into()),
            None => Ok(c),
        },
        None => Ok(needed),
    }
}

/// Read a dataset. `labels` is required for IDX (the separate label file)
/// and ignored otherwise. `classes`, when given, bounds the label range.
pub fn load_dataset(
    format: DataFormat,
    path: &Path,
    labels: Option<&Path>,
    classes: Option<usize>,
) -> Result<LabeledDataset> {
    let ds = match format {
        DataFormat::IdxBinary => {
            let lp = labels.ok_or_else(|| Error::Config("IDX format needs a labels file".into()))?;
            read_idx(&fs::read(path)?, &fs::read(lp)?, classes)?
        }
        DataFormat::Csv => read_csv(&fs::read(path)?, classes)?,
        DataFormat::Internal => read_internal(&fs::read(path)?, classes)?,
    };
    if ds.is_empty() {
        return Err(DataError::Empty.into());
    }
    Ok(ds)
}

pub fn save_dataset(ds: &LabeledDataset, format: DataFormat, path: &Path, labels: Option<&Path>) -> Result<()> {
    match format {
        DataFormat::IdxBinary => {
            let lp = labels.ok_or_else(|| Error::Config("IDX format needs a labels file".into()))?;
            let (img, lab) = write_idx(ds)?;
            fs::write(path, img)?;
            fs::write(lp, lab)?;
        }
        DataFormat::Csv => fs::write(path, write_csv(ds)?)?,
        DataFormat::Internal => fs::write(path, write_internal(ds))?,
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Truncated { declared: self.pos + n, present: self.buf.len() }.into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

fn idx_header<'a>(buf: &'a [u8], magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let mut r = Reader { buf, pos: 0 };
    let found = r.u32_be()?;
    if found != magic {
        return Err(DataError::BadMagic { expected: magic, found }.into());
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank).map(|_| r.u32_be().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    Ok((dims, r.rest()))
}

fn read_idx(images: &[u8], labels: &[u8], classes: Option<usize>) -> Result<LabeledDataset> {
    let (dims, pix) = idx_header(images, IDX_IMAGES)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let per = rows * cols;
    if pix.len() < n * per {
        return Err(DataError::Truncated { declared: n, present: pix.len() / per.max(1) }.into());
    }
    let (ldims, lab) = idx_header(labels, IDX_LABELS)?;
    if ldims[0] != n {
        return Err(Error::shape("IDX label count", &[n], &[ldims[0]]));
    }
    if lab.len() < n {
        return Err(DataError::Truncated { declared: n, present: lab.len() }.into());
    }
    let labels: Vec<usize> = lab[..n].iter().map(|&b| b as usize).collect();
    let classes = infer_classes(&labels, classes)?;
    let data = pix[..n * per].iter().map(|&b| f64::from(b) / 255.0).collect();
    LabeledDataset::new(Tensor::from_vec(&[n, 1, rows, cols], data)?, labels, classes, None)
}

fn write_idx(ds: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match ds.sample_shape() {
        [1, h, w] | [h, w] => (*h, *w),
        [d] => (1, *d),
        other => return Err(Error::Invalid(format!("IDX cannot store samples of shape {other:?}"))),
    };
    if ds.labels.iter().any(|&l| l > 255) {
        return Err(Error::Invalid("IDX labels are single bytes".into()));
    }
    let mut img = Vec::with_capacity(16 + ds.inputs.len());
    img.extend(IDX_IMAGES.to_be_bytes());
    for d in [ds.len(), rows, cols] {
        img.extend((d as u32).to_be_bytes());
    }
    img.extend(ds.inputs.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend(IDX_LABELS.to_be_bytes());
    lab.extend((ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((img, lab))
}

fn read_csv(bytes: &[u8], classes: Option<usize>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(bytes);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(DataError::Parse { line: 1, message: "header needs a label column and at least one feature".into() }.into());
    }
    let dim = width - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != width {
            return Err(DataError::Parse { line, message: format!("{} fields, header has {width}", rec.len()) }.into());
        }
        let label: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| DataError::Parse { line, message: format!("bad label {:?}", &rec[0]) })?;
        labels.push(label);
        for f in rec.iter().skip(1) {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| DataError::Parse { line, message: format!("bad value {f:?}") })?;
            if !v.is_finite() {
                return Err(DataError::Parse { line, message: format!("non-finite value {f:?}") }.into());
            }
            data.push(v);
        }
    }
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo < 0.0 || hi > 1.0 {
        if lo >= 0.0 && hi <= 255.0 {
            data.iter_mut().for_each(|v| *v /= 255.0);
        } else {
            let span = hi - lo;
            data.iter_mut().for_each(|v| *v = (*v - lo) / span);
        }
    }
    let classes = infer_classes(&labels, classes)?;
    let n = labels.len();
    LabeledDataset::new(Tensor::from_vec(&[n, dim], data)?, labels, classes, None)
}

fn write_csv(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let dim = ds.inputs.row_len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = vec![ds.labels[i].to_string()];
        rec.extend(ds.inputs.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_internal(buf: &[u8], classes: Option<usize>) -> Result<LabeledDataset> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(8)?;
    if magic != INTERNAL_MAGIC {
        let found = u32::from_be_bytes(magic[..4].try_into().unwrap());
        let expected = u32::from_be_bytes(INTERNAL_MAGIC[..4].try_into().unwrap());
        return Err(DataError::BadMagic { expected, found }.into());
    }
    let stored = r.u32_le()? as usize;
    let domain = r.u64_le()? as i64;
    let rank = r.u32_le()? as usize;
    let shape = (0..rank).map(|_| r.u64_le().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = *shape.first().ok_or(DataError::Empty)?;
    let per: usize = shape[1..].iter().product();
    let need = n * 4 + n * per * 8;
    if r.rest().len() < need {
        let present = r.rest().len().saturating_sub(n * 4) / (per * 8).max(1);
        return Err(DataError::Truncated { declared: n, present }.into());
    }
    let labels: Vec<usize> = (0..n).map(|_| r.u32_le().map(|l| l as usize)).collect::<Result<_>>()?;
    let data: Vec<f64> = r
        .take(n * per * 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let classes = infer_classes(&labels, Some(classes.unwrap_or(stored)))?;
    let domain = (domain >= 0).then_some(domain as usize);
    LabeledDataset::new(Tensor::from_vec(&shape, data)?, labels, classes, domain)
}

fn write_internal(ds: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.write_all(INTERNAL_MAGIC).unwrap();
    out.extend((ds.classes as u32).to_le_bytes());
    out.extend(ds.domain.map_or(-1i64, |d| d as i64).to_le_bytes());
    out.extend((ds.inputs.shape().len() as u32).to_le_bytes());
    for &d in ds.inputs.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &l in &ds.labels {
        out.extend((l as u32).to_le_bytes());
    }
    for v in ds.inputs.data() {
        out.extend(v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LabeledDataset {
        let data = (0..24).map(|i| f64::from(i) / 255.0).collect();
        LabeledDataset::new(Tensor::from_vec(&[3, 1, 2, 4], data).unwrap(), vec![0, 2, 1], 3, None).unwrap()
    }

    #[test]
    fn idx_round_trip() {
        let ds = small();
        let (img, lab) = write_idx(&ds).unwrap();
        assert_eq!(read_idx(&img, &lab, Some(3)).unwrap(), ds);
    }

    #[test]
    fn idx_truncation_reports_counts() {
        let data = vec![0.0; 100 * 4];
        let ds = LabeledDataset::new(Tensor::from_vec(&[100, 1, 2, 2], data).unwrap(), vec![0; 100], 1, None).unwrap();
        let (img, lab) = write_idx(&ds).unwrap();
        let err = read_idx(&img[..img.len() - 4], &lab, None).unwrap_err();
        assert!(matches!(err, Error::Data(DataError::Truncated { declared: 100, present: 99 })), "{err}");
    }

    #[test]
    fn idx_bad_magic() {
        let (mut img, lab) = write_idx(&small()).unwrap();
        img[3] = 0x02;
        assert!(matches!(read_idx(&img, &lab, None), Err(Error::Data(DataError::BadMagic { .. }))));
    }

    #[test]
    fn csv_dims_follow_header() {
        let text = "label,a,b,c\n1,0.1,0.2,0.3\n0,0.5,0.5,0.5\n";
        let ds = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(ds.sample_shape(), &[3]);
        assert_eq!(ds.classes, 2);
    }

    #[test]
    fn csv_pixel_range_is_rescaled() {
        let ds = read_csv(b"label,p\n0,255\n1,0\n", None).unwrap();
        assert_eq!(ds.inputs.data(), &[1.0, 0.0]);
    }

    #[test]
    fn csv_label_out_of_range() {
        let err = read_csv(b"label,p\n5,0.1\n", Some(3)).unwrap_err();
        assert!(matches!(err, Error::Data(DataError::LabelOutOfRange { label: 5, classes: 3 })));
    }

    #[test]
    fn csv_ragged_row_names_line() {
        let err = read_csv(b"label,a,b\n0,0.1,0.2\n1,0.3\n", None).unwrap_err();
        assert!(matches!(err, Error::Data(DataError::Parse { line: 3, .. })), "{err}");
    }

    #[test]
    fn internal_round_trip() {
        let mut ds = small();
        ds.domain = Some(2);
        ds.inputs.data_mut()[5] = 0.123456789012345;
        assert_eq!(read_internal(&write_internal(&ds), None).unwrap(), ds);
        let csv = write_csv(&ds).unwrap();
        let back = read_csv(&csv, Some(3)).unwrap();
        assert_eq!(back.inputs.data(), ds.inputs.data());
    }
}
