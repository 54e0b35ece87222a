use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    /// Records carry a coarse and a fine label; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn classes(&self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn label_bytes(&self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn files(&self, train: bool) -> Vec<&'static str> {
        match (self, train) {
            (CifarVariant::Cifar10, true) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarVariant::Cifar10, false) => vec!["test_batch.bin"],
            (CifarVariant::Cifar100, true) => vec!["train.bin"],
            (CifarVariant::Cifar100, false) => vec!["test.bin"],
        }
    }
}

/// Decodes CIFAR binary records: label byte(s) then 3072 channel-planar
/// pixel bytes, scaled by 1/255.
pub fn parse_cifar_records(bytes: &[u8], variant: CifarVariant) -> Result<Dataset> {
    let record = variant.label_bytes() + PIXELS;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Data(format!(
            "truncated record: {} bytes is not a multiple of the {record}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let classes = variant.classes();
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[variant.label_bytes() - 1] as usize;
        if label >= classes {
            return Err(Error::Data(format!(
                "record {i}: label {label} outside [0, {classes})"
            )));
        }
        labels.push(label);
        pixels.extend(
            rec[variant.label_bytes()..]
                .iter()
                .map(|&b| b as f32 / 255.0),
        );
    }
    Dataset::new(
        Tensor::new(vec![n, 3, SIDE, SIDE], pixels)?,
        labels,
        classes,
    )
}

pub fn load_cifar_binary(path: impl AsRef<Path>, variant: CifarVariant) -> Result<Dataset> {
    let bytes = fs::read(path.as_ref())?;
    parse_cifar_records(&bytes, variant)
}

/// Loads the standard training or test files from an extracted CIFAR
/// binary directory.
pub fn load_cifar_split(
    dir: impl AsRef<Path>,
    variant: CifarVariant,
    train: bool,
) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for name in variant.files(train) {
        let path = dir.as_ref().join(name);
        let chunk = fs::read(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        bytes.extend_from_slice(&chunk);
    }
    parse_cifar_records(&bytes, variant)
}

/// Writes `ds` in CIFAR binary layout. CIFAR-100 records get coarse label 0.
pub fn write_cifar_binary(
    path: impl AsRef<Path>,
    ds: &Dataset,
    variant: CifarVariant,
) -> Result<()> {
    if ds.image_shape() != [3, SIDE, SIDE] {
        return Err(Error::Data(format!(
            "CIFAR records hold 3x32x32 images, got {:?}",
            ds.image_shape()
        )));
    }
    if ds.classes() > variant.classes() {
        return Err(Error::Data(format!(
            "{} classes do not fit the format's {}",
            ds.classes(),
            variant.classes()
        )));
    }
    let mut out = Vec::with_capacity(ds.len() * (variant.label_bytes() + PIXELS));
    for (i, &label) in ds.labels().iter().enumerate() {
        if variant == CifarVariant::Cifar100 {
            out.push(0);
        }
        out.push(label as u8);
        let img = &ds.images().data()[i * PIXELS..(i + 1) * PIXELS];
        out.extend(img.iter().map(|&v| (v * 255.0).round() as u8));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_empty_dataset() {
        let ds = parse_cifar_records(&[], CifarVariant::Cifar10).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.image_shape(), [3, 32, 32]);
    }

    #[test]
    fn single_white_record() {
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, PIXELS));
        let ds = parse_cifar_records(&rec, CifarVariant::Cifar10).unwrap();
        assert_eq!(ds.labels(), &[3]);
        assert!(ds.images().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn fine_label_is_used() {
        let mut rec = vec![7u8, 42];
        rec.extend(std::iter::repeat_n(0u8, PIXELS));
        let ds = parse_cifar_records(&rec, CifarVariant::Cifar100).unwrap();
        assert_eq!(ds.labels(), &[42]);
        assert_eq!(ds.classes(), 100);
    }

    #[test]
    fn bad_records() {
        let mut rec = vec![10u8];
        rec.extend(std::iter::repeat_n(0u8, PIXELS));
        assert!(matches!(
            parse_cifar_records(&rec, CifarVariant::Cifar10),
            Err(Error::Data(_))
        ));
        rec[0] = 1;
        rec.pop();
        let err = parse_cifar_records(&rec, CifarVariant::Cifar10).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn every_byte_survives_scaling() {
        for b in 0..=255u8 {
            let v = b as f32 / 255.0;
            assert!((0.0..=1.0).contains(&v));
            assert_eq!((v * 255.0).round() as u8, b);
        }
    }
}
