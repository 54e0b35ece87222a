use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PartitionScheme {
    /// `K` full-height strips of width `W / K`.
    VerticalStrips,
    /// Left and right halves; `K = 2` only.
    LeftRightHalves,
    /// Four `H/2 x W/2` blocks in row-major order; `K = 4` only.
    Quadrants,
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical-strips" | "strips" => Ok(PartitionScheme::VerticalStrips),
            "left-right-halves" | "halves" => Ok(PartitionScheme::LeftRightHalves),
            "quadrants" => Ok(PartitionScheme::Quadrants),
            _ => Err(Error::invalid(format!("unknown partition scheme `{s}`"))),
        }
    }
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionScheme::VerticalStrips => "vertical-strips",
            PartitionScheme::LeftRightHalves => "left-right-halves",
            PartitionScheme::Quadrants => "quadrants",
        })
    }
}

/// Pixel rectangle `[row, row + height) x [col, col + width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.row..self.row + self.height).contains(&r)
            && (self.col..self.col + self.width).contains(&c)
    }
}

/// Disjoint regions covering an `H x W` image, one per client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    height: usize,
    width: usize,
    regions: Vec<Region>,
}

impl PartitionSpec {
    pub fn new(scheme: PartitionScheme, k: usize, height: usize, width: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("client count must be at least 1"));
        }
        let regions = match scheme {
            PartitionScheme::VerticalStrips | PartitionScheme::LeftRightHalves => {
                if scheme == PartitionScheme::LeftRightHalves && k != 2 {
                    return Err(Error::invalid(format!(
                        "left-right halves need K = 2, got {k}"
                    )));
                }
                if !width.is_multiple_of(k) {
                    return Err(Error::invalid(format!(
                        "image width {width} is not divisible by K = {k}"
                    )));
                }
                let w = width / k;
                (0..k)
                    .map(|i| Region {
                        row: 0,
                        col: i * w,
                        height,
                        width: w,
                    })
                    .collect()
            }
            PartitionScheme::Quadrants => {
                if k != 4 {
                    return Err(Error::invalid(format!("quadrants need K = 4, got {k}")));
                }
                if !height.is_multiple_of(2) || !width.is_multiple_of(2) {
                    return Err(Error::invalid(format!(
                        "quadrants need even image sides, got {height}x{width}"
                    )));
                }
                let (h, w) = (height / 2, width / 2);
                (0..4)
                    .map(|i| Region {
                        row: (i / 2) * h,
                        col: (i % 2) * w,
                        height: h,
                        width: w,
                    })
                    .collect()
            }
        };
        Self::from_regions(height, width, regions)
    }

    pub fn from_regions(height: usize, width: usize, regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::invalid("partition needs at least one region"));
        }
        let mut owner = vec![usize::MAX; height * width];
        for (k, reg) in regions.iter().enumerate() {
            if reg.height == 0
                || reg.width == 0
                || reg.row + reg.height > height
                || reg.col + reg.width > width
            {
                return Err(Error::invalid(format!(
                    "region {k} {reg:?} is empty or leaves the {height}x{width} image"
                )));
            }
            for r in reg.row..reg.row + reg.height {
                for c in reg.col..reg.col + reg.width {
                    let cell = &mut owner[r * width + c];
                    if *cell != usize::MAX {
                        return Err(Error::invalid(format!(
                            "regions {} and {k} overlap at pixel ({r}, {c})",
                            *cell
                        )));
                    }
                    *cell = k;
                }
            }
        }
        if let Some(p) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) belongs to no region",
                p / width,
                p % width
            )));
        }
        Ok(Self {
            height,
            width,
            regions,
        })
    }

    pub fn k(&self) -> usize {
        self.regions.len()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Per-client model input shape.
    pub fn input_shape(&self, channels: usize, k: usize) -> [usize; 3] {
        let r = self.regions[k];
        [channels, r.height, r.width]
    }

    /// Index of the region holding pixel `(row, col)`.
    pub fn owner(&self, row: usize, col: usize) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(row, col))
    }
}

/// One client's crop of a dataset's images. Carries no labels.
#[derive(Clone, Copy, Debug)]
pub struct VerticalView<'a> {
    images: &'a Tensor<f32>,
    region: Region,
    client: usize,
}

impl VerticalView<'_> {
    pub fn client(&self) -> usize {
        self.client
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[C, height, width]` of one crop.
    pub fn sample_shape(&self) -> [usize; 3] {
        [self.images.dim(1), self.region.height, self.region.width]
    }

    /// Crops of the samples at `indices`, `[B, C, height, width]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let [_, c, h, w] = [
            self.images.dim(0),
            self.images.dim(1),
            self.images.dim(2),
            self.images.dim(3),
        ];
        let n = self.len();
        let reg = self.region;
        let mut data = Vec::with_capacity(indices.len() * c * reg.height * reg.width);
        let src = self.images.data();
        for &i in indices {
            if i >= n {
                return Err(Error::Data(format!("sample index {i} outside [0, {n})")));
            }
            for ch in 0..c {
                let plane = (i * c + ch) * h * w;
                for r in reg.row..reg.row + reg.height {
                    let start = plane + r * w + reg.col;
                    data.extend_from_slice(&src[start..start + reg.width]);
                }
            }
        }
        Tensor::new(vec![indices.len(), c, reg.height, reg.width], data)
    }
}

/// One view per region of `spec`, in client order.
pub fn partition<'a>(ds: &'a Dataset, spec: &PartitionSpec) -> Result<Vec<VerticalView<'a>>> {
    let [_, h, w] = ds.image_shape();
    if (h, w) != spec.image_size() {
        return Err(Error::invalid(format!(
            "partition is for {:?} images but the dataset holds {h}x{w}",
            spec.image_size()
        )));
    }
    Ok(spec
        .regions
        .iter()
        .enumerate()
        .map(|(client, &region)| VerticalView {
            images: ds.images(),
            region,
            client,
        })
        .collect())
}
