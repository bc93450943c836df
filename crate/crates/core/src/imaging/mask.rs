use super::raster::{check_dims, check_same, GrayImage};
use crate::error::{Error, Result};

/// Row-major binary region indicator.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::DataLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Accepts real values that must be exactly 0 or 1.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len());
        for (index, &value) in values.iter().enumerate() {
            if value == 0.0 {
                data.push(false);
            } else if value == 1.0 {
                data.push(true);
            } else {
                return Err(Error::NotBinary { index, value });
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::from_fn(width, height, |_, _| false)
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_fn(width, height, |_, _| true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Flat indices of the set pixels, in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        check_same(self.dims(), other.dims())?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Mask as a 0/1 image.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    /// Moves every set pixel by `(dy, dx)`. Returns the moved mask and the
    /// number of set pixels that left the frame.
    pub fn translate(&self, dy: i64, dx: i64) -> (BinaryMask, usize) {
        let mut out = vec![false; self.data.len()];
        let mut lost = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.data[y * self.width + x] {
                    continue;
                }
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny < 0 || nx < 0 || ny >= self.height as i64 || nx >= self.width as i64 {
                    lost += 1;
                } else {
                    out[ny as usize * self.width + nx as usize] = true;
                }
            }
        }
        (
            BinaryMask {
                width: self.width,
                height: self.height,
                data: out,
            },
            lost,
        )
    }

    /// Mean `(x, y)` position of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for i in self.indices() {
            sx += (i % self.width) as f64;
            sy += (i / self.width) as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// Ordered collection of per-bone masks sharing one frame.
///
/// Union and intersection are always derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<BinaryMask>,
}

impl MaskSet {
    pub fn new(masks: Vec<BinaryMask>) -> Result<Self> {
        if masks.len() < 2 {
            return Err(Error::TooFewMasks(masks.len()));
        }
        let dims = masks[0].dims();
        for m in &masks[1..] {
            check_same(dims, m.dims())?;
        }
        Ok(Self { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn into_masks(self) -> Vec<BinaryMask> {
        self.masks
    }

    pub fn get(&self, i: usize) -> &BinaryMask {
        &self.masks[i]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks[0].dims()
    }

    pub fn union(&self) -> BinaryMask {
        mask_union(self)
    }

    pub fn intersection(&self) -> BinaryMask {
        mask_intersection(self)
    }

    /// Number of masks covering each pixel.
    pub fn coverage(&self) -> Vec<usize> {
        let mut count = vec![0usize; self.masks[0].data.len()];
        for m in &self.masks {
            for (c, &b) in count.iter_mut().zip(&m.data) {
                *c += b as usize;
            }
        }
        count
    }

    /// True when no pixel is covered by more than one mask.
    pub fn pairwise_disjoint(&self) -> bool {
        self.coverage().iter().all(|&c| c <= 1)
    }
}

fn fold_masks(ms: &MaskSet, op: impl Fn(bool, bool) -> bool) -> BinaryMask {
    let mut acc = ms.masks[0].clone();
    for m in &ms.masks[1..] {
        for (a, &b) in acc.data.iter_mut().zip(&m.data) {
            *a = op(*a, b);
        }
    }
    acc
}

/// Pixelwise OR over all masks.
pub fn mask_union(ms: &MaskSet) -> BinaryMask {
    fold_masks(ms, |a, b| a || b)
}

/// Pixelwise AND over all masks.
pub fn mask_intersection(ms: &MaskSet) -> BinaryMask {
    fold_masks(ms, |a, b| a && b)
}

/// `a AND NOT b`.
pub fn mask_subtract(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.and_not(b)
}

/// Elementwise product of an image with a binary mask.
pub fn apply_mask(img: &GrayImage, m: &BinaryMask) -> Result<GrayImage> {
    check_same(img.dims(), m.dims())?;
    Ok(GrayImage::from_raw(
        img.width(),
        img.height(),
        img.data()
            .iter()
            .zip(m.data())
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1).unwrap()
    }

    /// Two 3x3 squares on a 5x5 frame sharing only pixel (2, 2).
    fn one_pixel_overlap() -> MaskSet {
        MaskSet::new(vec![rect(5, 5, 0, 0, 3, 3), rect(5, 5, 2, 2, 5, 5)]).unwrap()
    }

    #[test]
    fn union_of_identical_masks_is_idempotent() {
        let m = rect(6, 4, 1, 1, 4, 3);
        let ms = MaskSet::new(vec![m.clone(), m.clone()]).unwrap();
        assert_eq!(mask_union(&ms), m);
        assert_eq!(mask_intersection(&ms), m);
    }

    #[test]
    fn disjoint_halves_partition_the_frame() {
        let ms = MaskSet::new(vec![rect(6, 4, 0, 0, 3, 4), rect(6, 4, 3, 0, 6, 4)]).unwrap();
        assert_eq!(mask_union(&ms), BinaryMask::full(6, 4).unwrap());
        assert!(mask_intersection(&ms).is_empty());
        assert!(ms.pairwise_disjoint());
    }

    #[test]
    fn one_pixel_overlap_enumeration() {
        let ms = one_pixel_overlap();
        // Hand enumeration: each square has 9 pixels, they share (2, 2).
        let union = mask_union(&ms);
        assert_eq!(union.area(), 2 * 9 - 1);
        let inter = mask_intersection(&ms);
        assert_eq!(inter.area(), 1);
        assert!(inter.get(2, 2));
        let m1_excl = mask_subtract(ms.get(0), &inter).unwrap();
        assert_eq!(m1_excl.area(), 8);
        assert!(!m1_excl.get(2, 2));
        assert!(m1_excl.get(0, 0) && m1_excl.get(2, 1) && m1_excl.get(1, 2));
    }

    #[test]
    fn subtract_edge_cases() {
        let a = rect(4, 4, 0, 0, 2, 3);
        assert!(mask_subtract(&a, &a).unwrap().is_empty());
        assert_eq!(mask_subtract(&a, &BinaryMask::empty(4, 4).unwrap()).unwrap(), a);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = rect(4, 4, 0, 0, 2, 2);
        let b = rect(5, 4, 0, 0, 2, 2);
        assert!(matches!(
            MaskSet::new(vec![a.clone(), b.clone()]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(mask_subtract(&a, &b).is_err());
        let img = GrayImage::filled(5, 4, 0.5).unwrap();
        assert!(apply_mask(&img, &a).is_err());
    }

    #[test]
    fn mask_set_requires_two_masks() {
        let a = rect(4, 4, 0, 0, 2, 2);
        assert!(matches!(MaskSet::new(vec![a]), Err(Error::TooFewMasks(1))));
    }

    #[test]
    fn apply_mask_cases() {
        let img = GrayImage::from_fn(4, 3, |x, y| (x + y) as f64 / 5.0).unwrap();
        assert_eq!(apply_mask(&img, &BinaryMask::full(4, 3).unwrap()).unwrap(), img);
        assert!(apply_mask(&img, &BinaryMask::empty(4, 3).unwrap())
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let half = GrayImage::filled(4, 3, 0.5).unwrap();
        let masked = apply_mask(&half, &rect(4, 3, 0, 0, 2, 3)).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(masked.get(x, y), if x < 2 { 0.5 } else { 0.0 });
            }
        }
    }

    #[test]
    fn from_values_rejects_non_binary() {
        assert!(matches!(
            BinaryMask::from_values(2, 1, &[0.0, 0.5]),
            Err(Error::NotBinary { index: 1, .. })
        ));
    }

    #[test]
    fn translate_counts_lost_pixels() {
        let m = rect(5, 5, 3, 0, 5, 2);
        let (moved, lost) = m.translate(1, 1);
        assert_eq!(lost, 2);
        assert_eq!(moved.area(), 2);
        assert!(moved.get(4, 1) && moved.get(4, 2));
    }

    fn arb_mask(w: usize, h: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(any::<bool>(), w * h)
            .prop_map(move |d| BinaryMask::new(w, h, d).unwrap())
    }

    proptest! {
        #[test]
        fn mask_algebra_laws(a in arb_mask(7, 5), b in arb_mask(7, 5), c in arb_mask(7, 5)) {
            let ab = MaskSet::new(vec![a.clone(), b.clone()]).unwrap();
            let ba = MaskSet::new(vec![b.clone(), a.clone()]).unwrap();
            prop_assert_eq!(mask_union(&ab), mask_union(&ba));
            let left = mask_union(&MaskSet::new(vec![mask_union(&ab), c.clone()]).unwrap());
            let bc = MaskSet::new(vec![b.clone(), c.clone()]).unwrap();
            let right = mask_union(&MaskSet::new(vec![a.clone(), mask_union(&bc)]).unwrap());
            prop_assert_eq!(left, right);

            let inter = mask_intersection(&ab);
            prop_assert!(inter.and_not(&a).unwrap().is_empty());
            prop_assert!(inter.and_not(&b).unwrap().is_empty());

            let rebuilt = mask_subtract(&a, &b).unwrap().or(&a.and(&b).unwrap()).unwrap();
            prop_assert_eq!(rebuilt, a);
        }

        #[test]
        fn apply_mask_is_idempotent(m in arb_mask(6, 6), vals in proptest::collection::vec(0.0f64..=1.0, 36)) {
            let img = GrayImage::new(6, 6, vals).unwrap();
            let once = apply_mask(&img, &m).unwrap();
            let twice = apply_mask(&once, &m).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
