//! Pixel-exact binary masks, the column-major run-length codec, box/polygon
//! rasterization, and IoU primitives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("bad RLE: {0}")]
    BadRle(String),
    #[error("box ({x0},{y0},{x1},{y1}) out of bounds for {width}x{height}")]
    OutOfBounds {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },
    #[error("degenerate polygon: all vertices collinear")]
    DegeneratePolygon,
    #[error("mask size mismatch: {0}x{1} vs {2}x{3} (width x height)")]
    SizeMismatch(u32, u32, u32, u32),
}

/// Dense binary mask, row-major bits, `(0,0)` at the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be >= 1");
        BinaryMask {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), (width * height) as usize);
        assert!(width >= 1 && height >= 1);
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    /// 8-bit single-channel image, 0/255.
    pub fn to_gray_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(x, y) { 255u8 } else { 0u8 }])
        })
    }

    /// Any nonzero luma counts as set.
    pub fn from_gray_image(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let mut m = BinaryMask::new(w, h);
        for (x, y, p) in img.enumerate_pixels() {
            if p.0[0] != 0 {
                m.set(x, y, true);
            }
        }
        m
    }
}

/// Run-length mask in column-major order (column 0 top-to-bottom, then
/// column 1, ...). `counts[0]` is the leading run of zeros and is the only
/// run allowed to be zero-length; runs alternate zero/one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// (height, width)
    pub size: (u32, u32),
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn height(&self) -> u32 {
        self.size.0
    }

    pub fn width(&self) -> u32 {
        self.size.1
    }

    /// Total set pixels: the sum of the one-runs (odd indices).
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// An all-zero mask of the given size.
    pub fn empty(height: u32, width: u32) -> Self {
        RleMask {
            size: (height, width),
            counts: vec![u64::from(height) * u64::from(width)],
        }
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        let (h, w) = self.size;
        if h < 1 || w < 1 {
            return Err(MaskError::BadRle(format!("size {h}x{w} must be >= 1x1")));
        }
        if self.counts.is_empty() {
            return Err(MaskError::BadRle("empty counts".into()));
        }
        for (i, &c) in self.counts.iter().enumerate() {
            if i > 0 && c == 0 {
                return Err(MaskError::BadRle(format!(
                    "zero-length interior run at index {i}"
                )));
            }
        }
        let total: u64 = self.counts.iter().sum();
        let expect = u64::from(h) * u64::from(w);
        if total != expect {
            return Err(MaskError::BadRle(format!(
                "counts sum {total} != {h}x{w} = {expect}"
            )));
        }
        Ok(())
    }
}

/// Lossless column-major run-length encoding.
pub fn rle_encode(m: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false; // runs start with zeros
    let mut run: u64 = 0;
    for x in 0..m.width() {
        for y in 0..m.height() {
            let bit = m.get(x, y);
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
    }
    counts.push(run);
    RleMask {
        size: (m.height(), m.width()),
        counts,
    }
}

/// Inverse of [`rle_encode`]; rejects RLEs violating the invariants.
pub fn rle_decode(r: &RleMask) -> Result<BinaryMask, MaskError> {
    r.validate()?;
    let (h, w) = r.size;
    let mut m = BinaryMask::new(w, h);
    let mut idx: u64 = 0;
    let mut value = false;
    for &c in &r.counts {
        for _ in 0..c {
            if value {
                let x = (idx / u64::from(h)) as u32;
                let y = (idx % u64::from(h)) as u32;
                m.set(x, y, true);
            }
            idx += 1;
        }
        value = !value;
    }
    Ok(m)
}

/// Axis-aligned box over the half-open rectangle `[x0,x1) x [y0,y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BBox { x0, y0, x1, y1 }
    }
}

/// Sets exactly the pixels inside the half-open rectangle.
pub fn rasterize_box(b: &BBox, width: u32, height: u32) -> Result<BinaryMask, MaskError> {
    if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > width || b.y1 > height {
        return Err(MaskError::OutOfBounds {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
            width,
            height,
        });
    }
    let mut m = BinaryMask::new(width, height);
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            m.set(x, y, true);
        }
    }
    Ok(m)
}

/// Simple polygon with sub-pixel vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<(f64, f64)>,
}

impl Polygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Self {
        assert!(vertices.len() >= 3, "polygon needs >= 3 vertices");
        Polygon { vertices }
    }
}

/// Even-odd fill sampled at pixel centers: pixel (x, y) is tested at
/// (x + 0.5, y + 0.5). Pixels outside the image are clipped.
pub fn rasterize_polygon(p: &Polygon, width: u32, height: u32) -> Result<BinaryMask, MaskError> {
    let v = &p.vertices;
    assert!(v.len() >= 3);
    if !v.iter().all(|&(x, y)| x.is_finite() && y.is_finite()) {
        return Err(MaskError::DegeneratePolygon);
    }
    if is_collinear(v) {
        return Err(MaskError::DegeneratePolygon);
    }
    let mut m = BinaryMask::new(width, height);
    for py in 0..height {
        let cy = f64::from(py) + 0.5;
        for px in 0..width {
            let cx = f64::from(px) + 0.5;
            if point_in_polygon_even_odd(cx, cy, v) {
                m.set(px, py, true);
            }
        }
    }
    Ok(m)
}

fn is_collinear(v: &[(f64, f64)]) -> bool {
    let (x0, y0) = v[0];
    // scale-relative tolerance against the polygon's extent
    let scale: f64 = v
        .iter()
        .map(|&(x, y)| (x - x0).abs().max((y - y0).abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let eps = 1e-12 * scale * scale;
    for w in v.windows(3) {
        let cross = (w[1].0 - w[0].0) * (w[2].1 - w[0].1) - (w[2].0 - w[0].0) * (w[1].1 - w[0].1);
        if cross.abs() > eps {
            return false;
        }
    }
    // also check wrap-around triples
    let n = v.len();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let c = v[(i + 2) % n];
        let cross = (b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1);
        if cross.abs() > eps {
            return false;
        }
    }
    true
}

fn point_in_polygon_even_odd(px: f64, py: f64, v: &[(f64, f64)]) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = v[i];
        let (xj, yj) = v[j];
        if (yi > py) != (yj > py) {
            let x_cross = xi + (py - yi) / (yj - yi) * (xj - xi);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Exact intersection/union pixel counts plus the ratio. Both masks empty is
/// scored as IoU 1.0 with counts (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouResult {
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<IouResult, MaskError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MaskError::SizeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let mut inter = 0u64;
    let mut uni = 0u64;
    for (pa, pb) in a.bits.iter().zip(&b.bits) {
        if *pa && *pb {
            inter += 1;
        }
        if *pa || *pb {
            uni += 1;
        }
    }
    Ok(IouResult {
        intersection: inter,
        union: uni,
        iou: if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        },
    })
}

/// IoU computed directly on the run lists, without decoding to pixels.
pub fn rle_iou(a: &RleMask, b: &RleMask) -> Result<IouResult, MaskError> {
    a.validate()?;
    b.validate()?;
    if a.size != b.size {
        return Err(MaskError::SizeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    // Merge the two run streams: advance through both lists in lockstep,
    // consuming min(remaining_a, remaining_b) pixels at a time.
    let mut inter = 0u64;
    let mut uni = 0u64;
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut ra, mut rb) = (
        a.counts.first().copied().unwrap_or(0),
        b.counts.first().copied().unwrap_or(0),
    );
    let (mut va, mut vb) = (false, false);
    let total = u64::from(a.size.0) * u64::from(a.size.1);
    let mut consumed = 0u64;
    while consumed < total {
        while ra == 0 && ia + 1 < a.counts.len() {
            ia += 1;
            ra = a.counts[ia];
            va = !va;
        }
        while rb == 0 && ib + 1 < b.counts.len() {
            ib += 1;
            rb = b.counts[ib];
            vb = !vb;
        }
        let step = ra.min(rb);
        if va && vb {
            inter += step;
        }
        if va || vb {
            uni += step;
        }
        ra -= step;
        rb -= step;
        consumed += step;
    }
    Ok(IouResult {
        intersection: inter,
        union: uni,
        iou: if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_2x2(bits: [bool; 4]) -> BinaryMask {
        BinaryMask::from_bits(2, 2, bits.to_vec())
    }

    #[test]
    fn encode_all_zero() {
        let m = mask_2x2([false; 4]);
        assert_eq!(rle_encode(&m).counts, vec![4]);
    }

    #[test]
    fn encode_all_one() {
        let m = mask_2x2([true; 4]);
        assert_eq!(rle_encode(&m).counts, vec![0, 4]);
    }

    #[test]
    fn encode_single_pixel_column_major() {
        // only (row 0, col 1) set; column-major walk: col0 row0=0, col0 row1=0,
        // col1 row0=1, col1 row1=0 -> [2,1,1]
        let mut m = BinaryMask::new(2, 2);
        m.set(1, 0, true);
        assert_eq!(rle_encode(&m).counts, vec![2, 1, 1]);
    }

    #[test]
    fn decode_all_zero_and_all_one() {
        let z = rle_decode(&RleMask {
            size: (2, 2),
            counts: vec![4],
        })
        .unwrap();
        assert!(z.is_empty());
        let o = rle_decode(&RleMask {
            size: (2, 2),
            counts: vec![0, 4],
        })
        .unwrap();
        assert_eq!(o.area(), 4);
    }

    #[test]
    fn decode_rejects_bad_sum() {
        let err = rle_decode(&RleMask {
            size: (2, 2),
            counts: vec![3, 2],
        })
        .unwrap_err();
        assert!(matches!(err, MaskError::BadRle(_)));
    }

    #[test]
    fn decode_rejects_interior_zero_run() {
        let err = rle_decode(&RleMask {
            size: (2, 2),
            counts: vec![2, 0, 2],
        })
        .unwrap_err();
        assert!(matches!(err, MaskError::BadRle(_)));
    }

    #[test]
    fn box_full_and_single_pixel() {
        let full = rasterize_box(&BBox::new(0, 0, 4, 4), 4, 4).unwrap();
        assert_eq!(full.area(), 16);
        let one = rasterize_box(&BBox::new(1, 1, 2, 2), 4, 4).unwrap();
        assert_eq!(one.area(), 1);
        assert!(one.get(1, 1));
    }

    #[test]
    fn box_area_matches_extent() {
        let m = rasterize_box(&BBox::new(0, 0, 3, 2), 4, 4).unwrap();
        assert_eq!(m.area(), 6);
    }

    #[test]
    fn box_out_of_bounds() {
        assert!(rasterize_box(&BBox::new(0, 0, 5, 2), 4, 4).is_err());
        assert!(rasterize_box(&BBox::new(2, 0, 2, 2), 4, 4).is_err());
    }

    #[test]
    fn polygon_square_matches_box() {
        let p = Polygon::new(vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]);
        let mp = rasterize_polygon(&p, 8, 8).unwrap();
        let mb = rasterize_box(&BBox::new(0, 0, 4, 4), 8, 8).unwrap();
        assert_eq!(mp, mb);
    }

    #[test]
    fn polygon_collinear_is_degenerate() {
        let p = Polygon::new(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(
            rasterize_polygon(&p, 4, 4).unwrap_err(),
            MaskError::DegeneratePolygon
        );
    }

    #[test]
    fn polygon_outside_image_clips_to_empty() {
        let p = Polygon::new(vec![(10.0, 10.0), (14.0, 10.0), (12.0, 14.0)]);
        let m = rasterize_polygon(&p, 4, 4).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn iou_identity_disjoint_and_partial() {
        let a = rasterize_box(&BBox::new(0, 0, 2, 2), 4, 4).unwrap();
        assert_eq!(iou(&a, &a).unwrap().iou, 1.0);
        let b = rasterize_box(&BBox::new(2, 2, 4, 4), 4, 4).unwrap();
        assert_eq!(iou(&a, &b).unwrap().iou, 0.0);

        // 10x10: A rows 0-4, B rows 3-7 -> inter 20, union 80
        let a = rasterize_box(&BBox::new(0, 0, 10, 5), 10, 10).unwrap();
        let b = rasterize_box(&BBox::new(0, 3, 10, 8), 10, 10).unwrap();
        let r = iou(&a, &b).unwrap();
        assert_eq!((r.intersection, r.union), (20, 80));
        assert_eq!(r.iou, 0.25);
    }

    #[test]
    fn iou_both_empty_convention() {
        let a = BinaryMask::new(3, 3);
        let r = iou(&a, &a).unwrap();
        assert_eq!((r.intersection, r.union, r.iou), (0, 0, 1.0));
    }

    #[test]
    fn iou_size_mismatch() {
        let a = BinaryMask::new(3, 3);
        let b = BinaryMask::new(4, 3);
        assert!(matches!(iou(&a, &b), Err(MaskError::SizeMismatch(..))));
    }

    proptest! {
        #[test]
        fn codec_round_trip(bits in proptest::collection::vec(any::<bool>(), 36)) {
            let m = BinaryMask::from_bits(6, 6, bits);
            let r = rle_encode(&m);
            r.validate().unwrap();
            prop_assert_eq!(rle_decode(&r).unwrap(), m.clone());
            // second direction: encode(decode(r)) == r
            prop_assert_eq!(rle_encode(&rle_decode(&r).unwrap()), r);
        }

        #[test]
        fn iou_symmetry_and_rle_agreement(
            a_bits in proptest::collection::vec(any::<bool>(), 48),
            b_bits in proptest::collection::vec(any::<bool>(), 48),
        ) {
            let a = BinaryMask::from_bits(8, 6, a_bits);
            let b = BinaryMask::from_bits(8, 6, b_bits);
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            let rr = rle_iou(&rle_encode(&a), &rle_encode(&b)).unwrap();
            prop_assert_eq!(ab, rr);
        }

        #[test]
        fn iou_monotone_under_added_pixel(
            a_bits in proptest::collection::vec(any::<bool>(), 25),
            b_bits in proptest::collection::vec(any::<bool>(), 25),
            pick in 0usize..25,
        ) {
            let a = BinaryMask::from_bits(5, 5, a_bits);
            let mut b = BinaryMask::from_bits(5, 5, b_bits);
            let before = iou(&a, &b).unwrap();
            b.set((pick % 5) as u32, (pick / 5) as u32, true);
            let after = iou(&a, &b).unwrap();
            prop_assert!(after.intersection >= before.intersection);
            prop_assert!(after.union >= before.union);
        }
    }
}
