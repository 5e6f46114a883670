//! Axis-aligned boxes and interior-disjoint box unions in arbitrary dimension.
//!
//! Boxes are closed sets; unions are kept interior-disjoint so volumes add up.
//! Degenerate (zero-width) boxes are legal and carry zero volume.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for closed-set membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid bounds in dimension {dim}: lo {lo} > hi {hi}")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("cannot sample from a union with zero volume")]
    ZeroVolume,
}

/// A closed axis-aligned hyper-rectangle `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if l > h || !l.is_finite() || !h.is_finite() {
                return Err(GeometryError::InvalidBounds { dim: i, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    /// A box in center/scale form: `[cen - scale, cen + scale]`.
    pub fn from_center_scale(cen: &[f64], scale: &[f64]) -> Result<Self, GeometryError> {
        if cen.len() != scale.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: cen.len(),
                got: scale.len(),
            });
        }
        let lo = cen.iter().zip(scale).map(|(c, s)| c - s).collect();
        let hi = cen.iter().zip(scale).map(|(c, s)| c + s).collect();
        Self::new(lo, hi)
    }

    /// A single point as a degenerate box.
    pub fn singleton(point: &[f64]) -> Self {
        Self { lo: point.to_vec(), hi: point.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.hi[dim] - self.lo[dim]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Product of widths; zero for degenerate boxes.
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// True if some width is (numerically) zero.
    pub fn is_degenerate(&self) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| h - l <= MEMBERSHIP_TOL)
    }

    /// Closed membership with tolerance [`MEMBERSHIP_TOL`].
    pub fn contains(&self, point: &[f64]) -> bool {
        debug_assert_eq!(point.len(), self.dim());
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(point)
            .all(|((l, h), x)| *x >= l - MEMBERSHIP_TOL && *x <= h + MEMBERSHIP_TOL)
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((sl, sh), (ol, oh))| {
                *ol >= sl - MEMBERSHIP_TOL && *oh <= sh + MEMBERSHIP_TOL
            })
    }

    /// Intersection of two closed boxes, `None` if empty.
    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        debug_assert_eq!(self.dim(), other.dim());
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let l = self.lo[i].max(other.lo[i]);
            let h = self.hi[i].min(other.hi[i]);
            if l > h {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(AxisBox { lo, hi })
    }

    /// True if the intersection has positive volume.
    pub fn overlaps_interior(&self, other: &AxisBox) -> bool {
        match self.intersect(other) {
            Some(ov) => ov.volume() > 0.0,
            None => false,
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &AxisBox) -> AxisBox {
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect();
        AxisBox { lo, hi }
    }

    /// Grow by `amount` in the listed dimensions, clipped to `within` when given.
    pub fn inflate(&self, dims: &[usize], amount: f64, within: Option<&AxisBox>) -> AxisBox {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for &d in dims {
            lo[d] -= amount;
            hi[d] += amount;
            if let Some(w) = within {
                lo[d] = lo[d].max(w.lo[d]);
                hi[d] = hi[d].min(w.hi[d]);
            }
        }
        AxisBox { lo, hi }
    }

    fn split_at(&self, dim: usize, value: f64) -> (AxisBox, AxisBox) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[dim] = value;
        right.lo[dim] = value;
        (left, right)
    }
}

/// An interior-disjoint union of same-dimension boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxUnion {
    dim: usize,
    boxes: Vec<AxisBox>,
}

impl BoxUnion {
    pub fn empty(dim: usize) -> Self {
        Self { dim, boxes: Vec::new() }
    }

    pub fn from_box(b: AxisBox) -> Self {
        Self { dim: b.dim(), boxes: vec![b] }
    }

    /// Builds a union after checking dimensions and pairwise interior disjointness.
    pub fn new(dim: usize, boxes: Vec<AxisBox>) -> Result<Self, GeometryError> {
        for b in &boxes {
            if b.dim() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: b.dim() });
            }
        }
        for (i, a) in boxes.iter().enumerate() {
            for b in &boxes[i + 1..] {
                if a.overlaps_interior(b) {
                    return Err(GeometryError::InvalidBounds {
                        dim: i,
                        lo: f64::NAN,
                        hi: f64::NAN,
                    });
                }
            }
        }
        Ok(Self { dim, boxes })
    }

    /// Builds from possibly-overlapping boxes by decomposing in discovery order.
    pub fn from_overlapping(dim: usize, boxes: &[AxisBox]) -> Self {
        let mut out = Self::empty(dim);
        for b in boxes {
            let novel = BoxUnion::from_box(b.clone()).subtract_union(&out);
            out.boxes.extend(novel.boxes);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boxes(&self) -> &[AxisBox] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn push(&mut self, b: AxisBox) {
        debug_assert_eq!(b.dim(), self.dim);
        self.boxes.push(b);
    }

    /// Sum of member volumes (valid because members are interior-disjoint).
    pub fn volume(&self) -> f64 {
        self.boxes.iter().map(AxisBox::volume).sum()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(point))
    }

    pub fn hull(&self) -> Option<AxisBox> {
        let mut it = self.boxes.iter();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, b| acc.hull(b)))
    }

    /// Removes `b` from every member via axis-sweep slab decomposition
    /// (deterministic dimension order `0..d-1`; at most `2d` pieces per member).
    ///
    /// Pieces keep zero width only in dimensions where the parent member was
    /// already degenerate, so boundary slabs of full boxes are dropped.
    pub fn subtract(&self, b: &AxisBox) -> Result<BoxUnion, GeometryError> {
        if b.dim() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: b.dim() });
        }
        let mut out = BoxUnion::empty(self.dim);
        for m in &self.boxes {
            match m.intersect(b) {
                None => out.boxes.push(m.clone()),
                Some(ov) => {
                    let mut core = m.clone();
                    for i in 0..self.dim {
                        if core.lo[i] < ov.lo[i] {
                            let mut piece = core.clone();
                            piece.hi[i] = ov.lo[i];
                            push_piece(&mut out.boxes, piece, m);
                        }
                        if ov.hi[i] < core.hi[i] {
                            let mut piece = core.clone();
                            piece.lo[i] = ov.hi[i];
                            push_piece(&mut out.boxes, piece, m);
                        }
                        core.lo[i] = ov.lo[i];
                        core.hi[i] = ov.hi[i];
                    }
                    // what remains of `core` is exactly the overlap: discarded
                }
            }
        }
        Ok(out)
    }

    pub fn subtract_union(&self, other: &BoxUnion) -> BoxUnion {
        let mut out = self.clone();
        for b in &other.boxes {
            out = out.subtract(b).expect("dimension checked");
        }
        out
    }

    /// Members clipped to `b`; degenerate intersections are kept.
    pub fn intersect_box(&self, b: &AxisBox) -> BoxUnion {
        let boxes = self.boxes.iter().filter_map(|m| m.intersect(b)).collect();
        BoxUnion { dim: self.dim, boxes }
    }

    pub fn intersect_union(&self, other: &BoxUnion) -> BoxUnion {
        let mut boxes = Vec::new();
        for b in &other.boxes {
            boxes.extend(self.intersect_box(b).boxes);
        }
        BoxUnion { dim: self.dim, boxes }
    }

    pub fn split_member(&mut self, idx: usize, dim: usize, value: f64) {
        let (l, r) = self.boxes[idx].split_at(dim, value);
        self.boxes[idx] = l;
        self.boxes.insert(idx + 1, r);
    }

    /// `n` i.i.d. uniform points; the member is chosen with probability
    /// proportional to its volume. Deterministic for a fixed seed.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, GeometryError> {
        let total = self.volume();
        if total <= 0.0 {
            return Err(GeometryError::ZeroVolume);
        }
        let mut cumulative = Vec::with_capacity(self.boxes.len());
        let mut acc = 0.0;
        for b in &self.boxes {
            acc += b.volume();
            cumulative.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.gen_range(0.0..total);
            let idx = cumulative.partition_point(|&c| c <= u).min(self.boxes.len() - 1);
            let b = &self.boxes[idx];
            let point = (0..self.dim)
                .map(|i| {
                    if b.width(i) > 0.0 {
                        rng.gen_range(b.lo[i]..b.hi[i])
                    } else {
                        b.lo[i]
                    }
                })
                .collect();
            points.push(point);
        }
        Ok(points)
    }

    /// Verifies the interior-disjointness invariant.
    pub fn is_interior_disjoint(&self) -> bool {
        for (i, a) in self.boxes.iter().enumerate() {
            for b in &self.boxes[i + 1..] {
                if a.overlaps_interior(b) {
                    return false;
                }
            }
        }
        true
    }
}

fn push_piece(out: &mut Vec<AxisBox>, piece: AxisBox, parent: &AxisBox) {
    // keep zero width only where the parent was already degenerate
    for i in 0..piece.dim() {
        if piece.width(i) <= 0.0 && parent.width(i) > 0.0 {
            return;
        }
    }
    out.push(piece);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(lo: &[f64], hi: &[f64]) -> AxisBox {
        AxisBox::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn volume_of_rectangle() {
        assert_eq!(bx(&[0.0, 0.0], &[1.0, 3.0]).volume(), 3.0);
    }

    #[test]
    fn volume_of_degenerate_box_is_zero() {
        assert_eq!(bx(&[2.0, 0.0], &[2.0, 5.0]).volume(), 0.0);
    }

    #[test]
    fn volume_of_control_interval() {
        // prior bound 100 with guaranteed-safe level 97.85
        assert!((bx(&[97.85], &[100.0]).volume() - 2.15).abs() < 1e-12);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(matches!(
            AxisBox::new(vec![1.0], vec![0.0]),
            Err(GeometryError::InvalidBounds { .. })
        ));
        assert!(matches!(
            AxisBox::new(vec![0.0, 0.0], vec![1.0]),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn subtract_corner_overlap() {
        let u = BoxUnion::from_box(bx(&[0.0, 0.0], &[2.0, 2.0]));
        let out = u.subtract(&bx(&[0.0, 0.0], &[1.0, 1.0])).unwrap();
        assert!((out.volume() - 3.0).abs() < 1e-12);
        assert!(out.is_interior_disjoint());
    }

    #[test]
    fn subtract_disjoint_is_noop() {
        let u = BoxUnion::from_box(bx(&[0.0, 0.0], &[1.0, 1.0]));
        let out = u.subtract(&bx(&[5.0, 5.0], &[6.0, 6.0])).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn subtract_superset_empties() {
        let u = BoxUnion::from_box(bx(&[0.0, 0.0], &[1.0, 1.0]));
        let out = u.subtract(&bx(&[-1.0, -1.0], &[2.0, 2.0])).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn subtract_middle_keeps_shared_boundaries() {
        let u = BoxUnion::from_box(bx(&[0.0], &[10.0]));
        let out = u.subtract(&bx(&[3.0], &[5.0])).unwrap();
        assert_eq!(out.boxes(), &[bx(&[0.0], &[3.0]), bx(&[5.0], &[10.0])]);
    }

    #[test]
    fn subtract_dimension_mismatch_errors() {
        let u = BoxUnion::from_box(bx(&[0.0], &[1.0]));
        assert!(u.subtract(&bx(&[0.0, 0.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn union_volume_cases() {
        assert_eq!(BoxUnion::empty(2).volume(), 0.0);
        let u = BoxUnion::new(
            2,
            vec![bx(&[0.0, 0.0], &[1.0, 1.0]), bx(&[1.0, 0.0], &[2.0, 1.0])],
        )
        .unwrap();
        assert!((u.volume() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn subtract_volume_consistency() {
        let u = BoxUnion::new(
            2,
            vec![bx(&[0.0, 0.0], &[2.0, 2.0]), bx(&[3.0, 0.0], &[4.0, 1.0])],
        )
        .unwrap();
        let b = bx(&[1.0, 1.0], &[3.5, 3.0]);
        let cut = u.intersect_box(&b).volume();
        let out = u.subtract(&b).unwrap();
        assert!((out.volume() - (u.volume() - cut)).abs() < 1e-9);
    }

    #[test]
    fn subtract_is_idempotent_as_point_set() {
        let u = BoxUnion::new(
            2,
            vec![bx(&[0.0, 0.0], &[2.0, 2.0]), bx(&[2.0, 0.0], &[3.0, 3.0])],
        )
        .unwrap();
        let b = bx(&[0.5, 0.5], &[2.5, 1.5]);
        let once = u.subtract(&b).unwrap();
        let twice = once.subtract(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = [rng.gen_range(-0.5..3.5), rng.gen_range(-0.5..3.5)];
            assert_eq!(once.contains(&p), twice.contains(&p), "point {p:?}");
        }
    }

    #[test]
    fn overlapping_decomposition_covers_union() {
        let a = bx(&[0.0, 0.0], &[2.0, 2.0]);
        let b = bx(&[1.0, 1.0], &[3.0, 3.0]);
        let u = BoxUnion::from_overlapping(2, &[a.clone(), b.clone()]);
        assert!(u.is_interior_disjoint());
        assert!((u.volume() - 7.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = [rng.gen_range(-0.5..3.5), rng.gen_range(-0.5..3.5)];
            assert_eq!(u.contains(&p), a.contains(&p) || b.contains(&p));
        }
    }

    #[test]
    fn sampling_zero_points() {
        let u = BoxUnion::from_box(bx(&[0.0], &[1.0]));
        assert!(u.sample_uniform(0, 1).unwrap().is_empty());
    }

    #[test]
    fn sampling_zero_volume_errors() {
        let u = BoxUnion::from_box(bx(&[1.0], &[1.0]));
        assert!(matches!(u.sample_uniform(5, 1), Err(GeometryError::ZeroVolume)));
    }

    #[test]
    fn sampling_mean_of_unit_interval() {
        let u = BoxUnion::from_box(bx(&[0.0], &[1.0]));
        let pts = u.sample_uniform(10_000, 42).unwrap();
        let mean: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        assert!((0.47..=0.53).contains(&mean), "mean {mean}");
    }

    #[test]
    fn sampling_weights_by_member_volume() {
        // two unit-volume members: second box drawn with probability 1/2
        let u = BoxUnion::new(
            2,
            vec![bx(&[0.0, 0.0], &[1.0, 1.0]), bx(&[10.0, 0.0], &[11.0, 1.0])],
        )
        .unwrap();
        let pts = u.sample_uniform(10_000, 9).unwrap();
        let frac = pts.iter().filter(|p| p[0] >= 10.0).count() as f64 / pts.len() as f64;
        assert!((0.48..=0.52).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn samples_are_members_and_deterministic() {
        let u = BoxUnion::new(
            2,
            vec![bx(&[0.0, 0.0], &[1.0, 2.0]), bx(&[4.0, 0.0], &[5.0, 0.5])],
        )
        .unwrap();
        let a = u.sample_uniform(200, 11).unwrap();
        let b = u.sample_uniform(200, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| u.contains(p)));
    }
}
