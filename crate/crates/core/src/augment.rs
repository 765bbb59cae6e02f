//! Cut-mix masks and paired mixing of images and supervision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Zero-valued rectangle of a [`MixMask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroBlock {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl ZeroBlock {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Binary cut-mix mask: 1 everywhere except one contiguous zero block.
#[derive(Debug, Clone, PartialEq)]
pub struct MixMask {
    mask: Raster,
    zero_block: ZeroBlock,
    beta: f64,
}

impl MixMask {
    /// Builds a mask with an explicit zero block.
    pub fn with_block(height: usize, width: usize, block: ZeroBlock, beta: f64) -> Result<Self> {
        if block.top + block.height > height || block.left + block.width > width {
            return Err(Error::domain("zero block exceeds grid"));
        }
        let mut mask = Raster::filled(1, height, width, 1.0);
        for y in block.top..block.top + block.height {
            for x in block.left..block.left + block.width {
                mask.set(0, y, x, 0.0);
            }
        }
        Ok(MixMask {
            mask,
            zero_block: block,
            beta,
        })
    }

    /// Mask with no zero block (M = 1 everywhere).
    pub fn ones(height: usize, width: usize) -> Self {
        MixMask {
            mask: Raster::filled(1, height, width, 1.0),
            zero_block: ZeroBlock {
                top: 0,
                left: 0,
                height: 0,
                width: 0,
            },
            beta: 0.0,
        }
    }

    pub fn mask(&self) -> &Raster {
        &self.mask
    }

    pub fn zero_block(&self) -> ZeroBlock {
        self.zero_block
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// M at flat spatial index `i`.
    #[inline]
    pub fn is_one(&self, i: usize) -> bool {
        self.mask.data()[i] == 1.0
    }

    fn check_spatial(&self, r: &Raster, what: &str) -> Result<()> {
        if r.height() != self.height() || r.width() != self.width() {
            return Err(Error::domain(format!(
                "{what}: raster {}x{} does not match mask {}x{}",
                r.height(),
                r.width(),
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Side length of the zero block along a dimension of size `dim`.
pub fn block_extent(beta: f64, dim: usize) -> usize {
    // beta = 2/3 is not exact in binary; nudge so 2/3 * 12 floors to 8
    (beta * dim as f64 + 1e-9).floor() as usize
}

pub fn make_mask<R: Rng + ?Sized>(
    shape: (usize, usize),
    beta: f64,
    rng: &mut R,
) -> Result<MixMask> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::domain(format!("beta must lie in (0,1), got {beta}")));
    }
    let (h, w) = shape;
    let bh = block_extent(beta, h);
    let bw = block_extent(beta, w);
    if bh == 0 || bw == 0 {
        return Err(Error::domain(format!(
            "beta {beta} gives an empty zero block on a {h}x{w} grid"
        )));
    }
    let top = rng.random_range(0..=h - bh);
    let left = rng.random_range(0..=w - bw);
    MixMask::with_block(
        h,
        w,
        ZeroBlock {
            top,
            left,
            height: bh,
            width: bw,
        },
        beta,
    )
}

/// Returns `(xa⊙M + xb⊙(1−M), xa⊙(1−M) + xb⊙M)`, channelwise.
pub fn mix_pair(xa: &Raster, xb: &Raster, mask: &MixMask) -> Result<(Raster, Raster)> {
    xa.ensure_same_shape(xb, "mix_pair")?;
    mask.check_spatial(xa, "mix_pair")?;
    let plane = xa.plane_len();
    let mut first = xa.clone();
    let mut second = xb.clone();
    for (i, (f, s)) in first
        .data_mut()
        .iter_mut()
        .zip(second.data_mut().iter_mut())
        .enumerate()
    {
        if !mask.is_one(i % plane) {
            std::mem::swap(f, s);
        }
    }
    Ok((first, second))
}

/// Which region of the mask carries ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Ground truth under M, pseudo-label under 1−M.
    Fg,
    /// Ground truth under 1−M, pseudo-label under M.
    Bg,
}

pub fn mix_supervision(
    y_gt: &Raster,
    p_pseudo: &Raster,
    mask: &MixMask,
    orientation: Orientation,
) -> Result<Raster> {
    y_gt.ensure_same_shape(p_pseudo, "mix_supervision")?;
    mask.check_spatial(y_gt, "mix_supervision")?;
    let plane = y_gt.plane_len();
    let mut out = y_gt.clone();
    for (i, (o, &p)) in out.data_mut().iter_mut().zip(p_pseudo.data()).enumerate() {
        let gt_here = match orientation {
            Orientation::Fg => mask.is_one(i % plane),
            Orientation::Bg => !mask.is_one(i % plane),
        };
        if !gt_here {
            *o = p;
        }
    }
    Ok(out)
}

/// One of the eight flip/rotation symmetries of the grid.
///
/// `k % 4` quarter turns clockwise, then a horizontal flip when `k >= 4`.
/// Non-square grids only admit even `k % 4`.
pub fn dihedral(r: &Raster, k: u8) -> Result<Raster> {
    let (c, h, w) = r.shape();
    let turns = k % 4;
    if k >= 8 {
        return Err(Error::domain(format!("dihedral index {k} outside 0..8")));
    }
    if h != w && turns % 2 == 1 {
        return Err(Error::domain("quarter turns need a square grid"));
    }
    let mut out = Raster::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let xx = if k >= 4 { w - 1 - x } else { x };
                let (sy, sx) = match turns {
                    0 => (y, xx),
                    1 => (h - 1 - xx, y),
                    2 => (h - 1 - y, w - 1 - xx),
                    _ => (xx, w - 1 - y),
                };
                out.set(ch, y, x, r.get(ch, sy, sx));
            }
        }
    }
    Ok(out)
}

/// Index of a random symmetry valid for an `h × w` grid.
pub fn random_dihedral<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> u8 {
    if h == w {
        rng.random_range(0..8)
    } else {
        2 * rng.random_range(0..4)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels;
    use crate::raster::LabelVolume;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Raster {
        let data = (0..c * h * w).map(|_| rng.random::<f64>()).collect();
        Raster::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn dihedral_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_raster(&mut rng, 2, 5, 5);
        let once = dihedral(&r, 1).unwrap();
        assert_eq!(once.get(0, 0, 4), r.get(0, 0, 0));
        assert_eq!(dihedral(&once, 3).unwrap(), r);
        let mut seen = Vec::new();
        for k in 0..8 {
            let d = dihedral(&r, k).unwrap();
            let mut sorted = d.data().to_vec();
            let mut orig = r.data().to_vec();
            sorted.sort_by(f64::total_cmp);
            orig.sort_by(f64::total_cmp);
            assert_eq!(sorted, orig);
            assert!(!seen.contains(&d));
            seen.push(d);
        }
        for k in 4..8 {
            let d = dihedral(&r, k).unwrap();
            assert_eq!(dihedral(&d, k).unwrap(), r, "reflection {k} is an involution");
        }
        let rect = random_raster(&mut rng, 1, 4, 6);
        assert!(dihedral(&rect, 1).is_err());
        assert_eq!(dihedral(&dihedral(&rect, 6).unwrap(), 6).unwrap(), rect);
        assert!(dihedral(&r, 8).is_err());
    }

    #[test]
    fn twelve_by_twelve_two_thirds_gives_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = make_mask((12, 12), 2.0 / 3.0, &mut rng).unwrap();
        assert_eq!(m.zero_block().height, 8);
        assert_eq!(m.zero_block().width, 8);
    }

    #[test]
    fn beta_out_of_range_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(make_mask((12, 12), 1.0, &mut rng).is_err());
        assert!(make_mask((12, 12), 0.0, &mut rng).is_err());
        assert!(make_mask((12, 12), 0.05, &mut rng).is_err());
    }

    #[test]
    fn mask_mean_matches_block_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w) in [(32, 32), (12, 20), (7, 9)] {
            for _ in 0..20 {
                let m = make_mask((h, w), 2.0 / 3.0, &mut rng).unwrap();
                let zeros = m.mask().data().iter().filter(|&&v| v == 0.0).count();
                let (bh, bw) = (block_extent(2.0 / 3.0, h), block_extent(2.0 / 3.0, w));
                assert_eq!(zeros, bh * bw);
                let mean = m.mask().data().iter().sum::<f64>() / (h * w) as f64;
                assert!((mean - (1.0 - (bh * bw) as f64 / (h * w) as f64)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ones_mask_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_raster(&mut rng, 2, 5, 6);
        let b = random_raster(&mut rng, 2, 5, 6);
        let (o1, o2) = mix_pair(&a, &b, &MixMask::ones(5, 6)).unwrap();
        assert_eq!(o1, a);
        assert_eq!(o2, b);
    }

    #[test]
    fn swapping_inputs_swaps_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_raster(&mut rng, 1, 9, 9);
        let b = random_raster(&mut rng, 1, 9, 9);
        let m = make_mask((9, 9), 0.5, &mut rng).unwrap();
        let (o1, o2) = mix_pair(&a, &b, &m).unwrap();
        let (s1, s2) = mix_pair(&b, &a, &m).unwrap();
        assert_eq!(o1, s2);
        assert_eq!(o2, s1);
    }

    #[test]
    fn mix_pair_shape_mismatch() {
        let m = MixMask::ones(4, 4);
        assert!(mix_pair(&Raster::zeros(1, 4, 4), &Raster::zeros(1, 4, 5), &m).is_err());
        assert!(mix_pair(&Raster::zeros(1, 3, 4), &Raster::zeros(1, 3, 4), &m).is_err());
    }

    #[test]
    fn supervision_with_ones_mask() {
        let gt = Raster::filled(1, 3, 3, 1.0);
        let ps = Raster::zeros(1, 3, 3);
        let m = MixMask::ones(3, 3);
        assert_eq!(mix_supervision(&gt, &ps, &m, Orientation::Fg).unwrap(), gt);
        assert_eq!(mix_supervision(&gt, &ps, &m, Orientation::Bg).unwrap(), ps);
    }

    #[test]
    fn complementary_pairs_survive_mixing_regionwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let gt_l: Vec<u8> = (0..64).map(|_| rng.random_range(0..2)).collect();
            let ps_l: Vec<u8> = (0..64).map(|_| rng.random_range(0..2)).collect();
            let gt = LabelVolume::new(8, 8, gt_l).unwrap();
            let ps = LabelVolume::new(8, 8, ps_l).unwrap();
            let (gt_fg, gt_bg) = (gt.class_mask(1), labels::make_background_single(&gt).unwrap().data);
            let (ps_fg, ps_bg) = (ps.class_mask(1), labels::make_background_single(&ps).unwrap().data);
            let m = make_mask((8, 8), 0.5, &mut rng).unwrap();
            // image-aligned layout: both labels take ground truth from the same region
            for orient in [Orientation::Fg, Orientation::Bg] {
                let fg = mix_supervision(&gt_fg, &ps_fg, &m, orient).unwrap();
                let bg = mix_supervision(&gt_bg, &ps_bg, &m, orient).unwrap();
                for i in 0..64 {
                    assert_eq!(fg.data()[i] + bg.data()[i], 1.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn conservation_and_purity(seed in any::<u64>(), h in 3usize..16, w in 3usize..16, c in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_raster(&mut rng, c, h, w);
            let b = random_raster(&mut rng, c, h, w);
            let m = make_mask((h, w), 2.0 / 3.0, &mut rng).unwrap();
            let (o1, o2) = mix_pair(&a, &b, &m).unwrap();
            let blk = m.zero_block();
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        prop_assert_eq!(o1.get(ch, y, x) + o2.get(ch, y, x), a.get(ch, y, x) + b.get(ch, y, x));
                        if blk.contains(y, x) {
                            prop_assert_eq!(o1.get(ch, y, x), b.get(ch, y, x));
                        } else {
                            prop_assert_eq!(o1.get(ch, y, x), a.get(ch, y, x));
                        }
                    }
                }
            }
        }
    }
}
