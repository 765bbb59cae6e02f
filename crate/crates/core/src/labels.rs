//! Complementary background labels.
//!
//! Single-target labels are inverted cellwise. Multi-target labels are first
//! one-hot encoded and then each channel is inverted, so the background label
//! keeps one channel per class (class 0 included).

use crate::error::{Error, Result};
use crate::raster::{LabelVolume, Raster};

/// Binary background label; one channel for single-target, `class_count` channels otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundLabel {
    pub data: Raster,
}

pub fn onehot(label: &LabelVolume, class_count: usize) -> Result<Raster> {
    if class_count == 0 {
        return Err(Error::domain("class_count must be positive"));
    }
    let (h, w) = (label.height(), label.width());
    let mut out = Raster::zeros(class_count, h, w);
    let plane = h * w;
    for (i, &v) in label.data().iter().enumerate() {
        let v = v as usize;
        if v >= class_count {
            return Err(Error::domain(format!(
                "label value {v} out of range for {class_count} classes"
            )));
        }
        out.data_mut()[v * plane + i] = 1.0;
    }
    Ok(out)
}

pub fn make_background_single(label: &LabelVolume) -> Result<BackgroundLabel> {
    let mut data = Vec::with_capacity(label.data().len());
    for &v in label.data() {
        match v {
            0 => data.push(1.0),
            1 => data.push(0.0),
            other => {
                return Err(Error::domain(format!(
                    "single-target label must be binary, found {other}"
                )))
            }
        }
    }
    Ok(BackgroundLabel {
        data: Raster::from_vec(1, label.height(), label.width(), data)?,
    })
}

pub fn make_background_multi(label: &LabelVolume, class_count: usize) -> Result<BackgroundLabel> {
    let oh = onehot(label, class_count)?;
    Ok(BackgroundLabel {
        data: oh.map(|v| 1.0 - v),
    })
}

/// Foreground training target: one channel for binary problems, one-hot otherwise.
pub fn foreground_target(label: &LabelVolume, class_count: usize) -> Result<Raster> {
    if class_count == 2 {
        if label.max_value() > 1 {
            return Err(Error::domain("binary problem with label value > 1"));
        }
        Ok(label.class_mask(1))
    } else {
        onehot(label, class_count)
    }
}

/// Background target matching [`foreground_target`]'s channel layout.
pub fn background_target(label: &LabelVolume, class_count: usize) -> Result<Raster> {
    if class_count == 2 {
        Ok(make_background_single(label)?.data)
    } else {
        Ok(make_background_multi(label, class_count)?.data)
    }
}

/// Number of prediction channels used for a problem with `class_count` classes.
pub fn prediction_channels(class_count: usize) -> usize {
    if class_count == 2 {
        1
    } else {
        class_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(h: usize, w: usize, d: &[u8]) -> LabelVolume {
        LabelVolume::new(h, w, d.to_vec()).unwrap()
    }

    #[test]
    fn onehot_cell_value_two_of_four() {
        let oh = onehot(&lv(1, 1, &[2]), 4).unwrap();
        assert_eq!(oh.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn onehot_all_zero_label() {
        let oh = onehot(&LabelVolume::zeros(3, 2), 3).unwrap();
        assert!(oh.channel(0).iter().all(|&v| v == 1.0));
        assert!(oh.channel(1).iter().all(|&v| v == 0.0));
        assert!(oh.channel(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn onehot_rejects_out_of_range() {
        assert!(matches!(onehot(&lv(1, 2, &[0, 3]), 3), Err(Error::Domain(_))));
    }

    #[test]
    fn single_inversion() {
        let bg = make_background_single(&lv(2, 2, &[1, 0, 0, 1])).unwrap();
        assert_eq!(bg.data.data(), &[0.0, 1.0, 1.0, 0.0]);
        let bg = make_background_single(&lv(1, 3, &[1, 1, 1])).unwrap();
        assert!(bg.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_rejects_non_binary() {
        assert!(make_background_single(&lv(1, 2, &[0, 2])).is_err());
    }

    #[test]
    fn multi_cell_value_two_of_four() {
        let bg = make_background_multi(&lv(1, 1, &[2]), 4).unwrap();
        assert_eq!(bg.data.data(), &[1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn targets_have_expected_channels() {
        let l = lv(1, 3, &[0, 1, 1]);
        assert_eq!(foreground_target(&l, 2).unwrap().channels(), 1);
        assert_eq!(background_target(&l, 2).unwrap().data(), &[1.0, 0.0, 0.0]);
        assert_eq!(foreground_target(&l, 4).unwrap().channels(), 4);
        assert_eq!(prediction_channels(4), 4);
    }

    fn random_label(max: u8) -> impl Strategy<Value = LabelVolume> {
        (1usize..8, 1usize..8).prop_flat_map(move |(h, w)| {
            proptest::collection::vec(0..=max, h * w)
                .prop_map(move |d| LabelVolume::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn single_is_an_involution(label in random_label(1)) {
            let bg = make_background_single(&label).unwrap();
            let back: Vec<u8> = bg.data.data().iter().map(|&v| v as u8).collect();
            let again = make_background_single(&LabelVolume::new(label.height(), label.width(), back).unwrap()).unwrap();
            let orig: Vec<f64> = label.data().iter().map(|&v| v as f64).collect();
            prop_assert_eq!(again.data.data(), &orig[..]);
        }

        #[test]
        fn multi_channel_sums(label in random_label(3)) {
            let bg = make_background_multi(&label, 4).unwrap();
            let oh = onehot(&label, 4).unwrap();
            let plane = label.height() * label.width();
            for i in 0..plane {
                let s: f64 = (0..4).map(|c| bg.data.data()[c * plane + i]).sum();
                prop_assert_eq!(s, 3.0);
                for c in 0..4 {
                    prop_assert_eq!(bg.data.data()[c * plane + i] + oh.data()[c * plane + i], 1.0);
                }
            }
        }

        #[test]
        fn two_class_multi_matches_single(label in random_label(1)) {
            let multi = make_background_multi(&label, 2).unwrap();
            let single = make_background_single(&label).unwrap();
            prop_assert_eq!(multi.data.channel(1), single.data.data());
        }
    }
}
