//! Chronological splitting.

use super::{DataError, SpatioTemporalDataset};

/// Cut a dataset into contiguous train/validation/test segments at
/// `floor(T * cumulative_fraction)`, with no shuffling. `min_len` is the
/// smallest usable segment (lookback + horizon); shorter splits are errors.
pub fn split_chronological(
    ds: &SpatioTemporalDataset,
    fractions: (f64, f64, f64),
    min_len: usize,
) -> Result<
    (
        SpatioTemporalDataset,
        SpatioTemporalDataset,
        SpatioTemporalDataset,
    ),
    DataError,
> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(vec![a, b, c]));
    }
    let t = ds.num_steps();
    // tiny epsilon so representation error (0.7 + 0.2 = 0.8999..) does not
    // shift a boundary that is exact in real arithmetic
    let boundary = |cum: f64| (t as f64 * cum + 1e-9).floor() as usize;
    let first = boundary(a);
    let second = boundary(a + b);
    for len in [first, second - first, t - second] {
        if len < min_len.max(2) {
            return Err(DataError::SegmentTooShort {
                len,
                need: min_len.max(2),
            });
        }
    }
    Ok((
        ds.slice_steps(0, first)?,
        ds.slice_steps(first, second)?,
        ds.slice_steps(second, t)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(t: usize) -> SpatioTemporalDataset {
        SpatioTemporalDataset::new(
            (0..t).map(|v| v as f64).collect(),
            (0..t as i64).map(|i| i * 3600).collect(),
            vec!["n".into()],
            1,
        )
        .unwrap()
    }

    #[test]
    fn hundred_steps_split_seventy_twenty_ten() {
        let (train, val, test) = split_chronological(&ds(100), (0.7, 0.2, 0.1), 2).unwrap();
        assert_eq!(train.num_steps(), 70);
        assert_eq!(val.num_steps(), 20);
        assert_eq!(test.num_steps(), 10);
    }

    #[test]
    fn too_short_for_lookback_is_an_error() {
        // T=10, p+Q=13: the train segment cannot hold a single window
        let err = split_chronological(&ds(10), (0.7, 0.2, 0.1), 13).unwrap_err();
        assert!(matches!(err, DataError::SegmentTooShort { need: 13, .. }));
    }

    #[test]
    fn concatenated_splits_reproduce_the_dataset() {
        let original = ds(50);
        let (train, val, test) = split_chronological(&original, (0.7, 0.2, 0.1), 2).unwrap();
        let mut values = train.values().to_vec();
        values.extend_from_slice(val.values());
        values.extend_from_slice(test.values());
        assert_eq!(values, original.values());
        let mut stamps = train.timestamps().to_vec();
        stamps.extend_from_slice(val.timestamps());
        stamps.extend_from_slice(test.timestamps());
        assert_eq!(stamps, original.timestamps());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(matches!(
            split_chronological(&ds(50), (0.5, 0.2, 0.2), 2),
            Err(DataError::BadFractions(_))
        ));
    }
}
