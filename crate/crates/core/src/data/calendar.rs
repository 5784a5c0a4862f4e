//! Calendar feature channels.

use chrono::{DateTime, Datelike, Timelike};

use super::SpatioTemporalDataset;

/// Append two channels encoding the timeslot of the day and the day of the
/// week: seconds-into-day / 86400 and ISO weekday index / 7 (Monday = 0).
/// Both are identical across nodes at a fixed step.
pub fn add_calendar_features(ds: &SpatioTemporalDataset) -> SpatioTemporalDataset {
    let d = ds.num_channels();
    let new_d = d + 2;
    let mut values = Vec::with_capacity(ds.num_steps() * ds.num_nodes() * new_d);
    for step in 0..ds.num_steps() {
        let (time_frac, weekday_frac) = calendar_fractions(ds.timestamps()[step]);
        for node in 0..ds.num_nodes() {
            for channel in 0..d {
                values.push(ds.get(step, node, channel));
            }
            values.push(time_frac);
            values.push(weekday_frac);
        }
    }
    ds.with_values(values, new_d)
}

fn calendar_fractions(epoch_seconds: i64) -> (f64, f64) {
    let dt = DateTime::from_timestamp(epoch_seconds, 0)
        .expect("dataset timestamps are valid epochs")
        .naive_utc();
    let seconds_into_day = dt.time().num_seconds_from_midnight() as f64;
    let weekday = dt.weekday().num_days_from_monday() as f64;
    (seconds_into_day / 86_400.0, weekday / 7.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step_ds(t0: i64) -> SpatioTemporalDataset {
        SpatioTemporalDataset::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![t0, t0 + 3600],
            vec!["a".into(), "b".into()],
            1,
        )
        .unwrap()
    }

    #[test]
    fn midnight_monday_is_the_origin() {
        // 2024-01-01 was a Monday
        let ds = add_calendar_features(&two_step_ds(1_704_067_200));
        assert_eq!(ds.num_channels(), 3);
        assert_eq!(ds.get(0, 0, 1), 0.0);
        assert_eq!(ds.get(0, 0, 2), 0.0);
    }

    #[test]
    fn saturday_evening_fractions() {
        // 2024-01-06T18:00:00 UTC: Saturday, 18:00
        let saturday_18 = 1_704_564_000;
        let ds = add_calendar_features(&two_step_ds(saturday_18));
        assert_eq!(ds.get(0, 0, 1), 0.75);
        assert!((ds.get(0, 0, 2) - 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn calendar_channels_constant_across_nodes() {
        let ds = add_calendar_features(&two_step_ds(1_704_067_200 + 5 * 3600));
        for step in 0..ds.num_steps() {
            assert_eq!(ds.get(step, 0, 1), ds.get(step, 1, 1));
            assert_eq!(ds.get(step, 0, 2), ds.get(step, 1, 2));
        }
        // original channel preserved
        assert_eq!(ds.get(0, 0, 0), 1.0);
        assert_eq!(ds.get(1, 1, 0), 4.0);
    }
}
