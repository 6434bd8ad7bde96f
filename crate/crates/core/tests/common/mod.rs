#![allow(dead_code)]

use std::f64::consts::PI;

use filterts::data::Dataset;

/// Two variables, each a noiseless mix of period-24 and period-12 tones.
pub fn two_tone_dataset(len: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            let t = t as f64;
            vec![
                (2.0 * PI * t / 24.0).sin() + 0.5 * (2.0 * PI * t / 12.0 + 0.3).sin(),
                0.8 * (2.0 * PI * t / 24.0).cos() + (2.0 * PI * t / 12.0).sin(),
            ]
        })
        .collect();
    Dataset::from_rows("two-tone", vec!["a".into(), "b".into()], &rows).unwrap()
}
