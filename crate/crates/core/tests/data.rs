use std::io::Write;

use filterts::data::{load_csv, split_and_standardize, window_count, window_iter, Dataset, SplitConfig, SplitView, Standardizer};
use filterts::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn csv_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn loads_small_file() {
    let f = csv_file("date,a,b\n2020-01-01,1.5,2\n2020-01-02,-3,4e1\n2020-01-03,0,7\n");
    let ds = load_csv(f.path(), "toy").unwrap();
    assert_eq!(ds.values.shape(), &[2, 3]);
    assert_eq!(ds.columns, vec!["a", "b"]);
    assert_eq!(ds.series(0), &[1.5, -3.0, 0.0]);
    assert_eq!(ds.series(1), &[2.0, 40.0, 7.0]);
    assert_eq!(ds.timestamps[2], "2020-01-03");
}

#[test]
fn blank_cell_names_its_location() {
    let f = csv_file("date,a,b\nt0,1,2\nt1,3,\n");
    match load_csv(f.path(), "toy").unwrap_err() {
        Error::Parse { row, column, message } => {
            assert_eq!((row, column), (3, 3));
            assert!(message.contains('b'), "{message}");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn non_numeric_and_ragged_rows() {
    let f = csv_file("date,a\nt0,x1\n");
    assert!(matches!(load_csv(f.path(), "toy"), Err(Error::Parse { row: 2, column: 2, .. })));
    let f = csv_file("date,a,b\nt0,1,2\nt1,3\n");
    assert!(matches!(load_csv(f.path(), "toy"), Err(Error::Parse { row: 3, .. })));
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_csv(std::path::Path::new("/nonexistent/x.csv"), "x"), Err(Error::Io { .. })));
}

fn drifting(len: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..len).map(|t| vec![t as f64 * 0.01 + (t as f64).sin(), 5.0 - t as f64 * 0.02]).collect();
    Dataset::from_rows("drift", vec!["a".into(), "b".into()], &rows).unwrap()
}

#[test]
fn no_leakage_into_val_and_test() {
    let s = split_and_standardize(&drifting(1000), &SplitConfig::default(), 24, 12).unwrap();
    assert_eq!(s.borders, [600, 800, 1000]);
    let t = 1000;
    for i in 0..2 {
        let test = &s.values.re()[i * t + 800..(i + 1) * t];
        let m = test.iter().sum::<f64>() / test.len() as f64;
        assert!(m.abs() > 0.5, "variable {i} test mean {m}");
    }
    assert_eq!(s.val, SplitView { start: 576, end: 800 });
    assert_eq!(s.test, SplitView { start: 776, end: 1000 });
}

#[test]
fn explicit_borders() {
    let cfg = SplitConfig { borders: Some([500, 700, 900]), ..SplitConfig::default() };
    let s = split_and_standardize(&drifting(1000), &cfg, 24, 12).unwrap();
    assert_eq!(s.test.end, 900);
    let bad = SplitConfig { borders: Some([700, 500, 900]), ..SplitConfig::default() };
    assert!(split_and_standardize(&drifting(1000), &bad, 24, 12).is_err());
}

#[test]
fn standardizer_round_trip_and_sidecar() {
    let ds = drifting(300);
    let st = Standardizer::fit(&ds.values, 200);
    let back = st.invert(&st.apply(&ds.values).unwrap()).unwrap();
    assert!(back.max_abs_diff(&ds.values) < 1e-12);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("stats.json");
    st.save(&p).unwrap();
    assert_eq!(Standardizer::load(&p).unwrap(), st);
}

#[test]
fn single_window_split() {
    let ds = drifting(50);
    let view = SplitView { start: 0, end: 36 };
    let batches: Vec<_> = window_iter::<ChaCha8Rng>(&ds.values, view, 24, 12, 32, None).collect();
    assert_eq!(batches.len(), 1);
    assert_eq!(batches[0].origins, vec![0]);
}

#[test]
fn shuffled_order_is_reproducible() {
    let ds = drifting(400);
    let view = SplitView { start: 0, end: 400 };
    let order = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        window_iter(&ds.values, view, 24, 12, 16, Some(&mut rng)).flat_map(|b| b.origins).collect::<Vec<_>>()
    };
    assert_eq!(order(5), order(5));
    assert_ne!(order(5), order(6));
    let mut sorted = order(5);
    sorted.sort_unstable();
    assert_eq!(sorted, (0..window_count(400, 24, 12)).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn windows_respect_boundaries(start in 0usize..50, len in 20usize..120, l in 1usize..10, f in 1usize..10, batch in 1usize..40, seed in 0u64..100) {
        let ds = drifting(200);
        let view = SplitView { start, end: start + len };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = Vec::new();
        for b in window_iter(&ds.values, view, l, f, batch, Some(&mut rng)) {
            prop_assert!(b.size() <= batch);
            for &o in &b.origins {
                prop_assert!(o >= view.start && o + l + f <= view.end);
            }
            seen.extend(b.origins);
        }
        prop_assert_eq!(seen.len(), len + 1 - l - f);
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), len + 1 - l - f);
    }
}
