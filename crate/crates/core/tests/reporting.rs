//! Metrics CSV, plots, tables, checkpoint records and config files.

use cntlab::checkpoint::{decode_records, encode_records, Record};
use cntlab::config::{parse_config, parse_config_text, ExperimentConfig, TaskKind};
use cntlab::report::{comparison_table, heatmap_svg, mean_std_cell, metrics_csv, read_metrics, write_metrics, MetricRow};
use proptest::prelude::*;

fn row_strategy() -> impl Strategy<Value = MetricRow> {
    (
        0usize..500,
        prop::sample::select(vec!["train", "test"]),
        prop::sample::select(vec!["all", "0", "1"]),
        prop::sample::select(vec!["loss", "accuracy", "bucket_accuracy"]),
        prop::num::f64::NORMAL | prop::num::f64::ZERO,
        prop::sample::select(vec!["", "0.0-0.1", "0.9-1.0"]),
    )
        .prop_map(|(e, s, h, m, v, b)| MetricRow::new(e, s, h, m, v).bucketed(b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_csv_round_trips_exactly(rows in prop::collection::vec(row_strategy(), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &rows).unwrap();
        let back = read_metrics(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(metrics_csv(&back).unwrap(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn checkpoint_records_round_trip(
        records in prop::collection::vec(
            ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 0..3), any::<u64>()),
            0..6,
        )
    ) {
        let records: Vec<Record> = records
            .into_iter()
            .map(|(name, shape, bits)| {
                let n: usize = shape.iter().product();
                let values = (0..n as u64).map(|k| f64::from_bits(bits.wrapping_add(k) >> 2)).collect();
                Record { name, shape, values }
            })
            .collect();
        let (bytes, entries) = encode_records(&records);
        prop_assert_eq!(entries.len(), records.len());
        let back = decode_records(&bytes).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.shape, &b.shape);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn effective_config_survives_its_own_file(
        seed in 0u64..1000,
        epochs in 1usize..500,
        lr in 1e-4f64..1.0,
        shapes in any::<bool>(),
    ) {
        let mut cfg = ExperimentConfig::for_task(if shapes { TaskKind::Shapes } else { TaskKind::Blobs });
        cfg.seed = seed;
        cfg.epochs = epochs;
        cfg.optim.learning_rate = lr;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, cfg.to_file_string()).unwrap();
        prop_assert_eq!(parse_config(Some(&path), &[], None).unwrap(), cfg);
    }
}

#[test]
fn csv_header_and_bucket_column() {
    let rows = vec![
        MetricRow::new(0, "train", "all", "loss", 1.5),
        MetricRow::new(0, "train", "all", "bucket_accuracy", 0.25).bucketed("0.1-0.2"),
    ];
    let text = String::from_utf8(metrics_csv(&rows).unwrap()).unwrap();
    assert_eq!(
        text,
        "epoch,split,head,metric,value,bucket\n0,train,all,loss,1.5,\n0,train,all,bucket_accuracy,0.25,0.1-0.2\n"
    );
}

#[test]
fn foreign_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("other.csv");
    std::fs::write(&path, "epoch,loss\n1,2\n").unwrap();
    assert!(read_metrics(&path).is_err());
    assert!(read_metrics(&dir.path().join("missing.csv")).is_err());
}

#[test]
fn table_matches_the_published_layout() {
    let rows = vec![
        ("blobs".to_string(), vec![vec![0.5, 0.7, 0.9], vec![0.8, 0.8, 0.8], vec![0.9]]),
        ("shapes".to_string(), vec![vec![0.75, 0.85], vec![], vec![1.0, 1.0]]),
    ];
    let t = comparison_table(&["baseline", "only-noise", "cnt"], &rows);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines[0], "| | baseline | only-noise | cnt |");
    assert_eq!(lines[2], "| blobs | 70.00 (20.00) | 80.00 (0.00) | 90.00 (0.00) |");
    assert!(lines[3].starts_with("| shapes | 80.00 (7.07) |"));
    assert_eq!(mean_std_cell(&[0.2, 0.4]), "30.00 (14.14)");
}

#[test]
fn heatmap_has_a_cell_per_entry_and_greys_out_gaps() {
    let labels: Vec<String> = (0..3).map(|b| format!("b{b}")).collect();
    let values = vec![vec![Some(0.1), None, Some(0.9)]; 3];
    let svg = heatmap_svg("buckets", &labels, &[0, 1, 2], &values);
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"cell\"").count(), 9);
    assert_eq!(svg.matches("fill=\"#dddddd\"").count(), 3);
}

#[test]
fn config_comments_and_blank_lines() {
    let kv = parse_config_text("# header\n\nepochs = 3   # trailing\n  seed=4\n").unwrap();
    assert_eq!(kv, vec![("epochs".to_string(), "3".to_string()), ("seed".to_string(), "4".to_string())]);
}
