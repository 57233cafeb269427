mod common;

use common::config_with_noise;
use extcal::io::cloud::{read_cloud, write_cloud};
use extcal::io::dataset::{read_dataset, read_ground_truth, write_dataset};
use extcal::io::detections::{parse_detections, read_detections, write_detections};
use extcal::io::report::{read_report, write_report};
use extcal::io::IoError;
use extcal::pipeline;
use extcal::sim::ground_truth;

#[test]
fn simulated_dataset_round_trips() {
    let mut config = config_with_noise(0.005, 0.5);
    config.simulation.sequences = 3;
    let (scene, data) = pipeline::simulate(&config, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let gt = ground_truth(&scene);
    write_dataset(dir.path(), &data, Some(&gt)).unwrap();
    let back = read_dataset(dir.path(), &config).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.clouds, b.clouds);
        assert_eq!(a.corners, b.corners);
        assert_eq!(a.hints, b.hints);
    }
    assert_eq!(read_ground_truth(dir.path()).unwrap(), gt);
}

#[test]
fn csv_and_ply_agree() {
    let config = config_with_noise(0.005, 0.0);
    let (_, data) = pipeline::simulate(&config, 9).unwrap();
    let cloud = data[0].clouds.values().next().unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["c.ply", "c.csv"] {
        let path = dir.path().join(name);
        write_cloud(&path, cloud).unwrap();
        assert_eq!(&read_cloud(&path).unwrap(), cloud, "{name}");
    }
    assert!(matches!(read_cloud(&dir.path().join("c.xyz")), Err(IoError::UnsupportedFormat(_))));
}

#[test]
fn detections_and_report_round_trip() {
    let mut config = config_with_noise(0.005, 0.5);
    config.simulation.sequences = 6;
    let (_, data) = pipeline::simulate(&config, 10).unwrap();
    let (records, _) = pipeline::detect(&config, &data);
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("det.json");
    write_detections(&det, &records).unwrap();
    assert_eq!(read_detections(&det, true).unwrap(), records);

    let text = std::fs::read_to_string(&det).unwrap().replacen("\"sequence\"", "\"extra\": 1, \"sequence\"", 1);
    assert!(parse_detections(&text, false).is_ok());
    assert!(matches!(parse_detections(&text, true), Err(IoError::UnknownField(_))));

    let cal = pipeline::calibrate(&config, &records, &config.reference_id(), true).unwrap();
    let report = dir.path().join("out/report.json");
    write_report(&cal.report, &report).unwrap();
    assert_eq!(read_report(&report).unwrap(), cal.report);
    let txt = std::fs::read_to_string(report.with_extension("txt")).unwrap();
    assert!(txt.contains("S1"));
}
