//! Worked example: a short published drive-test excerpt with its engineering
//! table, checked against the symptom detector and the rules it rules out.

use chrono::NaiveDateTime;
use rca_core::domain::{
    effective_digital_tilt, geo_distance, total_downtilt, vertical_beamwidth, BeamScenario, DriveTrace, GeoPoint,
    Neighbor, UserPlaneSample,
};
use rca_core::oracle::{detect_symptom, evaluate_rules_on};
use rca_core::promptkit::tables::{parse_engineering, render_engineering};
use rca_core::domain::CauseId;

const ENGINEERING: &str = "\
gNodeB ID|Cell ID|Longitude|Latitude|Mechanical Azimuth|Mechanical Downtilt|Digital Tilt|Digital Azimuth|Beam Scenario|Height|PCI|TxRx Mode|Max Transmit Power|Antenna Model
0000258|1|128.139529|32.623035|45|3|7|5|SCENARIO_7|9.0|737|32T32R|34.9|NR AAU 1
0000258|26|128.139529|32.623035|145|6|255|0|DEFAULT|9.0|291|32T32R|34.9|NR AAU 1
0000258|15|128.139529|32.623042|100|4|8|0|SCENARIO_1|15.0|919|32T32R|34.9|NR AAU 1
0000258|5|128.14087|32.621659|310|5|255|0|DEFAULT|14.7|430|32T32R|34.9|NR AAU 1
0000258|24|128.140904|32.621691|55|0|6|0|DEFAULT|14.7|420|32T32R|34.9|NR AAU 1
0000570|16|128.144983|32.619395|20|10|255|0|DEFAULT|90.0|36|64T64R|34.9|NR AAU 2";

// timestamp, lon, lat, speed, serving pci, rsrp, sinr, throughput, top-1 pci, rb
type Row = (&'static str, f64, f64, f64, u32, f64, f64, f64, u32, f64);
const USER_PLANE: [Row; 10] = [
    ("2025-05-07 10:25:34", 128.139682, 32.623035, 34.0, 919, -80.48, 11.59, 600.0, 737, 161.0),
    ("2025-05-07 10:25:35", 128.139717, 32.622993, 28.0, 919, -78.15, 8.5, 0.14, 737, 160.0),
    ("2025-05-07 10:25:36", 128.139745, 32.622954, 1.0, 919, -82.19, 8.41, 13.23, 737, 186.0),
    ("2025-05-07 10:25:37", 128.139781, 32.622904, 38.0, 737, -88.07, 11.04, 346.52, 919, 180.0),
    ("2025-05-07 10:25:38", 128.139809, 32.622862, 32.0, 737, -78.39, 17.76, 515.45, 919, 173.2),
    ("2025-05-07 10:25:39", 128.139837, 32.622823, 0.0, 737, -77.94, 15.01, 1056.42, 919, 168.69),
    ("2025-05-07 10:25:40", 128.139872, 32.622781, 6.0, 737, -78.33, 14.93, 1085.04, 919, 165.05),
    ("2025-05-07 10:25:41", 128.1399, 32.622743, 22.0, 737, -83.87, 10.86, 1102.15, 919, 161.93),
    ("2025-05-07 10:25:42", 128.139929, 32.6227, 29.0, 737, -81.79, 11.52, 1091.58, 919, 171.97),
    ("2025-05-07 10:25:43", 128.139964, 32.622662, 7.0, 737, -84.77, 7.05, 1010.69, 919, 177.81),
];

fn trace() -> DriveTrace {
    DriveTrace {
        samples: USER_PLANE
            .iter()
            .map(|&(ts, lon, lat, speed, pci, rsrp, sinr, thr, nb, rb)| UserPlaneSample {
                timestamp: NaiveDateTime::parse_from_str(ts, "%Y-%m-%d %H:%M:%S").unwrap().and_utc().timestamp(),
                longitude: lon,
                latitude: lat,
                gps_speed: speed,
                serving_pci: pci,
                ss_rsrp: rsrp,
                ss_sinr: sinr,
                mac_dl_throughput: thr,
                // The listing elides neighbor power; any filler works for the
                // rules checked here, none of which read it.
                neighbors: vec![Neighbor { pci: nb, brsrp: rsrp - 3.0 }],
                dl_rb_num: rb,
            })
            .collect(),
    }
}

#[test]
fn engineering_rows_round_trip() {
    let lines: Vec<&str> = ENGINEERING.lines().collect();
    let cells = parse_engineering(&lines, 1).unwrap();
    assert_eq!(cells.len(), 6);
    assert_eq!(render_engineering(&cells), ENGINEERING);
}

#[test]
fn tilt_and_beam_readings() {
    let lines: Vec<&str> = ENGINEERING.lines().collect();
    let cells = parse_engineering(&lines, 1).unwrap();
    assert_eq!(total_downtilt(&cells[0]).unwrap(), 10.0);
    assert_eq!(effective_digital_tilt(cells[1].digital_tilt_raw).unwrap(), 6.0);
    assert_eq!(effective_digital_tilt(cells[2].digital_tilt_raw).unwrap(), 8.0);
    assert_eq!(cells[0].beam_scenario, BeamScenario::Scenario(7));
    assert_eq!(vertical_beamwidth(cells[0].beam_scenario), 12.0);
    assert_eq!(vertical_beamwidth(cells[2].beam_scenario), 6.0);
    assert_eq!(vertical_beamwidth(cells[1].beam_scenario), 6.0);
}

#[test]
fn site_to_first_sample_distance() {
    let d = geo_distance(GeoPoint::new(128.139529, 32.623035), GeoPoint::new(128.139682, 32.623035));
    assert!((d - 14.3).abs() < 0.2, "{d}");
}

#[test]
fn symptom_window() {
    let s = detect_symptom(&trace()).unwrap().unwrap();
    // 600.0 exactly is not below the threshold.
    assert_eq!(s.onset_index, 1);
    assert_eq!(s.affected_indices, vec![1, 2, 3, 4]);
}

#[test]
fn rules_ruled_out() {
    let lines: Vec<&str> = ENGINEERING.lines().collect();
    let cells = parse_engineering(&lines, 1).unwrap();
    let t = trace();
    let s = detect_symptom(&t).unwrap().unwrap();
    let ev = evaluate_rules_on(&cells, &vec![0; cells.len()], &t, &s).unwrap();
    let get = |c: CauseId| ev.iter().find(|e| e.cause == c).unwrap();
    let speed = get(CauseId::SpeedGt40);
    assert!(!speed.triggered);
    assert_eq!(speed.facts[0].value, 38.0);
    let rb = get(CauseId::InsufficientRb);
    assert!(!rb.triggered);
    assert!(rb.facts[0].value >= 160.0);
    assert!(!get(CauseId::PciMod30Conflict).triggered);
    assert_ne!(919 % 30, 737 % 30);
    let distance = get(CauseId::OvershootGt1km);
    assert!(!distance.triggered && distance.facts[0].value < 100.0);
}
