//! Pipe-delimited user-plane and engineering tables.

use chrono::{DateTime, NaiveDateTime};

use crate::domain::{CellConfig, DriveTrace, Neighbor, UserPlaneSample, MAX_NEIGHBORS};
use crate::error::{RcaError, Result};

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const MISSING: &str = "-";

pub fn user_plane_header() -> String {
    let mut cols: Vec<String> = [
        "Timestamp",
        "Longitude",
        "Latitude",
        "GPS Speed (km/h)",
        "5G KPI PCell RF Serving PCI",
        "5G KPI PCell RF Serving SS-RSRP [dBm]",
        "5G KPI PCell RF Serving SS-SINR [dB]",
        "5G KPI PCell Layer2 MAC DL Throughput [Mbps]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 1..=MAX_NEIGHBORS {
        cols.push(format!("Measurement PCell Neighbor Cell Top Set(Cell Level) Top {k} PCI"));
    }
    for k in 1..=MAX_NEIGHBORS {
        cols.push(format!("Measurement PCell Neighbor Cell Top Set(Cell Level) Top {k} Filtered Tx BRSRP [dBm]"));
    }
    cols.push("5G KPI PCell Layer1 DL RB Num (Including 0)".into());
    cols.join("|")
}

pub const ENGINEERING_HEADER: &str = "gNodeB ID|Cell ID|Longitude|Latitude|Mechanical Azimuth|Mechanical Downtilt|Digital Tilt|Digital Azimuth|Beam Scenario|Height|PCI|TxRx Mode|Max Transmit Power|Antenna Model";

/// Shortest round-trip decimal, always carrying a fractional part.
pub fn fmt_real(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('.') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Shortest round-trip decimal; integral values print without a fraction.
pub fn fmt_plain(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_timestamp(ts: i64) -> Result<String> {
    DateTime::from_timestamp(ts, 0)
        .map(|t| t.naive_utc().format(TIME_FORMAT).to_string())
        .ok_or_else(|| RcaError::Validation(format!("timestamp {ts} out of range")))
}

pub fn render_user_plane(trace: &DriveTrace) -> Result<String> {
    let mut lines = vec![user_plane_header()];
    for s in &trace.samples {
        let mut cols = vec![
            fmt_timestamp(s.timestamp)?,
            fmt_plain(s.longitude),
            fmt_plain(s.latitude),
            fmt_plain(s.gps_speed),
            s.serving_pci.to_string(),
            fmt_plain(s.ss_rsrp),
            fmt_plain(s.ss_sinr),
            fmt_real(s.mac_dl_throughput),
        ];
        for k in 0..MAX_NEIGHBORS {
            cols.push(s.neighbors.get(k).map_or(MISSING.to_string(), |n| n.pci.to_string()));
        }
        for k in 0..MAX_NEIGHBORS {
            cols.push(s.neighbors.get(k).map_or(MISSING.to_string(), |n| fmt_plain(n.brsrp)));
        }
        cols.push(fmt_real(s.dl_rb_num));
        lines.push(cols.join("|"));
    }
    Ok(lines.join("\n"))
}

pub fn render_engineering(cells: &[CellConfig]) -> String {
    let mut lines = vec![ENGINEERING_HEADER.to_string()];
    for c in cells {
        lines.push(
            [
                c.gnodeb_id.clone(),
                c.cell_id.clone(),
                fmt_plain(c.longitude),
                fmt_plain(c.latitude),
                fmt_plain(c.mech_azimuth),
                fmt_plain(c.mech_downtilt),
                c.digital_tilt_raw.to_string(),
                fmt_plain(c.digital_azimuth),
                c.beam_scenario.to_string(),
                fmt_real(c.height),
                c.pci.to_string(),
                c.txrx_mode.clone(),
                fmt_real(c.max_tx_power),
                c.antenna_model.clone(),
            ]
            .join("|"),
        );
    }
    lines.join("\n")
}

fn field<T: std::str::FromStr>(cols: &[&str], k: usize, what: &str, line: usize) -> Result<T> {
    cols[k]
        .parse()
        .map_err(|_| RcaError::Parse { line, message: format!("bad {what} {:?}", cols[k]) })
}

/// Parses table rows; `first_line` is the 1-based line number of the header.
pub fn parse_user_plane(lines: &[&str], first_line: usize) -> Result<DriveTrace> {
    let header = user_plane_header();
    if lines.first() != Some(&header.as_str()) {
        return Err(RcaError::Parse { line: first_line, message: "unexpected user plane header".into() });
    }
    let width = 9 + 2 * MAX_NEIGHBORS;
    let mut samples = Vec::new();
    for (k, row) in lines.iter().enumerate().skip(1) {
        let line = first_line + k;
        let cols: Vec<&str> = row.split('|').collect();
        if cols.len() != width {
            return Err(RcaError::Parse { line, message: format!("expected {width} columns, found {}", cols.len()) });
        }
        let ts = NaiveDateTime::parse_from_str(cols[0], TIME_FORMAT)
            .map_err(|e| RcaError::Parse { line, message: format!("bad timestamp: {e}") })?
            .and_utc()
            .timestamp();
        let mut neighbors = Vec::new();
        for n in 0..MAX_NEIGHBORS {
            let (p, b) = (cols[8 + n], cols[8 + MAX_NEIGHBORS + n]);
            match (p == MISSING, b == MISSING) {
                (true, true) => {}
                (false, false) => neighbors.push(Neighbor {
                    pci: field(&cols, 8 + n, "neighbor PCI", line)?,
                    brsrp: field(&cols, 8 + MAX_NEIGHBORS + n, "neighbor BRSRP", line)?,
                }),
                _ => return Err(RcaError::Parse { line, message: format!("neighbor {} half missing", n + 1) }),
            }
        }
        samples.push(UserPlaneSample {
            timestamp: ts,
            longitude: field(&cols, 1, "longitude", line)?,
            latitude: field(&cols, 2, "latitude", line)?,
            gps_speed: field(&cols, 3, "speed", line)?,
            serving_pci: field(&cols, 4, "serving PCI", line)?,
            ss_rsrp: field(&cols, 5, "RSRP", line)?,
            ss_sinr: field(&cols, 6, "SINR", line)?,
            mac_dl_throughput: field(&cols, 7, "throughput", line)?,
            neighbors,
            dl_rb_num: field(&cols, width - 1, "RB count", line)?,
        });
    }
    Ok(DriveTrace { samples })
}

pub fn parse_engineering(lines: &[&str], first_line: usize) -> Result<Vec<CellConfig>> {
    if lines.first() != Some(&ENGINEERING_HEADER) {
        return Err(RcaError::Parse { line: first_line, message: "unexpected engineering header".into() });
    }
    let mut cells = Vec::new();
    for (k, row) in lines.iter().enumerate().skip(1) {
        let line = first_line + k;
        let cols: Vec<&str> = row.split('|').collect();
        if cols.len() != 14 {
            return Err(RcaError::Parse { line, message: format!("expected 14 columns, found {}", cols.len()) });
        }
        cells.push(CellConfig {
            gnodeb_id: cols[0].to_string(),
            cell_id: cols[1].to_string(),
            longitude: field(&cols, 2, "longitude", line)?,
            latitude: field(&cols, 3, "latitude", line)?,
            mech_azimuth: field(&cols, 4, "mechanical azimuth", line)?,
            mech_downtilt: field(&cols, 5, "mechanical downtilt", line)?,
            digital_tilt_raw: field(&cols, 6, "digital tilt", line)?,
            digital_azimuth: field(&cols, 7, "digital azimuth", line)?,
            beam_scenario: field(&cols, 8, "beam scenario", line)?,
            height: field(&cols, 9, "height", line)?,
            pci: field(&cols, 10, "PCI", line)?,
            txrx_mode: cols[11].to_string(),
            max_tx_power: field(&cols, 12, "max transmit power", line)?,
            antenna_model: cols[13].to_string(),
        });
    }
    Ok(cells)
}
