//! Shared value types for drive-test scenarios and the radio geometry helpers
//! used by both the simulator and the diagnostic oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};

/// Mean Earth radius used by the haversine distance, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Digital tilt value that stands for the default electrical downtilt.
pub const DIGITAL_TILT_SENTINEL: i32 = 255;

/// Downtilt in degrees represented by [`DIGITAL_TILT_SENTINEL`].
pub const DEFAULT_DIGITAL_TILT_DEG: f64 = 6.0;

/// Throughput below which a sample is symptomatic, in Mbps.
pub const THROUGHPUT_THRESHOLD_MBPS: f64 = 600.0;

/// Maximum number of neighbors reported per sample.
pub const MAX_NEIGHBORS: usize = 5;

/// Beamforming configuration of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeamScenario {
    Default,
    /// `SCENARIO_<n>` with `n >= 1`.
    Scenario(u8),
}

impl fmt::Display for BeamScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BeamScenario::Default => f.write_str("DEFAULT"),
            BeamScenario::Scenario(n) => write!(f, "SCENARIO_{n}"),
        }
    }
}

impl FromStr for BeamScenario {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("DEFAULT") {
            return Ok(BeamScenario::Default);
        }
        s.strip_prefix("SCENARIO_")
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|n| *n >= 1)
            .map(BeamScenario::Scenario)
            .ok_or_else(|| RcaError::Validation(format!("unknown beam scenario {s:?}")))
    }
}

impl Serialize for BeamScenario {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BeamScenario {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Engineering parameters of one cell, one row of the engineering table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub gnodeb_id: String,
    pub cell_id: String,
    pub longitude: f64,
    pub latitude: f64,
    pub mech_azimuth: f64,
    pub mech_downtilt: f64,
    /// Raw digital tilt as configured; 255 is the default-tilt sentinel.
    pub digital_tilt_raw: i32,
    pub digital_azimuth: f64,
    pub beam_scenario: BeamScenario,
    pub height: f64,
    pub pci: u32,
    pub txrx_mode: String,
    pub max_tx_power: f64,
    pub antenna_model: String,
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(RcaError::Validation(format!("cell {} (PCI {}): {what}", self.cell_id, self.pci)));
        if !(self.height > 0.0) {
            return bad("height must be positive");
        }
        if !(0.0..=90.0).contains(&self.mech_downtilt) {
            return bad("mechanical downtilt outside [0, 90]");
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return bad("latitude outside [-90, 90]");
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return bad("longitude outside [-180, 180]");
        }
        if !(0.0..360.0).contains(&self.mech_azimuth) {
            return bad("mechanical azimuth outside [0, 360)");
        }
        effective_digital_tilt(self.digital_tilt_raw)?;
        Ok(())
    }

    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.longitude, self.latitude)
    }

    /// Boresight azimuth combining mechanical and digital steering.
    pub fn boresight_azimuth(&self) -> f64 {
        (self.mech_azimuth + self.digital_azimuth).rem_euclid(360.0)
    }
}

/// A longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub longitude: f64,
    pub latitude: f64,
}

impl GeoPoint {
    pub fn new(longitude: f64, latitude: f64) -> Self {
        Self { longitude, latitude }
    }
}

/// One point of the drive route, sampled once per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub longitude: f64,
    pub latitude: f64,
    pub speed_kmh: f64,
    /// Unix seconds.
    pub timestamp: i64,
}

impl RoutePoint {
    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.longitude, self.latitude)
    }
}

/// A3 handover parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoverParams {
    pub hysteresis_db: f64,
    /// Time to trigger in seconds (one sample per second).
    pub time_to_trigger_s: u32,
}

/// Full description of a drive-test scenario: the network, the route and the
/// injected fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub cells: Vec<CellConfig>,
    /// Carrier (frequency layer) index per cell; equal values share a frequency.
    pub carriers: Vec<u32>,
    pub route: Vec<RoutePoint>,
    pub planted_cause: CauseId,
    pub noise_seed: u64,
    /// Handover parameters actually configured in the network, when they
    /// differ from the radio model defaults.
    #[serde(default)]
    pub handover_override: Option<HandoverParams>,
    /// Cap on the downlink resource blocks the scheduler can grant.
    #[serde(default)]
    pub rb_cap: Option<f64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() < 2 {
            return Err(RcaError::Validation("scenario needs at least 2 cells".into()));
        }
        if self.carriers.len() != self.cells.len() {
            return Err(RcaError::Validation("one carrier entry per cell required".into()));
        }
        for cell in &self.cells {
            cell.validate()?;
        }
        let mut pcis: Vec<u32> = self.cells.iter().map(|c| c.pci).collect();
        pcis.sort_unstable();
        if pcis.windows(2).any(|w| w[0] == w[1]) {
            return Err(RcaError::Validation("PCIs must be unique within a scenario".into()));
        }
        if self.route.is_empty() {
            return Err(RcaError::Validation("empty route".into()));
        }
        if self.route.windows(2).any(|w| w[1].timestamp - w[0].timestamp != 1) {
            return Err(RcaError::Validation("route timestamps must advance by exactly 1 s".into()));
        }
        Ok(())
    }

    pub fn cell_by_pci(&self, pci: u32) -> Option<usize> {
        self.cells.iter().position(|c| c.pci == pci)
    }
}

/// One neighbor entry of the top set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub pci: u32,
    pub brsrp: f64,
}

/// One row of user-plane drive-test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPlaneSample {
    pub timestamp: i64,
    pub longitude: f64,
    pub latitude: f64,
    pub gps_speed: f64,
    pub serving_pci: u32,
    pub ss_rsrp: f64,
    pub ss_sinr: f64,
    pub mac_dl_throughput: f64,
    /// Top neighbors, strongest first.
    pub neighbors: Vec<Neighbor>,
    pub dl_rb_num: f64,
}

impl UserPlaneSample {
    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.longitude, self.latitude)
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors.len() > MAX_NEIGHBORS {
            return Err(RcaError::Validation(format!("more than {MAX_NEIGHBORS} neighbors")));
        }
        if self.neighbors.windows(2).any(|w| w[0].brsrp < w[1].brsrp) {
            return Err(RcaError::Validation("neighbors must be sorted by BRSRP descending".into()));
        }
        if self.mac_dl_throughput < 0.0 || self.dl_rb_num < 0.0 {
            return Err(RcaError::Validation("throughput and RB count must be non-negative".into()));
        }
        Ok(())
    }
}

/// Time-ordered user-plane samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveTrace {
    pub samples: Vec<UserPlaneSample>,
}

impl DriveTrace {
    pub fn validate(&self) -> Result<()> {
        if self.samples.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(RcaError::Validation("trace timestamps must be strictly increasing".into()));
        }
        self.samples.iter().try_for_each(UserPlaneSample::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SymptomKind {
    ThroughputBelowThreshold,
}

/// The observed degradation: samples whose throughput fell below the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Symptom {
    pub kind: SymptomKind,
    pub threshold: f64,
    pub onset_index: usize,
    pub affected_indices: Vec<usize>,
}

/// Semantic identity of a candidate root cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CauseId {
    SpeedGt40,
    ExcessDowntilt,
    OvershootGt1km,
    NoncolocatedOverlap,
    PciMod30Conflict,
    FrequentHandover,
    HandoverThresholdMisconfig,
    InsufficientRb,
}

impl CauseId {
    /// Canonical order, which is also the default label order C1..C8.
    pub const ALL: [CauseId; 8] = [
        CauseId::SpeedGt40,
        CauseId::ExcessDowntilt,
        CauseId::OvershootGt1km,
        CauseId::NoncolocatedOverlap,
        CauseId::PciMod30Conflict,
        CauseId::FrequentHandover,
        CauseId::HandoverThresholdMisconfig,
        CauseId::InsufficientRb,
    ];

    /// Tie-break order used when two causes score equally: sharp
    /// configuration predicates first, environmental ones last.
    pub const PRECEDENCE: [CauseId; 8] = [
        CauseId::PciMod30Conflict,
        CauseId::NoncolocatedOverlap,
        CauseId::ExcessDowntilt,
        CauseId::OvershootGt1km,
        CauseId::HandoverThresholdMisconfig,
        CauseId::FrequentHandover,
        CauseId::InsufficientRb,
        CauseId::SpeedGt40,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CauseId> {
        CauseId::ALL.get(i).copied()
    }

    pub fn precedence_rank(self) -> usize {
        CauseId::PRECEDENCE.iter().position(|c| *c == self).expect("every cause has a rank")
    }

    pub fn name(self) -> &'static str {
        match self {
            CauseId::SpeedGt40 => "SPEED_GT_40",
            CauseId::ExcessDowntilt => "EXCESS_DOWNTILT",
            CauseId::OvershootGt1km => "OVERSHOOT_GT_1KM",
            CauseId::NoncolocatedOverlap => "NONCOLOCATED_OVERLAP",
            CauseId::PciMod30Conflict => "PCI_MOD30_CONFLICT",
            CauseId::FrequentHandover => "FREQUENT_HANDOVER",
            CauseId::HandoverThresholdMisconfig => "HANDOVER_THRESHOLD_MISCONFIG",
            CauseId::InsufficientRb => "INSUFFICIENT_RB",
        }
    }

    /// Sentence shown to the reader in the candidate list.
    pub fn description(self) -> &'static str {
        match self {
            CauseId::SpeedGt40 => "Test vehicle speed exceeds 40 km/h, impacting user throughput.",
            CauseId::ExcessDowntilt => {
                "The serving cell's downtilt angle is too large, causing weak coverage at the far end."
            }
            CauseId::OvershootGt1km => "The serving cell's coverage distance exceeds 1 km, resulting in over-shooting.",
            CauseId::NoncolocatedOverlap => {
                "Non-colocated co-frequency neighboring cells cause severe overlapping coverage."
            }
            CauseId::PciMod30Conflict => {
                "Neighbor cell and serving cell have the same PCI mod 30, leading to interference."
            }
            CauseId::FrequentHandover => "Frequent handovers degrade performance.",
            CauseId::HandoverThresholdMisconfig => {
                "A neighboring cell provides higher throughput but handover thresholds keep the serving cell."
            }
            CauseId::InsufficientRb => "Average scheduled RBs are below 160, affecting throughput.",
        }
    }

    /// Short human title used inside reasoning traces.
    pub fn title(self) -> &'static str {
        match self {
            CauseId::SpeedGt40 => "High Test Speed",
            CauseId::ExcessDowntilt => "Excessive Downtilt",
            CauseId::OvershootGt1km => "Over-Shooting Coverage",
            CauseId::NoncolocatedOverlap => "Overlapping Coverage",
            CauseId::PciMod30Conflict => "PCI Mod 30 Conflict",
            CauseId::FrequentHandover => "Frequent Handovers",
            CauseId::HandoverThresholdMisconfig => "Missed Handover",
            CauseId::InsufficientRb => "Low RBs",
        }
    }
}

impl fmt::Display for CauseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CauseId {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        CauseId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| RcaError::Validation(format!("unknown cause {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub label: String,
    pub cause: CauseId,
    pub description: String,
}

/// Binding of display labels to causes, in presentation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl Default for RootCauseCatalog {
    fn default() -> Self {
        Self::from_order(&CauseId::ALL).expect("canonical order is a permutation")
    }
}

impl RootCauseCatalog {
    /// Builds a catalog where label `C<k+1>` is bound to `order[k]`.
    pub fn from_order(order: &[CauseId]) -> Result<Self> {
        let mut seen = [false; 8];
        for c in order {
            if std::mem::replace(&mut seen[c.index()], true) {
                return Err(RcaError::Validation(format!("cause {c} listed twice")));
            }
        }
        if order.len() != 8 {
            return Err(RcaError::Validation("catalog must list all 8 causes".into()));
        }
        let entries = order
            .iter()
            .enumerate()
            .map(|(k, &cause)| CatalogEntry {
                label: format!("C{}", k + 1),
                cause,
                description: cause.description().to_string(),
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn validate(&self) -> Result<()> {
        let order: Vec<CauseId> = self.entries.iter().map(|e| e.cause).collect();
        Self::from_order(&order)?;
        let mut labels: Vec<&str> = self.entries.iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(RcaError::Validation("duplicate display label".into()));
        }
        Ok(())
    }

    pub fn label_of(&self, cause: CauseId) -> &str {
        self.entries
            .iter()
            .find(|e| e.cause == cause)
            .map(|e| e.label.as_str())
            .expect("catalog covers every cause")
    }

    pub fn cause_of(&self, label: &str) -> Option<CauseId> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.cause)
    }

    /// Causes in presentation order.
    pub fn order(&self) -> Vec<CauseId> {
        self.entries.iter().map(|e| e.cause).collect()
    }
}

/// Resolves the raw digital tilt to degrees.
pub fn effective_digital_tilt(raw: i32) -> Result<f64> {
    match raw {
        DIGITAL_TILT_SENTINEL => Ok(DEFAULT_DIGITAL_TILT_DEG),
        0..=254 => Ok(raw as f64),
        _ => Err(RcaError::Validation(format!("digital tilt {raw} outside [0, 255]"))),
    }
}

/// Vertical beamwidth associated with a beam scenario.
pub fn vertical_beamwidth(beam: BeamScenario) -> f64 {
    match beam {
        BeamScenario::Default => 6.0,
        BeamScenario::Scenario(n) if n <= 5 => 6.0,
        BeamScenario::Scenario(n) if n <= 11 => 12.0,
        BeamScenario::Scenario(_) => 25.0,
    }
}

/// Mechanical plus effective digital downtilt.
pub fn total_downtilt(cell: &CellConfig) -> Result<f64> {
    Ok(cell.mech_downtilt + effective_digital_tilt(cell.digital_tilt_raw)?)
}

/// Great-circle distance in meters.
pub fn geo_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial bearing from `from` to `to`, degrees clockwise from north in [0, 360).
pub fn bearing(from: GeoPoint, to: GeoPoint) -> f64 {
    let (lat1, lat2) = (from.latitude.to_radians(), to.latitude.to_radians());
    let dlon = (to.longitude - from.longitude).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Point reached by travelling `distance_m` from `origin` along `bearing_deg`.
pub fn destination(origin: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let lat1 = origin.latitude.to_radians();
    let lon1 = origin.longitude.to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).asin();
    let lon2 = lon1 + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    GeoPoint::new(lon2.to_degrees(), lat2.to_degrees())
}

/// Smallest signed difference `a - b` between two bearings, in (-180, 180].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Depression angle from an antenna at `height` to a ground point `ground_distance` away.
pub fn depression_angle(height: f64, ground_distance: f64) -> f64 {
    height.atan2(ground_distance).to_degrees()
}

/// Reference-signal collision: distinct PCIs sharing the same residue mod 30.
pub fn pci_mod30_conflict(pci_a: u32, pci_b: u32) -> bool {
    pci_a != pci_b && pci_a % 30 == pci_b % 30
}

/// Rounds to a fixed number of decimals.
pub fn quantize(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let y = (x * scale).round() / scale;
    if y == 0.0 {
        0.0
    } else {
        y
    }
}
