//! Scenario generation, fault planting and drive-test synthesis.
//!
//! A scenario is a small cluster of cells around a straight drive route. The
//! nominal generator places a serving site beside the route with its main lobe
//! covering every route point; `plant_fault` then perturbs that layout so that
//! exactly one causal rule fires, and `simulate_drive` turns the layout into
//! user-plane samples with a log-distance channel, a parabolic antenna pattern
//! and A3 handover.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    angle_diff, bearing, depression_angle, destination, geo_distance, pci_mod30_conflict, quantize,
    total_downtilt, vertical_beamwidth, BeamScenario, CauseId, CellConfig, DriveTrace, GeoPoint, HandoverParams,
    Neighbor, RootCauseCatalog, RoutePoint, ScenarioConfig, Symptom, UserPlaneSample, MAX_NEIGHBORS,
};
use crate::error::{RcaError, Result};
use crate::oracle;
use crate::seeding::derive_seed;

/// 2025-05-07 10:00:00 UTC, the first day of generated drive tests.
const BASE_TIMESTAMP: i64 = 1_746_612_000;

/// Lowest throughput a nominal scenario may show anywhere on the route.
const NOMINAL_MIN_THROUGHPUT: f64 = 650.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioModelConfig {
    pub path_loss_exponent: f64,
    /// Path loss at 1 m.
    pub reference_loss_db: f64,
    pub shadowing_sigma: f64,
    pub rb_bandwidth_khz: f64,
    pub spectral_efficiency_cap: f64,
    pub noise_floor_dbm: f64,
    pub handover_hysteresis_db: f64,
    pub handover_time_to_trigger_s: u32,
    /// Spatial layers multiplying the per-RB rate.
    pub mimo_layers: f64,
    pub horizontal_beamwidth_deg: f64,
    pub max_horizontal_loss_db: f64,
    /// SINR loss per km/h above 40 km/h (channel ageing).
    pub speed_penalty_db_per_kmh: f64,
    /// Extra interference from a co-frequency cell whose reference signals
    /// collide with the serving cell's (equal PCI mod 30).
    pub rs_collision_boost_db: f64,
    pub nominal_rb_min: f64,
    pub nominal_rb_max: f64,
}

impl Default for RadioModelConfig {
    fn default() -> Self {
        Self {
            path_loss_exponent: 3.0,
            reference_loss_db: 32.0,
            shadowing_sigma: 2.0,
            rb_bandwidth_khz: 360.0,
            spectral_efficiency_cap: 7.4,
            noise_floor_dbm: -95.0,
            handover_hysteresis_db: 3.0,
            handover_time_to_trigger_s: 2,
            mimo_layers: 2.0,
            horizontal_beamwidth_deg: 65.0,
            max_horizontal_loss_db: 30.0,
            speed_penalty_db_per_kmh: 0.8,
            rs_collision_boost_db: 25.0,
            nominal_rb_min: 165.0,
            nominal_rb_max: 190.0,
        }
    }
}

impl RadioModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RcaError::Validation(format!("radio model: {m}")));
        if !(self.path_loss_exponent > 1.0) {
            return bad("path loss exponent must exceed 1");
        }
        if !(self.shadowing_sigma >= 0.0) {
            return bad("shadowing sigma must be non-negative");
        }
        if !(self.handover_hysteresis_db >= 0.0) {
            return bad("hysteresis must be non-negative");
        }
        if !(self.rb_bandwidth_khz > 0.0 && self.spectral_efficiency_cap > 0.0 && self.mimo_layers > 0.0) {
            return bad("bandwidth, efficiency cap and layers must be positive");
        }
        if !(self.horizontal_beamwidth_deg > 0.0) {
            return bad("horizontal beamwidth must be positive");
        }
        if !(self.nominal_rb_min > 0.0 && self.nominal_rb_min <= self.nominal_rb_max) {
            return bad("nominal RB range is empty");
        }
        Ok(())
    }

    pub fn default_handover(&self) -> HandoverParams {
        HandoverParams {
            hysteresis_db: self.handover_hysteresis_db,
            time_to_trigger_s: self.handover_time_to_trigger_s,
        }
    }
}

/// Vertical attenuation for an angle off the electrical boresight.
pub fn tilt_pattern_loss(angle_off_boresight: f64, beamwidth: f64) -> f64 {
    (12.0 * (angle_off_boresight / beamwidth).powi(2)).min(30.0)
}

/// Horizontal attenuation for an azimuth offset.
pub fn horizontal_pattern_loss(angle_off_boresight: f64, beamwidth: f64, max_loss: f64) -> f64 {
    (12.0 * (angle_off_boresight / beamwidth).powi(2)).min(max_loss)
}

/// Log-distance path loss; distances below 1 m are clamped to the reference.
pub fn path_loss(radio: &RadioModelConfig, distance_m: f64) -> f64 {
    radio.reference_loss_db + 10.0 * radio.path_loss_exponent * distance_m.max(1.0).log10()
}

/// Geometry of one cell-to-UE link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub ground_distance: f64,
    pub distance_3d: f64,
    /// Depression angle from the antenna to the UE.
    pub depression: f64,
    /// Depression minus total downtilt; negative means the UE sits above boresight.
    pub vertical_offset: f64,
    pub horizontal_offset: f64,
}

pub fn link_geometry(cell: &CellConfig, ue: GeoPoint) -> Result<LinkGeometry> {
    let site = cell.position();
    let ground_distance = geo_distance(site, ue);
    let depression = depression_angle(cell.height, ground_distance);
    let horizontal_offset = if ground_distance < 1e-6 {
        0.0
    } else {
        angle_diff(bearing(site, ue), cell.boresight_azimuth())
    };
    Ok(LinkGeometry {
        ground_distance,
        distance_3d: ground_distance.hypot(cell.height),
        depression,
        vertical_offset: depression - total_downtilt(cell)?,
        horizontal_offset,
    })
}

/// Received reference power before shadowing.
pub fn mean_received_power(cell: &CellConfig, ue: GeoPoint, radio: &RadioModelConfig) -> Result<f64> {
    let g = link_geometry(cell, ue)?;
    let bw = vertical_beamwidth(cell.beam_scenario);
    Ok(cell.max_tx_power
        - path_loss(radio, g.distance_3d)
        - tilt_pattern_loss(g.vertical_offset, bw)
        - horizontal_pattern_loss(g.horizontal_offset, radio.horizontal_beamwidth_deg, radio.max_horizontal_loss_db))
}

/// Truncated Shannon efficiency in bit/s/Hz.
pub fn spectral_efficiency(sinr_db: f64, cap: f64) -> f64 {
    (1.0 + db_to_linear(sinr_db)).log2().min(cap)
}

/// Downlink MAC throughput in Mbps.
pub fn throughput_mbps(rb: f64, sinr_db: f64, radio: &RadioModelConfig) -> f64 {
    radio.mimo_layers * rb * radio.rb_bandwidth_khz / 1000.0 * spectral_efficiency(sinr_db, radio.spectral_efficiency_cap)
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Synthesizes one user-plane sample per route point.
pub fn simulate_drive(scenario: &ScenarioConfig, radio: &RadioModelConfig, seed: u64) -> Result<DriveTrace> {
    scenario.validate()?;
    radio.validate()?;
    let ho = scenario.handover_override.unwrap_or_else(|| radio.default_handover());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shadow = Normal::new(0.0, radio.shadowing_sigma)
        .map_err(|e| RcaError::Validation(format!("shadowing distribution: {e}")))?;
    let n = scenario.cells.len();
    let mut serving: Option<usize> = None;
    let mut counters = vec![0u32; n];
    let mut samples = Vec::with_capacity(scenario.route.len());

    for point in &scenario.route {
        let ue = point.position();
        let mut rsrp = Vec::with_capacity(n);
        for cell in &scenario.cells {
            let p = mean_received_power(cell, ue, radio)? + shadow.sample(&mut rng);
            rsrp.push(quantize(p, 2));
        }
        let rb_draw: f64 = rng.random();
        let rb = match scenario.rb_cap {
            Some(cap) => cap * (0.92 + 0.08 * rb_draw),
            None => radio.nominal_rb_min + (radio.nominal_rb_max - radio.nominal_rb_min) * rb_draw,
        };
        let rb = quantize(rb, 2);

        let s = *serving.get_or_insert_with(|| strongest(&rsrp, None));
        let mut order: Vec<usize> = (0..n).filter(|&c| c != s).collect();
        order.sort_by(|&a, &b| {
            rsrp[b]
                .total_cmp(&rsrp[a])
                .then(scenario.cells[a].pci.cmp(&scenario.cells[b].pci))
        });
        order.truncate(MAX_NEIGHBORS);

        let serving_cell = &scenario.cells[s];
        let mut interference = db_to_linear(radio.noise_floor_dbm);
        for (c, cell) in scenario.cells.iter().enumerate() {
            if c == s || scenario.carriers[c] != scenario.carriers[s] {
                continue;
            }
            let boost = if pci_mod30_conflict(cell.pci, serving_cell.pci) { radio.rs_collision_boost_db } else { 0.0 };
            interference += db_to_linear(rsrp[c] + boost);
        }
        let speed_penalty = (point.speed_kmh - 40.0).max(0.0) * radio.speed_penalty_db_per_kmh;
        let sinr = quantize(rsrp[s] - 10.0 * interference.log10() - speed_penalty, 2);
        let throughput = quantize(throughput_mbps(rb, sinr, radio), 2);

        samples.push(UserPlaneSample {
            timestamp: point.timestamp,
            longitude: point.longitude,
            latitude: point.latitude,
            gps_speed: point.speed_kmh,
            serving_pci: serving_cell.pci,
            ss_rsrp: rsrp[s],
            ss_sinr: sinr,
            mac_dl_throughput: throughput,
            neighbors: order
                .iter()
                .map(|&c| Neighbor { pci: scenario.cells[c].pci, brsrp: rsrp[c] })
                .collect(),
            dl_rb_num: rb,
        });

        // A3: a listed neighbor must beat serving by the hysteresis for TTT samples.
        for c in 0..n {
            let qualifies = c != s && order.contains(&c) && rsrp[c] > rsrp[s] + ho.hysteresis_db;
            counters[c] = if qualifies { counters[c] + 1 } else { 0 };
        }
        let ready: Vec<usize> = (0..n).filter(|&c| counters[c] >= ho.time_to_trigger_s.max(1)).collect();
        if !ready.is_empty() {
            let target = ready
                .iter()
                .copied()
                .max_by(|&a, &b| rsrp[a].total_cmp(&rsrp[b]).then(b.cmp(&a)))
                .expect("non-empty");
            serving = Some(target);
            counters.iter_mut().for_each(|k| *k = 0);
        }
    }
    Ok(DriveTrace { samples })
}

fn strongest(rsrp: &[f64], exclude: Option<usize>) -> usize {
    let mut best = None;
    for (i, &p) in rsrp.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        if best.is_none_or(|b: usize| p > rsrp[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one candidate")
}

/// Knobs for dataset-scale generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub num_cells: usize,
    pub route_length_s: usize,
    /// Full generate/plant/check attempts per instance before giving up.
    pub max_attempts: u32,
    pub radio: RadioModelConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { num_cells: 6, route_length_s: 20, max_attempts: 25, radio: RadioModelConfig::default() }
    }
}

/// A scenario, its trace and the label the fault was planted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub instance_id: String,
    pub scenario: ScenarioConfig,
    pub trace: DriveTrace,
    pub symptom: Symptom,
    pub ground_truth: CauseId,
    pub catalog: RootCauseCatalog,
    pub seed: u64,
    /// Generation attempts consumed, including the successful one.
    pub attempts: u32,
}

pub fn generate_nominal(seed: u64, num_cells: usize, route_length_s: usize) -> Result<ScenarioConfig> {
    generate_nominal_with(seed, num_cells, route_length_s, &RadioModelConfig::default())
}

/// Builds a fault-free scenario whose simulated trace stays above the
/// throughput threshold everywhere.
pub fn generate_nominal_with(
    seed: u64,
    num_cells: usize,
    route_length_s: usize,
    radio: &RadioModelConfig,
) -> Result<ScenarioConfig> {
    if num_cells < 2 {
        return Err(RcaError::Validation("a scenario needs at least 2 cells".into()));
    }
    if num_cells > 24 {
        return Err(RcaError::Validation("at most 24 cells are supported".into()));
    }
    if route_length_s < 10 {
        return Err(RcaError::Validation("route must last at least 10 s".into()));
    }
    radio.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let scenario = draw_nominal(&mut rng, num_cells, route_length_s);
        let trace = simulate_drive(&scenario, radio, scenario.noise_seed)?;
        let serving = scenario.cells[0].pci;
        let healthy = trace
            .samples
            .iter()
            .all(|s| s.mac_dl_throughput >= NOMINAL_MIN_THROUGHPUT && s.serving_pci == serving);
        if healthy {
            return Ok(scenario);
        }
    }
    Err(RcaError::Generation(format!("no healthy nominal layout found for seed {seed}")))
}

fn draw_nominal(rng: &mut ChaCha8Rng, num_cells: usize, route_length_s: usize) -> ScenarioConfig {
    let origin = GeoPoint::new(128.05 + rng.random_range(0.0..0.15), 32.55 + rng.random_range(0.0..0.1));
    let heading = rng.random_range(0.0..360.0);
    let mut speeds = Vec::with_capacity(route_length_s);
    let mut v: f64 = rng.random_range(10..=30) as f64;
    for _ in 0..route_length_s {
        speeds.push(v);
        v = (v + rng.random_range(-6..=6) as f64).clamp(8.0, 35.0);
    }
    let t0 = BASE_TIMESTAMP + rng.random_range(0..8 * 3600);
    let route = build_route(origin, heading, &speeds, t0);
    let mid = route[route.len() / 2].position();
    let half_len = route.iter().map(|p| geo_distance(mid, p.position())).fold(0.0, f64::max);

    let side = if rng.random_bool(0.5) { 90.0 } else { -90.0 };
    let lateral = (0.8 * half_len).max(60.0) + rng.random_range(0.0..60.0);
    let site = destination(mid, heading + side, lateral);

    let mut ids = IdAllocator::new(rng, num_cells + 8);
    let serving_gnb = ids.gnodeb(rng);
    let sectors = 3.min(num_cells - 1);
    let height = quantize(rng.random_range(15.0..35.0), 1);
    let toward_route = bearing(site, mid);
    let mut cells = Vec::with_capacity(num_cells);
    for k in 0..sectors {
        let pci = ids.pci(rng);
        let mut cell = base_cell(rng, &serving_gnb, ids.cell_id(), site, height, pci);
        let offset = [0.0, 120.0, -120.0][k];
        aim(&mut cell, toward_route + offset);
        let tilt = if k == 0 { lobe_tilt(&cell, &route) } else { rng.random_range(2..=10) };
        set_tilt(&mut cell, tilt, rng);
        cells.push(cell);
    }
    for _ in sectors..num_cells {
        let gnb = ids.gnodeb(rng);
        let direction = rng.random_range(0.0..360.0);
        let pos = destination(mid, direction, rng.random_range(550.0..900.0));
        let h = quantize(rng.random_range(20.0..40.0), 1);
        let pci = ids.pci(rng);
        let mut cell = base_cell(rng, &gnb, ids.cell_id(), pos, h, pci);
        aim(&mut cell, direction + rng.random_range(-30.0..30.0));
        let tilt = rng.random_range(3..=10);
        set_tilt(&mut cell, tilt, rng);
        cells.push(cell);
    }
    ScenarioConfig {
        carriers: vec![0; cells.len()],
        cells,
        route,
        planted_cause: CauseId::SpeedGt40,
        noise_seed: rng.random(),
        handover_override: None,
        rb_cap: None,
    }
}

/// Integrates 1 Hz speed samples along a straight heading.
fn build_route(origin: GeoPoint, heading: f64, speeds: &[f64], t0: i64) -> Vec<RoutePoint> {
    let mut pos = origin;
    let mut route = Vec::with_capacity(speeds.len());
    for (k, &v) in speeds.iter().enumerate() {
        route.push(RoutePoint {
            longitude: quantize(pos.longitude, 6),
            latitude: quantize(pos.latitude, 6),
            speed_kmh: v,
            timestamp: t0 + k as i64,
        });
        pos = destination(pos, heading, v / 3.6);
    }
    route
}

fn route_heading(route: &[RoutePoint]) -> f64 {
    bearing(route[0].position(), route[route.len() - 1].position())
}

fn route_mid(route: &[RoutePoint]) -> GeoPoint {
    route[route.len() / 2].position()
}

struct IdAllocator {
    residues: Vec<u32>,
    used_pcis: Vec<u32>,
    next_cell: u32,
    gnodebs: Vec<String>,
}

impl IdAllocator {
    fn new(rng: &mut ChaCha8Rng, _capacity: usize) -> Self {
        let mut residues: Vec<u32> = (0..30).collect();
        residues.shuffle(rng);
        Self { residues, used_pcis: Vec::new(), next_cell: rng.random_range(1..=20), gnodebs: Vec::new() }
    }

    fn from_scenario(rng: &mut ChaCha8Rng, scenario: &ScenarioConfig) -> Self {
        let used: Vec<u32> = scenario.cells.iter().map(|c| c.pci % 30).collect();
        let mut residues: Vec<u32> = (0..30).filter(|r| !used.contains(r)).collect();
        residues.shuffle(rng);
        let next_cell = scenario
            .cells
            .iter()
            .filter_map(|c| c.cell_id.parse::<u32>().ok())
            .max()
            .unwrap_or(0)
            + 1;
        Self {
            residues,
            used_pcis: scenario.cells.iter().map(|c| c.pci).collect(),
            next_cell,
            gnodebs: scenario.cells.iter().map(|c| c.gnodeb_id.clone()).collect(),
        }
    }

    /// A PCI whose residue mod 30 is not used by any other cell.
    fn pci(&mut self, rng: &mut ChaCha8Rng) -> u32 {
        let r = self.residues.pop().expect("fewer than 30 cells");
        let pci = r + 30 * rng.random_range(0..=(1007 - r) / 30);
        self.used_pcis.push(pci);
        pci
    }

    fn cell_id(&mut self) -> String {
        self.next_cell += 1;
        (self.next_cell - 1).to_string()
    }

    fn gnodeb(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let id = format!("{:07}", rng.random_range(100..2_000_000));
            if !self.gnodebs.contains(&id) {
                self.gnodebs.push(id.clone());
                return id;
            }
        }
    }
}

fn base_cell(rng: &mut ChaCha8Rng, gnb: &str, cell_id: String, pos: GeoPoint, height: f64, pci: u32) -> CellConfig {
    let beam = match rng.random_range(0..17u8) {
        0 => BeamScenario::Default,
        n => BeamScenario::Scenario(n),
    };
    let (txrx, model) = if rng.random_bool(0.75) { ("32T32R", "NR AAU 1") } else { ("64T64R", "NR AAU 2") };
    CellConfig {
        gnodeb_id: gnb.to_string(),
        cell_id,
        longitude: quantize(pos.longitude, 6),
        latitude: quantize(pos.latitude, 6),
        mech_azimuth: 0.0,
        mech_downtilt: 0.0,
        digital_tilt_raw: 0,
        digital_azimuth: if rng.random_bool(0.2) { rng.random_range(1..=5) as f64 } else { 0.0 },
        beam_scenario: beam,
        height,
        pci,
        txrx_mode: txrx.into(),
        max_tx_power: [34.9, 35.5, 36.2][rng.random_range(0..3)],
        antenna_model: model.into(),
    }
}

/// Points the boresight (mechanical plus digital azimuth) along `azimuth`.
fn aim(cell: &mut CellConfig, azimuth: f64) {
    cell.mech_azimuth = (azimuth - cell.digital_azimuth).round().rem_euclid(360.0);
}

/// Splits an integer total downtilt into mechanical and digital parts,
/// sometimes through the 255 sentinel.
fn set_tilt(cell: &mut CellConfig, total: i32, rng: &mut ChaCha8Rng) {
    let total = total.clamp(0, 96);
    if total >= 6 && total - 6 <= 90 && rng.random_bool(0.3) {
        cell.mech_downtilt = (total - 6) as f64;
        cell.digital_tilt_raw = 255;
    } else {
        let mech = rng.random_range(0..=total.min(10));
        cell.mech_downtilt = mech as f64;
        cell.digital_tilt_raw = total - mech;
    }
}

/// Largest integer tilt keeping every route point below the upper lobe edge
/// with a 1 degree margin, capped at the mean depression.
fn lobe_tilt(cell: &CellConfig, route: &[RoutePoint]) -> i32 {
    let bw = vertical_beamwidth(cell.beam_scenario);
    let deps: Vec<f64> = route
        .iter()
        .map(|p| depression_angle(cell.height, geo_distance(cell.position(), p.position())))
        .collect();
    let min_dep = deps.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_dep = deps.iter().sum::<f64>() / deps.len() as f64;
    ((min_dep + bw / 2.0 - 1.0).floor().min(mean_dep.round()).max(0.0)) as i32
}

/// Moves every sector co-sited with cell 0 to `distance` from the route
/// midpoint along the same bearing, turning the site so cell 0 faces the route.
fn relocate_serving_site(sc: &mut ScenarioConfig, mid: GeoPoint, distance: f64) {
    let site = sc.cells[0].position();
    let gnb = sc.cells[0].gnodeb_id.clone();
    let to = destination(mid, bearing(mid, site), distance);
    let to = GeoPoint::new(quantize(to.longitude, 6), quantize(to.latitude, 6));
    let delta = angle_diff(bearing(to, mid), sc.cells[0].boresight_azimuth());
    for cell in sc.cells.iter_mut().filter(|c| c.gnodeb_id == gnb) {
        if geo_distance(cell.position(), site) < 1.0 {
            cell.longitude = to.longitude;
            cell.latitude = to.latitude;
            let az = cell.boresight_azimuth() + delta;
            aim(cell, az);
        }
    }
}

pub fn plant_fault(nominal: &ScenarioConfig, cause: CauseId, seed: u64) -> Result<ScenarioConfig> {
    plant_fault_with(nominal, cause, seed, &RadioModelConfig::default())
}

/// Perturbs a nominal scenario so that `cause` explains its symptom. Cell 0 of
/// a nominal scenario is the serving cell for the whole route.
pub fn plant_fault_with(
    nominal: &ScenarioConfig,
    cause: CauseId,
    seed: u64,
    radio: &RadioModelConfig,
) -> Result<ScenarioConfig> {
    nominal.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sc = nominal.clone();
    sc.planted_cause = cause;
    let route_len = sc.route.len();
    let heading = route_heading(&sc.route);
    let mid = route_mid(&sc.route);
    let site = sc.cells[0].position();
    let gnb = sc.cells[0].gnodeb_id.clone();

    match cause {
        CauseId::SpeedGt40 => {
            let len = rng.random_range(4..=6).min(route_len - 2);
            let start = rng.random_range(2..=route_len - len);
            let mut speeds: Vec<f64> = sc.route.iter().map(|p| p.speed_kmh).collect();
            for v in &mut speeds[start..start + len] {
                *v = rng.random_range(58..=85) as f64;
            }
            sc.route = build_route(sc.route[0].position(), heading, &speeds, sc.route[0].timestamp);
        }
        CauseId::ExcessDowntilt => {
            relocate_serving_site(&mut sc, mid, rng.random_range(380.0..520.0));
            let cell = &sc.cells[0];
            let bw = vertical_beamwidth(cell.beam_scenario);
            let mut needed = f64::NEG_INFINITY;
            for p in &sc.route {
                let g = link_geometry(cell, p.position())?;
                let unattenuated = cell.max_tx_power
                    - path_loss(radio, g.distance_3d)
                    - horizontal_pattern_loss(g.horizontal_offset, radio.horizontal_beamwidth_deg, radio.max_horizontal_loss_db);
                // Vertical loss needed to push this point to about -98 dBm.
                let required = unattenuated + 98.0;
                if required > 27.0 {
                    return Err(RcaError::Generation("serving site too close for a downtilt fault".into()));
                }
                needed = needed.max(g.depression + bw * (required.max(0.0) / 12.0).sqrt());
            }
            let total = needed.ceil() as i32;
            if total > 96 {
                return Err(RcaError::Generation("required downtilt out of range".into()));
            }
            set_tilt(&mut sc.cells[0], total, &mut rng);
        }
        CauseId::OvershootGt1km => {
            relocate_serving_site(&mut sc, mid, rng.random_range(1150.0..1600.0));
            let tilt = lobe_tilt(&sc.cells[0], &sc.route);
            set_tilt(&mut sc.cells[0], tilt, &mut rng);
        }
        CauseId::NoncolocatedOverlap => {
            let j = (1..sc.cells.len())
                .find(|&j| sc.cells[j].gnodeb_id != gnb && sc.carriers[j] == sc.carriers[0])
                .ok_or_else(|| RcaError::Generation("no co-frequency cell from another gNodeB".into()))?;
            let mirror = destination(mid, bearing(mid, site) + 180.0, geo_distance(mid, site));
            let serving = sc.cells[0].clone();
            let cell = &mut sc.cells[j];
            cell.longitude = quantize(mirror.longitude, 6);
            cell.latitude = quantize(mirror.latitude, 6);
            cell.height = serving.height;
            cell.beam_scenario = serving.beam_scenario;
            cell.mech_downtilt = serving.mech_downtilt;
            cell.digital_tilt_raw = serving.digital_tilt_raw;
            cell.max_tx_power = quantize(serving.max_tx_power - rng.random_range(0.5..2.0), 1);
            let toward = bearing(mirror, mid);
            aim(cell, toward);
        }
        CauseId::PciMod30Conflict => {
            let trace = simulate_drive(nominal, radio, nominal.noise_seed)?;
            let mut sums = vec![0.0; sc.cells.len()];
            for s in &trace.samples {
                for nb in &s.neighbors {
                    if let Some(c) = sc.cell_by_pci(nb.pci) {
                        sums[c] += nb.brsrp;
                    }
                }
            }
            let j = (1..sc.cells.len())
                .filter(|&j| sc.carriers[j] == sc.carriers[0])
                .max_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(b.cmp(&a)))
                .ok_or_else(|| RcaError::Generation("no co-frequency neighbor to collide".into()))?;
            let serving_pci = sc.cells[0].pci;
            let r = serving_pci % 30;
            let candidates: Vec<u32> = (0..=(1007 - r) / 30)
                .map(|m| r + 30 * m)
                .filter(|p| !sc.cells.iter().any(|c| c.pci == *p))
                .collect();
            sc.cells[j].pci = *candidates
                .get(rng.random_range(0..candidates.len()))
                .ok_or_else(|| RcaError::Generation("PCI space exhausted".into()))?;
        }
        CauseId::FrequentHandover => {
            const SMALL_CELLS: usize = 5;
            const SPACING: usize = 3;
            let span = SPACING * (SMALL_CELLS - 1);
            if route_len < span + 6 {
                return Err(RcaError::Generation("route too short for interleaved small cells".into()));
            }
            let start = rng.random_range(2..=route_len - span - 3);
            let mut speeds: Vec<f64> = sc.route.iter().map(|p| p.speed_kmh).collect();
            for v in &mut speeds[start.saturating_sub(2)..=(start + span + 1).min(route_len - 1)] {
                *v = rng.random_range(22..=32) as f64;
            }
            sc.route = build_route(sc.route[0].position(), heading, &speeds, sc.route[0].timestamp);
            let mut ids = IdAllocator::from_scenario(&mut rng, &sc);
            let side = if rng.random_bool(0.5) { 90.0 } else { -90.0 };
            for k in 0..SMALL_CELLS {
                let anchor = sc.route[start + SPACING * k].position();
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let offset = rng.random_range(8.0..12.0);
                let pos = destination(anchor, heading + side * sign, offset);
                let h = quantize(rng.random_range(6.0..8.0), 1);
                let pci = ids.pci(&mut rng);
                let mut cell = base_cell(&mut rng, &gnb, ids.cell_id(), pos, h, pci);
                cell.beam_scenario = BeamScenario::Scenario(rng.random_range(12..=16));
                cell.digital_azimuth = 0.0;
                cell.max_tx_power = 34.9;
                aim(&mut cell, bearing(pos, anchor));
                let tilt = depression_angle(h, geo_distance(pos, anchor)).round() as i32;
                set_tilt(&mut cell, tilt, &mut rng);
                sc.cells.push(cell);
                sc.carriers.push(sc.carriers[0]);
            }
        }
        CauseId::HandoverThresholdMisconfig => {
            let partner = (1..sc.cells.len()).find(|&j| {
                sc.cells[j].gnodeb_id == gnb && geo_distance(sc.cells[j].position(), site) < 1.0
            });
            let b = match partner {
                Some(b) => b,
                None => {
                    let mut ids = IdAllocator::from_scenario(&mut rng, &sc);
                    let pci = ids.pci(&mut rng);
                    let h = sc.cells[0].height;
                    let cell = base_cell(&mut rng, &gnb, ids.cell_id(), site, h, pci);
                    sc.cells.push(cell);
                    sc.carriers.push(sc.carriers[0]);
                    sc.cells.len() - 1
                }
            };
            // Twin sectors aimed past either end of the route: the partner
            // overtakes the serving sector halfway along.
            let az_first = bearing(site, sc.route[0].position());
            let az_last = bearing(site, sc.route[route_len - 1].position());
            let dir = angle_diff(az_last, az_first).signum();
            let spread = rng.random_range(20.0..30.0);
            sc.cells[b].beam_scenario = sc.cells[0].beam_scenario;
            sc.cells[b].max_tx_power = sc.cells[0].max_tx_power;
            sc.cells[b].digital_azimuth = sc.cells[0].digital_azimuth;
            aim(&mut sc.cells[0], az_first - dir * spread);
            aim(&mut sc.cells[b], az_last + dir * spread);
            let tilt = lobe_tilt(&sc.cells[0], &sc.route);
            set_tilt(&mut sc.cells[0], tilt, &mut rng);
            set_tilt(&mut sc.cells[b], tilt, &mut rng);
            sc.handover_override = Some(HandoverParams {
                hysteresis_db: rng.random_range(8..=12) as f64,
                time_to_trigger_s: rng.random_range(5..=8),
            });
        }
        CauseId::InsufficientRb => {
            sc.rb_cap = Some(rng.random_range(60..=110) as f64);
        }
    }
    sc.validate()?;
    Ok(sc)
}

pub fn build_instance(cause: CauseId, seed: u64, catalog_seed: Option<u64>) -> Result<LabeledInstance> {
    build_instance_with(&GenerationConfig::default(), cause, seed, catalog_seed)
}

/// Nominal, plant, simulate, check. Attempts whose symptom is missing or not
/// attributed uniquely to `cause` are discarded and redrawn from a derived seed.
pub fn build_instance_with(
    config: &GenerationConfig,
    cause: CauseId,
    seed: u64,
    catalog_seed: Option<u64>,
) -> Result<LabeledInstance> {
    let catalog = match catalog_seed {
        None => RootCauseCatalog::default(),
        Some(cs) => {
            let mut order = CauseId::ALL.to_vec();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cs));
            RootCauseCatalog::from_order(&order)?
        }
    };
    let mut last = String::new();
    for attempt in 0..config.max_attempts.max(1) {
        let s = derive_seed(seed, attempt as u64);
        match attempt_instance(config, cause, s) {
            Ok((scenario, trace, symptom)) => {
                return Ok(LabeledInstance {
                    instance_id: format!("{}-{seed:016x}", cause.name().to_ascii_lowercase()),
                    scenario,
                    trace,
                    symptom,
                    ground_truth: cause,
                    catalog,
                    seed,
                    attempts: attempt + 1,
                })
            }
            Err(e @ RcaError::Validation(_)) => return Err(e),
            Err(e) => last = e.to_string(),
        }
    }
    Err(RcaError::Generation(format!(
        "could not realize {cause} within {} attempts (last: {last})",
        config.max_attempts
    )))
}

fn attempt_instance(config: &GenerationConfig, cause: CauseId, seed: u64) -> Result<(ScenarioConfig, DriveTrace, Symptom)> {
    let nominal = generate_nominal_with(derive_seed(seed, 1), config.num_cells, config.route_length_s, &config.radio)?;
    let scenario = plant_fault_with(&nominal, cause, derive_seed(seed, 2), &config.radio)?;
    let trace = simulate_drive(&scenario, &config.radio, scenario.noise_seed)?;
    let symptom = oracle::detect_symptom(&trace)?
        .ok_or_else(|| RcaError::Generation(format!("{cause} plant produced no symptom")))?;
    let evidence = oracle::evaluate_rules(&scenario, &trace, &symptom)?;
    let fired: Vec<CauseId> = evidence.iter().filter(|e| e.triggered).map(|e| e.cause).collect();
    if fired != [cause] {
        return Err(RcaError::Generation(format!("{cause} plant fired {fired:?}")));
    }
    Ok((scenario, trace, symptom))
}
