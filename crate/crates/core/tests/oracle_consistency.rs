//! The rule oracle against a deliberately naive re-implementation of every
//! rule, on generated and on doubly planted scenarios.

use rca_core::domain::{BeamScenario, CauseId, CellConfig, DriveTrace, ScenarioConfig};
use rca_core::oracle::{detect_symptom, evaluate_rules, select_cause, score_scale};
use rca_core::seeding::derive_seed;
use rca_core::simulator::{build_instance, plant_fault, simulate_drive, RadioModelConfig};

fn haversine(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let r = 6_371_000.0_f64;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * a.sqrt().asin()
}

fn beamwidth(b: BeamScenario) -> f64 {
    match b {
        BeamScenario::Default => 6.0,
        BeamScenario::Scenario(n) if n <= 5 => 6.0,
        BeamScenario::Scenario(n) if n <= 11 => 12.0,
        BeamScenario::Scenario(_) => 25.0,
    }
}

fn tilt(c: &CellConfig) -> f64 {
    c.mech_downtilt + if c.digital_tilt_raw == 255 { 6.0 } else { c.digital_tilt_raw as f64 }
}

fn cell(cells: &[CellConfig], pci: u32) -> &CellConfig {
    cells.iter().find(|c| c.pci == pci).unwrap()
}

/// Naive triggered flags in canonical cause order.
fn brute_force(cells: &[CellConfig], t: &DriveTrace, w: &[usize]) -> [bool; 8] {
    let s = &t.samples;
    let n = w.len() as f64;
    let speed = w.iter().any(|&i| s[i].gps_speed > 40.0);

    let lobe = w
        .iter()
        .filter(|&&i| {
            let c = cell(cells, s[i].serving_pci);
            let d = haversine(c.longitude, c.latitude, s[i].longitude, s[i].latitude);
            let dep = c.height.atan2(d).to_degrees();
            tilt(c) - beamwidth(c.beam_scenario) / 2.0 > dep && s[i].ss_rsrp < -95.0
        })
        .count() as f64;
    let downtilt = lobe / n > 0.5;

    let dist: f64 = w
        .iter()
        .map(|&i| {
            let c = cell(cells, s[i].serving_pci);
            haversine(c.longitude, c.latitude, s[i].longitude, s[i].latitude)
        })
        .sum::<f64>()
        / n;
    let overshoot = dist > 1000.0;

    let overlapped = w
        .iter()
        .filter(|&&i| {
            let own = &cell(cells, s[i].serving_pci).gnodeb_id;
            s[i].neighbors.iter().any(|nb| {
                cells.iter().any(|c| c.pci == nb.pci && &c.gnodeb_id != own)
                    && (nb.brsrp - s[i].ss_rsrp).abs() <= 6.0
            })
        })
        .count() as f64;
    let overlap = overlapped / n > 0.5;

    let pci = w.iter().any(|&i| s[i].neighbors.iter().any(|nb| nb.pci % 30 == s[i].serving_pci % 30));

    let mut freq = false;
    for start in 0..s.len() {
        let range = start..start + 10;
        if !w.iter().any(|i| range.contains(i)) {
            continue;
        }
        let changes = range.clone().filter(|&i| i >= 1 && i < s.len() && s[i].serving_pci != s[i - 1].serving_pci).count();
        freq |= changes >= 3;
    }

    let mut misconfig = false;
    for a in 0..s.len() {
        for nb in &s[a].neighbors {
            let mut b = a;
            let strong = |k: usize| {
                s[k].serving_pci == s[a].serving_pci
                    && s[k].neighbors.iter().any(|m| m.pci == nb.pci && m.brsrp > s[k].ss_rsrp + 3.0)
            };
            if !strong(a) {
                continue;
            }
            while b + 1 < s.len() && strong(b + 1) {
                b += 1;
            }
            if b - a + 1 > 2 && w.iter().any(|&i| i >= a && i <= b) {
                misconfig = true;
            }
        }
    }

    let rb = w.iter().map(|&i| s[i].dl_rb_num).sum::<f64>() / n < 160.0;
    [speed, downtilt, overshoot, overlap, pci, freq, misconfig, rb]
}

fn check(sc: &ScenarioConfig, t: &DriveTrace) -> Option<Vec<CauseId>> {
    let sym = detect_symptom(t).unwrap()?;
    let ev = evaluate_rules(sc, t, &sym).unwrap();
    let naive = brute_force(&sc.cells, t, &sym.affected_indices);
    for e in &ev {
        assert_eq!(e.triggered, naive[e.cause.index()], "{:?} disagrees", e.cause);
    }
    Some(ev.iter().filter(|e| e.triggered).map(|e| e.cause).collect())
}

#[test]
fn generated_instances_agree_with_naive_rules() {
    for i in 0..200u64 {
        let cause = CauseId::ALL[(i % 8) as usize];
        let inst = build_instance(cause, derive_seed(4242, i), None).unwrap();
        let fired = check(&inst.scenario, &inst.trace).expect("symptom");
        assert_eq!(fired, vec![cause], "{}", inst.instance_id);
    }
}

#[test]
fn double_plants_select_by_score_then_precedence() {
    let radio = RadioModelConfig::default();
    let mut multi = 0;
    for i in 0..64u64 {
        let first = CauseId::ALL[(i % 8) as usize];
        let second = [CauseId::InsufficientRb, CauseId::SpeedGt40][(i / 8 % 2) as usize];
        if first == second {
            continue;
        }
        let inst = build_instance(first, derive_seed(99, i), None).unwrap();
        let sc = plant_fault(&inst.scenario, second, derive_seed(100, i)).unwrap();
        let t = simulate_drive(&sc, &radio, sc.noise_seed).unwrap();
        let Some(fired) = check(&sc, &t) else { continue };
        if fired.len() < 2 {
            continue;
        }
        multi += 1;
        let sym = detect_symptom(&t).unwrap().unwrap();
        let ev = evaluate_rules(&sc, &t, &sym).unwrap();
        // Highest normalized margin, ties to the earlier precedence rank.
        let expected = ev
            .iter()
            .filter(|e| e.triggered)
            .map(|e| (e.margin / score_scale(e.cause), e.cause))
            .fold(None::<(f64, CauseId)>, |best, (s, c)| match best {
                Some((bs, bc)) if bs > s || (bs == s && bc.precedence_rank() < c.precedence_rank()) => Some((bs, bc)),
                _ => Some((s, c)),
            })
            .unwrap()
            .1;
        assert_eq!(select_cause(&ev).unwrap(), expected);
    }
    assert!(multi >= 10, "only {multi} multi-fault scenarios");
}
