//! Synthetic beacon traffic with the five position-falsification behaviors.
//!
//! Vehicles drive straight lines at constant velocity through a small area
//! and beacon at a fixed interval. Benign vehicles report the truth; each
//! attack class distorts the reported position in its own way, giving the
//! classes distinct digit-level signatures once records are serialized to
//! text. Generation is fully determined by the spec's seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AttackerType, MessageRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Records to emit per class (raw labels 0, 1, 2, 4, 8, 16 in field order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassCounts {
    pub benign: usize,
    pub constant: usize,
    pub constant_offset: usize,
    pub random: usize,
    pub random_offset: usize,
    pub eventual_stop: usize,
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            benign: 600,
            constant: 600,
            constant_offset: 600,
            random: 600,
            random_offset: 600,
            eventual_stop: 600,
        }
    }
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.benign
            + self.constant
            + self.constant_offset
            + self.random
            + self.random_offset
            + self.eventual_stop
    }

    fn pairs(&self) -> [(AttackerType, usize); 6] {
        [
            (AttackerType::Benign, self.benign),
            (AttackerType::Constant, self.constant),
            (AttackerType::ConstantOffset, self.constant_offset),
            (AttackerType::Random, self.random),
            (AttackerType::RandomOffset, self.random_offset),
            (AttackerType::EventualStop, self.eventual_stop),
        ]
    }
}

/// How each attack class falsifies its reported position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackParams {
    /// Type 1 reports exactly this position in every beacon.
    pub fixed_position: [f64; 3],
    /// Type 2 adds this vector to the true position.
    pub offset: [f64; 3],
    /// Type 4 reports a fresh uniform draw from these per-axis bounds.
    pub random_bounds: [[f64; 2]; 3],
    /// Type 8 adds a fresh uniform offset in `[-scale, scale)` per axis.
    pub random_offset_scale: f64,
    /// Type 16 reports truthfully for this fraction of its beacons, then
    /// repeats the position it reached with zero speed.
    pub stop_fraction: f64,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            fixed_position: [88888.88, 88888.88, 0.0],
            offset: [66000.0, 66000.0, 66000.0],
            random_bounds: [[44000.0, 45000.0], [44000.0, 45000.0], [44000.0, 45000.0]],
            random_offset_scale: 33000.0,
            stop_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub counts: ClassCounts,
    /// Start-position bounds in meters, `[[x_lo, x_hi], [y_lo, y_hi]]`;
    /// vehicles stay at z = 0.
    pub area: [[f64; 2]; 2],
    /// Per-axis speed bounds in m/s; drawn independently for x and y.
    pub speed_range: [f64; 2],
    /// Seconds between beacons from one vehicle.
    pub beacon_interval: f64,
    /// Beacons per vehicle; a class emits ⌈count / this⌉ vehicles, the last
    /// one truncated to hit the count exactly.
    pub beacons_per_vehicle: usize,
    pub attack: AttackParams,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            counts: ClassCounts::default(),
            area: [[100.0, 400.0], [100.0, 400.0]],
            speed_range: [10.0, 30.0],
            beacon_interval: 1.0,
            beacons_per_vehicle: 20,
            attack: AttackParams::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ordered = |b: &[f64; 2]| b[0] < b[1];
        if !self.area.iter().all(ordered) {
            return Err(SynthError::InvalidSpec("area bounds must satisfy lo < hi".into()));
        }
        if !ordered(&self.speed_range) || self.speed_range[0] < 0.0 {
            return Err(SynthError::InvalidSpec("speed range must satisfy 0 <= lo < hi".into()));
        }
        if !(self.beacon_interval > 0.0) {
            return Err(SynthError::InvalidSpec("beacon interval must be positive".into()));
        }
        if self.beacons_per_vehicle == 0 {
            return Err(SynthError::InvalidSpec("beacons per vehicle must be at least 1".into()));
        }
        if !self.attack.random_bounds.iter().all(ordered) {
            return Err(SynthError::InvalidSpec("random bounds must satisfy lo < hi".into()));
        }
        if !(self.attack.random_offset_scale >= 0.0) {
            return Err(SynthError::InvalidSpec("random offset scale must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.attack.stop_fraction) {
            return Err(SynthError::InvalidSpec("stop fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Emits records class by class in raw-label order. One rng stream drives
/// everything; each vehicle draws start_x, start_y, vx, vy, then per beacon
/// any attack-specific values (type 4: three position coordinates; type 8:
/// three offsets). Sender ids count vehicles from 0, message ids count
/// records from 0, and vehicle v starts beaconing at t = 25200 + 50v.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<MessageRecord>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.counts.total());
    let mut sender_id: i64 = 0;
    let mut message_id: i64 = 0;
    let dt = spec.beacon_interval;
    for (attacker, count) in spec.counts.pairs() {
        let mut remaining = count;
        while remaining > 0 {
            let beacons = remaining.min(spec.beacons_per_vehicle);
            let t0 = 25200.0 + 50.0 * sender_id as f64;
            let start = [
                rng.random_range(spec.area[0][0]..spec.area[0][1]),
                rng.random_range(spec.area[1][0]..spec.area[1][1]),
                0.0,
            ];
            let velocity = [
                rng.random_range(spec.speed_range[0]..spec.speed_range[1]),
                rng.random_range(spec.speed_range[0]..spec.speed_range[1]),
                0.0,
            ];
            let true_pos = |j: usize| {
                let s = j as f64 * dt;
                [start[0] + s * velocity[0], start[1] + s * velocity[1], 0.0]
            };
            let stop_index = (spec.attack.stop_fraction * beacons as f64).floor() as usize;
            for j in 0..beacons {
                let (position, speed) = match attacker {
                    AttackerType::Benign => (true_pos(j), velocity),
                    AttackerType::Constant => (spec.attack.fixed_position, velocity),
                    AttackerType::ConstantOffset => {
                        let p = true_pos(j);
                        let o = spec.attack.offset;
                        ([p[0] + o[0], p[1] + o[1], p[2] + o[2]], velocity)
                    }
                    AttackerType::Random => {
                        let mut p = [0.0; 3];
                        for (axis, bounds) in p.iter_mut().zip(&spec.attack.random_bounds) {
                            *axis = rng.random_range(bounds[0]..bounds[1]);
                        }
                        (p, velocity)
                    }
                    AttackerType::RandomOffset => {
                        let scale = spec.attack.random_offset_scale;
                        let mut p = true_pos(j);
                        for axis in &mut p {
                            // A zero scale means no draw, keeping the range
                            // handed to the rng non-empty.
                            if scale > 0.0 {
                                *axis += rng.random_range(-scale..scale);
                            }
                        }
                        (p, velocity)
                    }
                    AttackerType::EventualStop => {
                        if j < stop_index {
                            (true_pos(j), velocity)
                        } else {
                            (true_pos(stop_index), [0.0; 3])
                        }
                    }
                };
                records.push(MessageRecord {
                    send_time: t0 + j as f64 * dt,
                    sender_id,
                    message_id,
                    position,
                    speed,
                    attacker_type: attacker,
                });
                message_id += 1;
            }
            sender_id += 1;
            remaining -= beacons;
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            counts: ClassCounts {
                benign: 47,
                constant: 40,
                constant_offset: 40,
                random: 40,
                random_offset: 40,
                eventual_stop: 40,
            },
            seed: 3,
            ..SyntheticSpec::default()
        }
    }

    fn by_class(records: &[MessageRecord], t: AttackerType) -> Vec<&MessageRecord> {
        records.iter().filter(|r| r.attacker_type == t).collect()
    }

    #[test]
    fn per_class_counts_match_the_spec_exactly() {
        let records = generate_synthetic(&small_spec()).unwrap();
        assert_eq!(records.len(), 247);
        let mut counts = BTreeMap::new();
        for r in &records {
            *counts.entry(r.attacker_type).or_insert(0usize) += 1;
        }
        assert_eq!(counts[&AttackerType::Benign], 47);
        assert_eq!(counts[&AttackerType::EventualStop], 40);
        // 47 benign beacons over 20-beacon vehicles → senders 0, 1, 2.
        let benign_senders: Vec<i64> =
            by_class(&records, AttackerType::Benign).iter().map(|r| r.sender_id).collect();
        assert_eq!(benign_senders.iter().filter(|&&s| s == 2).count(), 7);
        // Message ids are the global record index.
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.message_id, i as i64);
        }
    }

    #[test]
    fn constant_attackers_always_report_the_fixed_position() {
        let spec = small_spec();
        let records = generate_synthetic(&spec).unwrap();
        for r in by_class(&records, AttackerType::Constant) {
            assert_eq!(r.position, spec.attack.fixed_position);
            assert!(r.speed[0] >= spec.speed_range[0] && r.speed[0] < spec.speed_range[1]);
        }
    }

    #[test]
    fn offset_attackers_shift_a_continuous_trajectory() {
        let spec = small_spec();
        let records = generate_synthetic(&spec).unwrap();
        let rows = by_class(&records, AttackerType::ConstantOffset);
        for pair in rows.windows(2).filter(|p| p[0].sender_id == p[1].sender_id) {
            let (a, b) = (pair[0], pair[1]);
            assert_eq!(b.position[2], spec.attack.offset[2]);
            let step: f64 = (0..2).map(|i| (b.position[i] - a.position[i]).powi(2)).sum();
            let expect = (a.speed[0].powi(2) + a.speed[1].powi(2)).sqrt() * spec.beacon_interval;
            assert!((step.sqrt() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn benign_vehicles_satisfy_positional_continuity() {
        let spec = small_spec();
        let records = generate_synthetic(&spec).unwrap();
        let rows = by_class(&records, AttackerType::Benign);
        for pair in rows.windows(2).filter(|p| p[0].sender_id == p[1].sender_id) {
            let (a, b) = (pair[0], pair[1]);
            assert_eq!(a.position[2], 0.0);
            let step: f64 =
                (0..3).map(|i| (b.position[i] - a.position[i]).powi(2)).sum::<f64>().sqrt();
            let speed = (0..3).map(|i| a.speed[i].powi(2)).sum::<f64>().sqrt();
            assert!((step - speed * spec.beacon_interval).abs() < 1e-9);
            assert!((b.send_time - a.send_time - spec.beacon_interval).abs() < 1e-12);
        }
    }

    #[test]
    fn stopping_vehicles_freeze_at_the_stop_point() {
        let spec = small_spec();
        let records = generate_synthetic(&spec).unwrap();
        let rows = by_class(&records, AttackerType::EventualStop);
        let mut per_vehicle: BTreeMap<i64, Vec<&MessageRecord>> = BTreeMap::new();
        for r in rows {
            per_vehicle.entry(r.sender_id).or_default().push(r);
        }
        for (_, beacons) in per_vehicle {
            // stop_fraction 0.1 over 20 beacons → truthful for 2, frozen after.
            let stop = (spec.attack.stop_fraction * beacons.len() as f64).floor() as usize;
            for (j, r) in beacons.iter().enumerate() {
                if j < stop {
                    assert_ne!(r.speed, [0.0; 3]);
                } else {
                    assert_eq!(r.speed, [0.0; 3]);
                    assert_eq!(r.position, beacons[stop].position);
                }
            }
            // The frozen point extrapolates the pre-stop trajectory.
            let first = beacons[0];
            for i in 0..2 {
                let projected =
                    first.position[i] + stop as f64 * spec.beacon_interval * first.speed[i];
                assert!((beacons[stop].position[i] - projected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = small_spec();
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let flip = |f: fn(&mut SyntheticSpec)| {
            let mut spec = small_spec();
            f(&mut spec);
            generate_synthetic(&spec).is_err()
        };
        assert!(flip(|s| s.beacon_interval = 0.0));
        assert!(flip(|s| s.attack.stop_fraction = 1.5));
        assert!(flip(|s| s.attack.random_bounds[1] = [10.0, 10.0]));
        assert!(flip(|s| s.area[0] = [400.0, 100.0]));
        assert!(flip(|s| s.beacons_per_vehicle = 0));
        assert!(flip(|s| s.speed_range = [-5.0, 5.0]));
    }
}
