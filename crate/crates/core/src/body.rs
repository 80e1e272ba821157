//! Segment inertial parameters and whole-body center of mass.
//!
//! The default table ships as `data/segment_table_deleva_male.csv` and can be
//! replaced by any CSV with the columns
//! `segment_id, mass_fraction, com_fraction, gyration_fraction, length_fraction`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::Vec2;

/// Segment ids of the 16-segment model, in canonical order.
pub const SEGMENT_IDS: [&str; 16] = [
    "head",
    "trunk",
    "abdomen",
    "pelvis",
    "upper_arm_l",
    "upper_arm_r",
    "forearm_l",
    "forearm_r",
    "hand_l",
    "hand_r",
    "thigh_l",
    "thigh_r",
    "shank_l",
    "shank_r",
    "foot_l",
    "foot_r",
];

/// Segments that carry the exoskeleton mass, in equal shares.
pub const EXOSKELETON_HOSTS: [&str; 3] = ["thigh_l", "thigh_r", "trunk"];

/// Mass of the bilateral hip exoskeleton, kg.
pub const EXOSKELETON_MASS_KG: f64 = 4.5;

pub const DEFAULT_WALKING_SPEED: f64 = 1.25;

const DEFAULT_TABLE_CSV: &str = include_str!("../data/segment_table_deleva_male.csv");

#[derive(Debug, Error)]
pub enum BodyModelError {
    #[error("invalid anthropometry: {0}")]
    Anthropometry(String),
    #[error("segment table is missing segment `{0}`")]
    MissingSegment(String),
    #[error("segment table has unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("segment table lists `{0}` more than once")]
    DuplicateSegment(String),
    #[error("segment `{segment}`: {field} = {value} is outside its allowed range")]
    FractionOutOfRange { segment: String, field: &'static str, value: f64 },
    #[error("mass fractions sum to {0}, expected 1")]
    MassFractionSum(f64),
    #[error("exoskeleton mass must be finite and non-negative, got {0}")]
    NegativeMass(f64),
    #[error("exoskeleton host segment `{0}` not present")]
    MissingHost(String),
    #[error("expected {expected} segment states, got {got}")]
    StateCount { expected: usize, got: usize },
    #[error("total segment mass must be positive")]
    ZeroMass,
    #[error("reading segment table: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading segment table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectAnthropometry {
    /// kg
    pub body_mass: f64,
    /// m
    pub height: f64,
    #[serde(default)]
    pub sex: Sex,
    /// Average walking speed, m/s.
    #[serde(default = "default_walking_speed")]
    pub walking_speed: f64,
}

fn default_walking_speed() -> f64 {
    DEFAULT_WALKING_SPEED
}

impl SubjectAnthropometry {
    pub fn new(body_mass: f64, height: f64, sex: Sex) -> Result<Self, BodyModelError> {
        let a = Self { body_mass, height, sex, walking_speed: DEFAULT_WALKING_SPEED };
        a.validate()?;
        Ok(a)
    }

    pub fn with_walking_speed(mut self, speed: f64) -> Result<Self, BodyModelError> {
        self.walking_speed = speed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), BodyModelError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.body_mass) {
            return Err(BodyModelError::Anthropometry(format!("body_mass = {}", self.body_mass)));
        }
        if !ok(self.height) {
            return Err(BodyModelError::Anthropometry(format!("height = {}", self.height)));
        }
        if !ok(self.walking_speed) {
            return Err(BodyModelError::Anthropometry(format!("walking_speed = {}", self.walking_speed)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub segment_id: String,
    pub mass_fraction: f64,
    /// COM distance from the proximal end as a fraction of segment length.
    pub com_fraction: f64,
    /// Radius of gyration about the mediolateral axis as a fraction of segment length.
    pub gyration_fraction: f64,
    pub length_fraction: f64,
}

/// Anthropometric proportions for a set of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParameterTable {
    rows: Vec<SegmentParams>,
}

impl SegmentParameterTable {
    /// The shipped 16-segment table.
    pub fn default_table() -> Self {
        Self::from_csv_reader(DEFAULT_TABLE_CSV.as_bytes()).expect("bundled segment table is valid")
    }

    /// A table for the standard 16-segment model; every id in [`SEGMENT_IDS`]
    /// must be present. Rows are reordered canonically.
    pub fn standard(rows: Vec<SegmentParams>) -> Result<Self, BodyModelError> {
        for (i, r) in rows.iter().enumerate() {
            if rows[..i].iter().any(|p| p.segment_id == r.segment_id) {
                return Err(BodyModelError::DuplicateSegment(r.segment_id.clone()));
            }
            if !SEGMENT_IDS.contains(&r.segment_id.as_str()) {
                return Err(BodyModelError::UnknownSegment(r.segment_id.clone()));
            }
        }
        let ordered = SEGMENT_IDS
            .iter()
            .map(|id| {
                rows.iter()
                    .find(|r| r.segment_id == *id)
                    .cloned()
                    .ok_or_else(|| BodyModelError::MissingSegment(id.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::custom(ordered)
    }

    /// A table over an arbitrary segment set (test bodies, alternate models).
    pub fn custom(rows: Vec<SegmentParams>) -> Result<Self, BodyModelError> {
        for (i, r) in rows.iter().enumerate() {
            if rows[..i].iter().any(|p| p.segment_id == r.segment_id) {
                return Err(BodyModelError::DuplicateSegment(r.segment_id.clone()));
            }
            check_fraction(&r.segment_id, "mass_fraction", r.mass_fraction, true)?;
            check_fraction(&r.segment_id, "com_fraction", r.com_fraction, false)?;
            check_fraction(&r.segment_id, "gyration_fraction", r.gyration_fraction, false)?;
            check_fraction(&r.segment_id, "length_fraction", r.length_fraction, false)?;
        }
        let sum: f64 = rows.iter().map(|r| r.mass_fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(BodyModelError::MassFractionSum(sum));
        }
        Ok(Self { rows })
    }

    /// Reads a standard 16-segment table; `#` lines are comments.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self, BodyModelError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize().collect::<Result<Vec<SegmentParams>, _>>()?;
        Self::standard(rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, BodyModelError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn rows(&self) -> &[SegmentParams] {
        &self.rows
    }
}

fn check_fraction(segment: &str, field: &'static str, value: f64, allow_one: bool) -> Result<(), BodyModelError> {
    let ok = value > 0.0 && (value < 1.0 || (allow_one && value == 1.0));
    if ok {
        Ok(())
    } else {
        Err(BodyModelError::FractionOutOfRange { segment: segment.to_string(), field, value })
    }
}

/// Inertial properties of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInertia {
    pub segment_id: String,
    /// kg, including any added mass.
    pub mass: f64,
    /// Moment of inertia about the segment COM, mediolateral axis, kg·m².
    pub inertia: f64,
    /// m
    pub length: f64,
    pub com_fraction: f64,
    /// Exoskeleton mass lumped at this segment's COM, kg.
    pub added_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentInertialSet {
    segments: Vec<SegmentInertia>,
}

impl SegmentInertialSet {
    pub fn from_segments(segments: Vec<SegmentInertia>) -> Self {
        Self { segments }
    }

    pub fn segments(&self) -> &[SegmentInertia] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.segments.iter().map(|s| s.mass).sum()
    }

    pub fn total_added_mass(&self) -> f64 {
        self.segments.iter().map(|s| s.added_mass).sum()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.segment_id == id)
    }

    pub fn get(&self, id: &str) -> Option<&SegmentInertia> {
        self.segments.iter().find(|s| s.segment_id == id)
    }

    /// Multiplies every mass and inertia by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| SegmentInertia {
                mass: s.mass * k,
                inertia: s.inertia * k,
                added_mass: s.added_mass * k,
                ..s.clone()
            })
            .collect();
        Self { segments }
    }
}

/// Scales table proportions to a subject.
pub fn estimate_inertial_params(
    anthro: &SubjectAnthropometry,
    table: &SegmentParameterTable,
) -> Result<SegmentInertialSet, BodyModelError> {
    anthro.validate()?;
    let segments = table
        .rows()
        .iter()
        .map(|r| {
            let mass = r.mass_fraction * anthro.body_mass;
            let length = r.length_fraction * anthro.height;
            let radius = r.gyration_fraction * length;
            SegmentInertia {
                segment_id: r.segment_id.clone(),
                mass,
                inertia: mass * radius * radius,
                length,
                com_fraction: r.com_fraction,
                added_mass: 0.0,
            }
        })
        .collect();
    Ok(SegmentInertialSet { segments })
}

/// Splits `exo_mass` evenly over both thighs and the trunk. Added mass sits at
/// each host's COM and keeps the host's radius of gyration, so inertia scales
/// with the new mass.
pub fn attach_exoskeleton_mass(
    inertials: &SegmentInertialSet,
    exo_mass: f64,
) -> Result<SegmentInertialSet, BodyModelError> {
    if !(exo_mass >= 0.0 && exo_mass.is_finite()) {
        return Err(BodyModelError::NegativeMass(exo_mass));
    }
    if exo_mass == 0.0 {
        return Ok(inertials.clone());
    }
    for host in EXOSKELETON_HOSTS {
        if inertials.index_of(host).is_none() {
            return Err(BodyModelError::MissingHost(host.to_string()));
        }
    }
    let share = exo_mass / EXOSKELETON_HOSTS.len() as f64;
    let segments = inertials
        .segments
        .iter()
        .map(|s| {
            if EXOSKELETON_HOSTS.contains(&s.segment_id.as_str()) {
                let mass = s.mass + share;
                let inertia = if s.mass > 0.0 { s.inertia * mass / s.mass } else { s.inertia };
                SegmentInertia { mass, inertia, added_mass: s.added_mass + share, ..s.clone() }
            } else {
                s.clone()
            }
        })
        .collect();
    Ok(SegmentInertialSet { segments })
}

/// Position and velocity of a center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComState {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl ComState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Self { position, velocity }
    }
}

/// Mass-weighted mean of segment COM states.
pub fn whole_body_com(inertials: &SegmentInertialSet, states: &[ComState]) -> Result<ComState, BodyModelError> {
    if states.len() != inertials.len() {
        return Err(BodyModelError::StateCount { expected: inertials.len(), got: states.len() });
    }
    let total = inertials.total_mass();
    if !(total > 0.0) {
        return Err(BodyModelError::ZeroMass);
    }
    let (p, v) =
        inertials.segments.iter().zip(states).fold((Vec2::ZERO, Vec2::ZERO), |(p, v), (seg, st)| {
            (p + st.position * seg.mass, v + st.velocity * seg.mass)
        });
    Ok(ComState { position: p * (1.0 / total), velocity: v * (1.0 / total) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(mass: f64) -> SubjectAnthropometry {
        SubjectAnthropometry::new(mass, 1.748, Sex::Unspecified).unwrap()
    }

    fn row(id: &str, mass_fraction: f64) -> SegmentParams {
        SegmentParams {
            segment_id: id.into(),
            mass_fraction,
            com_fraction: 0.5,
            gyration_fraction: 0.3,
            length_fraction: 0.2,
        }
    }

    #[test]
    fn default_table_is_complete_and_conserves_mass() {
        let table = SegmentParameterTable::default_table();
        assert_eq!(table.rows().len(), 16);
        let set = estimate_inertial_params(&subject(66.4), &table).unwrap();
        assert!((set.total_mass() - 66.4).abs() < 1e-9);
        assert!(set.segments().iter().all(|s| s.inertia >= 0.0));
    }

    #[test]
    fn single_segment_takes_all_mass() {
        let table = SegmentParameterTable::custom(vec![row("body", 1.0)]).unwrap();
        let set = estimate_inertial_params(&subject(70.0), &table).unwrap();
        assert_eq!(set.segments()[0].mass, 70.0);
    }

    #[test]
    fn thigh_inertia_hand_computed() {
        // 10 kg, gyration 0.323, length 0.4 m -> 10 * (0.323 * 0.4)^2
        let anthro = SubjectAnthropometry::new(10.0, 2.0, Sex::Male).unwrap();
        let table = SegmentParameterTable::custom(vec![SegmentParams {
            segment_id: "thigh".into(),
            mass_fraction: 1.0,
            com_fraction: 0.41,
            gyration_fraction: 0.323,
            length_fraction: 0.2,
        }])
        .unwrap();
        let set = estimate_inertial_params(&anthro, &table).unwrap();
        assert!((set.segments()[0].inertia - 0.16692).abs() < 1e-5);
        assert!((set.segments()[0].inertia - 10.0 * (0.323f64 * 0.4).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn missing_segment_is_named() {
        let mut rows = SegmentParameterTable::default_table().rows().to_vec();
        rows.retain(|r| r.segment_id != "shank_r");
        match SegmentParameterTable::standard(rows) {
            Err(BodyModelError::MissingSegment(id)) => assert_eq!(id, "shank_r"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_missing_row_is_named() {
        let csv = DEFAULT_TABLE_CSV.lines().filter(|l| !l.starts_with("hand_l")).collect::<Vec<_>>().join("\n");
        let err = SegmentParameterTable::from_csv_reader(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("hand_l"), "{err}");
    }

    #[test]
    fn rejects_bad_fractions() {
        assert!(matches!(
            SegmentParameterTable::custom(vec![row("a", 0.5), row("b", 0.6)]),
            Err(BodyModelError::MassFractionSum(_))
        ));
        let mut r = row("a", 1.0);
        r.com_fraction = 1.2;
        assert!(matches!(SegmentParameterTable::custom(vec![r]), Err(BodyModelError::FractionOutOfRange { .. })));
    }

    #[test]
    fn exoskeleton_mass_split_in_thirds() {
        let set = estimate_inertial_params(&subject(60.0), &SegmentParameterTable::default_table()).unwrap();
        let with = attach_exoskeleton_mass(&set, 4.5).unwrap();
        for host in EXOSKELETON_HOSTS {
            let before = set.get(host).unwrap();
            let after = with.get(host).unwrap();
            assert!((after.mass - before.mass - 1.5).abs() < 1e-12);
            assert!((after.added_mass - 1.5).abs() < 1e-12);
            // radius of gyration unchanged
            let r0 = (before.inertia / before.mass).sqrt();
            let r1 = (after.inertia / after.mass).sqrt();
            assert!((r0 - r1).abs() < 1e-12);
        }
        assert!((with.total_mass() - 64.5).abs() < 1e-9);
        let three = attach_exoskeleton_mass(&set, 3.0).unwrap();
        assert!((three.total_mass() - 63.0).abs() < 1e-9);
        assert_eq!(attach_exoskeleton_mass(&set, 0.0).unwrap(), set);
        assert!(matches!(attach_exoskeleton_mass(&set, -1.0), Err(BodyModelError::NegativeMass(_))));
    }

    fn two_segments(m0: f64, m1: f64) -> SegmentInertialSet {
        let seg = |id: &str, mass| SegmentInertia {
            segment_id: id.into(),
            mass,
            inertia: 0.0,
            length: 1.0,
            com_fraction: 0.5,
            added_mass: 0.0,
        };
        SegmentInertialSet::from_segments(vec![seg("a", m0), seg("b", m1)])
    }

    #[test]
    fn com_weighted_mean() {
        let at = |x| ComState::new(Vec2::new(x, 0.0), Vec2::ZERO);
        let c = whole_body_com(&two_segments(1.0, 1.0), &[at(0.0), at(1.0)]).unwrap();
        assert!((c.position.x - 0.5).abs() < 1e-15);
        let c = whole_body_com(&two_segments(2.0, 1.0), &[at(0.0), at(3.0)]).unwrap();
        assert!((c.position.x - 1.0).abs() < 1e-15);
        let single = SegmentInertialSet::from_segments(two_segments(2.0, 1.0).segments()[..1].to_vec());
        let s = ComState::new(Vec2::new(0.3, 0.9), Vec2::new(-1.0, 2.0));
        assert_eq!(whole_body_com(&single, &[s]).unwrap(), s);
        assert!(matches!(
            whole_body_com(&two_segments(1.0, 1.0), &[at(0.0)]),
            Err(BodyModelError::StateCount { expected: 2, got: 1 })
        ));
    }
}
