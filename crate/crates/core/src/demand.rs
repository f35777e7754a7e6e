//! Passenger demand: Poisson group arrivals, destination choice from an
//! origin-destination matrix, group sizes, dwell times and reneging.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::network::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u64);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangularDist {
    pub min: f64,
    pub mode: f64,
    pub max: f64,
}

impl TriangularDist {
    pub fn constant(t: f64) -> Self {
        TriangularDist { min: t, mode: t, max: t }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.min >= 0.0 && self.min <= self.mode && self.mode <= self.max) {
            return Err(format!(
                "triangular distribution needs 0 <= min <= mode <= max, got ({}, {}, {})",
                self.min, self.mode, self.max
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupOutcome {
    Served,
    Reneged,
    InSystemAtEnd,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PassengerGroup {
    pub id: GroupId,
    pub size: u32,
    pub origin: NodeId,
    pub destination: NodeId,
    pub t_appear: u64,
    pub t_board_start: Option<u64>,
    pub t_depart: Option<u64>,
    pub t_arrive: Option<u64>,
    pub outcome: GroupOutcome,
}

/// Inverse-CDF draw from Exp(lambda); `lambda_per_h` in arrivals per hour,
/// result in seconds. Callers must not sample with a zero rate.
pub fn sample_interarrival(lambda_per_h: f64, u: f64) -> f64 {
    debug_assert!(lambda_per_h > 0.0);
    -(1.0 - u).ln() / lambda_per_h * 3600.0
}

/// Index `j` whose cumulative bucket contains `u`.
pub fn sample_destination(odm_row: &[f64], u: f64) -> usize {
    cumulative_pick(odm_row, u)
}

/// Group size in persons (1-based).
pub fn sample_group_size(dist: &[f64], u: f64) -> u32 {
    cumulative_pick(dist, u) as u32 + 1
}

fn cumulative_pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = j;
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left u just above the final cumulative sum
    last_positive
}

pub fn sample_triangular(d: &TriangularDist, u: f64) -> f64 {
    let (a, c, b) = (d.min, d.mode, d.max);
    if b <= a {
        return a;
    }
    let fc = (c - a) / (b - a);
    let x = if u < fc {
        a + (u * (b - a) * (c - a)).sqrt()
    } else {
        b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
    };
    x.clamp(a, b)
}

/// Row-stochastic matrix over stations in ascending id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Odm {
    pub rows: Vec<Vec<f64>>,
}

impl Odm {
    pub fn uniform(n: usize) -> Self {
        let p = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { p }).collect())
            .collect();
        Odm { rows }
    }

    /// One message per malformed row.
    pub fn check(&self, n: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.rows.len() != n {
            errs.push(format!("ODM has {} rows, expected {n}", self.rows.len()));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != n {
                errs.push(format!("ODM row {i} has {} entries, expected {n}", row.len()));
                continue;
            }
            if row.iter().any(|&p| !(p >= 0.0)) {
                errs.push(format!("ODM row {i} has a negative entry"));
            }
            if row[i] != 0.0 {
                errs.push(format!("ODM row {i} has non-zero diagonal {}", row[i]));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                errs.push(format!("ODM row {i} sums to {sum}, expected 1"));
            }
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandWindow {
    pub start_s: f64,
    pub end_s: f64,
    /// Arrival intensity per station (station index order), groups per hour.
    pub lambda_per_h: Vec<f64>,
    pub odm: Option<Odm>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandModel {
    /// Station ids, ascending; indexes every per-station vector and the ODM.
    pub stations: Vec<NodeId>,
    pub windows: Vec<DemandWindow>,
    pub odm: Odm,
    /// Probability of group size 1, 2, ...
    pub group_size_dist: Vec<f64>,
    pub board_time: TriangularDist,
    pub alight_time: TriangularDist,
    pub renege_timeout_s: Option<f64>,
}

impl DemandModel {
    pub fn station_index(&self, station: NodeId) -> Option<usize> {
        self.stations.binary_search(&station).ok()
    }

    pub fn window_index_at(&self, t: f64) -> Option<usize> {
        self.windows.iter().position(|w| w.start_s <= t && t < w.end_s)
    }

    pub fn odm_row(&self, window: usize, origin: usize) -> &[f64] {
        let odm = self.windows[window].odm.as_ref().unwrap_or(&self.odm);
        &odm.rows[origin]
    }

    /// Model-load checks; `horizon_s` is the simulated span windows must cover.
    pub fn check(&self, horizon_s: f64, capacity: u32) -> Vec<String> {
        let n = self.stations.len();
        let mut errs = self.odm.check(n);
        if self.windows.is_empty() {
            errs.push("demand has no time windows".into());
        }
        let mut expected_start = 0.0;
        for (k, w) in self.windows.iter().enumerate() {
            if w.start_s != expected_start {
                errs.push(format!(
                    "demand window {k} starts at {} s, expected {expected_start} s (windows must be contiguous from 0)",
                    w.start_s
                ));
            }
            if !(w.end_s > w.start_s) {
                errs.push(format!("demand window {k} is empty or reversed"));
            }
            expected_start = w.end_s;
            if w.lambda_per_h.len() != n {
                errs.push(format!("demand window {k} has {} rates, expected {n}", w.lambda_per_h.len()));
            }
            if w.lambda_per_h.iter().any(|&l| !(l >= 0.0)) {
                errs.push(format!("demand window {k} has a negative rate"));
            }
            if let Some(odm) = &w.odm {
                errs.extend(odm.check(n).into_iter().map(|e| format!("window {k}: {e}")));
            }
        }
        if expected_start < horizon_s {
            errs.push(format!(
                "demand windows end at {expected_start} s, before the horizon {horizon_s} s"
            ));
        }
        let total: f64 = self.group_size_dist.iter().sum();
        if self.group_size_dist.is_empty() || (total - 1.0).abs() > 1e-9 {
            errs.push(format!("group size distribution sums to {total}, expected 1"));
        }
        if self.group_size_dist.iter().any(|&p| !(p >= 0.0)) {
            errs.push("group size distribution has a negative entry".into());
        }
        if let Some(max) = self.group_size_dist.iter().rposition(|&p| p > 0.0) {
            if max as u32 + 1 > capacity {
                errs.push(format!(
                    "group size {} exceeds vehicle capacity {capacity}",
                    max + 1
                ));
            }
        }
        for (name, d) in [("board_time", &self.board_time), ("alight_time", &self.alight_time)] {
            if let Err(e) = d.check() {
                errs.push(format!("{name}: {e}"));
            }
        }
        if let Some(t) = self.renege_timeout_s {
            if !(t > 0.0) {
                errs.push("renege_timeout_s must be positive".into());
            }
        }
        errs
    }
}

/// Arrival rate in force at `t` seconds (half-open windows).
pub fn intensity_at(model: &DemandModel, station: NodeId, t: f64) -> Option<f64> {
    let s = model.station_index(station)?;
    let w = model.window_index_at(t)?;
    Some(model.windows[w].lambda_per_h[s])
}

// --- scenario file section ------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Uniform(f64),
    PerStation(BTreeMap<NodeId, f64>),
}

impl LambdaSpec {
    fn expand(&self, stations: &[NodeId]) -> Vec<f64> {
        match self {
            LambdaSpec::Uniform(l) => vec![*l; stations.len()],
            LambdaSpec::PerStation(m) => {
                stations.iter().map(|s| m.get(s).copied().unwrap_or(0.0)).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OdmSpec {
    /// Only "uniform" is recognised.
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

impl OdmSpec {
    fn build(&self, n: usize) -> Result<Odm, String> {
        match self {
            OdmSpec::Named(name) if name == "uniform" => Ok(Odm::uniform(n)),
            OdmSpec::Named(name) => Err(format!("unknown ODM shorthand {name:?}")),
            OdmSpec::Matrix(rows) => Ok(Odm { rows: rows.clone() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub start_s: f64,
    pub end_s: f64,
    pub lambda_per_h: LambdaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odm: Option<OdmSpec>,
}

fn default_odm() -> OdmSpec {
    OdmSpec::Named("uniform".into())
}

fn default_group_size() -> Vec<f64> {
    vec![0.25; 4]
}

fn default_board() -> TriangularDist {
    TriangularDist { min: 5.0, mode: 8.0, max: 12.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    /// Rate for a single window spanning the whole run; ignored when
    /// `windows` is given.
    #[serde(default = "default_lambda")]
    pub lambda_per_h: LambdaSpec,
    #[serde(default)]
    pub windows: Vec<WindowSection>,
    #[serde(default = "default_odm")]
    pub odm: OdmSpec,
    #[serde(default = "default_group_size")]
    pub group_size: Vec<f64>,
    #[serde(default = "default_board")]
    pub board_time: TriangularDist,
    #[serde(default = "default_board")]
    pub alight_time: TriangularDist,
    #[serde(default)]
    pub renege_timeout_s: Option<f64>,
}

fn default_lambda() -> LambdaSpec {
    LambdaSpec::Uniform(30.0)
}

impl Default for DemandSection {
    fn default() -> Self {
        DemandSection {
            lambda_per_h: default_lambda(),
            windows: Vec::new(),
            odm: default_odm(),
            group_size: default_group_size(),
            board_time: default_board(),
            alight_time: default_board(),
            renege_timeout_s: None,
        }
    }
}

impl DemandSection {
    pub fn build(&self, stations: &[NodeId]) -> Result<DemandModel, String> {
        let n = stations.len();
        let odm = self.odm.build(n)?;
        let windows = if self.windows.is_empty() {
            vec![DemandWindow {
                start_s: 0.0,
                end_s: f64::INFINITY,
                lambda_per_h: self.lambda_per_h.expand(stations),
                odm: None,
            }]
        } else {
            let mut ws = Vec::with_capacity(self.windows.len());
            for w in &self.windows {
                if let LambdaSpec::PerStation(m) = &w.lambda_per_h {
                    if let Some(bad) = m.keys().find(|k| !stations.contains(k)) {
                        return Err(format!("demand rate given for {bad}, which is not a station"));
                    }
                }
                ws.push(DemandWindow {
                    start_s: w.start_s,
                    end_s: w.end_s,
                    lambda_per_h: w.lambda_per_h.expand(stations),
                    odm: w.odm.as_ref().map(|o| o.build(n)).transpose()?,
                });
            }
            ws.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            ws
        };
        if let LambdaSpec::PerStation(m) = &self.lambda_per_h {
            if let Some(bad) = m.keys().find(|k| !stations.contains(k)) {
                return Err(format!("demand rate given for {bad}, which is not a station"));
            }
        }
        Ok(DemandModel {
            stations: stations.to_vec(),
            windows,
            odm,
            group_size_dist: self.group_size.clone(),
            board_time: self.board_time,
            alight_time: self.alight_time,
            renege_timeout_s: self.renege_timeout_s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interarrival_closed_form() {
        assert_eq!(sample_interarrival(60.0, 0.0), 0.0);
        let u = 1.0 - (-1.0f64).exp();
        assert!((sample_interarrival(60.0, u) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn interarrival_matches_numeric_cdf_inversion() {
        // bisection on F(t) = 1 - exp(-lambda t), independent of the closed form
        let lambda_per_s = 60.0 / 3600.0;
        for &u in &[0.1, 0.5, 0.9, 0.999] {
            let (mut lo, mut hi) = (0.0f64, 1e6f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if 1.0 - (-lambda_per_s * mid).exp() < u {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((sample_interarrival(60.0, u) - lo).abs() < 1e-6);
        }
    }

    #[test]
    fn destination_buckets() {
        assert_eq!(sample_destination(&[0.0, 0.5, 0.5], 0.25), 1);
        assert_eq!(sample_destination(&[0.0, 0.5, 0.5], 0.75), 2);
        for u in [0.0, 0.3, 0.999_999] {
            assert_eq!(sample_destination(&[0.0, 1.0, 0.0], u), 1);
        }
    }

    #[test]
    fn group_size_buckets() {
        assert_eq!(sample_group_size(&[1.0], 0.7), 1);
        assert_eq!(sample_group_size(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.5], 0.75), 6);
    }

    #[test]
    fn triangular_cases() {
        let c = TriangularDist::constant(8.0);
        for u in [0.0, 0.5, 0.99] {
            assert_eq!(sample_triangular(&c, u), 8.0);
        }
        let d = TriangularDist { min: 0.0, mode: 5.0, max: 10.0 };
        assert!((sample_triangular(&d, 0.5) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn triangular_matches_numeric_inverse_cdf() {
        let d = TriangularDist { min: 5.0, mode: 8.0, max: 12.0 };
        let pdf = |x: f64| {
            if x < d.min || x > d.max {
                0.0
            } else if x < d.mode {
                2.0 * (x - d.min) / ((d.max - d.min) * (d.mode - d.min))
            } else {
                2.0 * (d.max - x) / ((d.max - d.min) * (d.max - d.mode))
            }
        };
        // midpoint-rule CDF on a fine grid
        let cdf = |x: f64| {
            let n = 20_000;
            let h = (x - d.min) / n as f64;
            (0..n).map(|i| pdf(d.min + (i as f64 + 0.5) * h) * h).sum::<f64>()
        };
        for &u in &[0.1, 0.42, 0.8] {
            let x = sample_triangular(&d, u);
            assert!((cdf(x) - u).abs() < 1e-6, "u={u} x={x}");
        }
    }

    fn two_window_model() -> DemandModel {
        DemandSection {
            windows: vec![
                WindowSection {
                    start_s: 0.0,
                    end_s: 3600.0,
                    lambda_per_h: LambdaSpec::Uniform(30.0),
                    odm: None,
                },
                WindowSection {
                    start_s: 3600.0,
                    end_s: 7200.0,
                    lambda_per_h: LambdaSpec::Uniform(90.0),
                    odm: None,
                },
            ],
            ..DemandSection::default()
        }
        .build(&[NodeId(1), NodeId(2)])
        .unwrap()
    }

    #[test]
    fn intensity_is_piecewise_constant_half_open() {
        let m = two_window_model();
        assert_eq!(intensity_at(&m, NodeId(1), 3599.0), Some(30.0));
        assert_eq!(intensity_at(&m, NodeId(1), 3600.0), Some(90.0));
        assert_eq!(intensity_at(&m, NodeId(1), 3601.0), Some(90.0));
        assert_eq!(intensity_at(&m, NodeId(1), 7200.0), None);
        assert!(m.check(7200.0, 4).is_empty());
        assert!(!m.check(8000.0, 4).is_empty());

        let single = DemandSection {
            lambda_per_h: LambdaSpec::Uniform(60.0),
            ..DemandSection::default()
        }
        .build(&[NodeId(1), NodeId(2)])
        .unwrap();
        assert_eq!(intensity_at(&single, NodeId(2), 3600.0), Some(60.0));
    }

    #[test]
    fn odm_row_sum_is_checked() {
        let bad = Odm { rows: vec![vec![0.0, 0.9], vec![1.0, 0.0]] };
        let errs = bad.check(2);
        assert_eq!(errs.len(), 1);
        assert!(errs[0].contains("row 0"));
        let diag = Odm { rows: vec![vec![0.5, 0.5], vec![1.0, 0.0]] };
        assert!(diag.check(2).iter().any(|e| e.contains("diagonal")));
        assert!(Odm::uniform(4).check(4).is_empty());
    }

    #[test]
    fn group_larger_than_capacity_rejected() {
        let mut m = two_window_model();
        m.group_size_dist = vec![0.0, 0.0, 0.0, 0.0, 1.0];
        assert!(m.check(7200.0, 4).iter().any(|e| e.contains("capacity")));
    }
}
