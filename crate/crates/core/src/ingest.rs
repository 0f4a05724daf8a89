//! Shot events to per-player angle × distance × quarter count tensors.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::CountTensor;

pub const N_QUARTERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotEvent {
    pub player_id: String,
    pub x: f64,
    pub y: f64,
    pub period: u32,
}

/// Axis-aligned court rectangle in feet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourtBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl CourtBounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Polar partition of the half court around the basket. Angle bins split
/// [0, π] into equal arcs; the first `n_dist - 1` distance bins are annuli
/// of equal area inside `radius`, the last bin is the rest of the court.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionScheme {
    pub n_angle: usize,
    pub n_dist: usize,
    pub basket_origin: (f64, f64),
    pub radius: f64,
    pub court_bounds: CourtBounds,
}

impl Default for PartitionScheme {
    fn default() -> Self {
        PartitionScheme {
            n_angle: 11,
            n_dist: 12,
            basket_origin: (25.0, 5.25),
            radius: 30.0,
            court_bounds: CourtBounds {
                x_min: 0.0,
                x_max: 50.0,
                y_min: 0.0,
                y_max: 47.0,
            },
        }
    }
}

impl PartitionScheme {
    pub fn validate(&self) -> Result<()> {
        let b = &self.court_bounds;
        if self.n_angle == 0 || self.n_dist < 2 {
            return Err(Error::Config("need n_angle ≥ 1 and n_dist ≥ 2".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("radius must be positive, got {}", self.radius)));
        }
        if !(b.x_min < b.x_max && b.y_min < b.y_max) {
            return Err(Error::Config("empty court bounds".into()));
        }
        if !b.contains(self.basket_origin.0, self.basket_origin.1) {
            return Err(Error::Config("basket origin outside court bounds".into()));
        }
        Ok(())
    }

    pub fn n_annuli(&self) -> usize {
        self.n_dist - 1
    }

    /// Outer radii of the equal-area annuli.
    pub fn annulus_edges(&self) -> Vec<f64> {
        let m = self.n_annuli() as f64;
        (1..=self.n_annuli())
            .map(|k| self.radius * (k as f64 / m).sqrt())
            .collect()
    }
}

/// Why an event did not reach a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Overtime,
    ParseError,
    NegativeAngle,
    OutOfBounds,
    BelowMinAttempts,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Overtime => "overtime",
            RejectReason::ParseError => "parse_error",
            RejectReason::NegativeAngle => "negative_angle",
            RejectReason::OutOfBounds => "out_of_bounds",
            RejectReason::BelowMinAttempts => "below_min_attempts",
        }
    }
}

/// 1-based `(angle, distance)` bin of a court location.
pub fn polar_bin(x: f64, y: f64, scheme: &PartitionScheme) -> std::result::Result<(usize, usize), RejectReason> {
    if !x.is_finite() || !y.is_finite() || !scheme.court_bounds.contains(x, y) {
        return Err(RejectReason::OutOfBounds);
    }
    let (dx, dy) = (x - scheme.basket_origin.0, y - scheme.basket_origin.1);
    if dy < 0.0 {
        return Err(RejectReason::NegativeAngle);
    }
    let r2 = dx * dx + dy * dy;
    let theta = dy.atan2(dx);
    let arc = PI / scheme.n_angle as f64;
    let angle = ((theta / arc).ceil() as usize).clamp(1, scheme.n_angle);
    let m = scheme.n_annuli();
    let r_max2 = scheme.radius * scheme.radius;
    let dist = if r2 <= r_max2 {
        ((m as f64 * r2 / r_max2).ceil() as usize).clamp(1, m)
    } else {
        scheme.n_dist
    };
    Ok((angle, dist))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestFilters {
    /// Players with fewer accepted attempts are dropped.
    pub min_attempts: u64,
}

impl Default for IngestFilters {
    fn default() -> Self {
        IngestFilters { min_attempts: 300 }
    }
}

/// Rejection counts and per-player bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_events: usize,
    pub accepted: u64,
    pub rejected: BTreeMap<String, u64>,
    pub players_kept: usize,
    /// `(player_id, attempts)` of players under the threshold.
    pub players_dropped: Vec<(String, u64)>,
    pub warnings: Vec<String>,
}

impl IngestReport {
    fn reject(&mut self, reason: RejectReason, n: u64) {
        *self.rejected.entry(reason.as_str().to_string()).or_insert(0) += n;
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

/// Bins events into one `n_angle × n_dist × 4` tensor per player, ordered by
/// player id. Parse failures recorded in `report` beforehand are kept.
pub fn build_tensors(
    events: &[ShotEvent],
    scheme: &PartitionScheme,
    filters: &IngestFilters,
    mut report: IngestReport,
) -> Result<(Vec<CountTensor>, IngestReport)> {
    scheme.validate()?;
    let dims = [scheme.n_angle, scheme.n_dist, N_QUARTERS];
    let mut per_player: BTreeMap<&str, CountTensor> = BTreeMap::new();
    report.n_events += events.len();
    for ev in events {
        if ev.period == 0 {
            report.reject(RejectReason::ParseError, 1);
            continue;
        }
        if ev.period as usize > N_QUARTERS {
            report.reject(RejectReason::Overtime, 1);
            continue;
        }
        match polar_bin(ev.x, ev.y, scheme) {
            Ok((a, d)) => {
                if !per_player.contains_key(ev.player_id.as_str()) {
                    per_player.insert(&ev.player_id, CountTensor::zeros(ev.player_id.clone(), dims)?);
                }
                let t = per_player.get_mut(ev.player_id.as_str()).expect("inserted above");
                *t.get_mut(a - 1, d - 1, ev.period as usize - 1) += 1;
            }
            Err(reason) => report.reject(reason, 1),
        }
    }
    let mut out = Vec::with_capacity(per_player.len());
    for (id, t) in per_player {
        let total = t.total();
        if total < filters.min_attempts {
            report.reject(RejectReason::BelowMinAttempts, total);
            report.players_dropped.push((id.to_string(), total));
        } else {
            report.accepted += total;
            out.push(t);
        }
    }
    report.players_kept = out.len();
    Ok((out, report))
}

/// Header names of the four input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub player_id: String,
    pub x: String,
    pub y: String,
    pub period: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            player_id: "player_id".into(),
            x: "x".into(),
            y: "y".into(),
            period: "period".into(),
        }
    }
}

/// Everything the ingest step is configured by.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub scheme: PartitionScheme,
    pub columns: ColumnMap,
    pub filters: IngestFilters,
}

const MAX_WARNINGS: usize = 50;

/// Reads shot events from CSV. Malformed rows are counted as `parse_error`
/// in the returned report instead of failing the whole read; a missing
/// column is fatal.
pub fn read_events<R: Read>(input: R, columns: &ColumnMap) -> Result<(Vec<ShotEvent>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("input has no column named {name:?}")))
    };
    let (ci, cx, cy, cp) = (col(&columns.player_id)?, col(&columns.x)?, col(&columns.y)?, col(&columns.period)?);
    let mut events = Vec::new();
    let mut report = IngestReport::default();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|r| {
            let field = |i: usize| r.get(i).ok_or_else(|| format!("missing field {}", i + 1));
            let id = field(ci)?.to_string();
            if id.is_empty() {
                return Err("empty player id".to_string());
            }
            let x: f64 = field(cx)?.parse().map_err(|e| format!("x: {e}"))?;
            let y: f64 = field(cy)?.parse().map_err(|e| format!("y: {e}"))?;
            let period: u32 = field(cp)?.parse().map_err(|e| format!("period: {e}"))?;
            Ok(ShotEvent { player_id: id, x, y, period })
        });
        match parsed {
            Ok(ev) => events.push(ev),
            Err(msg) => {
                report.n_events += 1;
                report.reject(RejectReason::ParseError, 1);
                if report.warnings.len() < MAX_WARNINGS {
                    report.warnings.push(format!("line {line}: {msg}"));
                }
            }
        }
    }
    Ok((events, report))
}

/// CSV file to tensors in one step.
pub fn ingest_csv(path: impl AsRef<std::path::Path>, cfg: &IngestConfig) -> Result<(Vec<CountTensor>, IngestReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (events, report) = read_events(std::io::BufReader::new(file), &cfg.columns)?;
    build_tensors(&events, &cfg.scheme, &cfg.filters, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> PartitionScheme {
        PartitionScheme::default()
    }

    fn at(r: f64, theta: f64) -> (f64, f64) {
        let s = scheme();
        (s.basket_origin.0 + r * theta.cos(), s.basket_origin.1 + r * theta.sin())
    }

    #[test]
    fn origin_is_first_cell() {
        assert_eq!(polar_bin(25.0, 5.25, &scheme()), Ok((1, 1)));
    }

    #[test]
    fn first_annulus_edge() {
        let r1 = 30.0 * (1.0f64 / 11.0).sqrt();
        let (x, y) = at(r1 - 1e-9, 0.1);
        assert_eq!(polar_bin(x, y, &scheme()), Ok((1, 1)));
        let (x, y) = at(r1 + 1e-9, 0.1);
        assert_eq!(polar_bin(x, y, &scheme()).unwrap().1, 2);
    }

    #[test]
    fn angle_bins_cover_half_plane() {
        let arc = PI / 11.0;
        for k in 0..11 {
            let (x, y) = at(10.0, (k as f64 + 0.5) * arc);
            assert_eq!(polar_bin(x, y, &scheme()).unwrap().0, k + 1);
        }
        // Straight along the baseline in the other direction is θ = π.
        assert_eq!(polar_bin(5.0, 5.25, &scheme()).unwrap().0, 11);
    }

    #[test]
    fn residual_bin_and_rejections() {
        assert_eq!(polar_bin(25.0, 40.0, &scheme()).unwrap().1, 12);
        assert_eq!(polar_bin(25.0, 2.0, &scheme()), Err(RejectReason::NegativeAngle));
        assert_eq!(polar_bin(-1.0, 10.0, &scheme()), Err(RejectReason::OutOfBounds));
        assert_eq!(polar_bin(f64::NAN, 10.0, &scheme()), Err(RejectReason::OutOfBounds));
    }

    #[test]
    fn annuli_have_equal_area() {
        let s = scheme();
        let edges = s.annulus_edges();
        let mut prev = 0.0;
        let target = PI * s.radius * s.radius / (2.0 * 11.0 * 11.0);
        for r in edges {
            let area = (r * r - prev * prev) * (PI / 11.0) / 2.0;
            assert!((area - target).abs() < 1e-9, "{area} vs {target}");
            prev = r;
        }
    }

    #[test]
    fn single_event_tensor() {
        let (x, y) = at(5.0, 1.0);
        let (a, d) = polar_bin(x, y, &scheme()).unwrap();
        let ev = vec![ShotEvent { player_id: "p".into(), x, y, period: 2 }];
        let (ts, rep) = build_tensors(&ev, &scheme(), &IngestFilters { min_attempts: 0 }, IngestReport::default()).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].dims, [11, 12, 4]);
        assert_eq!(ts[0].total(), 1);
        assert_eq!(ts[0].get(a - 1, d - 1, 1), 1);
        assert_eq!(rep.accepted, 1);
    }

    #[test]
    fn overtime_is_dropped() {
        let ev = vec![
            ShotEvent { player_id: "p".into(), x: 25.0, y: 10.0, period: 1 },
            ShotEvent { player_id: "p".into(), x: 25.0, y: 10.0, period: 5 },
        ];
        let (ts, rep) = build_tensors(&ev, &scheme(), &IngestFilters { min_attempts: 0 }, IngestReport::default()).unwrap();
        assert_eq!(ts[0].total(), 1);
        assert_eq!(rep.rejected["overtime"], 1);
    }

    #[test]
    fn low_volume_players_are_dropped() {
        let ev: Vec<ShotEvent> = (0..5)
            .map(|i| ShotEvent { player_id: if i < 3 { "a" } else { "b" }.into(), x: 25.0, y: 10.0, period: 1 })
            .collect();
        let (ts, rep) = build_tensors(&ev, &scheme(), &IngestFilters { min_attempts: 3 }, IngestReport::default()).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].unit_id, "a");
        assert_eq!(rep.rejected["below_min_attempts"], 2);
        assert_eq!(rep.players_dropped, vec![("b".to_string(), 2)]);
    }

    #[test]
    fn csv_with_renamed_columns_and_bad_row() {
        let text = "shooter,loc_x,loc_y,qtr\nA,25,10,1\nA,oops,10,1\nA,25,12,2\n";
        let cols = ColumnMap { player_id: "shooter".into(), x: "loc_x".into(), y: "loc_y".into(), period: "qtr".into() };
        let (ev, rep) = read_events(text.as_bytes(), &cols).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(rep.rejected["parse_error"], 1);
        assert!(rep.warnings[0].starts_with("line 3"));
        assert!(read_events(text.as_bytes(), &ColumnMap::default()).is_err());
    }
}
