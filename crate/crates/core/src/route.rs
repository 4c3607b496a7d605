//! Route geometry: a centerline polyline with arc-length parameterization,
//! a piecewise-constant speed limit and signalized control zones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D point in meters, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point(pub f64, pub f64);

impl Point {
    pub fn x(self) -> f64 {
        self.0
    }

    pub fn y(self) -> f64 {
        self.1
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.0 - other.0).hypot(self.1 - other.1)
    }
}

/// Speed limit that applies from `start` until the next zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedZone {
    pub start: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    TrafficLight,
    StopSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Green,
    Amber,
    Red,
}

/// Fixed-time signal plan, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightSchedule {
    pub cycle: f64,
    pub green: f64,
    pub amber: f64,
    pub offset: f64,
}

impl LightSchedule {
    pub fn state_at(&self, time: f64) -> LightState {
        let phase = (time + self.offset).rem_euclid(self.cycle);
        if phase < self.green {
            LightState::Green
        } else if phase < self.green + self.amber {
            LightState::Amber
        } else {
            LightState::Red
        }
    }
}

/// A signalized stretch of road. The stop line sits at `start`.
///
/// For a traffic light, crossing `start` during red is an infraction. For a
/// stop sign, the vehicle must come to a halt somewhere in `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlZone {
    pub start: f64,
    pub end: f64,
    pub kind: ZoneKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<LightSchedule>,
}

impl ControlZone {
    pub fn light_at(&self, time: f64) -> Option<LightState> {
        match self.kind {
            ZoneKind::TrafficLight => Some(
                self.schedule
                    .map_or(LightState::Green, |s| s.state_at(time)),
            ),
            ZoneKind::StopSign => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RouteData {
    id: String,
    name: String,
    polyline: Vec<Point>,
    length: f64,
    speed_limits: Vec<SpeedZone>,
    control_zones: Vec<ControlZone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RouteData", into = "RouteData")]
pub struct Route {
    pub id: String,
    pub name: String,
    polyline: Vec<Point>,
    cumulative: Vec<f64>,
    headings: Vec<f64>,
    speed_limits: Vec<SpeedZone>,
    control_zones: Vec<ControlZone>,
}

impl TryFrom<RouteData> for Route {
    type Error = Error;

    fn try_from(data: RouteData) -> Result<Route> {
        let route = Route::new(
            data.id,
            data.name,
            data.polyline,
            data.speed_limits,
            data.control_zones,
        )?;
        if (route.length() - data.length).abs() > 1e-6 * route.length().max(1.0) {
            return Err(Error::invalid(
                "length",
                format!(
                    "declared {} but polyline measures {}",
                    data.length,
                    route.length()
                ),
            ));
        }
        Ok(route)
    }
}

impl From<Route> for RouteData {
    fn from(route: Route) -> RouteData {
        let length = route.length();
        RouteData {
            id: route.id,
            name: route.name,
            polyline: route.polyline,
            length,
            speed_limits: route.speed_limits,
            control_zones: route.control_zones,
        }
    }
}

impl Route {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        polyline: Vec<Point>,
        speed_limits: Vec<SpeedZone>,
        control_zones: Vec<ControlZone>,
    ) -> Result<Route> {
        if polyline.len() < 2 {
            return Err(Error::invalid("polyline", "needs at least two points"));
        }
        if polyline
            .iter()
            .any(|p| !p.0.is_finite() || !p.1.is_finite())
        {
            return Err(Error::NonFinite { field: "polyline" });
        }
        let mut cumulative = Vec::with_capacity(polyline.len());
        let mut headings = Vec::with_capacity(polyline.len() - 1);
        cumulative.push(0.0);
        for pair in polyline.windows(2) {
            let d = pair[0].distance(pair[1]);
            if d <= 0.0 {
                return Err(Error::invalid("polyline", "consecutive points coincide"));
            }
            cumulative.push(cumulative.last().unwrap() + d);
            headings.push((pair[1].1 - pair[0].1).atan2(pair[1].0 - pair[0].0));
        }
        let length = *cumulative.last().unwrap();

        if speed_limits.is_empty() || speed_limits[0].start != 0.0 {
            return Err(Error::invalid("speed_limits", "first zone must start at 0"));
        }
        for pair in speed_limits.windows(2) {
            if pair[1].start <= pair[0].start {
                return Err(Error::invalid(
                    "speed_limits",
                    "zones must be strictly increasing",
                ));
            }
        }
        if speed_limits
            .iter()
            .any(|z| !(z.limit.is_finite() && z.limit > 0.0))
        {
            return Err(Error::invalid("speed_limits", "limits must be positive"));
        }
        for zone in &control_zones {
            if !(zone.start >= 0.0 && zone.start < zone.end && zone.end <= length) {
                return Err(Error::invalid(
                    "control_zones",
                    "zone must lie inside the route",
                ));
            }
            if let Some(s) = zone.schedule {
                if !(s.cycle > 0.0
                    && s.green >= 0.0
                    && s.amber >= 0.0
                    && s.green + s.amber <= s.cycle)
                {
                    return Err(Error::invalid(
                        "control_zones",
                        "inconsistent light schedule",
                    ));
                }
            }
        }

        Ok(Route {
            id: id.into(),
            name: name.into(),
            polyline,
            cumulative,
            headings,
            speed_limits,
            control_zones,
        })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn polyline(&self) -> &[Point] {
        &self.polyline
    }

    pub fn speed_limits(&self) -> &[SpeedZone] {
        &self.speed_limits
    }

    pub fn control_zones(&self) -> &[ControlZone] {
        &self.control_zones
    }

    fn segment_at(&self, arc: f64) -> usize {
        let idx = self.cumulative.partition_point(|&c| c <= arc);
        idx.saturating_sub(1).min(self.headings.len() - 1)
    }

    /// Centerline tangent direction at `arc`, radians.
    pub fn heading_at(&self, arc: f64) -> f64 {
        self.headings[self.segment_at(arc)]
    }

    /// Centerline point at `arc`; extrapolates linearly past either end.
    pub fn point_at(&self, arc: f64) -> Point {
        let seg = self.segment_at(arc);
        let base = self.polyline[seg];
        let t = arc - self.cumulative[seg];
        let h = self.headings[seg];
        Point(base.0 + t * h.cos(), base.1 + t * h.sin())
    }

    /// World position of a point given in route coordinates.
    pub fn to_world(&self, arc: f64, lateral: f64) -> Point {
        let p = self.point_at(arc);
        let h = self.heading_at(arc);
        Point(p.0 - lateral * h.sin(), p.1 + lateral * h.cos())
    }

    /// Euclidean distance from `p` to the nearest point of the centerline.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.polyline
            .windows(2)
            .map(|seg| point_segment_distance(p, seg[0], seg[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn speed_limit_at(&self, arc: f64) -> f64 {
        let idx = self.speed_limits.partition_point(|z| z.start <= arc);
        self.speed_limits[idx.saturating_sub(1)].limit
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point(a.0 + t * dx, a.1 + t * dy))
}

/// Incremental route construction from straights and circular arcs.
#[derive(Debug, Clone)]
pub struct RouteBuilder {
    points: Vec<Point>,
    heading: f64,
    arc: f64,
    speed_limits: Vec<SpeedZone>,
    control_zones: Vec<ControlZone>,
    spacing: f64,
}

impl RouteBuilder {
    pub fn new(start: Point, heading: f64, limit: f64) -> RouteBuilder {
        RouteBuilder {
            points: vec![start],
            heading,
            arc: 0.0,
            speed_limits: vec![SpeedZone { start: 0.0, limit }],
            control_zones: Vec::new(),
            spacing: 1.0,
        }
    }

    /// Current arc length from the start.
    pub fn arc(&self) -> f64 {
        self.arc
    }

    pub fn straight(mut self, length: f64) -> RouteBuilder {
        let n = (length / self.spacing).ceil().max(1.0) as usize;
        let step = length / n as f64;
        let start = *self.points.last().unwrap();
        let (s, c) = self.heading.sin_cos();
        for i in 1..=n {
            let d = step * i as f64;
            self.points.push(Point(start.0 + d * c, start.1 + d * s));
        }
        self.arc += length;
        self
    }

    /// Circular arc; positive `degrees` turns left.
    pub fn turn(mut self, radius: f64, degrees: f64) -> RouteBuilder {
        let sweep = degrees.to_radians();
        let length = radius * sweep.abs();
        let n = (length / self.spacing).ceil().max(1.0) as usize;
        let start = *self.points.last().unwrap();
        let sign = sweep.signum();
        // center of the turning circle
        let cx = start.0 - sign * radius * self.heading.sin();
        let cy = start.1 + sign * radius * self.heading.cos();
        let h0 = self.heading;
        for i in 1..=n {
            let h = h0 + sweep * i as f64 / n as f64;
            self.points.push(Point(
                cx + sign * radius * h.sin(),
                cy - sign * radius * h.cos(),
            ));
        }
        self.heading = h0 + sweep;
        // chord sampling shortens the path slightly; track the sampled length
        self.arc = self.measured();
        self
    }

    fn measured(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Sets the speed limit from the current position onward.
    pub fn limit(mut self, limit: f64) -> RouteBuilder {
        self.arc = self.measured();
        if let Some(last) = self.speed_limits.last_mut() {
            if (last.start - self.arc).abs() < 1e-9 {
                last.limit = limit;
                return self;
            }
        }
        self.speed_limits.push(SpeedZone {
            start: self.arc,
            limit,
        });
        self
    }

    /// Places a control zone starting `ahead` meters past the current position.
    pub fn zone(
        mut self,
        ahead: f64,
        length: f64,
        kind: ZoneKind,
        schedule: Option<LightSchedule>,
    ) -> RouteBuilder {
        self.arc = self.measured();
        self.control_zones.push(ControlZone {
            start: self.arc + ahead,
            end: self.arc + ahead + length,
            kind,
            schedule,
        });
        self
    }

    pub fn build(self, id: impl Into<String>, name: impl Into<String>) -> Result<Route> {
        Route::new(id, name, self.points, self.speed_limits, self.control_zones)
    }
}
