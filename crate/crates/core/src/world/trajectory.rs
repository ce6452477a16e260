use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{Layout, Scene, LANE_OFFSET};
use super::{AGENT_RED, DT};
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Agent body box `(length, width, height)`, meters.
pub const BODY_EXTENTS: [f64; 3] = [4.5, 1.8, 1.5];
const PATH_RESOLUTION: f64 = 0.05;
const LONGITUDINAL_JITTER: f64 = 4.0;
const LATERAL_JITTER: f64 = 0.3;
const SPEED_VARIANTS: [f64; 3] = [0.9, 1.0, 1.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrajectoryPattern {
    StraightMeeting,
    HeadOnPass,
    PerpendicularCross,
    TJunctionTurnMeeting,
    Following,
    TurningMeeting,
}

impl TrajectoryPattern {
    pub const ALL: [TrajectoryPattern; 6] = [
        TrajectoryPattern::StraightMeeting,
        TrajectoryPattern::HeadOnPass,
        TrajectoryPattern::PerpendicularCross,
        TrajectoryPattern::TJunctionTurnMeeting,
        TrajectoryPattern::Following,
        TrajectoryPattern::TurningMeeting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryPattern::StraightMeeting => "straight_meeting",
            TrajectoryPattern::HeadOnPass => "head_on_pass",
            TrajectoryPattern::PerpendicularCross => "perpendicular_cross",
            TrajectoryPattern::TJunctionTurnMeeting => "t_junction_turn_meeting",
            TrajectoryPattern::Following => "following",
            TrajectoryPattern::TurningMeeting => "turning_meeting",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn feasible_on(self, layout: Layout) -> bool {
        use TrajectoryPattern::*;
        match self {
            StraightMeeting | HeadOnPass | Following => true,
            TJunctionTurnMeeting => layout != Layout::Straight,
            PerpendicularCross | TurningMeeting => layout == Layout::Crossroad,
        }
    }
}

/// Per-frame ground position and heading of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Ground-contact point of the body center, `z = 0`.
    pub positions: Vec<Vec3>,
    /// Heading, radians counterclockwise from east.
    pub yaws: Vec<f64>,
    pub extents: Vec3,
    pub color: [u8; 3],
}

impl AgentState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Center of the body box at frame `k`.
    pub fn body_center(&self, k: usize) -> Vec3 {
        self.positions[k] + Vec3::new(0.0, 0.0, self.extents.z() / 2.0)
    }
}

/// Densely sampled planar curve with headings.
#[derive(Debug, Clone)]
struct Path {
    pts: Vec<(f64, f64, f64)>,
}

impl Path {
    fn len(&self) -> f64 {
        (self.pts.len() - 1) as f64 * PATH_RESOLUTION
    }

    fn at(&self, s: f64) -> (f64, f64, f64) {
        let u = (s / PATH_RESOLUTION).clamp(0.0, (self.pts.len() - 1) as f64);
        let i = (u.floor() as usize).min(self.pts.len() - 2);
        let f = u - i as f64;
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let mut dyaw = b.2 - a.2;
        dyaw -= (dyaw / (2.0 * PI)).round() * 2.0 * PI;
        (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f, a.2 + dyaw * f)
    }

    fn translated(mut self, dx: f64, dy: f64) -> Path {
        for p in &mut self.pts {
            p.0 += dx;
            p.1 += dy;
        }
        self
    }
}

/// Builds a path from straights, arcs and lane shifts, sampled every `PATH_RESOLUTION`.
struct PathBuilder {
    pts: Vec<(f64, f64, f64)>,
}

impl PathBuilder {
    fn new(x: f64, y: f64, yaw: f64) -> Self {
        PathBuilder {
            pts: vec![(x, y, yaw)],
        }
    }

    fn last(&self) -> (f64, f64, f64) {
        *self.pts.last().unwrap()
    }

    fn steps(len: f64) -> usize {
        (len / PATH_RESOLUTION).round() as usize
    }

    fn straight(mut self, len: f64) -> Self {
        let (x, y, yaw) = self.last();
        for i in 1..=Self::steps(len) {
            let s = i as f64 * PATH_RESOLUTION;
            self.pts.push((x + s * yaw.cos(), y + s * yaw.sin(), yaw));
        }
        self
    }

    /// Circular arc; positive sweep turns left.
    fn arc(mut self, radius: f64, sweep: f64) -> Self {
        let (x, y, yaw) = self.last();
        let side = sweep.signum();
        let (cx, cy) = (x - side * radius * yaw.sin(), y + side * radius * yaw.cos());
        let n = Self::steps(radius * sweep.abs());
        for i in 1..=n {
            let h = yaw + sweep * i as f64 / n as f64;
            self.pts.push((cx + side * radius * h.sin(), cy - side * radius * h.cos(), h));
        }
        self
    }

    /// Smoothstep sideways move over `len`; positive `lateral` moves left.
    fn lane_shift(mut self, len: f64, lateral: f64) -> Self {
        let (x, y, yaw) = self.last();
        let (fx, fy) = (yaw.cos(), yaw.sin());
        let (lx, ly) = (-fy, fx);
        let n = Self::steps(len);
        for i in 1..=n {
            let u = i as f64 / n as f64;
            let off = lateral * u * u * (3.0 - 2.0 * u);
            let slope = lateral * 6.0 * u * (1.0 - u) / len;
            let s = u * len;
            self.pts.push((x + fx * s + lx * off, y + fy * s + ly * off, yaw + slope.atan()));
        }
        self
    }

    fn build(self) -> Path {
        Path { pts: self.pts }
    }
}

/// Constant-speed travel along a path with an optional hold.
#[derive(Debug, Clone)]
struct Motion {
    path: Path,
    speed: f64,
    /// Stop at this arc length until the given frame.
    hold: Option<(f64, usize)>,
}

impl Motion {
    fn arc_lengths(&self, frames: usize) -> Vec<f64> {
        let step = self.speed * DT;
        let mut s = 0.0f64;
        let mut out = Vec::with_capacity(frames);
        for k in 0..frames {
            out.push(s);
            let mut next = s + step;
            if let Some((stop, resume)) = self.hold {
                if s <= stop && next > stop && k + 1 < resume {
                    next = stop;
                }
            }
            s = next.min(self.path.len());
        }
        out
    }

    fn state(&self, frames: usize) -> AgentState {
        let (positions, yaws) = self
            .arc_lengths(frames)
            .into_iter()
            .map(|s| {
                let (x, y, yaw) = self.path.at(s);
                (Vec3::new(x, y, 0.0), yaw)
            })
            .unzip();
        AgentState {
            positions,
            yaws,
            extents: Vec3(BODY_EXTENTS),
            color: AGENT_RED,
        }
    }
}

struct Jitter {
    frames: usize,
    along: [f64; 2],
    lateral: [f64; 2],
}

fn rigid_jitter(path: Path, along: f64, lateral: f64) -> Path {
    let yaw = path.pts[0].2;
    let dx = along * yaw.cos() - lateral * yaw.sin();
    let dy = along * yaw.sin() + lateral * yaw.cos();
    path.translated(dx, dy)
}

/// Simulates both agents for one pattern.
///
/// `seed % 3` picks a speed variant; `seed / 3` drives the start/end jitter and the
/// sequence length, so each jittered trajectory pair appears in three variants.
pub fn simulate_pair(pattern: TrajectoryPattern, scene: &Scene, seed: u64) -> Result<[AgentState; 2]> {
    if !pattern.feasible_on(scene.layout) {
        return Err(Error::Infeasible {
            pattern: pattern.name(),
            layout: scene.layout.name(),
        });
    }
    let sigma = SPEED_VARIANTS[(seed % 3) as usize];
    let mut rng = ChaCha8Rng::seed_from_u64((seed / 3) ^ 0x7a_10f1e);
    let j = Jitter {
        frames: rng.gen_range(240..=260),
        along: [
            rng.gen_range(-LONGITUDINAL_JITTER..=LONGITUDINAL_JITTER),
            rng.gen_range(-LONGITUDINAL_JITTER..=LONGITUDINAL_JITTER),
        ],
        lateral: [
            rng.gen_range(-LATERAL_JITTER..=LATERAL_JITTER),
            rng.gen_range(-LATERAL_JITTER..=LATERAL_JITTER),
        ],
    };
    let [a, b] = pattern_motions(pattern, sigma, &j);
    Ok([a.state(j.frames), b.state(j.frames)])
}

fn pattern_motions(pattern: TrajectoryPattern, sigma: f64, j: &Jitter) -> [Motion; 2] {
    let l = LANE_OFFSET;
    let jit = |p: Path, i: usize| rigid_jitter(p, j.along[i], j.lateral[i]);
    let mv = |path: Path, speed: f64| Motion {
        path,
        speed: speed * sigma,
        hold: None,
    };
    use TrajectoryPattern::*;
    match pattern {
        StraightMeeting => [
            mv(jit(PathBuilder::new(-40.0, -l, 0.0).straight(200.0).build(), 0), 8.0),
            mv(jit(PathBuilder::new(35.0, l, PI).straight(200.0).build(), 1), 7.0),
        ],
        HeadOnPass => [
            mv(jit(PathBuilder::new(-40.0, -l, 0.0).straight(200.0).build(), 0), 8.0),
            // Starts in the oncoming lane and swerves back before the pass.
            mv(
                jit(
                    PathBuilder::new(45.0, -l, PI)
                        .straight(10.0)
                        .lane_shift(25.0, -2.0 * l)
                        .straight(200.0)
                        .build(),
                    1,
                ),
                7.0,
            ),
        ],
        PerpendicularCross => {
            // A waits at the stop line while B crosses, then continues.
            let a = PathBuilder::new(-25.0, -l, 0.0).straight(200.0).build();
            let resume = (170.0 / sigma).round() as usize;
            [
                Motion {
                    path: jit(a, 0),
                    speed: 6.0 * sigma,
                    hold: Some((15.0, resume)),
                },
                mv(jit(PathBuilder::new(l, -70.0, FRAC_PI_2).straight(200.0).build(), 1), 10.0),
            ]
        }
        TJunctionTurnMeeting => [
            mv(jit(PathBuilder::new(-70.0, -l, 0.0).straight(200.0).build(), 0), 8.0),
            // Up the southern stem, left onto the westbound lane.
            mv(
                jit(
                    PathBuilder::new(l, -20.0, FRAC_PI_2)
                        .straight(20.0 - 5.0 + l)
                        .arc(5.0, FRAC_PI_2)
                        .straight(200.0)
                        .build(),
                    1,
                ),
                6.0,
            ),
        ],
        Following => {
            // Shared longitudinal jitter keeps the initial gap fixed.
            let shift = |p: Path, i: usize| rigid_jitter(p, j.along[0], j.lateral[i]);
            let lead = PathBuilder::new(-30.0, -l, 0.0)
                .straight(45.0)
                .arc(l, PI)
                .build();
            let follow = PathBuilder::new(-50.0, -l, 0.0).straight(45.0).build();
            [mv(shift(lead, 0), 7.0), mv(shift(follow, 1), 7.0)]
        }
        TurningMeeting => [
            // From the north, left onto the eastbound lane.
            mv(
                jit(
                    PathBuilder::new(-l, 25.0, -FRAC_PI_2)
                        .straight(25.0 - 5.0 + l)
                        .arc(5.0, FRAC_PI_2)
                        .straight(200.0)
                        .build(),
                    0,
                ),
                6.0,
            ),
            mv(jit(PathBuilder::new(60.0, l, PI).straight(200.0).build(), 1), 7.0),
        ],
    }
}
