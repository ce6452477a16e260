use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::Vec3;

/// Half width of every road, meters.
pub const ROAD_HALF_WIDTH: f64 = 6.0;
/// Lateral offset of a lane center from the road axis.
pub const LANE_OFFSET: f64 = 2.5;
/// Minimum clearance between buildings and road edges.
pub const CORRIDOR_PADDING: f64 = 2.0;
const WORLD_EXTENT: f64 = 80.0;

/// Road network. Every layout has an east-west road along `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Straight,
    /// Adds a stem along `x = 0` running south from the junction.
    TJunction,
    /// Adds a full north-south road along `x = 0`.
    Crossroad,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Straight => "straight",
            Layout::TJunction => "t_junction",
            Layout::Crossroad => "crossroad",
        }
    }

    fn from_index(i: u64) -> Layout {
        [Layout::Straight, Layout::TJunction, Layout::Crossroad][(i % 3) as usize]
    }

    /// True when the ground point lies on a road, widened by `pad`.
    pub fn on_road(self, x: f64, y: f64, pad: f64) -> bool {
        let hw = ROAD_HALF_WIDTH + pad;
        let ew = y.abs() <= hw;
        let ns = match self {
            Layout::Straight => false,
            Layout::TJunction => x.abs() <= hw && y <= hw,
            Layout::Crossroad => x.abs() <= hw,
        };
        ew || ns
    }

    /// Whether an axis-aligned footprint touches a padded road corridor.
    fn footprint_clear(self, min: (f64, f64), max: (f64, f64), pad: f64) -> bool {
        let hw = ROAD_HALF_WIDTH + pad;
        let overlaps = |lo: f64, hi: f64, a: f64, b: f64| lo < b && hi > a;
        if overlaps(min.1, max.1, -hw, hw) {
            return false;
        }
        match self {
            Layout::Straight => true,
            Layout::TJunction => !(overlaps(min.0, max.0, -hw, hw) && min.1 < hw),
            Layout::Crossroad => !overlaps(min.0, max.0, -hw, hw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weather {
    pub id: u8,
    pub sky: [f64; 3],
    pub tint: [f64; 3],
    /// Fog fraction gained per meter of ray length.
    pub fog_density: f64,
}

impl Weather {
    pub fn preset(id: u8) -> Weather {
        match id % 3 {
            0 => Weather {
                id: 0,
                sky: [135.0, 190.0, 235.0],
                tint: [1.0, 1.0, 1.0],
                fog_density: 0.004,
            },
            1 => Weather {
                id: 1,
                sky: [170.0, 170.0, 175.0],
                tint: [0.8, 0.8, 0.85],
                fog_density: 0.01,
            },
            _ => Weather {
                id: 2,
                sky: [200.0, 150.0, 120.0],
                tint: [0.9, 0.75, 0.65],
                fog_density: 0.02,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub min: Vec3,
    pub max: Vec3,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub layout: Layout,
    pub ground: [u8; 3],
    pub road: [u8; 3],
    pub boxes: Vec<SceneBox>,
    pub weather: Weather,
}

impl Scene {
    /// Scene with no buildings, for tests and fixtures.
    pub fn empty(layout: Layout, weather: u8) -> Scene {
        Scene {
            seed: 0,
            layout,
            ground: [96, 112, 72],
            road: [72, 72, 78],
            boxes: Vec::new(),
            weather: Weather::preset(weather),
        }
    }

    /// Canonical byte form, used to compare scenes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(self.layout.name().as_bytes());
        b.extend_from_slice(&self.ground);
        b.extend_from_slice(&self.road);
        for bx in &self.boxes {
            for v in bx.min.0.iter().chain(&bx.max.0) {
                b.extend_from_slice(&v.to_le_bytes());
            }
            b.extend_from_slice(&bx.color);
        }
        b.push(self.weather.id);
        for v in self.weather.sky.iter().chain(&self.weather.tint) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&self.weather.fog_density.to_le_bytes());
        b
    }

    pub fn ground_color(&self, x: f64, y: f64) -> [u8; 3] {
        if self.layout.on_road(x, y, 0.0) {
            self.road
        } else {
            self.ground
        }
    }
}

/// Seeded building layout; weather only changes sky, tint and fog.
pub fn generate_scene(seed: u64, weather: u8) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce4e);
    let layout = Layout::from_index(rng.gen::<u64>());
    let shade = rng.gen_range(-12i16..=12);
    let ground = [96, 112, 72].map(|c: i16| (c + shade) as u8);
    let road = [72, 72, 78];
    let target = rng.gen_range(10..=16);
    let mut boxes: Vec<SceneBox> = Vec::with_capacity(target);
    let mut attempts = 0;
    while boxes.len() < target && attempts < 10_000 {
        attempts += 1;
        let sx = rng.gen_range(4.0..16.0);
        let sy = rng.gen_range(4.0..16.0);
        let h = rng.gen_range(4.0..30.0);
        // Bias buildings toward the roadside so they show up in the cameras.
        let along = rng.gen_range(-WORLD_EXTENT..WORLD_EXTENT);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let off = side * (ROAD_HALF_WIDTH + CORRIDOR_PADDING + rng.gen_range(0.5..20.0));
        let vertical = layout != Layout::Straight && rng.gen_bool(0.4);
        let (cx, cy) = if vertical {
            (off + side * sx / 2.0, along)
        } else {
            (along, off + side * sy / 2.0)
        };
        let min = (cx - sx / 2.0, cy - sy / 2.0);
        let max = (cx + sx / 2.0, cy + sy / 2.0);
        if !layout.footprint_clear(min, max, CORRIDOR_PADDING) {
            continue;
        }
        let overlaps = boxes
            .iter()
            .any(|b| min.0 < b.max[0] && max.0 > b.min[0] && min.1 < b.max[1] && max.1 > b.min[1]);
        if overlaps {
            continue;
        }
        let g: u8 = rng.gen_range(50..=220);
        let b: u8 = rng.gen_range(50..=220);
        let r: u8 = rng.gen_range(40..=g.max(b));
        boxes.push(SceneBox {
            min: Vec3::new(min.0, min.1, 0.0),
            max: Vec3::new(max.0, max.1, h),
            color: [r, g, b],
        });
    }
    Scene {
        seed,
        layout,
        ground,
        road,
        boxes,
        weather: Weather::preset(weather),
    }
}
