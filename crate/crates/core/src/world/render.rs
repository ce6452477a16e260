use swtensor::par;

use super::image::Image;
use super::scene::Scene;
use crate::camera::{pixel_ray_directions, CameraFrame};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

/// Oriented body box of an agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentBody {
    pub center: Vec3,
    pub yaw: f64,
    pub extents: Vec3,
    pub color: [u8; 3],
}

/// What a primary ray hits first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayHit {
    Sky,
    Ground { t: f64 },
    Building { t: f64, index: usize },
    Agent { t: f64, index: usize },
}

impl RayHit {
    pub fn distance(&self) -> f64 {
        match *self {
            RayHit::Sky => f64::INFINITY,
            RayHit::Ground { t } | RayHit::Building { t, .. } | RayHit::Agent { t, .. } => t,
        }
    }
}

/// Slab-method entry distance of the ray into an axis-aligned box, if any.
pub(crate) fn ray_box(o: Vec3, d: Vec3, min: Vec3, max: Vec3) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i] < min[i] || o[i] > max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (a, b) = ((min[i] - o[i]) * inv, (max[i] - o[i]) * inv);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
        if t0 > t1 {
            return None;
        }
    }
    (t0 > 1e-9).then_some(t0)
}

fn ray_agent(o: Vec3, d: Vec3, body: &AgentBody) -> Option<f64> {
    let inv = Mat3::rot_z(-body.yaw);
    let half = body.extents.scale(0.5);
    ray_box(inv * (o - body.center), inv * d, -half, half)
}

/// Nearest intersection along `o + t·d` with `|d| = 1`.
pub(crate) fn trace(scene: &Scene, bodies: &[AgentBody], o: Vec3, d: Vec3) -> RayHit {
    let mut best = RayHit::Sky;
    let mut best_t = f64::INFINITY;
    if d.z() < -1e-12 {
        let t = -o.z() / d.z();
        if t > 0.0 {
            best = RayHit::Ground { t };
            best_t = t;
        }
    }
    for (index, b) in scene.boxes.iter().enumerate() {
        if let Some(t) = ray_box(o, d, b.min, b.max) {
            if t < best_t {
                best_t = t;
                best = RayHit::Building { t, index };
            }
        }
    }
    for (index, b) in bodies.iter().enumerate() {
        if let Some(t) = ray_agent(o, d, b) {
            if t < best_t {
                best_t = t;
                best = RayHit::Agent { t, index };
            }
        }
    }
    best
}

/// True when nothing in the scene blocks the segment from `a` to `b`.
pub fn line_of_sight(scene: &Scene, a: Vec3, b: Vec3) -> bool {
    let diff = b - a;
    let dist = diff.norm();
    let d = diff.scale(1.0 / dist);
    scene
        .boxes
        .iter()
        .all(|bx| ray_box(a, d, bx.min, bx.max).is_none_or(|t| t >= dist))
}

fn shade(scene: &Scene, bodies: &[AgentBody], hit: RayHit, o: Vec3, d: Vec3) -> [u8; 3] {
    let w = &scene.weather;
    let base = match hit {
        RayHit::Sky => return w.sky.map(|v| v.round() as u8),
        RayHit::Ground { t } => {
            let p = o + d.scale(t);
            scene.ground_color(p.x(), p.y())
        }
        RayHit::Building { index, .. } => scene.boxes[index].color,
        RayHit::Agent { index, .. } => bodies[index].color,
    };
    let fog = (hit.distance() * w.fog_density).clamp(0.0, 1.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let lit = base[c] as f64 * w.tint[c];
        out[c] = ((1.0 - fog) * lit + fog * w.sky[c]).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Raycasts one camera view. The ego body must not be in `bodies`.
pub fn render_view(scene: &Scene, bodies: &[AgentBody], camera: &CameraFrame, height: usize, width: usize) -> Result<Image> {
    if height < 8 || width < 8 {
        return Err(Error::Dimension(format!("render size {height}x{width} below 8x8")));
    }
    let dirs = pixel_ray_directions(&camera.intrinsics, height, width);
    let o = camera.pose.translation;
    let mut data = vec![0u8; height * width * 3];
    par::for_each_chunk(&mut data, width * 3, |y, row| {
        for x in 0..width {
            let i = (y * width + x) * 3;
            let dc = &dirs.data()[i..i + 3];
            let d = (camera.pose.rotation * Vec3([dc[0], dc[1], dc[2]])).normalized();
            let hit = trace(scene, bodies, o, d);
            row[x * 3..x * 3 + 3].copy_from_slice(&shade(scene, bodies, hit, o, d));
        }
    });
    Image::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::world::rig::camera_rotation;
    use crate::world::scene::{Layout, SceneBox};

    fn cam(h: usize, w: usize) -> CameraFrame {
        CameraFrame {
            intrinsics: CameraIntrinsics::wide(h, w),
            pose: CameraPose {
                rotation: camera_rotation(0.0),
                translation: Vec3::new(0.0, 40.0, 1.5),
            },
        }
    }

    #[test]
    fn horizon_splits_sky_and_ground() {
        let scene = Scene::empty(Layout::Straight, 0);
        let img = render_view(&scene, &[], &cam(16, 24), 16, 24).unwrap();
        let sky = scene.weather.sky.map(|v| v as u8);
        for x in 0..24 {
            for y in 0..8 {
                assert_eq!(img.pixel(y, x), sky);
            }
            for y in 8..16 {
                let p = img.pixel(y, x);
                assert_ne!(p, sky);
                // Fogged ground lies between surface and sky colors.
                for c in 0..3 {
                    let lo = scene.ground[c].min(scene.road[c]).min(sky[c]);
                    let hi = scene.ground[c].max(scene.road[c]).max(sky[c]);
                    assert!((lo..=hi).contains(&p[c]));
                }
            }
        }
    }

    #[test]
    fn red_box_on_axis() {
        let mut scene = Scene::empty(Layout::Straight, 0);
        scene.weather.fog_density = 0.0;
        scene.boxes.push(SceneBox {
            min: Vec3::new(10.0, 39.0, 0.5),
            max: Vec3::new(12.0, 41.0, 2.5),
            color: [200, 20, 20],
        });
        let c = cam(16, 24);
        let d = c.pose.forward();
        let t = ray_box(c.pose.translation, d, scene.boxes[0].min, scene.boxes[0].max).unwrap();
        assert!((t - 10.0).abs() < 1e-12);
        let img = render_view(&scene, &[], &c, 16, 24).unwrap();
        assert_eq!(img.pixel(8, 12), [200, 20, 20]);
    }

    #[test]
    fn agent_body_is_hit_and_deterministic() {
        let scene = Scene::empty(Layout::Straight, 2);
        let body = AgentBody {
            center: Vec3::new(15.0, 40.0, 0.75),
            yaw: 0.4,
            extents: Vec3([4.5, 1.8, 1.5]),
            color: [200, 20, 20],
        };
        let c = cam(32, 48);
        let a = render_view(&scene, &[body], &c, 32, 48).unwrap();
        assert_eq!(a, render_view(&scene, &[body], &c, 32, 48).unwrap());
        let (u, v, _) = c.project(body.center).unwrap();
        let p = a.pixel(v as usize, u as usize);
        assert!(p[0] as f64 > 1.5 * p[1].max(p[2]) as f64 && p[0] > 80, "{p:?}");
    }
}
