use sharedworld::camera::CameraFrame;
use sharedworld::geom::Vec3;
use sharedworld::svt::SvtTensor;
use sharedworld::world::{
    camera_rig, front_track, generate_pair_clips, generate_scene, line_of_sight, read_clip, read_dataset, render_view,
    sequence_specs, simulate_pair, write_clip, write_dataset, AgentBody, AgentState, PairSpec, TrajectoryPattern, View,
    DT, V_MAX,
};
use sharedworld::{Error, ErrorKind};
use swtensor::par::{self, Exec};

/// Scene seeds whose layout admits `pattern`.
fn scenes_for(pattern: TrajectoryPattern, n: usize) -> Vec<u64> {
    (0..1000u64)
        .filter(|&s| pattern.feasible_on(generate_scene(s, 0).layout))
        .take(n)
        .collect()
}

/// Every (pattern, scene, trajectory-seed) combination the property tests sweep.
fn sweep() -> Vec<(TrajectoryPattern, u64, [AgentState; 2])> {
    let mut out = Vec::new();
    for p in TrajectoryPattern::ALL {
        for s in scenes_for(p, 4) {
            let scene = generate_scene(s, 0);
            for traj in 0..9 {
                out.push((p, s, simulate_pair(p, &scene, traj).unwrap()));
            }
        }
    }
    out
}

fn longest_run(flags: impl Iterator<Item = bool>) -> usize {
    flags
        .fold((0, 0), |(best, cur), f| {
            let cur = if f { cur + 1 } else { 0 };
            (best.max(cur), cur)
        })
        .0
}

#[test]
fn trajectories_respect_length_speed_and_spacing() {
    for (p, s, agents) in sweep() {
        let n = agents[0].len();
        assert!((240..=260).contains(&n), "{p:?} scene {s}: {n} frames");
        assert_eq!(agents[1].len(), n);
        for a in &agents {
            for w in a.positions.windows(2) {
                assert!((w[1] - w[0]).norm() <= V_MAX * DT + 1e-9, "{p:?} scene {s}: speed cap");
            }
        }
        let min_gap = (0..n)
            .map(|k| (agents[0].positions[k] - agents[1].positions[k]).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(min_gap > 3.0, "{p:?} scene {s}: agents come within {min_gap:.2} m");
    }
}

#[test]
fn each_agent_stays_in_the_other_front_frustum_for_twenty_frames() {
    for (p, s, agents) in sweep() {
        for i in 0..2 {
            let track = front_track(&agents[i], 64, 96).unwrap();
            let other = &agents[1 - i];
            let run = longest_run(track.frames().iter().enumerate().map(|(k, cam)| cam.sees(other.body_center(k))));
            assert!(run >= 20, "{p:?} scene {s}: agent {i} sees the other for only {run} frames");
        }
    }
}

#[test]
fn straight_meeting_distance_is_unimodal() {
    let p = TrajectoryPattern::StraightMeeting;
    for s in scenes_for(p, 3) {
        let scene = generate_scene(s, 0);
        for traj in 0..6 {
            let [a, b] = simulate_pair(p, &scene, traj).unwrap();
            let d: Vec<f64> = (0..a.len()).map(|k| (a.positions[k] - b.positions[k]).norm()).collect();
            let m = d.iter().enumerate().fold(0, |m, (k, v)| if *v < d[m] { k } else { m });
            assert!(m > 0 && m + 1 < d.len(), "minimum must be interior");
            assert!(d[..=m].windows(2).all(|w| w[1] < w[0]), "decreasing before the meeting");
            assert!(d[m..].windows(2).all(|w| w[1] > w[0]), "increasing after the meeting");
        }
    }
}

#[test]
fn following_distance_stays_within_twenty_percent() {
    let p = TrajectoryPattern::Following;
    for s in scenes_for(p, 3) {
        let scene = generate_scene(s, 0);
        for traj in 0..6 {
            let [a, b] = simulate_pair(p, &scene, traj).unwrap();
            let d0 = (a.positions[0] - b.positions[0]).norm();
            for k in 0..a.len() {
                let d = (a.positions[k] - b.positions[k]).norm();
                assert!((d - d0).abs() <= 0.2 * d0, "frame {k}: {d:.2} vs {d0:.2}");
            }
        }
    }
}

#[test]
fn speed_variants_share_the_jittered_start() {
    let p = TrajectoryPattern::StraightMeeting;
    let scene = generate_scene(scenes_for(p, 1)[0], 0);
    let runs: Vec<_> = (0..3).map(|t| simulate_pair(p, &scene, 12 + t).unwrap()).collect();
    for r in &runs[1..] {
        assert_eq!(r[0].positions[0], runs[0][0].positions[0]);
        assert_ne!(r[0].positions[40], runs[0][0].positions[40]);
    }
    let other = simulate_pair(p, &scene, 15).unwrap();
    assert_ne!(other[0].positions[0], runs[0][0].positions[0]);
}

#[test]
fn rendered_agent_is_red_near_its_projection() {
    let mut checked = 0;
    for (p, s, agents) in sweep().into_iter().step_by(7) {
        let scene = generate_scene(s, 1);
        for k in (0..agents[0].len()).step_by(10) {
            let me = &agents[0];
            let other = &agents[1];
            for view in View::ALL {
                let cam = CameraFrame {
                    intrinsics: sharedworld::camera::CameraIntrinsics::wide(64, 96),
                    pose: camera_rig(me, view)[k],
                };
                let center = other.body_center(k);
                let eye = cam.pose.translation;
                if !cam.sees(center) || !line_of_sight(&scene, eye, center) || (center - eye).norm() > 60.0 {
                    continue;
                }
                let body = AgentBody {
                    center,
                    yaw: other.yaws[k],
                    extents: other.extents,
                    color: other.color,
                };
                let img = render_view(&scene, &[body], &cam, 64, 96).unwrap();
                let (u, v, _) = cam.project(center).unwrap();
                let red = (0..64usize).any(|y| {
                    (0..96usize).any(|x| {
                        let (dx, dy) = (x as f64 + 0.5 - u, y as f64 + 0.5 - v);
                        let [r, g, b] = img.pixel(y, x);
                        dx.hypot(dy) <= 3.0 && r as f64 > 1.5 * g.max(b) as f64 && r > 80
                    })
                });
                assert!(red, "{p:?} scene {s} frame {k} {view:?}: no red near ({u:.1}, {v:.1})");
                checked += 1;
            }
        }
    }
    assert!(checked >= 50, "only {checked} visible configurations");
}

fn small_spec() -> PairSpec {
    sequence_specs(3, 0)
}

#[test]
fn clips_are_synchronized_and_deterministic_across_executors() {
    par::set_exec(Exec::Sequential);
    let a = generate_pair_clips(small_spec(), 16, 24, true).unwrap();
    par::set_exec(Exec::Parallel);
    let b = generate_pair_clips(small_spec(), 16, 24, true).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
    for c in &a {
        assert_eq!(c.frames(), 49);
        assert_eq!(c.videos[0].shape(), c.videos[1].shape());
        assert_eq!(c.timestamps(0), c.timestamps(1));
        assert_eq!(c.tracks[0].len(), 49);
    }
}

#[test]
fn dataset_round_trip_is_exact() {
    let clips = generate_pair_clips(small_spec(), 16, 24, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&clips, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, clips);
    let again = tempfile::tempdir().unwrap();
    write_dataset(&back, again.path()).unwrap();
    for name in ["manifest.txt", "agent1_video.svt", "agent2_track.txt"] {
        let rel = std::path::Path::new("clip_00000").join(name);
        assert_eq!(
            std::fs::read(dir.path().join(&rel)).unwrap(),
            std::fs::read(again.path().join(&rel)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn corrupted_files_report_distinct_errors() {
    let clip = generate_pair_clips(small_spec(), 16, 24, false).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    write_clip(&clip, dir.path()).unwrap();
    let video = dir.path().join("agent1_video.svt");
    let bytes = std::fs::read(&video).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&video, &bad).unwrap();
    assert!(matches!(read_clip(dir.path()), Err(Error::BadMagic { .. })));

    std::fs::write(&video, &bytes[..bytes.len() - 10]).unwrap();
    match read_clip(dir.path()) {
        Err(Error::SizeMismatch { expected, actual, .. }) => assert_eq!(expected, actual + 10),
        other => panic!("expected a size mismatch, got {other:?}"),
    }

    let wrong = SvtTensor::u8(&[2, 3], vec![0; 6]).unwrap();
    wrong.write(&video).unwrap();
    let err = read_clip(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
    assert_eq!(err.kind(), ErrorKind::Data);

    let missing = read_clip(&dir.path().join("nope")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}

#[test]
fn scene_geometry_is_seeded_and_weather_only_recolors() {
    let a = generate_scene(1, 0);
    assert_eq!(a.to_bytes(), generate_scene(1, 0).to_bytes());
    let b = generate_scene(1, 1);
    let corners = |s: &sharedworld::world::Scene| s.boxes.iter().map(|b| (b.min, b.max)).collect::<Vec<(Vec3, Vec3)>>();
    assert_eq!(corners(&a), corners(&b));
    assert_ne!(a.weather, b.weather);
    assert_ne!(corners(&a), corners(&generate_scene(2, 0)));
    assert!(a.boxes.len() >= 8);
}
