//! Browser demo: place the robot and look through its camera, plot the
//! orientation-reward shaping curve, and watch the PD baseline drive.

use lanefollow::baseline::{PdConfig, PdController};
use lanefollow::camera::{
    render, render_top_down, sample_randomization, CameraParams, Image, RandomizationConfig, RandomizationState,
};
use lanefollow::env::{lambda_fn, map_action, ActionKind, RewardConfig};
use lanefollow::track::{maps, TrackMap, Vec2};
use lanefollow::vehicle::{step_kinematics, VehicleParams, VehicleState};
use wasm_bindgen::prelude::*;

const DT: f64 = 1.0 / 15.0;

fn rgba(img: &Image) -> Vec<u8> {
    img.data.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

#[wasm_bindgen]
pub struct Demo {
    track: TrackMap,
    cam: CameraParams,
    vehicle: VehicleParams,
    state: VehicleState,
    pd: PdController,
    rand: RandomizationState,
    trail: Vec<Vec2>,
}

#[wasm_bindgen]
impl Demo {
    /// `map` is a built-in name (`loop`, `ring`, `straight`) or map-file text.
    #[wasm_bindgen(constructor)]
    pub fn new(map: &str) -> Result<Demo, JsError> {
        let text = maps::by_name(map).unwrap_or(map);
        let track = TrackMap::parse(text).map_err(|e| JsError::new(&e.to_string()))?;
        let mut demo = Demo {
            track,
            cam: CameraParams::default(),
            vehicle: VehicleParams::default(),
            state: VehicleState::new(Vec2::default(), 0.0),
            pd: PdController::new(PdConfig::default()),
            rand: RandomizationState::identity(),
            trail: Vec::new(),
        };
        demo.place(0.0, 0.0, 0.0);
        Ok(demo)
    }

    pub fn camera_width(&self) -> usize {
        self.cam.image_width
    }

    pub fn camera_height(&self) -> usize {
        self.cam.image_height
    }

    /// Puts the robot at a fraction of the loop, `d` meters left of the lane
    /// center, with heading error `psi_deg`.
    pub fn place(&mut self, s_frac: f64, d: f64, psi_deg: f64) {
        let s = s_frac.rem_euclid(1.0) * self.track.total_length();
        let (p, t) = self.track.centerline_point(s);
        self.state = VehicleState::new(p + Vec2::from_angle(t).perp().scale(d), t + psi_deg.to_radians());
        self.pd.reset();
        self.trail.clear();
    }

    /// Draws a new appearance randomization; `0` restores the default look.
    pub fn randomize(&mut self, seed: u32) {
        self.rand = if seed == 0 {
            RandomizationState::identity()
        } else {
            let cfg = RandomizationConfig {
                enabled: true,
                ..RandomizationConfig::default()
            };
            sample_randomization(0, seed as u64, &cfg)
        };
    }

    pub fn camera_rgba(&self) -> Vec<u8> {
        let img = render(&self.track, &[], &self.state, &self.cam, &self.vehicle, &self.rand);
        rgba(&img)
    }

    /// `[d, psi, s, in_right_lane, on_road]`.
    pub fn pose(&self) -> Vec<f64> {
        let p = self.track.lane_pose(self.state.position, self.state.heading);
        vec![p.d, p.psi, p.s, p.in_right_lane as u8 as f64, p.on_road as u8 as f64]
    }

    /// Orientation reward the current pose would earn at full speed.
    pub fn reward(&self) -> f64 {
        let p = self.track.lane_pose(self.state.position, self.state.heading);
        let rates = map_action(ActionKind::Steering, &[0.0]).expect("one-dimensional action");
        lanefollow::env::reward_orientation(&p, rates, &RewardConfig::default(), self.track.lane_width())
    }

    /// Advances the PD controller `n` control periods; stops early off the road.
    pub fn pd_step(&mut self, n: u32) -> bool {
        for _ in 0..n {
            let pose = self.track.lane_pose(self.state.position, self.state.heading);
            if !pose.on_road {
                return false;
            }
            let a = self.pd.pd_control(&pose, &self.track, &self.state, DT).action;
            let rates = map_action(ActionKind::Steering, &[a]).expect("one-dimensional action");
            self.state = step_kinematics(&self.state, rates, &self.vehicle, DT);
            self.trail.push(self.state.position);
        }
        true
    }

    pub fn top_down_width(&self, px_per_m: f64) -> usize {
        (self.track.width() as f64 * self.track.tile_size() * px_per_m).ceil() as usize
    }

    pub fn top_down_height(&self, px_per_m: f64) -> usize {
        (self.track.height() as f64 * self.track.tile_size() * px_per_m).ceil() as usize
    }

    /// Top-down map with the robot and its PD trail.
    pub fn top_down_rgba(&self, px_per_m: f64) -> Vec<u8> {
        let mut img = render_top_down(&self.track, &[self.state], px_per_m);
        for p in &self.trail {
            let x = (p.x * px_per_m) as isize;
            let y = img.height as isize - 1 - (p.y * px_per_m) as isize;
            if (0..img.width as isize).contains(&x) && (0..img.height as isize).contains(&y) {
                let i = (y as usize * img.width + x as usize) * 3;
                img.data[i..i + 3].copy_from_slice(&[230, 40, 40]);
            }
        }
        rgba(&img)
    }
}

/// `n` samples of Λ over `[-2φ, 2φ]`, interleaved as `x0, y0, x1, y1, ...` (x in degrees).
#[wasm_bindgen]
pub fn lambda_curve(phi_deg: f64, epsilon: f64, n: usize) -> Vec<f64> {
    let phi = phi_deg.to_radians();
    let n = n.max(2);
    (0..n)
        .flat_map(|i| {
            let x = -2.0 * phi + 4.0 * phi * i as f64 / (n - 1) as f64;
            [x.to_degrees(), lambda_fn(x, phi, epsilon)]
        })
        .collect()
}
