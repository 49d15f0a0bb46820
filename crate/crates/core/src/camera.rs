//! Software-rendered forward camera, domain randomization and observation preprocessing.
//!
//! The renderer casts one pinhole ray per pixel against the ground plane
//! (`z = 0`) and against box-shaped bodies of the other vehicles. Ground hits
//! are colored from the tile under the hit point: dark road, a yellow center
//! line, white edge lines, green off-road.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::{Tile, TrackMap, Vec2};
use crate::vehicle::{VehicleParams, VehicleState};

pub const OBS_SIZE: usize = 84;
pub const FRAME_STACK: usize = 3;
pub const OBS_CHANNELS: usize = 3 * FRAME_STACK;
pub const OBS_LEN: usize = OBS_SIZE * OBS_SIZE * OBS_CHANNELS;

const ROAD: [f64; 3] = [52.0, 52.0, 58.0];
const WHITE: [f64; 3] = [235.0, 235.0, 235.0];
const YELLOW: [f64; 3] = [235.0, 200.0, 30.0];
const GRASS: [f64; 3] = [60.0, 130.0, 60.0];
const SKY: [f64; 3] = [150.0, 190.0, 230.0];
const BODY: [f64; 3] = [200.0, 40.0, 40.0];
/// Lane-side width of each marking: the white edge line and each half of the yellow center line.
const MARK_WIDTH: f64 = 0.03;
const BODY_WIDTH_RATIO: f64 = 0.75;
const BODY_HEIGHT: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    pub image_width: usize,
    pub image_height: usize,
    /// Radians.
    pub horizontal_fov: f64,
    pub mount_height: f64,
    /// Downward tilt, radians.
    pub pitch: f64,
    pub forward_offset: f64,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            image_width: 160,
            image_height: 120,
            horizontal_fov: 100f64.to_radians(),
            mount_height: 0.1,
            pitch: 20f64.to_radians(),
            forward_offset: 0.06,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid camera parameters: {0}")]
    InvalidParams(String),
    #[error("frame size mismatch: {0}x{1} vs {2}x{3}")]
    FrameSizeMismatch(usize, usize, usize, usize),
    #[error("preprocessing needs at least one frame")]
    NoFrames,
    #[error("invalid randomization bounds: {0}")]
    InvalidBounds(String),
}

impl CameraParams {
    pub fn validate(&self) -> Result<(), CameraError> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(CameraError::InvalidParams("image size must be positive".into()));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < std::f64::consts::PI) {
            return Err(CameraError::InvalidParams("horizontal_fov must be in (0, π)".into()));
        }
        if !(self.mount_height > 0.0) {
            return Err(CameraError::InvalidParams("mount_height must be positive".into()));
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        (self.image_width as f64 / 2.0) / (self.horizontal_fov / 2.0).tan()
    }
}

/// Inclusive `[min, max]` range.
pub type Bounds = [f64; 2];

/// Sampling ranges for domain randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    pub enabled: bool,
    /// Seed mixed with the episode index.
    pub seed: u64,
    pub ambient_gain: Bounds,
    pub road_tint: Bounds,
    pub lane_mark_tint: Bounds,
    pub off_road_tint: Bounds,
    pub sky_tint: Bounds,
    /// Per-pixel Gaussian noise on the 0..255 scale.
    pub noise_sigma: Bounds,
    pub camera_height: Bounds,
    pub camera_pitch: Bounds,
    pub camera_fov: Bounds,
    pub dynamics: Bounds,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            seed: 0,
            ambient_gain: [0.6, 1.4],
            road_tint: [0.6, 1.6],
            lane_mark_tint: [0.75, 1.1],
            off_road_tint: [0.5, 1.5],
            sky_tint: [0.5, 1.2],
            noise_sigma: [0.0, 8.0],
            camera_height: [-0.01, 0.01],
            camera_pitch: [-3f64.to_radians(), 3f64.to_radians()],
            camera_fov: [-5f64.to_radians(), 5f64.to_radians()],
            dynamics: [0.9, 1.1],
        }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<(), CameraError> {
        let all = [
            ("ambient_gain", self.ambient_gain),
            ("road_tint", self.road_tint),
            ("lane_mark_tint", self.lane_mark_tint),
            ("off_road_tint", self.off_road_tint),
            ("sky_tint", self.sky_tint),
            ("noise_sigma", self.noise_sigma),
            ("camera_height", self.camera_height),
            ("camera_pitch", self.camera_pitch),
            ("camera_fov", self.camera_fov),
            ("dynamics", self.dynamics),
        ];
        for (name, [lo, hi]) in all {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CameraError::InvalidBounds(format!("{name}: [{lo}, {hi}]")));
            }
        }
        let positive = [
            ("ambient_gain", self.ambient_gain),
            ("dynamics", self.dynamics),
        ];
        for (name, [lo, _]) in positive {
            if lo <= 0.0 {
                return Err(CameraError::InvalidBounds(format!("{name} must stay positive")));
            }
        }
        if self.noise_sigma[0] < 0.0 {
            return Err(CameraError::InvalidBounds("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsJitter {
    pub wheel_radius: f64,
    pub baseline: f64,
    pub max_wheel_rate: f64,
}

impl DynamicsJitter {
    pub fn apply(&self, p: &VehicleParams) -> VehicleParams {
        VehicleParams {
            wheel_radius: p.wheel_radius * self.wheel_radius,
            baseline: p.baseline * self.baseline,
            max_wheel_rate: p.max_wheel_rate * self.max_wheel_rate,
            ..*p
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizationState {
    pub ambient_gain: [f64; 3],
    pub road_tint: [f64; 3],
    pub lane_mark_tint: [f64; 3],
    pub off_road_tint: [f64; 3],
    pub sky_tint: [f64; 3],
    pub noise_sigma: f64,
    /// Seed of the per-pixel noise pattern; the environment varies it per frame.
    pub noise_seed: u64,
    /// (Δheight, Δpitch, Δfov).
    pub camera_jitter: [f64; 3],
    pub dynamics_jitter: DynamicsJitter,
    pub enabled: bool,
}

impl RandomizationState {
    pub fn identity() -> Self {
        Self {
            ambient_gain: [1.0; 3],
            road_tint: [1.0; 3],
            lane_mark_tint: [1.0; 3],
            off_road_tint: [1.0; 3],
            sky_tint: [1.0; 3],
            noise_sigma: 0.0,
            noise_seed: 0,
            camera_jitter: [0.0; 3],
            dynamics_jitter: DynamicsJitter {
                wheel_radius: 1.0,
                baseline: 1.0,
                max_wheel_rate: 1.0,
            },
            enabled: false,
        }
    }

    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_randomization(seed: u64, episode: u64, cfg: &RandomizationConfig) -> RandomizationState {
    if !cfg.enabled {
        return RandomizationState::identity();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, episode));
    let mut u = |[lo, hi]: Bounds| if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let ambient_gain = [u(cfg.ambient_gain), u(cfg.ambient_gain), u(cfg.ambient_gain)];
    let road_tint = [u(cfg.road_tint), u(cfg.road_tint), u(cfg.road_tint)];
    let lane_mark_tint = [u(cfg.lane_mark_tint), u(cfg.lane_mark_tint), u(cfg.lane_mark_tint)];
    let off_road_tint = [u(cfg.off_road_tint), u(cfg.off_road_tint), u(cfg.off_road_tint)];
    let sky_tint = [u(cfg.sky_tint), u(cfg.sky_tint), u(cfg.sky_tint)];
    let noise_sigma = u(cfg.noise_sigma);
    let camera_jitter = [u(cfg.camera_height), u(cfg.camera_pitch), u(cfg.camera_fov)];
    let dynamics_jitter = DynamicsJitter {
        wheel_radius: u(cfg.dynamics),
        baseline: u(cfg.dynamics),
        max_wheel_rate: u(cfg.dynamics),
    };
    RandomizationState {
        ambient_gain,
        road_tint,
        lane_mark_tint,
        off_road_tint,
        sky_tint,
        noise_sigma,
        noise_seed: mix_seed(seed ^ 0x5EED, episode),
        camera_jitter,
        dynamics_jitter,
        enabled: true,
    }
}

/// RGB8 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Camera pose and intrinsics resolved for one frame.
#[derive(Debug, Clone, Copy)]
pub struct CameraView {
    origin: [f64; 3],
    forward: [f64; 3],
    right: [f64; 3],
    down: [f64; 3],
    focal: f64,
    width: usize,
    height: usize,
}

impl CameraView {
    pub fn new(ego: &VehicleState, cam: &CameraParams, rand: &RandomizationState) -> Self {
        let [dh, dp, df] = rand.camera_jitter;
        let fov = (cam.horizontal_fov + df).clamp(0.1, std::f64::consts::PI - 0.1);
        let pitch = cam.pitch + dp;
        let height = (cam.mount_height + dh).max(1e-3);
        let (s, c) = ego.heading.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let pos = ego.position + Vec2::new(c, s).scale(cam.forward_offset);
        // heading h, right r = (s, -c), up z; forward tilted down by pitch
        let forward = [cp * c, cp * s, -sp];
        let right = [s, -c, 0.0];
        let down = [-sp * c, -sp * s, -cp];
        let p = CameraParams {
            horizontal_fov: fov,
            ..*cam
        };
        Self {
            origin: [pos.x, pos.y, height],
            forward,
            right,
            down,
            focal: p.focal(),
            width: cam.image_width,
            height: cam.image_height,
        }
    }

    /// World-space ray direction through the center of pixel `(u, v)`.
    fn ray(&self, u: usize, v: usize) -> [f64; 3] {
        let xc = (u as f64 + 0.5 - self.width as f64 / 2.0) / self.focal;
        let yc = (v as f64 + 0.5 - self.height as f64 / 2.0) / self.focal;
        [
            self.forward[0] + xc * self.right[0] + yc * self.down[0],
            self.forward[1] + xc * self.right[1] + yc * self.down[1],
            self.forward[2] + xc * self.right[2] + yc * self.down[2],
        ]
    }

    /// Continuous pixel coordinates `(column, row)` of a world point, if in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let rel = [
            p[0] - self.origin[0],
            p[1] - self.origin[1],
            p[2] - self.origin[2],
        ];
        let dot = |a: [f64; 3]| a[0] * rel[0] + a[1] * rel[1] + a[2] * rel[2];
        let z = dot(self.forward);
        if z <= 0.0 {
            return None;
        }
        Some((
            self.width as f64 / 2.0 + self.focal * dot(self.right) / z,
            self.height as f64 / 2.0 + self.focal * dot(self.down) / z,
        ))
    }

    /// Image row of the horizon (continuous).
    pub fn horizon_row(&self) -> f64 {
        // ray with zero vertical component: forward_z + yc * down_z = 0
        let yc = -self.forward[2] / self.down[2];
        self.height as f64 / 2.0 + yc * self.focal
    }
}

/// Ground-plane surface class at a world point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Road,
    WhiteLine,
    YellowLine,
    OffRoad,
}

pub fn surface_at(track: &TrackMap, p: Vec2) -> Surface {
    let Some((col, row, tile)) = track.tile_at(p) else {
        return Surface::OffRoad;
    };
    let t = track.tile_size();
    let o = track.tile_origin(col, row);
    let local = p - o;
    let half = t / 2.0;
    let offset = match tile {
        Tile::Empty => return Surface::OffRoad,
        Tile::StraightNS => local.x - half,
        Tile::StraightEW => local.y - half,
        Tile::CurveNE | Tile::CurveNW | Tile::CurveSE | Tile::CurveSW => {
            let cx = if matches!(tile, Tile::CurveNE | Tile::CurveSE) { t } else { 0.0 };
            let cy = if matches!(tile, Tile::CurveNE | Tile::CurveNW) { t } else { 0.0 };
            let r = (local - Vec2::new(cx, cy)).norm();
            if r > t {
                return Surface::OffRoad;
            }
            r - half
        }
    };
    let a = offset.abs();
    if a <= MARK_WIDTH {
        Surface::YellowLine
    } else if a >= half - MARK_WIDTH {
        Surface::WhiteLine
    } else {
        Surface::Road
    }
}

fn mul(c: [f64; 3], k: [f64; 3]) -> [f64; 3] {
    [c[0] * k[0], c[1] * k[1], c[2] * k[2]]
}

/// Ray vs. oriented box of another vehicle; returns hit distance and face shade.
fn hit_vehicle(o: [f64; 3], d: [f64; 3], v: &VehicleState, p: &VehicleParams) -> Option<(f64, f64)> {
    let (s, c) = v.heading.sin_cos();
    let rx = o[0] - v.position.x;
    let ry = o[1] - v.position.y;
    let lo = [c * rx + s * ry, -s * rx + c * ry, o[2]];
    let ld = [c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]];
    let half = [p.body_length / 2.0, p.body_length * BODY_WIDTH_RATIO / 2.0];
    let mins = [-half[0], -half[1], 0.0];
    let maxs = [half[0], half[1], BODY_HEIGHT];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    let mut axis = 0;
    for k in 0..3 {
        if ld[k].abs() < 1e-12 {
            if lo[k] < mins[k] || lo[k] > maxs[k] {
                return None;
            }
            continue;
        }
        let a = (mins[k] - lo[k]) / ld[k];
        let b = (maxs[k] - lo[k]) / ld[k];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t0 {
            t0 = near;
            axis = k;
        }
        t1 = t1.min(far);
        if t0 > t1 {
            return None;
        }
    }
    let shade = [0.8, 0.6, 1.0][axis];
    Some((t0, shade))
}

/// Renders the ego camera view.
pub fn render(
    track: &TrackMap,
    vehicles: &[VehicleState],
    ego: &VehicleState,
    cam: &CameraParams,
    vehicle_params: &VehicleParams,
    rand: &RandomizationState,
) -> Image {
    let mut img = Image::new(cam.image_width, cam.image_height);
    render_into(&mut img, track, vehicles, ego, cam, vehicle_params, rand);
    img
}

pub fn render_into(
    img: &mut Image,
    track: &TrackMap,
    vehicles: &[VehicleState],
    ego: &VehicleState,
    cam: &CameraParams,
    vehicle_params: &VehicleParams,
    rand: &RandomizationState,
) {
    if img.width != cam.image_width || img.height != cam.image_height {
        *img = Image::new(cam.image_width, cam.image_height);
    }
    let view = CameraView::new(ego, cam, rand);
    let road = mul(ROAD, rand.road_tint);
    let white = mul(WHITE, rand.lane_mark_tint);
    let yellow = mul(YELLOW, rand.lane_mark_tint);
    let grass = mul(GRASS, rand.off_road_tint);
    let sky = mul(SKY, rand.sky_tint);
    let gain = rand.ambient_gain;
    let mut noise = (rand.noise_sigma > 0.0).then(|| ChaCha8Rng::seed_from_u64(rand.noise_seed));
    let o = view.origin;
    for v in 0..cam.image_height {
        for u in 0..cam.image_width {
            let d = view.ray(u, v);
            let t_ground = if d[2] < 0.0 { -o[2] / d[2] } else { f64::INFINITY };
            let mut color = None;
            let mut best = t_ground;
            for other in vehicles {
                if let Some((t, shade)) = hit_vehicle(o, d, other, vehicle_params) {
                    if t < best {
                        best = t;
                        color = Some(BODY.map(|c| c * shade));
                    }
                }
            }
            let base = match color {
                Some(c) => c,
                None if t_ground.is_finite() => {
                    let p = Vec2::new(o[0] + t_ground * d[0], o[1] + t_ground * d[1]);
                    match surface_at(track, p) {
                        Surface::Road => road,
                        Surface::WhiteLine => white,
                        Surface::YellowLine => yellow,
                        Surface::OffRoad => grass,
                    }
                }
                None => sky,
            };
            let i = (v * cam.image_width + u) * 3;
            for k in 0..3 {
                let mut x = base[k] * gain[k];
                if let Some(rng) = noise.as_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    x += z * rand.noise_sigma;
                }
                img.data[i + k] = x.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

/// One preprocessed frame: cropped, resized to 84x84, RGB8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame84(pub Vec<u8>);

/// Crops the top third and bilinearly resizes to 84x84 (uneven scaling).
pub fn preprocess_frame(img: &Image) -> Frame84 {
    let crop = img.height.div_ceil(3).min(img.height - 1);
    let src_h = img.height - crop;
    let src_w = img.width;
    let sy = src_h as f64 / OBS_SIZE as f64;
    let sx = src_w as f64 / OBS_SIZE as f64;
    let coord = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let mut out = vec![0u8; OBS_SIZE * OBS_SIZE * 3];
    for oy in 0..OBS_SIZE {
        let (y0, y1, fy) = coord(oy, sy, src_h);
        for ox in 0..OBS_SIZE {
            let (x0, x1, fx) = coord(ox, sx, src_w);
            let at = |x: usize, y: usize, k: usize| img.data[((y + crop) * src_w + x) * 3 + k] as f64;
            for k in 0..3 {
                let top = at(x0, y0, k) * (1.0 - fx) + at(x1, y0, k) * fx;
                let bot = at(x0, y1, k) * (1.0 - fx) + at(x1, y1, k) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out[(oy * OBS_SIZE + ox) * 3 + k] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Frame84(out)
}

/// 84x84x9 stacked observation, channel-last, frames oldest to newest.
///
/// Values are stored as 8-bit codes; the tensor value is `code / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationTensor {
    codes: Vec<u8>,
}

impl ObservationTensor {
    pub fn stack(frames: [&Frame84; FRAME_STACK]) -> Self {
        let mut codes = vec![0u8; OBS_LEN];
        for (pix, out) in codes.chunks_exact_mut(OBS_CHANNELS).enumerate() {
            for (f, frame) in frames.iter().enumerate() {
                out[f * 3..f * 3 + 3].copy_from_slice(&frame.0[pix * 3..pix * 3 + 3]);
            }
        }
        Self { codes }
    }

    pub fn from_codes(codes: Vec<u8>) -> Option<Self> {
        (codes.len() == OBS_LEN).then_some(Self { codes })
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn shape(&self) -> [usize; 3] {
        [OBS_SIZE, OBS_SIZE, OBS_CHANNELS]
    }

    /// Value at `(row, col, channel)` in `[0, 1]`.
    pub fn value(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.codes[(row * OBS_SIZE + col) * OBS_CHANNELS + channel] as f32 / 255.0
    }

    pub fn write_f32(&self, out: &mut [f32]) {
        for (o, c) in out.iter_mut().zip(&self.codes) {
            *o = *c as f32 / 255.0;
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        let mut v = vec![0.0; OBS_LEN];
        self.write_f32(&mut v);
        v
    }
}

/// Preprocesses the most recent frames (oldest first). With fewer than three
/// frames the oldest available one is replicated.
pub fn preprocess(history: &[Image]) -> Result<ObservationTensor, CameraError> {
    let first = history.first().ok_or(CameraError::NoFrames)?;
    for img in history {
        if img.width != first.width || img.height != first.height {
            return Err(CameraError::FrameSizeMismatch(
                first.width,
                first.height,
                img.width,
                img.height,
            ));
        }
    }
    let recent = &history[history.len().saturating_sub(FRAME_STACK)..];
    let mut frames: Vec<Frame84> = recent.iter().map(preprocess_frame).collect();
    while frames.len() < FRAME_STACK {
        frames.insert(0, frames[0].clone());
    }
    Ok(ObservationTensor::stack([&frames[0], &frames[1], &frames[2]]))
}

/// Rolling history of preprocessed frames.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: [Frame84; FRAME_STACK],
}

impl FrameStack {
    /// Starts an episode by replicating the first frame.
    pub fn new(first: Frame84) -> Self {
        Self {
            frames: [first.clone(), first.clone(), first],
        }
    }

    pub fn push(&mut self, frame: Frame84) {
        self.frames.rotate_left(1);
        self.frames[FRAME_STACK - 1] = frame;
    }

    pub fn observation(&self) -> ObservationTensor {
        ObservationTensor::stack([&self.frames[0], &self.frames[1], &self.frames[2]])
    }
}

/// Top-down view of the map with vehicles drawn as discs, `px_per_m` pixels per meter.
pub fn render_top_down(track: &TrackMap, vehicles: &[VehicleState], px_per_m: f64) -> Image {
    let w = ((track.width() as f64 * track.tile_size()) * px_per_m).ceil().max(1.0) as usize;
    let h = ((track.height() as f64 * track.tile_size()) * px_per_m).ceil().max(1.0) as usize;
    let mut img = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = Vec2::new((x as f64 + 0.5) / px_per_m, (h - y) as f64 / px_per_m - 0.5 / px_per_m);
            let c = match surface_at(track, p) {
                Surface::Road => ROAD,
                Surface::WhiteLine => WHITE,
                Surface::YellowLine => YELLOW,
                Surface::OffRoad => GRASS,
            };
            let i = (y * w + x) * 3;
            for k in 0..3 {
                img.data[i + k] = c[k] as u8;
            }
        }
    }
    for (n, v) in vehicles.iter().enumerate() {
        let color = if n == 0 { [40u8, 90, 220] } else { [200, 40, 40] };
        let r = 0.07 * px_per_m;
        let cx = v.position.x * px_per_m;
        let cy = h as f64 - v.position.y * px_per_m;
        let nose = (cx + v.heading.cos() * r * 1.6, cy - v.heading.sin() * r * 1.6);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let in_disc = (fx - cx).hypot(fy - cy) <= r;
                let in_nose = (fx - nose.0).hypot(fy - nose.1) <= r * 0.4;
                if in_disc || in_nose {
                    let i = (y * w + x) * 3;
                    let c = if in_nose { [255, 255, 255] } else { color };
                    img.data[i..i + 3].copy_from_slice(&c);
                }
            }
        }
    }
    img
}
