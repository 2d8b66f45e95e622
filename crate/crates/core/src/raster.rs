//! Front-view software rasterizer.
//!
//! A pinhole camera sits 0.5 m ahead of the ego center and 1.2 m above the
//! road with a 60 degree horizontal field of view and a 280 x 210 image.
//! Geometry is flat shaded and drawn with the painter's algorithm: road
//! surface, then lane markings, then boxes and building prisms far to near.
//! Scene brightness follows the time of day.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{heading_vec, right_of, Vec2, Vec3};
use crate::road::Direction;
use crate::sim::{ActorState, Snapshot};
use crate::world::World;

pub const FRAME_WIDTH: usize = 280;
pub const FRAME_HEIGHT: usize = 210;
const NEAR_PLANE: f64 = 0.1;
const DRAW_DISTANCE: f64 = 250.0;
const MARKING_WIDTH: f64 = 0.15;
const DASH_LENGTH: f64 = 3.0;
const DASH_PERIOD: f64 = 12.0;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("no frames to average")]
    Empty,
    #[error("malformed pixmap: {0}")]
    Pixmap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    /// Mount point ahead of the vehicle center, m.
    pub forward_offset: f64,
    /// Mount height above the road, m.
    pub mount_height: f64,
    pub hfov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            forward_offset: 0.5,
            mount_height: 1.2,
            hfov_deg: 60.0,
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.hfov_deg > 20.0 && self.hfov_deg < 120.0) {
            return Err(format!("field of view {} outside (20, 120)", self.hfov_deg));
        }
        if self.width != FRAME_WIDTH || self.height != FRAME_HEIGHT {
            return Err("resolution is fixed at 280 x 210".into());
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.hfov_deg.to_radians()).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (0.5 * self.width as f64, 0.5 * self.height as f64)
    }

    /// Camera attached to a vehicle pose.
    pub fn camera_at(&self, x: f64, y: f64, heading: f64) -> Camera {
        let f = heading_vec(heading);
        let r = right_of(f);
        let (cx, cy) = self.principal_point();
        Camera {
            eye: Vec3::new(x + f.x * self.forward_offset, y + f.y * self.forward_offset, self.mount_height),
            forward: Vec3::new(f.x, f.y, 0.0),
            right: Vec3::new(r.x, r.y, 0.0),
            up: Vec3::new(0.0, 0.0, 1.0),
            focal: self.focal(),
            cx,
            cy,
        }
    }
}

/// Posed pinhole camera; level with the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projected {
    Pixel { u: f64, v: f64, depth: f64 },
    BehindCamera,
}

impl Camera {
    /// (right, up, depth) camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.eye;
        Vec3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }

    fn image_of(&self, c: Vec3) -> (f64, f64) {
        (self.cx + self.focal * c.x / c.z, self.cy - self.focal * c.y / c.z)
    }

    pub fn project(&self, p: Vec3) -> Projected {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return Projected::BehindCamera;
        }
        let (u, v) = self.image_of(c);
        Projected::Pixel { u, v, depth: c.z }
    }

    /// World point at `depth` along the ray through image point (u, v).
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let x = (u - self.cx) * depth / self.focal;
        let y = (self.cy - v) * depth / self.focal;
        self.eye + self.right * x + self.up * y + self.forward * depth
    }
}

/// Pixel index of a continuous image coordinate, rounding halves down.
pub fn to_pixel(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

/// Scene brightness in [0.15, 1.0]: darkest at midnight, brightest at noon.
pub fn brightness(time_of_day: f64) -> f64 {
    0.575 - 0.425 * (std::f64::consts::TAU * time_of_day / crate::sim::SECONDS_PER_DAY).cos()
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Frame { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Binary portable pixmap (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Frame, RasterError> {
        let bad = |m: &str| RasterError::Pixmap(m.into());
        let mut fields = Vec::new();
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("header is not ascii"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("not a P6 pixmap"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if max != 255 {
            return Err(bad("only 8-bit pixmaps are supported"));
        }
        let data = &bytes[i + 1..];
        if data.len() != width * height * 3 {
            return Err(bad("pixel data length mismatch"));
        }
        Ok(Frame {
            width,
            height,
            data: data.to_vec(),
        })
    }

    /// Box-filter downsampling by an integer factor; trailing rows and
    /// columns that do not fill a block are dropped.
    pub fn downsample(&self, factor: usize) -> Frame {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut data = Vec::with_capacity(w * h * 3);
        let n = (factor * factor) as u32;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c] as u32;
                        }
                    }
                }
                for a in acc {
                    data.push(((a + n / 2) / n) as u8);
                }
            }
        }
        Frame { width: w, height: h, data }
    }
}

/// Per-channel mean over every pixel of every frame.
pub fn channel_means(frames: &[Frame]) -> Result<[f64; 3], RasterError> {
    if frames.is_empty() {
        return Err(RasterError::Empty);
    }
    let mut sum = [0u64; 3];
    let mut count = 0u64;
    for f in frames {
        for px in f.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        count += (f.width * f.height) as u64;
    }
    Ok(sum.map(|s| s as f64 / count as f64))
}

/// Frame as channel-interleaved floats with `means` removed.
pub fn apply_means(frame: &Frame, means: &[f64; 3]) -> Vec<f32> {
    frame
        .data
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] as f64 - means[c]) as f32))
        .collect()
}

/// Mean-subtracts a set of frames with their own channel means.
pub fn mean_subtract(frames: &[Frame]) -> Result<(Vec<f32>, [f64; 3]), RasterError> {
    let means = channel_means(frames)?;
    let out = frames.iter().flat_map(|f| apply_means(f, &means)).collect();
    Ok((out, means))
}

fn shade(c: [u8; 3], factor: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * factor).round().clamp(0.0, 255.0) as u8)
}

struct Polygon {
    points: Vec<Vec3>,
    color: [u8; 3],
}

struct Solid {
    distance: f64,
    faces: Vec<Polygon>,
}

const SKY: [u8; 3] = [120, 170, 235];
const GRASS: [u8; 3] = [80, 120, 60];
const ASPHALT: [u8; 3] = [70, 70, 75];
const PAINT: [u8; 3] = [235, 235, 235];
const WALL: [u8; 3] = [170, 150, 130];

fn face_light(normal: Vec3) -> f64 {
    let sun = Vec3::new(0.4, 0.3, 0.866).normalize();
    0.55 + 0.45 * normal.dot(&sun).max(0.0)
}

/// Renders the view from the ego of `snapshot`. Returns a sky/ground frame
/// when the snapshot has no ego.
pub fn render(world: &World, snapshot: &Snapshot, rig: &CameraRig) -> Frame {
    let light = brightness(snapshot.time_of_day);
    let Some(ego) = snapshot.ego_state() else {
        return background(rig, light);
    };
    let cam = rig.camera_at(ego.pose.x, ego.pose.y, ego.pose.heading);
    let mut frame = background(rig, light);
    let eye2 = Vec2::new(cam.eye.x, cam.eye.y);

    let mut surface = Vec::new();
    let mut paint = Vec::new();
    for seg in world.network.segments() {
        let fwd = seg.marking_offsets(Direction::Forward);
        let back: Vec<f64> = seg.marking_offsets(Direction::Backward).iter().map(|o| -o).collect();
        let lo = fwd.iter().chain(&back).copied().fold(f64::INFINITY, f64::min);
        let hi = fwd.iter().chain(&back).copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lines: Vec<(f64, bool)> = Vec::new();
        for &o in fwd.iter().chain(&back) {
            if lines.iter().any(|&(m, _)| (m - o).abs() < 1e-9) {
                continue;
            }
            let solid = (o - lo).abs() < 1e-9 || (o - hi).abs() < 1e-9 || (!seg.oneway && o.abs() < 1e-9);
            lines.push((o, solid));
        }

        let pts = seg.centerline.points();
        let mut s0 = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = (b - a).norm();
            let piece_s = s0;
            s0 += len;
            if point_segment_distance(eye2, a, b) > DRAW_DISTANCE {
                continue;
            }
            let d = (b - a) / len;
            let n = right_of(d);
            let quad = |t0: f64, t1: f64, o0: f64, o1: f64, z: f64| {
                let p = |t: f64, o: f64| {
                    let q = a + d * t + n * o;
                    Vec3::new(q.x, q.y, z)
                };
                vec![p(t0, o0), p(t1, o0), p(t1, o1), p(t0, o1)]
            };
            surface.push(Polygon {
                points: quad(0.0, len, lo, hi, 0.0),
                color: shade(ASPHALT, light),
            });
            for &(o, solid) in &lines {
                let (o0, o1) = (o - 0.5 * MARKING_WIDTH, o + 0.5 * MARKING_WIDTH);
                if solid {
                    paint.push(Polygon {
                        points: quad(0.0, len, o0, o1, 0.0),
                        color: shade(PAINT, light),
                    });
                    continue;
                }
                let mut k = (piece_s / DASH_PERIOD).floor();
                loop {
                    let start = k * DASH_PERIOD - piece_s;
                    if start >= len {
                        break;
                    }
                    let (t0, t1) = (start.max(0.0), (start + DASH_LENGTH).min(len));
                    if t1 > t0 {
                        paint.push(Polygon {
                            points: quad(t0, t1, o0, o1, 0.0),
                            color: shade(PAINT, light),
                        });
                    }
                    k += 1.0;
                }
            }
        }
    }
    for poly in surface.iter().chain(&paint) {
        fill_polygon(&mut frame, &cam, poly);
    }

    let mut solids = Vec::new();
    for actor in &snapshot.actors {
        if Some(actor.id) == snapshot.ego {
            continue;
        }
        let c = actor.pose.position();
        let distance = (c - eye2).norm();
        if distance > DRAW_DISTANCE {
            continue;
        }
        solids.push(Solid {
            distance,
            faces: box_faces(actor, &cam, light),
        });
    }
    for b in &world.buildings {
        let centroid = b.footprint.iter().fold(Vec2::zeros(), |acc, p| acc + p) / b.footprint.len() as f64;
        let distance = (centroid - eye2).norm();
        if distance > DRAW_DISTANCE {
            continue;
        }
        solids.push(Solid {
            distance,
            faces: prism_faces(&b.footprint, b.height_m, WALL, &cam, light),
        });
    }
    solids.sort_by(|a, b| b.distance.total_cmp(&a.distance));
    for s in &solids {
        for f in &s.faces {
            fill_polygon(&mut frame, &cam, f);
        }
    }
    frame
}

fn background(rig: &CameraRig, light: f64) -> Frame {
    let mut frame = Frame::filled(rig.width, rig.height, shade(GRASS, light));
    let (_, cy) = rig.principal_point();
    let sky = shade(SKY, light);
    for y in 0..rig.height {
        if (y as f64 + 0.5) < cy {
            for x in 0..rig.width {
                frame.put(x, y, sky);
            }
        }
    }
    frame
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

fn box_faces(actor: &ActorState, cam: &Camera, light: f64) -> Vec<Polygon> {
    let corners = actor.footprint().corners();
    prism_faces(&corners, 2.0 * actor.half_extents[2], actor.color, cam, light)
}

/// Visible walls and roof of a vertical prism.
fn prism_faces(base: &[Vec2], height: f64, color: [u8; 3], cam: &Camera, light: f64) -> Vec<Polygon> {
    let n = base.len();
    let signed_area: f64 = (0..n).map(|i| crate::geom::cross(base[i], base[(i + 1) % n])).sum();
    let ccw = signed_area > 0.0;
    let mut faces = Vec::with_capacity(n + 1);
    for i in 0..n {
        let (a, b) = (base[i], base[(i + 1) % n]);
        let edge = b - a;
        let outward = if ccw { right_of(edge) } else { -right_of(edge) };
        let normal = Vec3::new(outward.x, outward.y, 0.0).normalize();
        let mid = Vec3::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y), 0.5 * height);
        if normal.dot(&(cam.eye - mid)) <= 0.0 {
            continue;
        }
        faces.push(Polygon {
            points: vec![
                Vec3::new(a.x, a.y, 0.0),
                Vec3::new(b.x, b.y, 0.0),
                Vec3::new(b.x, b.y, height),
                Vec3::new(a.x, a.y, height),
            ],
            color: shade(color, light * face_light(normal)),
        });
    }
    if cam.eye.z > height {
        faces.push(Polygon {
            points: base.iter().map(|p| Vec3::new(p.x, p.y, height)).collect(),
            color: shade(color, light * face_light(Vec3::new(0.0, 0.0, 1.0))),
        });
    }
    faces
}

/// Clips against the near plane, projects and scan-converts with the
/// pixel-center rule (even-odd).
fn fill_polygon(frame: &mut Frame, cam: &Camera, poly: &Polygon) {
    let cam_pts: Vec<Vec3> = poly.points.iter().map(|&p| cam.to_camera(p)).collect();
    let mut clipped = Vec::with_capacity(cam_pts.len() + 2);
    for i in 0..cam_pts.len() {
        let a = cam_pts[i];
        let b = cam_pts[(i + 1) % cam_pts.len()];
        let (ina, inb) = (a.z >= NEAR_PLANE, b.z >= NEAR_PLANE);
        if ina {
            clipped.push(a);
        }
        if ina != inb {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            clipped.push(a + (b - a) * t);
        }
    }
    if clipped.len() < 3 {
        return;
    }
    let img: Vec<(f64, f64)> = clipped.iter().map(|&c| cam.image_of(c)).collect();
    let ymin = img.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = img.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = to_pixel(ymin.max(0.0)).max(0) as usize;
    let row_hi = (to_pixel(ymax.min(frame.height as f64)).min(frame.height as i64 - 1)).max(-1);
    if row_hi < 0 {
        return;
    }
    let mut xs = Vec::with_capacity(8);
    for y in row_lo..=row_hi as usize {
        let yc = y as f64 + 0.5;
        xs.clear();
        for i in 0..img.len() {
            let (x0, y0) = img[i];
            let (x1, y1) = img[(i + 1) % img.len()];
            if (y0 <= yc) != (y1 <= yc) {
                xs.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x_lo = to_pixel(pair[0].max(-1.0)).max(0);
            let x_hi = to_pixel(pair[1].min(frame.width as f64 + 1.0)).min(frame.width as i64);
            for x in x_lo..x_hi {
                frame.put(x as usize, y, poly.color);
            }
        }
    }
}
