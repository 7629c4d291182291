use super::background::render_background;
use super::scene::{Figure, SceneParams};
use crate::error::{Error, Result};
use crate::heads::{Keypoints, Visibility, DESK_K};
use crate::image::Image;

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn mul(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn unit(a: V3) -> V3 {
    mul(a, 1.0 / dot(a, a).sqrt())
}

/// Everything rendered for one scene; per-pixel buffers are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    pub image: Image,
    /// Part class per pixel, 0 = background.
    pub part_mask: Vec<u8>,
    /// 1-based index into `keypoints`/`boxes`, 0 = background.
    pub person_id: Vec<u8>,
    /// Camera z-distance in meters on human pixels, 0 elsewhere.
    pub depth: Vec<f32>,
    /// Camera-space unit normals (x right, y up, z toward the camera), `[h, w, 3]`;
    /// zero on background.
    pub normal: Vec<f32>,
    pub keypoints: Vec<Keypoints>,
    /// `(x, y, w, h)` tight pixel boxes.
    pub boxes: Vec<[f64; 4]>,
    /// Simulated detector confidences.
    pub scores: Vec<f64>,
    /// Focal length in pixels; a pixel center `(x, y)` at depth `d` lies at
    /// `d * ((x + 0.5 - w/2) / f, -(y + 0.5 - h/2) / f, -1)`.
    pub focal: f64,
}

impl Sample {
    pub fn human_mask(&self) -> Vec<bool> {
        self.part_mask.iter().map(|&c| c > 0).collect()
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: V3,
    b: V3,
    r: f64,
    class: u8,
    albedo: [f32; 3],
}

impl Capsule {
    /// Nearest positive ray parameter for a ray from the origin along unit `rd`.
    fn intersect(&self, rd: V3) -> Option<f64> {
        let ba = sub(self.b, self.a);
        let oa = mul(self.a, -1.0);
        let baba = dot(ba, ba);
        let r2 = self.r * self.r;
        let sphere = |c: V3| {
            let oc = mul(c, -1.0);
            let b = dot(rd, oc);
            let h = b * b - (dot(oc, oc) - r2);
            (h >= 0.0).then(|| -b - h.sqrt()).filter(|&t| t > 0.0)
        };
        if baba < 1e-12 {
            return sphere(self.a);
        }
        let bard = dot(ba, rd);
        let baoa = dot(ba, oa);
        let rdoa = dot(rd, oa);
        let a = baba - bard * bard;
        if a > 1e-12 {
            let b = baba * rdoa - baoa * bard;
            let c = baba * dot(oa, oa) - baoa * baoa - r2 * baba;
            let h = b * b - a * c;
            if h < 0.0 {
                return None;
            }
            let t = (-b - h.sqrt()) / a;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                return (t > 0.0).then_some(t);
            }
        }
        match (sphere(self.a), sphere(self.b)) {
            (Some(p), Some(q)) => Some(p.min(q)),
            (p, q) => p.or(q),
        }
    }

    fn normal_at(&self, p: V3) -> V3 {
        let ba = sub(self.b, self.a);
        let baba = dot(ba, ba);
        let h = if baba < 1e-12 {
            0.0
        } else {
            (dot(sub(p, self.a), ba) / baba).clamp(0.0, 1.0)
        };
        unit(sub(p, add(self.a, mul(ba, h))))
    }
}

/// Joint positions (desk skeleton order) and body capsules of one figure in
/// world coordinates: y up, the figure facing +z.
fn figure_geometry(f: &Figure) -> ([V3; DESK_K], Vec<Capsule>) {
    let b = &f.build;
    let p = &f.pose;
    let pal = &f.palette;
    let ground = b.leg_radius;
    let pelvis = [0.0, ground + b.upper_leg + b.lower_leg, 0.0];
    let up = [p.lean.sin(), p.lean.cos(), 0.0];
    let across = [p.lean.cos(), -p.lean.sin(), 0.0];
    let neck = add(pelvis, mul(up, b.torso));
    let head = add(neck, mul(up, b.neck + b.head_radius));
    // a limb hanging down, raised sideways by `abd` and swung forward by `flex`
    let limb = |side: f64, abd: f64, flex: f64| [side * abd.sin() * flex.cos(), -abd.cos() * flex.cos(), flex.sin()];
    let mut j = [[0.0; 3]; DESK_K];
    j[0] = head;
    j[1] = neck;
    let mut caps = Vec::with_capacity(20);
    // index 0 is the figure's left side, which faces the camera's right (+x)
    for (i, side) in [(0usize, 1.0), (1, -1.0)] {
        let shoulder = add(sub(neck, mul(up, 0.04)), mul(across, side * b.shoulder_half_width));
        let d1 = limb(side, p.shoulder_abduction[i], p.shoulder_flexion[i]);
        let elbow = add(shoulder, mul(d1, b.upper_arm));
        let d2 = limb(side, p.shoulder_abduction[i], p.shoulder_flexion[i] + p.elbow[i]);
        let wrist = add(elbow, mul(d2, b.lower_arm));
        let hip = add(pelvis, mul(across, side * b.hip_half_width));
        let d3 = limb(side, p.hip_abduction[i], p.hip_flexion[i]);
        let knee = add(hip, mul(d3, b.upper_leg));
        let d4 = limb(side, p.hip_abduction[i], p.hip_flexion[i] - p.knee[i]);
        let ankle = add(knee, mul(d4, b.lower_leg));
        j[2 + i] = shoulder;
        j[4 + i] = elbow;
        j[6 + i] = wrist;
        j[8 + i] = hip;
        j[10 + i] = knee;
        j[12 + i] = ankle;
        let torso_side = Capsule {
            a: add(hip, mul(up, 0.02)),
            b: sub(shoulder, mul(up, 0.02)),
            r: b.torso_radius * 0.85,
            class: 2,
            albedo: pal.shirt,
        };
        caps.push(torso_side);
        caps.push(Capsule { a: shoulder, b: elbow, r: b.arm_radius, class: 3, albedo: pal.sleeve });
        caps.push(Capsule { a: elbow, b: wrist, r: b.arm_radius * 0.9, class: 4, albedo: pal.skin });
        let hand = add(wrist, mul(d2, b.arm_radius));
        caps.push(Capsule { a: hand, b: hand, r: b.arm_radius * 1.4, class: 7, albedo: pal.skin });
        caps.push(Capsule { a: hip, b: knee, r: b.leg_radius, class: 5, albedo: pal.pants });
        caps.push(Capsule { a: knee, b: ankle, r: b.leg_radius * 0.8, class: 6, albedo: pal.shins });
        let toe = add(ankle, [0.0, -0.02, 0.13]);
        caps.push(Capsule { a: add(ankle, [0.0, 0.0, 0.02]), b: toe, r: b.leg_radius * 0.85, class: 7, albedo: pal.shoes });
    }
    caps.push(Capsule {
        a: add(pelvis, mul(up, 0.05)),
        b: sub(neck, mul(up, 0.08)),
        r: b.torso_radius,
        class: 2,
        albedo: pal.shirt,
    });
    caps.push(Capsule { a: neck, b: add(neck, mul(up, b.neck)), r: b.head_radius * 0.45, class: 1, albedo: pal.skin });
    caps.push(Capsule { a: head, b: head, r: b.head_radius, class: 1, albedo: pal.skin });

    // yaw about the vertical axis through the pelvis, then place in the world
    let (s, c) = f.pose.yaw.sin_cos();
    let place = |v: V3| {
        let (x, z) = (v[0] - pelvis[0], v[2] - pelvis[2]);
        [pelvis[0] + c * x + s * z + f.x, v[1], pelvis[2] - s * x + c * z - f.depth_offset]
    };
    let joints = j.map(place);
    let caps = caps
        .into_iter()
        .map(|k| Capsule { a: place(k.a), b: place(k.b), ..k })
        .collect();
    (joints, caps)
}

/// World-to-camera rotation from yaw (y), pitch (x) and roll (z).
fn rotation(r: [f64; 3]) -> [[f64; 3]; 3] {
    let (sy, cy) = r[0].sin_cos();
    let (sp, cp) = r[1].sin_cos();
    let (sr, cr) = r[2].sin_cos();
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    let m = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        o
    };
    m(rz, m(rx, ry))
}

/// Point light just above and left of the camera, in camera space; diffuse
/// intensity falls off with the squared distance, normalized to 1 at the
/// hips of the first figure.
const LIGHT_POS: V3 = [-0.6, 0.8, 0.0];
const AMBIENT: f32 = 0.3;

/// Ray-traces every figure of the scene against its background.
pub fn render_sample(params: &SceneParams, out_h: usize, out_w: usize) -> Result<Sample> {
    params.validate()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::BadSize(format!("{out_h}x{out_w} frame")));
    }
    let cam = &params.camera;
    let rot = rotation(cam.rotation);
    let to_cam = |v: V3| {
        let d = sub(v, cam.translation);
        [dot(rot[0], d), dot(rot[1], d), dot(rot[2], d)]
    };
    let mut joints = Vec::new();
    let mut caps: Vec<(usize, Capsule)> = Vec::new();
    for (i, f) in params.figures.iter().enumerate() {
        let (j, c) = figure_geometry(f);
        joints.push(j.map(to_cam));
        caps.extend(c.into_iter().map(|k| (i, Capsule { a: to_cam(k.a), b: to_cam(k.b), ..k })));
    }
    let (cx, cy, fl) = (out_w as f64 / 2.0, out_h as f64 / 2.0, cam.focal);
    let n = out_h * out_w;
    let mut image = render_background(&params.background, out_h, out_w)?;
    let mut part_mask = vec![0u8; n];
    let mut owner = vec![0u8; n];
    let mut depth = vec![0f32; n];
    let mut normal = vec![0f32; n * 3];
    let hips = mul(add(joints[0][8], joints[0][9]), 0.5);
    let ref_d2 = dot(sub(LIGHT_POS, hips), sub(LIGHT_POS, hips));
    for y in 0..out_h {
        for x in 0..out_w {
            let rd = unit([(x as f64 + 0.5 - cx) / fl, -(y as f64 + 0.5 - cy) / fl, -1.0]);
            let mut best: Option<(f64, usize, &Capsule)> = None;
            for (fig, c) in &caps {
                if let Some(t) = c.intersect(rd) {
                    if best.map_or(true, |(bt, _, _)| t < bt) {
                        best = Some((t, *fig, c));
                    }
                }
            }
            let Some((t, fig, c)) = best else { continue };
            let p = mul(rd, t);
            let nrm = c.normal_at(p);
            let i = y * out_w + x;
            part_mask[i] = c.class;
            owner[i] = fig as u8 + 1;
            depth[i] = -p[2] as f32;
            for k in 0..3 {
                normal[i * 3 + k] = nrm[k] as f32;
            }
            let to_light = sub(LIGHT_POS, p);
            let d2 = dot(to_light, to_light);
            let diffuse = dot(nrm, unit(to_light)).max(0.0) * ref_d2 / d2;
            let shade = AMBIENT + (1.0 - AMBIENT) * diffuse as f32;
            let px = image.pixel_mut(y, x);
            for k in 0..3 {
                px[k] = (c.albedo[k] * shade).clamp(0.0, 1.0);
            }
        }
    }

    // keep figures with at least one pixel, renumbered in scene order
    let mut remap = vec![0u8; params.figures.len() + 1];
    let mut keypoints = Vec::new();
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for fig in 0..params.figures.len() {
        let id = fig as u8 + 1;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, _) in owner.iter().enumerate().filter(|(_, &o)| o == id) {
            let (y, x) = (i / out_w, i % out_w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if x0 == usize::MAX {
            continue;
        }
        remap[id as usize] = keypoints.len() as u8 + 1;
        let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        let mut coords = Vec::with_capacity(DESK_K);
        let mut vis = Vec::with_capacity(DESK_K);
        for j in &joints[fig] {
            let u = fl * j[0] / -j[2] + cx - 0.5;
            let v = -fl * j[1] / -j[2] + cy - 0.5;
            let (ru, rv) = (u.round(), v.round());
            if j[2] >= 0.0 || ru < 0.0 || rv < 0.0 || ru >= out_w as f64 || rv >= out_h as f64 {
                coords.push([0.0, 0.0]);
                vis.push(Visibility::Absent);
                continue;
            }
            let own = owner[rv as usize * out_w + ru as usize] == id;
            coords.push([u.clamp(0.0, (out_w - 1) as f64), v.clamp(0.0, (out_h - 1) as f64)]);
            vis.push(if own { Visibility::Visible } else { Visibility::Occluded });
        }
        keypoints.push(Keypoints::new(coords, vis));
        boxes.push([x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64]);
        // confidence grows with apparent size; deterministic in the scene
        let frac = area / n as f64;
        scores.push((0.55 + 0.45 * frac.sqrt().min(1.0) + 0.01 * (params.seed % 7) as f64).min(1.0));
    }
    if keypoints.is_empty() {
        return Err(Error::EmptyScene);
    }
    let person_id = owner.iter().map(|&o| remap[o as usize]).collect();
    // snap to 8-bit levels so PNG files round-trip exactly
    image.data.iter_mut().for_each(|v| *v = (*v * 255.0).round() / 255.0);
    Ok(Sample {
        height: out_h,
        width: out_w,
        image,
        part_mask,
        person_id,
        depth,
        normal,
        keypoints,
        boxes,
        scores,
        focal: fl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsule_hits() {
        let c = Capsule { a: [0.0, -1.0, -5.0], b: [0.0, 1.0, -5.0], r: 0.5, class: 1, albedo: [1.0; 3] };
        let t = c.intersect([0.0, 0.0, -1.0]).unwrap();
        assert!((t - 4.5).abs() < 1e-12);
        let n = c.normal_at([0.0, 0.0, -4.5]);
        assert!((n[2] - 1.0).abs() < 1e-12);
        // cap
        let rd = unit([0.0, 1.2, -5.0]);
        assert!(c.intersect(rd).is_some());
        assert!(c.intersect(unit([1.0, 0.0, -1.0])).is_none());
        // sphere
        let s = Capsule { a: [0.0, 0.0, -3.0], b: [0.0, 0.0, -3.0], r: 1.0, ..c };
        assert!((s.intersect([0.0, 0.0, -1.0]).unwrap() - 2.0).abs() < 1e-12);
    }
}
