use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named joint angles in radians; left/right refer to the figure's own sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Arm raise away from the body, 0 = hanging.
    pub shoulder_abduction: [f64; 2],
    /// Arm swing toward the camera.
    pub shoulder_flexion: [f64; 2],
    pub elbow: [f64; 2],
    pub hip_abduction: [f64; 2],
    pub hip_flexion: [f64; 2],
    pub knee: [f64; 2],
    /// Sideways torso lean.
    pub lean: f64,
    /// Rotation of the whole figure about the vertical axis.
    pub yaw: f64,
}

/// Segment lengths and radii in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Build {
    pub torso: f64,
    pub torso_radius: f64,
    pub neck: f64,
    pub head_radius: f64,
    pub shoulder_half_width: f64,
    pub hip_half_width: f64,
    pub upper_arm: f64,
    pub lower_arm: f64,
    pub arm_radius: f64,
    pub upper_leg: f64,
    pub lower_leg: f64,
    pub leg_radius: f64,
}

impl Build {
    pub fn standard() -> Self {
        Self {
            torso: 0.55,
            torso_radius: 0.13,
            neck: 0.08,
            head_radius: 0.12,
            shoulder_half_width: 0.21,
            hip_half_width: 0.1,
            upper_arm: 0.3,
            lower_arm: 0.28,
            arm_radius: 0.085,
            upper_leg: 0.44,
            lower_leg: 0.42,
            leg_radius: 0.105,
        }
    }

    pub fn height(&self) -> f64 {
        self.upper_leg + self.lower_leg + self.torso + self.neck + 2.0 * self.head_radius + self.leg_radius
    }
}

/// RGB albedos of one figure's clothing and skin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub skin: [f32; 3],
    pub shirt: [f32; 3],
    pub sleeve: [f32; 3],
    pub pants: [f32; 3],
    pub shins: [f32; 3],
    pub shoes: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub pose: Pose,
    pub build: Build,
    pub palette: Palette,
    /// Horizontal world position in meters.
    pub x: f64,
    /// Distance in front of the camera origin, meters; positive.
    pub depth_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal length in pixels.
    pub focal: f64,
    /// Yaw, pitch, roll in radians.
    pub rotation: [f64; 3],
    /// Camera center in world coordinates (meters, y up).
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Background {
    /// Procedural style 0 (gradient), 1 (soft checker) or 2 (smooth value noise), seeded.
    Procedural { style: u8, seed: u64 },
    /// Image file, center-cropped or resized to the frame.
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub figures: Vec<Figure>,
    pub camera: Camera,
    pub background: Background,
}

/// What a scene is generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    /// 1-4 figures anywhere in the frame.
    Pretrain,
    /// One figure roughly filling the frame, as in a top-down person crop.
    Finetune,
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.figures.is_empty() || self.figures.len() > 4 {
            return Err(Error::BadSize(format!("{} figures, expected 1..=4", self.figures.len())));
        }
        if let Some(f) = self.figures.iter().find(|f| !(f.depth_offset > 0.0)) {
            return Err(Error::BadSize(format!("depth offset {} must be positive", f.depth_offset)));
        }
        if !(self.camera.focal > 0.0) {
            return Err(Error::BadSize(format!("focal length {}", self.camera.focal)));
        }
        Ok(())
    }

    /// Draws a scene for a `height x width` frame.
    pub fn random(seed: u64, kind: SceneKind, height: usize, width: usize) -> SceneParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let focal = height as f64 * rng.gen_range(1.0..1.3);
        let n = match kind {
            SceneKind::Pretrain => rng.gen_range(1..=4),
            SceneKind::Finetune => 1,
        };
        let mut figures = Vec::with_capacity(n);
        for i in 0..n {
            let build = random_build(&mut rng);
            let (depth, x) = match kind {
                SceneKind::Finetune => {
                    let fill = rng.gen_range(0.78..0.92);
                    let d = focal * build.height() / (fill * height as f64);
                    (d, rng.gen_range(-0.05..0.05) * d)
                }
                SceneKind::Pretrain => {
                    // distinct depth slots keep figures ordered front to back
                    let d = 3.0 + 1.2 * i as f64 + rng.gen_range(0.0..0.8);
                    let half = 0.5 * width as f64 / focal * d;
                    (d, rng.gen_range(-0.8..0.8) * half)
                }
            };
            figures.push(Figure {
                pose: random_pose(&mut rng),
                build,
                palette: random_palette(&mut rng),
                x,
                depth_offset: depth,
            });
        }
        let mid = figures[0].build.height() * 0.5;
        let cam_y = match kind {
            SceneKind::Finetune => mid + rng.gen_range(-0.05..0.05),
            SceneKind::Pretrain => mid + rng.gen_range(-0.3..0.3),
        };
        let camera = Camera {
            focal,
            rotation: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.04..0.04), rng.gen_range(-0.06..0.06)],
            translation: [rng.gen_range(-0.05..0.05), cam_y, 0.0],
        };
        let background = Background::Procedural {
            style: rng.gen_range(0..3),
            seed: rng.gen(),
        };
        SceneParams {
            seed,
            figures,
            camera,
            background,
        }
    }
}

fn random_build<R: Rng>(rng: &mut R) -> Build {
    let s = rng.gen_range(0.9..1.1);
    let mut j = |v: f64| v * s * rng.gen_range(0.95..1.05);
    let b = Build::standard();
    Build {
        torso: j(b.torso),
        torso_radius: j(b.torso_radius),
        neck: j(b.neck),
        head_radius: j(b.head_radius),
        shoulder_half_width: j(b.shoulder_half_width),
        hip_half_width: j(b.hip_half_width),
        upper_arm: j(b.upper_arm),
        lower_arm: j(b.lower_arm),
        arm_radius: j(b.arm_radius),
        upper_leg: j(b.upper_leg),
        lower_leg: j(b.lower_leg),
        leg_radius: j(b.leg_radius),
    }
}

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let mut pair = |lo: f64, hi: f64| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
    Pose {
        shoulder_abduction: pair(0.15, 2.2),
        shoulder_flexion: pair(0.0, 0.9),
        elbow: pair(0.0, 1.6),
        hip_abduction: pair(0.0, 0.4),
        hip_flexion: pair(0.0, 0.8),
        knee: pair(0.0, 1.2),
        lean: rng.gen_range(-0.2..0.2),
        yaw: rng.gen_range(-0.35..0.35),
    }
}

fn random_palette<R: Rng>(rng: &mut R) -> Palette {
    let tone = rng.gen_range(0.35f32..1.1);
    let skin = [0.85f32, 0.62, 0.48].map(|b| (b * tone + rng.gen_range(-0.04..0.04)).clamp(0.05, 1.0));
    let mut color = |lo: f32, hi: f32| -> [f32; 3] { [0; 3].map(|_| rng.gen_range(lo..hi)) };
    let shirt = color(0.05, 0.95);
    let pants = color(0.05, 0.8);
    let shoes = color(0.0, 0.5);
    let sleeve = if rng.gen_bool(0.5) { shirt } else { skin };
    let shins = if rng.gen_bool(0.3) { skin } else { pants };
    Palette {
        skin,
        shirt,
        sleeve,
        pants,
        shins,
        shoes,
    }
}
