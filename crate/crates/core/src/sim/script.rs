use std::f64::consts::TAU;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use super::{ActorProfile, ContactSample, TouchTrajectory};
use crate::frame::WINDOW_LEN;
use crate::taxonomy::{KindId, Region, Taxonomy};

pub const DEFAULT_SCRIPTS: &str = include_str!("../../config/gestures.toml");

#[derive(Debug, Error, PartialEq)]
pub enum ScriptError {
    #[error("script document does not parse: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("script for unknown kind {0:?}")]
    UnknownKind(String),
    #[error("kind {0:?} has {1} scripts, expected exactly one")]
    ScriptCount(String, usize),
    #[error("kind {kind:?}: {reason}")]
    Invalid { kind: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    /// No contact at all.
    Silent,
    StaticPress,
    LinearSweep,
    Oscillation,
    MultiTap,
    Grip,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureScript {
    pub kind: String,
    pub family: MotionFamily,
    #[serde(default)]
    pub duration: [u32; 2],
    #[serde(default)]
    pub pressure: [f64; 2],
    #[serde(default)]
    pub contact: [f64; 2],
    #[serde(default)]
    pub speed: [f64; 2],
    #[serde(default)]
    pub amplitude: [f64; 2],
    #[serde(default = "one_pair")]
    pub repetitions: [u32; 2],
    #[serde(default = "one_pair")]
    pub tap_frames: [u32; 2],
    #[serde(default)]
    pub gap_frames: [u32; 2],
    #[serde(default = "one_pair")]
    pub fingers: [u32; 2],
    #[serde(default)]
    pub pressure_wave: f64,
}

fn one_pair() -> [u32; 2] {
    [1, 1]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScripts {
    schema_version: u32,
    scripts: Vec<GestureScript>,
}

/// One script per gesture kind, indexed by [`KindId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptSet {
    scripts: Vec<GestureScript>,
}

impl ScriptSet {
    pub fn from_toml(text: &str, taxonomy: &Taxonomy) -> Result<Self, ScriptError> {
        let raw: RawScripts = toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
        if raw.schema_version != 1 {
            return Err(ScriptError::SchemaVersion(raw.schema_version));
        }
        let mut slots: Vec<Vec<GestureScript>> = vec![Vec::new(); taxonomy.kinds().len()];
        for s in raw.scripts {
            let k = taxonomy
                .kind_by_name(&s.kind)
                .ok_or_else(|| ScriptError::UnknownKind(s.kind.clone()))?;
            slots[k.0].push(s);
        }
        let mut scripts = Vec::with_capacity(slots.len());
        for (i, mut v) in slots.into_iter().enumerate() {
            let kind = taxonomy.kind(KindId(i));
            if v.len() != 1 {
                return Err(ScriptError::ScriptCount(kind.name.clone(), v.len()));
            }
            let s = v.pop().expect("one script");
            s.validate(kind.requires_part)?;
            scripts.push(s);
        }
        Ok(Self { scripts })
    }

    pub fn script(&self, kind: KindId) -> &GestureScript {
        &self.scripts[kind.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &GestureScript> {
        self.scripts.iter()
    }
}

fn sample_f(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

fn sample_u(rng: &mut impl Rng, r: [u32; 2]) -> u32 {
    rng.gen_range(r[0]..=r[1])
}

/// Ramp of two frames at each end of a contact.
fn envelope(t: u32, duration: u32) -> f64 {
    let up = (t + 1) as f64 / 2.0;
    let down = (duration - t) as f64 / 2.0;
    up.min(down).min(1.0)
}

/// Keeps a contact center `margin` inside a region extent where possible.
fn inner(lo: usize, extent: usize, margin: f64) -> (f64, f64) {
    let half = extent as f64 / 2.0;
    let m = margin.min(half);
    (lo as f64 + m, lo as f64 + extent as f64 - m)
}

impl GestureScript {
    fn validate(&self, requires_part: bool) -> Result<(), ScriptError> {
        let fail = |reason: &str| {
            Err(ScriptError::Invalid {
                kind: self.kind.clone(),
                reason: reason.to_string(),
            })
        };
        if (self.family == MotionFamily::Silent) == requires_part {
            return fail("the silent family is reserved for the partless kind");
        }
        if self.family == MotionFamily::Silent {
            return Ok(());
        }
        for (name, r) in [
            ("pressure", self.pressure),
            ("contact", self.contact),
            ("speed", self.speed),
            ("amplitude", self.amplitude),
        ] {
            if !(r[0] <= r[1] && r[0] >= 0.0 && r[1].is_finite()) {
                return fail(&format!("{name} range must be ordered and non-negative"));
            }
        }
        for (name, r) in [
            ("duration", self.duration),
            ("repetitions", self.repetitions),
            ("tap_frames", self.tap_frames),
            ("gap_frames", self.gap_frames),
            ("fingers", self.fingers),
        ] {
            if r[0] > r[1] {
                return fail(&format!("{name} range must be ordered"));
            }
        }
        if self.pressure[1] > 1.0 || self.pressure[0] <= 0.0 {
            return fail("pressure must lie in (0, 1]");
        }
        if self.contact[0] <= 0.0 {
            return fail("contact must be positive");
        }
        if self.fingers[0] == 0 {
            return fail("at least one finger");
        }
        if !(0.0..1.0).contains(&self.pressure_wave) {
            return fail("pressure_wave must lie in [0, 1)");
        }
        let longest = match self.family {
            MotionFamily::MultiTap => {
                if self.repetitions[0] == 0 || self.tap_frames[0] == 0 {
                    return fail("taps need at least one repetition of one frame");
                }
                self.repetitions[1] * self.tap_frames[1] + (self.repetitions[1] - 1) * self.gap_frames[1]
            }
            MotionFamily::LinearSweep if self.repetitions[0] == 0 => return fail("sweeps need a pass"),
            _ => {
                if self.duration[0] == 0 {
                    return fail("duration must be at least one frame");
                }
                self.duration[1]
            }
        };
        if longest as usize > WINDOW_LEN {
            return fail("gesture can outlast the window");
        }
        Ok(())
    }

    /// Trajectories for one performance inside `region`, plus its length in frames.
    pub fn generate(
        &self,
        region: &Region,
        range_kg: f64,
        actor: &ActorProfile,
        rng: &mut impl Rng,
    ) -> (Vec<TouchTrajectory>, u32) {
        if self.family == MotionFamily::Silent {
            return (Vec::new(), 0);
        }
        let short = region.height.min(region.width) as f64;
        let radius = (sample_f(rng, self.contact) * short).max(1.0);
        let peak = (sample_f(rng, self.pressure) * actor.pressure).min(1.0) * range_kg;
        let speed = sample_f(rng, self.speed) * actor.speed;
        let fingers = sample_u(rng, self.fingers);
        let contact = |frame, row, col, kg| ContactSample {
            frame,
            row,
            col,
            radius_row: radius,
            radius_col: radius,
            peak_kg: kg,
        };
        let clamp_r = |r: f64| r.clamp(region.row as f64 + 0.5, (region.row + region.height) as f64 - 0.5);
        let clamp_c = |c: f64| c.clamp(region.col as f64 + 0.5, (region.col + region.width) as f64 - 0.5);
        // Axis of motion (unit row/col components) and finger spacing perpendicular to it.
        let theta = rng.gen_range(0.0..TAU);
        let (ar, ac) = (theta.sin(), theta.cos());
        let spacing = 2.5 * radius;
        let finger_offsets: Vec<f64> = (0..fingers)
            .map(|f| (f as f64 - (fingers as f64 - 1.0) / 2.0) * spacing)
            .collect();
        let spread = spacing * (fingers as f64 - 1.0) / 2.0;

        let mut paths: Vec<Vec<ContactSample>> = vec![Vec::new(); fingers as usize];
        let duration;
        match self.family {
            MotionFamily::Silent => unreachable!(),
            MotionFamily::StaticPress => {
                duration = sample_u(rng, self.duration);
                let (r, c) = self.center(region, radius + spread, rng);
                for t in 0..duration {
                    for (f, off) in finger_offsets.iter().enumerate() {
                        let kg = peak * envelope(t, duration);
                        paths[f].push(contact(t, clamp_r(r - off * ac), clamp_c(c + off * ar), kg));
                    }
                }
            }
            MotionFamily::LinearSweep => {
                duration = sample_u(rng, self.duration);
                let passes = sample_u(rng, self.repetitions).max(1);
                let pass_len = duration.div_ceil(passes);
                let long = region.height.max(region.width) as f64;
                let step = speed * long;
                let travel = step * (pass_len.saturating_sub(1)) as f64;
                // start so that the pass is centered on a random interior point
                let (r, c) = self.center(region, radius, rng);
                let (r0, c0) = (r - ar * travel / 2.0, c - ac * travel / 2.0);
                for t in 0..duration {
                    let k = (t % pass_len) as f64 * step;
                    for (f, off) in finger_offsets.iter().enumerate() {
                        let kg = peak * envelope(t, duration);
                        let row = clamp_r(r0 + ar * k - off * ac);
                        let col = clamp_c(c0 + ac * k + off * ar);
                        paths[f].push(contact(t, row, col, kg));
                    }
                }
            }
            MotionFamily::Oscillation => {
                duration = sample_u(rng, self.duration);
                let amp = sample_f(rng, self.amplitude) * short;
                let phase = rng.gen_range(0.0..TAU);
                let (r, c) = self.center(region, radius + amp.max(spread), rng);
                for t in 0..duration {
                    let w = (TAU * speed * t as f64 + phase).sin();
                    let wave = 1.0 - self.pressure_wave * (0.5 + 0.5 * w);
                    let kg = peak * envelope(t, duration) * wave;
                    for (f, off) in finger_offsets.iter().enumerate() {
                        let row = clamp_r(r + ar * amp * w - off * ac);
                        let col = clamp_c(c + ac * amp * w + off * ar);
                        paths[f].push(contact(t, row, col, kg));
                    }
                }
            }
            MotionFamily::MultiTap => {
                let taps = sample_u(rng, self.repetitions);
                let (br, bc) = self.center(region, radius, rng);
                let mut t = 0;
                for i in 0..taps {
                    if i > 0 {
                        t += sample_u(rng, self.gap_frames);
                    }
                    let len = sample_u(rng, self.tap_frames);
                    let jitter = radius / 2.0;
                    let r = clamp_r(br + rng.gen_range(-jitter..=jitter));
                    let c = clamp_c(bc + rng.gen_range(-jitter..=jitter));
                    let mid = (len as f64 - 1.0) / 2.0;
                    for j in 0..len {
                        let shape = 1.0 - 0.5 * (j as f64 - mid).abs() / (mid + 1.0);
                        for (f, off) in finger_offsets.iter().enumerate() {
                            paths[f].push(contact(
                                t + j,
                                clamp_r(r - off * ac),
                                clamp_c(c + off * ar),
                                peak * shape,
                            ));
                        }
                    }
                    t += len;
                }
                duration = t;
            }
            MotionFamily::Grip => {
                duration = sample_u(rng, self.duration);
                let phase = rng.gen_range(0.0..TAU);
                // two opposing contacts across the longer side
                let horizontal = region.width > region.height || (region.width == region.height && rng.gen_bool(0.5));
                let (lo, hi) = if horizontal {
                    inner(region.col, region.width, radius)
                } else {
                    inner(region.row, region.height, radius)
                };
                let (cr, cc) = (
                    region.row as f64 + region.height as f64 / 2.0,
                    region.col as f64 + region.width as f64 / 2.0,
                );
                paths = vec![Vec::new(); 2];
                for t in 0..duration {
                    let w = (TAU * speed * t as f64 + phase).sin();
                    let kg = peak * envelope(t, duration) * (1.0 - self.pressure_wave * (0.5 + 0.5 * w));
                    for (side, pos) in [lo, hi].into_iter().enumerate() {
                        let (row, col) = if horizontal { (cr, pos) } else { (pos, cc) };
                        paths[side].push(contact(t, clamp_r(row), clamp_c(col), kg));
                    }
                }
            }
        }
        let trajectories = paths
            .into_iter()
            .map(|samples| TouchTrajectory {
                clip: *region,
                samples,
                duration_frames: duration,
            })
            .collect();
        (trajectories, duration)
    }

    fn center(&self, region: &Region, margin: f64, rng: &mut impl Rng) -> (f64, f64) {
        let (r0, r1) = inner(region.row, region.height, margin);
        let (c0, c1) = inner(region.col, region.width, margin);
        let pick = |rng: &mut dyn rand::RngCore, a: f64, b: f64| if a < b { rng.gen_range(a..=b) } else { a };
        (pick(rng, r0, r1), pick(rng, c0, c1))
    }
}
