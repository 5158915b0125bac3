//! Particles, events and their on-disk formats.
//!
//! Continuous features are stored in a fixed column order so that graph
//! construction can address `eta`/`phi` and the readout can address
//! `px`/`py`:
//!
//! | column | feature | unit |
//! |--------|---------|------|
//! | 0 | pt | GeV |
//! | 1 | eta | pseudorapidity |
//! | 2 | phi | rad, in [-pi, pi] |
//! | 3 | px | GeV |
//! | 4 | py | GeV |
//! | 5 | energy | GeV |
//!
//! The two categorical codes are `(pdg_class, charge_class)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CONTINUOUS: usize = 6;
pub const NUM_CATEGORICAL: usize = 2;

pub const COL_PT: usize = 0;
pub const COL_ETA: usize = 1;
pub const COL_PHI: usize = 2;
pub const COL_PX: usize = 3;
pub const COL_PY: usize = 4;
pub const COL_ENERGY: usize = 5;

pub const EVENT_MAGIC: &[u8; 4] = b"DGNF";
pub const EVENT_FORMAT_VERSION: u16 = 1;

/// Size of one particle record in the binary event format.
pub const PARTICLE_RECORD_BYTES: usize = NUM_CONTINUOUS * 4 + NUM_CATEGORICAL * 2;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("event file parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("text fixture parse error on line {line}: {reason}")]
    Text { line: usize, reason: String },
    #[error("cannot encode events: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub continuous: [f32; NUM_CONTINUOUS],
    pub categorical: [u16; NUM_CATEGORICAL],
}

impl Particle {
    /// Builds a particle from transverse kinematics. `px`, `py` and a
    /// massless `energy = pt cosh(eta)` are derived in double precision.
    pub fn from_kinematics(pt: f32, eta: f32, phi: f32, categorical: [u16; NUM_CATEGORICAL]) -> Self {
        let (pt64, eta64, phi64) = (pt as f64, eta as f64, phi as f64);
        Particle {
            continuous: [
                pt,
                eta,
                phi,
                (pt64 * phi64.cos()) as f32,
                (pt64 * phi64.sin()) as f32,
                (pt64 * eta64.cosh()) as f32,
            ],
            categorical,
        }
    }

    pub fn pt(&self) -> f32 {
        self.continuous[COL_PT]
    }

    pub fn eta(&self) -> f32 {
        self.continuous[COL_ETA]
    }

    pub fn phi(&self) -> f32 {
        self.continuous[COL_PHI]
    }

    pub fn px(&self) -> f32 {
        self.continuous[COL_PX]
    }

    pub fn py(&self) -> f32 {
        self.continuous[COL_PY]
    }

    pub fn energy(&self) -> f32 {
        self.continuous[COL_ENERGY]
    }

    /// Checks the particle invariants; returns a description of the first
    /// violation.
    pub fn check(&self, cardinalities: [u16; NUM_CATEGORICAL], eta_max: f32) -> Result<(), String> {
        if let Some(i) = self.continuous.iter().position(|x| !x.is_finite()) {
            return Err(format!("continuous feature {i} is not finite"));
        }
        for (k, (&code, &card)) in self.categorical.iter().zip(&cardinalities).enumerate() {
            if code >= card {
                return Err(format!("categorical code {k} = {code} exceeds cardinality {card}"));
            }
        }
        if self.pt() < 0.0 {
            return Err(format!("negative pt {}", self.pt()));
        }
        if (self.phi() as f64).abs() > PI {
            return Err(format!("phi {} outside [-pi, pi]", self.phi()));
        }
        if self.eta().abs() > eta_max {
            return Err(format!("|eta| = {} exceeds {eta_max}", self.eta().abs()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u32,
    pub particles: Vec<Particle>,
}

impl Event {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub min_particles: usize,
    pub max_particles: usize,
    pub eta_max: f32,
    /// Mean of the exponential pt spectrum, GeV.
    pub pt_mean: f64,
    pub cardinalities: [u16; NUM_CATEGORICAL],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { min_particles: 1, max_particles: 128, eta_max: 5.0, pt_mean: 5.0, cardinalities: [8, 3] }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), EventError> {
        if self.min_particles < 1 {
            return Err(EventError::Config("min_particles must be at least 1".into()));
        }
        if self.max_particles < self.min_particles {
            return Err(EventError::Config(format!(
                "max_particles ({}) < min_particles ({})",
                self.max_particles, self.min_particles
            )));
        }
        if self.max_particles > u16::MAX as usize {
            return Err(EventError::Config(format!(
                "max_particles ({}) does not fit the event format",
                self.max_particles
            )));
        }
        if !(self.eta_max.is_finite() && self.eta_max > 0.0) {
            return Err(EventError::Config(format!("eta_max must be positive, got {}", self.eta_max)));
        }
        if !(self.pt_mean.is_finite() && self.pt_mean > 0.0) {
            return Err(EventError::Config(format!("pt_mean must be positive, got {}", self.pt_mean)));
        }
        if self.cardinalities.contains(&0) {
            return Err(EventError::Config("categorical cardinalities must be at least 1".into()));
        }
        Ok(())
    }
}

/// Largest f32 not above pi, so that stored angles stay inside [-pi, pi].
fn f32_pi_floor() -> f32 {
    let p = PI as f32;
    if p as f64 > PI {
        f32::from_bits(p.to_bits() - 1)
    } else {
        p
    }
}

/// Generates `count` synthetic events. The output is a pure function of
/// `(seed, count, cfg)`.
pub fn generate_events(seed: u64, count: usize, cfg: &GeneratorConfig) -> Result<Vec<Event>, EventError> {
    cfg.validate()?;
    if count < 1 {
        return Err(EventError::Config("event count must be at least 1".into()));
    }
    if count > u32::MAX as usize {
        return Err(EventError::Config(format!("event count {count} does not fit the event format")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pt_dist = Exp::new(1.0 / cfg.pt_mean).map_err(|e| EventError::Config(e.to_string()))?;
    let phi_max = f32_pi_floor();
    let eta_max = cfg.eta_max as f64;

    let events = (0..count)
        .map(|id| {
            let n = rng.random_range(cfg.min_particles..=cfg.max_particles);
            let particles = (0..n)
                .map(|_| {
                    let pt = pt_dist.sample(&mut rng) as f32;
                    let eta = (rng.random_range(-eta_max..=eta_max) as f32).clamp(-cfg.eta_max, cfg.eta_max);
                    let phi = (rng.random_range(-PI..=PI) as f32).clamp(-phi_max, phi_max);
                    let categorical =
                        [rng.random_range(0..cfg.cardinalities[0]), rng.random_range(0..cfg.cardinalities[1])];
                    Particle::from_kinematics(pt, eta, phi, categorical)
                })
                .collect();
            Event { event_id: id as u32, particles }
        })
        .collect();
    Ok(events)
}

/// Serializes events into the binary event format.
pub fn encode_events(events: &[Event]) -> Result<Vec<u8>, EventError> {
    let count = u32::try_from(events.len())
        .map_err(|_| EventError::Encode(format!("{} events exceed the u32 count field", events.len())))?;
    let payload: usize = events.iter().map(|e| 6 + e.len() * PARTICLE_RECORD_BYTES).sum();
    let mut buf = Vec::with_capacity(10 + payload);
    buf.extend_from_slice(EVENT_MAGIC);
    buf.extend_from_slice(&EVENT_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for event in events {
        let n = u16::try_from(event.len())
            .map_err(|_| EventError::Encode(format!("event {} has {} particles", event.event_id, event.len())))?;
        buf.extend_from_slice(&event.event_id.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
        for p in &event.particles {
            for x in p.continuous {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            for c in p.categorical {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], EventError> {
        let end = self.pos + N;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| EventError::Parse {
            offset: self.pos,
            reason: format!("truncated record: expected {N} bytes for {what}, {} left", self.bytes.len() - self.pos),
        })?;
        self.pos = end;
        Ok(slice.try_into().unwrap())
    }

    fn u16(&mut self, what: &str) -> Result<u16, EventError> {
        self.take::<2>(what).map(u16::from_le_bytes)
    }

    fn u32(&mut self, what: &str) -> Result<u32, EventError> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn f32(&mut self, what: &str) -> Result<f32, EventError> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }
}

/// Parses the binary event format. Categorical codes are checked against
/// `cardinalities`; errors carry the byte offset of the offending field.
pub fn decode_events(bytes: &[u8], cardinalities: [u16; NUM_CATEGORICAL]) -> Result<Vec<Event>, EventError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take::<4>("magic")?;
    if &magic != EVENT_MAGIC {
        return Err(EventError::Parse { offset: 0, reason: format!("bad magic {magic:?}") });
    }
    let version_at = cur.pos;
    let version = cur.u16("format version")?;
    if version != EVENT_FORMAT_VERSION {
        return Err(EventError::Parse { offset: version_at, reason: format!("unsupported format version {version}") });
    }
    let count = cur.u32("event count")? as usize;
    let mut events = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let event_id = cur.u32("event_id")?;
        let n_at = cur.pos;
        let n = cur.u16("particle count")? as usize;
        if n == 0 {
            return Err(EventError::Parse { offset: n_at, reason: format!("event {event_id} has no particles") });
        }
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            let mut continuous = [0f32; NUM_CONTINUOUS];
            for (c, x) in continuous.iter_mut().enumerate() {
                let at = cur.pos;
                *x = cur.f32("continuous feature")?;
                if !x.is_finite() {
                    return Err(EventError::Parse {
                        offset: at,
                        reason: format!("continuous feature {c} is not finite"),
                    });
                }
            }
            let mut categorical = [0u16; NUM_CATEGORICAL];
            for (k, code) in categorical.iter_mut().enumerate() {
                let at = cur.pos;
                *code = cur.u16("categorical code")?;
                if *code >= cardinalities[k] {
                    return Err(EventError::Parse {
                        offset: at,
                        reason: format!("categorical code {k} = {code} >= cardinality {}", cardinalities[k]),
                    });
                }
            }
            particles.push(Particle { continuous, categorical });
        }
        events.push(Event { event_id, particles });
    }
    if cur.pos != bytes.len() {
        return Err(EventError::Parse { offset: cur.pos, reason: format!("{} trailing bytes", bytes.len() - cur.pos) });
    }
    Ok(events)
}

pub fn write_events(events: &[Event], path: impl AsRef<Path>) -> Result<(), EventError> {
    fs::write(path, encode_events(events)?)?;
    Ok(())
}

pub fn read_events(path: impl AsRef<Path>, cardinalities: [u16; NUM_CATEGORICAL]) -> Result<Vec<Event>, EventError> {
    decode_events(&fs::read(path)?, cardinalities)
}

/// Parses hand-written fixtures: one particle per line,
/// `event_id,pt,eta,phi,px,py,energy,pdg_class,charge_class`.
///
/// Consecutive lines with the same `event_id` form one event. Blank lines
/// and lines starting with `#` are skipped. The `px`, `py` and `energy`
/// fields may be left empty, in which case they are derived from
/// `(pt, eta, phi)` as in [`Particle::from_kinematics`].
pub fn parse_text_events(text: &str, cardinalities: [u16; NUM_CATEGORICAL]) -> Result<Vec<Event>, EventError> {
    let mut events: Vec<Event> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| EventError::Text { line, reason };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 1 + NUM_CONTINUOUS + NUM_CATEGORICAL {
            return Err(err(format!("expected 9 fields, found {}", fields.len())));
        }
        let event_id: u32 = fields[0].parse().map_err(|e| err(format!("event_id: {e}")))?;
        let real = |i: usize| -> Result<Option<f32>, EventError> {
            if fields[i].is_empty() {
                return Ok(None);
            }
            fields[i].parse::<f32>().map(Some).map_err(|e| err(format!("field {i}: {e}")))
        };
        let required = |i: usize| real(i)?.ok_or_else(|| err(format!("field {i} is required")));
        let (pt, eta, phi) = (required(1)?, required(2)?, required(3)?);
        let mut categorical = [0u16; NUM_CATEGORICAL];
        for (k, code) in categorical.iter_mut().enumerate() {
            let i = 1 + NUM_CONTINUOUS + k;
            *code = fields[i].parse().map_err(|e| err(format!("categorical {k}: {e}")))?;
            if *code >= cardinalities[k] {
                return Err(err(format!("categorical code {k} = {code} >= cardinality {}", cardinalities[k])));
            }
        }
        let mut particle = Particle::from_kinematics(pt, eta, phi, categorical);
        for col in [COL_PX, COL_PY, COL_ENERGY] {
            if let Some(x) = real(1 + col)? {
                particle.continuous[col] = x;
            }
        }
        match events.last_mut() {
            Some(ev) if ev.event_id == event_id => ev.particles.push(particle),
            _ => events.push(Event { event_id, particles: vec![particle] }),
        }
    }
    Ok(events)
}
