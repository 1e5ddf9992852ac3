//! Domain types shared by every other module: geometry, species, modulation
//! settings, protocol selection and error statistics.
//!
//! All quantities are SI base units (meters, seconds, m²/s, molecule counts).
//! Use [`nm`] and [`us`] when converting human-facing values.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Nanometers to meters.
pub fn nm(x: f64) -> f64 {
    x * 1e-9
}

/// Microseconds to seconds.
pub fn us(x: f64) -> f64 {
    x * 1e-6
}

/// Diffusion coefficient used throughout the reference scenario.
pub const REFERENCE_DIFFUSION: f64 = 4.365e-10;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeciesId {
    A1,
    A2,
}

impl SpeciesId {
    pub fn index(self) -> usize {
        match self {
            SpeciesId::A1 => 0,
            SpeciesId::A2 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: SpeciesId,
    /// m²/s
    pub diffusion_coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeId {
    S,
    R,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub position: Vec3,
    /// Zero for the point source.
    pub radius: f64,
}

impl NodeSpec {
    pub fn point(id: NodeId, position: Vec3) -> Self {
        Self { id, position, radius: 0.0 }
    }

    pub fn sphere(id: NodeId, position: Vec3, radius: f64) -> Self {
        Self { id, position, radius }
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

/// Node placement and molecule species. `relay` is `None` for the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub source: NodeSpec,
    pub relay: Option<NodeSpec>,
    pub destination: NodeSpec,
    /// Indexed by [`SpeciesId::index`].
    pub species: [Species; 2],
    /// Species emitted by S and detected by the next node.
    pub hop1: SpeciesId,
    /// Species emitted by R and detected by D.
    pub hop2: SpeciesId,
}

impl Topology {
    pub fn species(&self, id: SpeciesId) -> Species {
        self.species[id.index()]
    }

    pub fn diffusion(&self, id: SpeciesId) -> f64 {
        self.species(id).diffusion_coefficient
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        match id {
            NodeId::S => Some(&self.source),
            NodeId::R => self.relay.as_ref(),
            NodeId::D => Some(&self.destination),
        }
    }

    /// Species the destination counts.
    pub fn destination_species(&self) -> SpeciesId {
        if self.relay.is_some() {
            self.hop2
        } else {
            self.hop1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    /// T_B, seconds.
    pub bit_interval: f64,
    /// M, samples per bit interval.
    pub samples: usize,
    /// t0, seconds between samples.
    pub sample_spacing: f64,
    /// Molecules released by S for a "1".
    pub source_molecules: u64,
    /// Molecules released by R for a "1".
    pub relay_molecules: u64,
    /// Pr(bit = 1).
    pub p1: f64,
    /// L, number of information bits.
    pub length: usize,
}

impl ModulationConfig {
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    #[serde(rename = "FD1")]
    Fd1,
    #[serde(rename = "FD2")]
    Fd2,
    #[serde(rename = "HD")]
    Hd,
    #[serde(rename = "FD-Adp")]
    FdAdp,
    #[serde(rename = "Baseline")]
    Baseline,
}

impl ProtocolKind {
    pub const ALL: [ProtocolKind; 5] = [
        ProtocolKind::Fd1,
        ProtocolKind::Fd2,
        ProtocolKind::Hd,
        ProtocolKind::FdAdp,
        ProtocolKind::Baseline,
    ];

    pub fn has_relay(self) -> bool {
        self != ProtocolKind::Baseline
    }

    pub fn is_full_duplex(self) -> bool {
        matches!(self, ProtocolKind::Fd1 | ProtocolKind::Fd2 | ProtocolKind::FdAdp)
    }

    /// Whether the relay detects the same species it emits.
    pub fn has_self_interference(self) -> bool {
        matches!(self, ProtocolKind::Fd2 | ProtocolKind::FdAdp | ProtocolKind::Hd)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Fd1 => "FD1",
            ProtocolKind::Fd2 => "FD2",
            ProtocolKind::Hd => "HD",
            ProtocolKind::FdAdp => "FD-Adp",
            ProtocolKind::Baseline => "Baseline",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.to_ascii_lowercase().as_str() {
            "fd1" => Ok(ProtocolKind::Fd1),
            "fd2" => Ok(ProtocolKind::Fd2),
            "hd" => Ok(ProtocolKind::Hd),
            "fdadp" => Ok(ProtocolKind::FdAdp),
            "baseline" | "none" => Ok(ProtocolKind::Baseline),
            _ => Err(Error::Usage(format!("unknown protocol '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub topology: Topology,
    pub modulation: ModulationConfig,
    /// Relay threshold; the fixed part of the adaptive threshold for FD-Adp.
    pub xi_r: f64,
    pub xi_d: f64,
}

impl ProtocolConfig {
    /// Same threshold at relay and destination.
    pub fn with_threshold(mut self, xi: f64) -> Self {
        self.xi_r = xi;
        self.xi_d = xi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let v = violations(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Returns `cfg` unchanged when every invariant holds, otherwise every
/// violated invariant.
pub fn validate_config(cfg: ProtocolConfig) -> Result<ProtocolConfig> {
    cfg.validate().map(|()| cfg)
}

fn violations(cfg: &ProtocolConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let topo = &cfg.topology;
    let m = &cfg.modulation;

    let check_node = |name: &str, node: &NodeSpec, observer: bool, out: &mut Vec<Violation>| {
        if !node.position.is_finite() {
            out.push(Violation::new(format!("{name}.position"), node.position, "components must be finite"));
        }
        if !node.radius.is_finite() || node.radius < 0.0 {
            out.push(Violation::new(format!("{name}.radius"), node.radius, "radius must be finite and >= 0"));
        } else if observer && node.radius <= 0.0 {
            out.push(Violation::new(format!("{name}.radius"), node.radius, "observer radius must be > 0"));
        }
        if !observer && node.radius != 0.0 {
            out.push(Violation::new(format!("{name}.radius"), node.radius, "source is a point emitter (radius 0)"));
        }
    };
    check_node("source", &topo.source, false, &mut out);
    check_node("destination", &topo.destination, true, &mut out);
    if let Some(relay) = &topo.relay {
        check_node("relay", relay, true, &mut out);
    }

    for sp in &topo.species {
        let d = sp.diffusion_coefficient;
        if !(d.is_finite() && d > 0.0) {
            out.push(Violation::new(format!("species.{:?}.diffusion_coefficient", sp.id), d, "must be > 0"));
        }
    }
    if topo.species[0].id != SpeciesId::A1 || topo.species[1].id != SpeciesId::A2 {
        out.push(Violation::new("species", topo.species.map(|s| s.id), "species table must be [A1, A2]"));
    }

    match (cfg.kind, &topo.relay) {
        (ProtocolKind::Baseline, Some(_)) => {
            out.push(Violation::new("topology.relay", "present", "baseline has no relay"));
        }
        (k, None) if k.has_relay() => {
            out.push(Violation::new("topology.relay", "absent", format!("{k} requires a relay")));
        }
        _ => {}
    }
    let (want1, want2) = match cfg.kind {
        ProtocolKind::Fd1 => (SpeciesId::A1, SpeciesId::A2),
        _ => (SpeciesId::A1, SpeciesId::A1),
    };
    if topo.hop1 != want1 {
        out.push(Violation::new("topology.hop1", topo.hop1, format!("{} uses {want1:?} on hop S->R", cfg.kind)));
    }
    if cfg.kind.has_relay() && topo.hop2 != want2 {
        out.push(Violation::new("topology.hop2", topo.hop2, format!("{} uses {want2:?} on hop R->D", cfg.kind)));
    }

    if !(m.bit_interval.is_finite() && m.bit_interval > 0.0) {
        out.push(Violation::new("modulation.bit_interval", m.bit_interval, "must be > 0"));
    }
    if !(m.sample_spacing.is_finite() && m.sample_spacing > 0.0) {
        out.push(Violation::new("modulation.sample_spacing", m.sample_spacing, "must be > 0"));
    }
    if m.samples == 0 {
        out.push(Violation::new("modulation.samples", m.samples, "must be >= 1"));
    }
    let window = m.samples as f64 * m.sample_spacing;
    if window > m.bit_interval * (1.0 + 1e-12) {
        out.push(Violation::new(
            "modulation.samples*sample_spacing",
            window,
            format!("sampling window exceeds bit interval {}", m.bit_interval),
        ));
    }
    if !(0.0..=1.0).contains(&m.p1) {
        out.push(Violation::new("modulation.p1", m.p1, "probability out of range [0, 1]"));
    }
    if m.length == 0 {
        out.push(Violation::new("modulation.length", m.length, "must be >= 1"));
    }
    for (name, xi) in [("xi_r", cfg.xi_r), ("xi_d", cfg.xi_d)] {
        if !(xi.is_finite() && xi >= 0.0) {
            out.push(Violation::new(name, xi, "threshold must be finite and >= 0"));
        }
    }
    out
}

/// Reference two-hop scenario: S at the origin, D at 600 nm on the x axis,
/// R halfway between, 45 nm observers, equal diffusion coefficients.
pub fn default_two_hop_config(kind: ProtocolKind) -> ProtocolConfig {
    let x_d = nm(600.0);
    let radius = nm(45.0);
    let relay = kind
        .has_relay()
        .then(|| NodeSpec::sphere(NodeId::R, Vec3::new(x_d / 2.0, 0.0, 0.0), radius));
    let hop2 = if kind == ProtocolKind::Fd1 { SpeciesId::A2 } else { SpeciesId::A1 };
    let (source_molecules, relay_molecules) = if kind.has_relay() { (5000, 5000) } else { (10_000, 0) };
    ProtocolConfig {
        kind,
        topology: Topology {
            source: NodeSpec::point(NodeId::S, Vec3::ZERO),
            relay,
            destination: NodeSpec::sphere(NodeId::D, Vec3::new(x_d, 0.0, 0.0), radius),
            species: [
                Species { id: SpeciesId::A1, diffusion_coefficient: REFERENCE_DIFFUSION },
                Species { id: SpeciesId::A2, diffusion_coefficient: REFERENCE_DIFFUSION },
            ],
            hop1: SpeciesId::A1,
            hop2,
        },
        modulation: ModulationConfig {
            bit_interval: us(200.0),
            samples: 5,
            sample_spacing: us(20.0),
            source_molecules,
            relay_molecules,
            p1: 0.5,
            length: 50,
        },
        xi_r: 10.0,
        xi_d: 10.0,
    }
}

/// Per-bit and sequence-averaged error probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub per_bit_error: Vec<f64>,
    /// 95% half-widths of the per-bit estimates.
    pub per_bit_ci_halfwidth: Vec<f64>,
    pub average_error: f64,
    /// Standard error of `average_error` across independent units.
    pub std_error: f64,
    /// 95% half-width of `average_error`.
    pub ci_halfwidth: f64,
    pub num_realizations: usize,
}
