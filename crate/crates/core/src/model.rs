//! Domain types shared by every stage: the physical setup, the Dirac initial
//! condition, space-time grids, complex fields, and the scenario catalog.
//!
//! Units are nondimensional with `hbar = m = 1` by default. The Laplacian
//! contracted with the inverse mass matrix is `sum_i (1/m_i) d^2/dx_i^2`;
//! only diagonal Cartesian mass matrices are modelled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar potential catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Free,
    /// `V(x) = -force * x`.
    Linear { force: f64 },
    /// `V(x) = m omega^2 x^2 / 2` on every axis.
    Harmonic { omega: f64 },
    /// `V(x) = lambda x^4`.
    Quartic { lambda: f64 },
    /// `V(x) = sum_k c_k x^k`.
    Polynomial { coefficients: Vec<f64> },
}

impl PotentialSpec {
    /// Value, first and second derivative on one axis with mass `m`.
    pub fn eval_axis(&self, m: f64, x: f64) -> (f64, f64, f64) {
        match self {
            PotentialSpec::Free => (0.0, 0.0, 0.0),
            PotentialSpec::Linear { force } => (-force * x, -force, 0.0),
            PotentialSpec::Harmonic { omega } => {
                let k = m * omega * omega;
                (0.5 * k * x * x, k * x, k)
            }
            PotentialSpec::Quartic { lambda } => {
                let x2 = x * x;
                (lambda * x2 * x2, 4.0 * lambda * x2 * x, 12.0 * lambda * x2)
            }
            PotentialSpec::Polynomial { coefficients } => {
                // Horner for the value and both derivatives at once.
                let (mut v, mut dv, mut d2v) = (0.0, 0.0, 0.0);
                for &c in coefficients.iter().rev() {
                    d2v = d2v * x + 2.0 * dv;
                    dv = dv * x + v;
                    v = v * x + c;
                }
                (v, dv, d2v)
            }
        }
    }

    /// Angular frequency of the harmonic part, if any.
    pub fn omega(&self) -> Option<f64> {
        match self {
            PotentialSpec::Harmonic { omega } => Some(*omega),
            _ => None,
        }
    }

    /// Free, linear and harmonic potentials (degree <= 2).
    pub fn is_quadratic(&self) -> bool {
        match self {
            PotentialSpec::Free | PotentialSpec::Linear { .. } | PotentialSpec::Harmonic { .. } => {
                true
            }
            PotentialSpec::Quartic { lambda } => *lambda == 0.0,
            PotentialSpec::Polynomial { coefficients } => {
                coefficients.iter().skip(3).all(|&c| c == 0.0)
            }
        }
    }

    fn is_separable_axiswise(&self) -> bool {
        matches!(self, PotentialSpec::Free | PotentialSpec::Harmonic { .. })
    }
}

/// Vector potential. Only spatially uniform fields are housed; every catalog
/// scenario uses zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorPotentialSpec {
    #[default]
    Zero,
    Uniform { components: Vec<f64> },
}

impl VectorPotentialSpec {
    pub fn component(&self, axis: usize) -> f64 {
        match self {
            VectorPotentialSpec::Zero => 0.0,
            VectorPotentialSpec::Uniform { components } => {
                components.get(axis).copied().unwrap_or(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSetup {
    pub dimension: usize,
    /// Diagonal of the mass matrix.
    pub mass: Vec<f64>,
    pub hbar: f64,
    pub charge: f64,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub vector_potential: VectorPotentialSpec,
}

impl PhysicalSetup {
    pub fn one_dimensional(mass: f64, hbar: f64, potential: PotentialSpec) -> Self {
        PhysicalSetup {
            dimension: 1,
            mass: vec![mass],
            hbar,
            charge: 0.0,
            potential,
            vector_potential: VectorPotentialSpec::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dimension) {
            return Err(Error::param("dimension", "must be 1 or 2"));
        }
        if self.mass.len() != self.dimension {
            return Err(Error::param(
                "mass",
                format!("expected {} diagonal entries", self.dimension),
            ));
        }
        if self.mass.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::param("mass", "diagonal entries must be positive"));
        }
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            return Err(Error::param("hbar", "must be positive"));
        }
        if !self.charge.is_finite() {
            return Err(Error::param("charge", "must be finite"));
        }
        if self.dimension == 2 && !matches!(self.potential, PotentialSpec::Free) {
            return Err(Error::Unsupported(
                "two-dimensional setups are limited to the free particle".into(),
            ));
        }
        let finite = match &self.potential {
            PotentialSpec::Free => true,
            PotentialSpec::Linear { force } => force.is_finite(),
            PotentialSpec::Harmonic { omega } => {
                if !(*omega > 0.0) {
                    return Err(Error::param("omega", "must be positive"));
                }
                omega.is_finite()
            }
            PotentialSpec::Quartic { lambda } => lambda.is_finite(),
            PotentialSpec::Polynomial { coefficients } => {
                coefficients.iter().all(|c| c.is_finite())
            }
        };
        if !finite {
            return Err(Error::param("potential", "coefficients must be finite"));
        }
        if let VectorPotentialSpec::Uniform { components } = &self.vector_potential {
            if components.len() != self.dimension || components.iter().any(|a| !a.is_finite()) {
                return Err(Error::param("vector_potential", "one finite component per axis"));
            }
        }
        Ok(())
    }

    /// Mass of the single axis of a one-dimensional setup.
    pub fn mass_1d(&self) -> Result<f64> {
        if self.dimension != 1 {
            return Err(Error::Unsupported(
                "field reconstruction is one-dimensional".into(),
            ));
        }
        Ok(self.mass[0])
    }

    /// `(V, dV/dx, d2V/dx2)` on a one-dimensional setup.
    #[inline]
    pub fn potential_1d(&self, x: f64) -> (f64, f64, f64) {
        self.potential.eval_axis(self.mass[0], x)
    }

    /// `q A` on axis 0.
    pub fn qa_1d(&self) -> f64 {
        self.charge * self.vector_potential.component(0)
    }
}

/// Potential value and gradient at `x`.
pub fn eval_potential(setup: &PhysicalSetup, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != setup.dimension {
        return Err(Error::param(
            "x",
            format!("expected {} coordinates, got {}", setup.dimension, x.len()),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("x", "coordinates must be finite"));
    }
    if setup.dimension > 1 && !setup.potential.is_separable_axiswise() {
        return Err(Error::Unsupported(
            "multi-axis evaluation is defined for free and harmonic potentials".into(),
        ));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for (axis, &xi) in x.iter().enumerate() {
        let (v, dv, _) = setup.potential.eval_axis(setup.mass[axis], xi);
        value += v;
        grad.push(dv);
    }
    Ok((value, grad))
}

/// Dirac start of the propagator: a fixed initial position or momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DiracKind {
    Position(Vec<f64>),
    Momentum(Vec<f64>),
}

/// Initial density amplitude `sqrt(rho_o)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RhoAmplitude {
    Auto,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub kind: DiracKind,
    pub epsilon: f64,
    pub rho_o_amplitude: RhoAmplitude,
}

impl InitialCondition {
    pub fn position(x_o: f64, epsilon: f64) -> Self {
        InitialCondition {
            kind: DiracKind::Position(vec![x_o]),
            epsilon,
            rho_o_amplitude: RhoAmplitude::Auto,
        }
    }

    pub fn momentum(p_o: f64, epsilon: f64) -> Self {
        InitialCondition {
            kind: DiracKind::Momentum(vec![p_o]),
            epsilon,
            rho_o_amplitude: RhoAmplitude::Auto,
        }
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::param("eps", "start time must be positive"));
        }
        let v = match &self.kind {
            DiracKind::Position(v) | DiracKind::Momentum(v) => v,
        };
        if v.len() != dimension || v.iter().any(|c| !c.is_finite()) {
            return Err(Error::param(
                "initial condition",
                format!("expected {dimension} finite coordinates"),
            ));
        }
        if let RhoAmplitude::Explicit(a) = self.rho_o_amplitude {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::param("rho_o", "amplitude must be positive"));
            }
        }
        Ok(())
    }

    /// Resolved initial density `rho_o`; fails while the amplitude is Auto.
    pub fn rho_o(&self) -> Result<f64> {
        match self.rho_o_amplitude {
            RhoAmplitude::Explicit(a) => Ok(a * a),
            RhoAmplitude::Auto => Err(Error::UnresolvedNormalization),
        }
    }

    pub fn with_rho_o(mut self, rho_o: f64) -> Self {
        self.rho_o_amplitude = RhoAmplitude::Explicit(rho_o.sqrt());
        self
    }

    /// Coordinate of the Dirac start on axis 0.
    pub fn value_1d(&self) -> f64 {
        match &self.kind {
            DiracKind::Position(v) | DiracKind::Momentum(v) => v[0],
        }
    }

    pub fn is_position(&self) -> bool {
        matches!(self.kind, DiracKind::Position(_))
    }
}

/// Uniform spatial axis, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub const MIN_NODES: usize = 8;

    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        let axis = Axis { min, max, n };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < Self::MIN_NODES {
            return Err(Error::param(
                "grid.n",
                format!("need at least {} nodes, got {}", Self::MIN_NODES, self.n),
            ));
        }
        if !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::param("grid", "need finite min < max"));
        }
        Ok(())
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.min + i as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `x`, if `x` lies on the axis.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        let u = (x - self.min) / self.h();
        if u < -0.5 || u > self.n as f64 - 0.5 {
            return None;
        }
        Some(u.round().clamp(0.0, (self.n - 1) as f64) as usize)
    }

    /// Trapezoid quadrature weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.h()
        } else {
            self.h()
        }
    }

    /// Refined axis with `factor` sub-intervals per interval; the original
    /// nodes are every `factor`-th refined node.
    pub fn refined(&self, factor: usize) -> Axis {
        Axis {
            min: self.min,
            max: self.max,
            n: (self.n - 1) * factor + 1,
        }
    }

    pub fn same_as(&self, other: &Axis) -> bool {
        self.n == other.n
            && (self.min - other.min).abs() <= 1e-12 * (1.0 + self.min.abs())
            && (self.max - other.max).abs() <= 1e-12 * (1.0 + self.max.abs())
    }
}

/// Uniform time axis `start + k dt`, `k < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub start: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeAxis {
    pub fn new(start: f64, dt: f64, n: usize) -> Result<Self> {
        let t = TimeAxis { start, dt, n };
        t.validate()?;
        Ok(t)
    }

    /// Axis from `start` to (approximately) `end` with step `dt`.
    pub fn spanning(start: f64, end: f64, dt: f64) -> Result<Self> {
        if !(end > start) {
            return Err(Error::param("t_max", "must exceed the start time"));
        }
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        let n = ((end - start) / dt).round() as usize + 1;
        TimeAxis::new(start, dt, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::param("dt", "must be positive"));
        }
        if self.n == 0 {
            return Err(Error::param("n_t", "need at least one time slice"));
        }
        if !self.start.is_finite() {
            return Err(Error::param("t_start", "must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.time(k)).collect()
    }

    /// Slice index closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        (((t - self.start) / self.dt).round().max(0.0) as usize).min(self.n - 1)
    }

    pub fn same_as(&self, other: &TimeAxis) -> bool {
        self.n == other.n
            && (self.start - other.start).abs() <= 1e-12 * (1.0 + self.start.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub space: Vec<Axis>,
    pub time: TimeAxis,
}

impl SpaceTimeGrid {
    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if self.space.is_empty() {
            return Err(Error::param("grid", "need at least one spatial axis"));
        }
        for axis in &self.space {
            axis.validate()?;
        }
        self.time.validate()?;
        if self.time.start < epsilon * (1.0 - 1e-12) {
            return Err(Error::param(
                "t_start",
                format!("time axis starts at {} before eps = {epsilon}", self.time.start),
            ));
        }
        Ok(())
    }

    pub fn axis(&self) -> &Axis {
        &self.space[0]
    }
}

/// Complex samples on a one-dimensional space-time grid, slice-major.
/// `valid` is false on nodes that are uncovered or masked.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub axis: Axis,
    pub time: TimeAxis,
    pub values: Vec<Complex64>,
    pub valid: Vec<bool>,
    pub branch: Option<usize>,
}

/// A general wave on the grid (superposed or oracle-evolved).
pub type WaveField = ComplexField;

impl ComplexField {
    pub fn zeros(axis: Axis, time: TimeAxis) -> Self {
        let len = axis.n * time.n;
        ComplexField {
            axis,
            time,
            values: vec![Complex64::new(0.0, 0.0); len],
            valid: vec![false; len],
            branch: None,
        }
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize) -> usize {
        k * self.axis.n + i
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize) -> Complex64 {
        self.values[k * self.axis.n + i]
    }

    #[inline]
    pub fn is_valid(&self, k: usize, i: usize) -> bool {
        self.valid[k * self.axis.n + i]
    }

    pub fn slice(&self, k: usize) -> &[Complex64] {
        &self.values[k * self.axis.n..(k + 1) * self.axis.n]
    }

    pub fn valid_slice(&self, k: usize) -> &[bool] {
        &self.valid[k * self.axis.n..(k + 1) * self.axis.n]
    }

    pub fn set(&mut self, k: usize, i: usize, value: Complex64, valid: bool) {
        let idx = self.index(k, i);
        self.values[idx] = value;
        self.valid[idx] = valid;
    }

    /// Non-finite entries on valid nodes.
    pub fn count_non_finite(&self) -> usize {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(v, &ok)| ok && !(v.re.is_finite() && v.im.is_finite()))
            .count()
    }

    /// Trapezoid L2 norm of slice `k` over valid nodes.
    pub fn slice_norm(&self, k: usize) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.axis.n {
            if self.is_valid(k, i) {
                acc += self.axis.weight(i) * self.at(k, i).norm_sqr();
            }
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// Fan of characteristics uniform in the label over `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanSpec {
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

impl FanSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::param("fan.n", "need at least 4 characteristics"));
        }
        if !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::param("fan", "need finite min < max"));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.min + i as f64 * step).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }
}

/// Weighted point source for interference scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub x: f64,
    pub weight: Complex64,
}

/// Gaussian packet `|psi|^2 ~ N(center, width^2)` with carrier momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
}

/// Grids used when general waves are superposed from a kernel family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionSpec {
    /// Source grid; also the target grid of the superposed wave.
    pub axis: Axis,
    pub time: TimeAxis,
    pub fan: FanSpec,
    pub packet: PacketSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioId {
    Free,
    Linear,
    Harmonic,
    Quartic,
    TwoSource,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [
        ScenarioId::Free,
        ScenarioId::Linear,
        ScenarioId::Harmonic,
        ScenarioId::Quartic,
        ScenarioId::TwoSource,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::Free => "free",
            ScenarioId::Linear => "linear",
            ScenarioId::Harmonic => "harmonic",
            ScenarioId::Quartic => "quartic",
            ScenarioId::TwoSource => "two-source",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// A fully populated, validated run configuration for one catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub setup: PhysicalSetup,
    pub initial: InitialCondition,
    pub grid: SpaceTimeGrid,
    pub fan: FanSpec,
    /// Point sources (two-source scenario only).
    #[serde(default)]
    pub sources: Vec<PointSource>,
    pub superposition: SuperpositionSpec,
    /// Energy used to nondimensionalize residuals and Bohm potentials.
    pub energy_scale: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        self.initial.validate(self.setup.dimension)?;
        self.grid.validate(self.initial.epsilon)?;
        if self.grid.space.len() != self.setup.dimension {
            return Err(Error::param("grid", "one spatial axis per dimension"));
        }
        self.fan.validate()?;
        self.superposition.axis.validate()?;
        self.superposition.time.validate()?;
        self.superposition.fan.validate()?;
        if !(self.superposition.packet.width > 0.0) {
            return Err(Error::param("packet.width", "must be positive"));
        }
        if !(self.energy_scale > 0.0) {
            return Err(Error::param("energy_scale", "must be positive"));
        }
        Ok(())
    }

    /// Angular frequency for the harmonic scenario, 1 otherwise (sets the
    /// `0.8 pi / omega` horizon used by superposition checks).
    pub fn omega_or_unit(&self) -> f64 {
        self.setup.potential.omega().unwrap_or(1.0)
    }
}

pub type Overrides = BTreeMap<String, String>;

fn take_f64(overrides: &mut Overrides, key: &str) -> Result<Option<f64>> {
    match overrides.remove(key) {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::param(key, format!("`{raw}` is not a number"))),
    }
}

fn take_positive(overrides: &mut Overrides, key: &str) -> Result<Option<f64>> {
    let v = take_f64(overrides, key)?;
    if let Some(v) = v {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::param(key, format!("must be positive, got {v}")));
        }
    }
    Ok(v)
}

fn take_count(overrides: &mut Overrides, key: &str) -> Result<Option<usize>> {
    match overrides.remove(key) {
        None => Ok(None),
        Some(raw) => {
            let v: i64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::param(key, format!("`{raw}` is not an integer")))?;
            if v <= 0 {
                return Err(Error::param(key, format!("must be a positive count, got {v}")));
            }
            Ok(Some(v as usize))
        }
    }
}

/// Build a catalog scenario. Recognised override keys: `m`, `hbar`, `q`,
/// `omega`, `force`, `lambda`, `dimension`, `kind` (position|momentum), `x0`,
/// `p0`, `eps`, `rho_o`, `grid.min`, `grid.max`, `grid.n`, `dt`, `t_max`,
/// `fan.n`, `fan.min`, `fan.max`, `separation`, `phase`, `packet.center`,
/// `packet.width`, `packet.momentum`, `sup.n`, `sup.min`, `sup.max`,
/// `sup.t_start`, `sup.dt`, `sup.n_t`, `sup.fan_n`, `sup.fan_window`.
pub fn make_scenario(name: &str, overrides: &Overrides) -> Result<Scenario> {
    let id: ScenarioId = name.parse()?;
    let mut ov = overrides.clone();

    let mass = take_positive(&mut ov, "m")?.unwrap_or(1.0);
    let hbar = take_positive(&mut ov, "hbar")?.unwrap_or(1.0);
    let charge = take_f64(&mut ov, "q")?.unwrap_or(0.0);
    let epsilon = take_positive(&mut ov, "eps")?.unwrap_or(1e-3);
    let dimension = take_count(&mut ov, "dimension")?.unwrap_or(1);

    let potential = match id {
        ScenarioId::Free | ScenarioId::TwoSource => PotentialSpec::Free,
        ScenarioId::Linear => PotentialSpec::Linear {
            force: take_f64(&mut ov, "force")?.unwrap_or(1.0),
        },
        ScenarioId::Harmonic => PotentialSpec::Harmonic {
            omega: take_positive(&mut ov, "omega")?.unwrap_or(1.0),
        },
        ScenarioId::Quartic => PotentialSpec::Quartic {
            lambda: take_positive(&mut ov, "lambda")?.unwrap_or(1.0),
        },
    };
    let setup = PhysicalSetup {
        dimension,
        mass: vec![mass; dimension],
        hbar,
        charge,
        potential,
        vector_potential: VectorPotentialSpec::Zero,
    };
    setup.validate()?;

    let momentum_kind = match ov.remove("kind").as_deref() {
        None | Some("position") => false,
        Some("momentum") => true,
        Some(other) => {
            return Err(Error::param("kind", format!("`{other}` is not position|momentum")))
        }
    };
    if momentum_kind && id == ScenarioId::TwoSource {
        return Err(Error::param("kind", "two-source uses position sources"));
    }
    let x0 = take_f64(&mut ov, "x0")?.unwrap_or(0.0);
    let p0 = take_f64(&mut ov, "p0")?.unwrap_or(1.0);
    let rho_amp = match take_positive(&mut ov, "rho_o")? {
        Some(a) => RhoAmplitude::Explicit(a),
        None => RhoAmplitude::Auto,
    };
    let initial = InitialCondition {
        kind: if momentum_kind {
            DiracKind::Momentum(vec![p0; dimension])
        } else {
            DiracKind::Position(vec![x0; dimension])
        },
        epsilon,
        rho_o_amplitude: rho_amp,
    };

    // Catalog grid and fan defaults.
    let (g_min, g_max, g_n, t_max, fan_half, fan_n) = match id {
        ScenarioId::Free | ScenarioId::Linear => (-4.0, 4.0, 401, 1.0, 5.0, 2001),
        ScenarioId::Harmonic => (-4.0, 4.0, 401, 2.5, 3.0, 2001),
        ScenarioId::Quartic => (-2.0, 2.0, 201, 0.6, 2.0, 2001),
        ScenarioId::TwoSource => (-8.0, 8.0, 1601, 1.0, 12.0, 2001),
    };
    let g_min = take_f64(&mut ov, "grid.min")?.unwrap_or(g_min);
    let g_max = take_f64(&mut ov, "grid.max")?.unwrap_or(g_max);
    let g_n = take_count(&mut ov, "grid.n")?.unwrap_or(g_n);
    let dt = take_positive(&mut ov, "dt")?.unwrap_or(1e-3);
    let t_max = take_positive(&mut ov, "t_max")?.unwrap_or(t_max);
    let axis = Axis::new(g_min, g_max, g_n)?;
    let time = TimeAxis::spanning(epsilon, t_max.max(epsilon + dt), dt)?;
    let grid = SpaceTimeGrid {
        space: vec![axis; dimension],
        time,
    };

    let (fan_min, fan_max) = if momentum_kind {
        // Fan over initial positions; widen so the drifted fan still covers the grid.
        let drift = p0 * t_max / mass;
        (g_min - 1.0 - drift.max(0.0), g_max + 1.0 - drift.min(0.0))
    } else {
        // Fan over initial momenta.
        (-fan_half, fan_half)
    };
    let fan = FanSpec {
        n: take_count(&mut ov, "fan.n")?.unwrap_or(fan_n),
        min: take_f64(&mut ov, "fan.min")?.unwrap_or(fan_min),
        max: take_f64(&mut ov, "fan.max")?.unwrap_or(fan_max),
    };

    let separation = take_positive(&mut ov, "separation")?.unwrap_or(2.0);
    let phase = take_f64(&mut ov, "phase")?.unwrap_or(0.0);
    let sources = if id == ScenarioId::TwoSource {
        vec![
            PointSource {
                x: x0 - 0.5 * separation,
                weight: Complex64::new(1.0, 0.0),
            },
            PointSource {
                x: x0 + 0.5 * separation,
                weight: Complex64::from_polar(1.0, phase),
            },
        ]
    } else {
        Vec::new()
    };

    let (s_half, s_center, s_window) = match id {
        ScenarioId::Harmonic => (8.0, 1.0, 70.0),
        _ => (10.0, 0.0, 80.0),
    };
    let packet = PacketSpec {
        center: take_f64(&mut ov, "packet.center")?.unwrap_or(s_center),
        width: take_positive(&mut ov, "packet.width")?.unwrap_or(1.0),
        momentum: take_f64(&mut ov, "packet.momentum")?.unwrap_or(0.0),
    };
    let s_axis = Axis::new(
        take_f64(&mut ov, "sup.min")?.unwrap_or(-s_half),
        take_f64(&mut ov, "sup.max")?.unwrap_or(s_half),
        take_count(&mut ov, "sup.n")?.unwrap_or(257),
    )?;
    let s_time = TimeAxis::new(
        take_positive(&mut ov, "sup.t_start")?.unwrap_or(0.25),
        take_positive(&mut ov, "sup.dt")?.unwrap_or(0.15),
        take_count(&mut ov, "sup.n_t")?.unwrap_or(16),
    )?;
    let s_window = take_positive(&mut ov, "sup.fan_window")?.unwrap_or(s_window);
    // Endpoint spacing of the source fan must stay below the source spacing.
    let s_fan_default = (2.0 * s_window / (0.7 * s_axis.h())).ceil() as usize + 1;
    let s_fan = FanSpec {
        n: take_count(&mut ov, "sup.fan_n")?.unwrap_or(s_fan_default),
        min: -s_window,
        max: s_window,
    };

    if let Some(key) = ov.keys().next() {
        return Err(Error::param(key.clone(), "unknown override key"));
    }

    let p_max = if momentum_kind {
        p0.abs()
    } else {
        fan.min.abs().max(fan.max.abs())
    };
    let kinetic = p_max * p_max / (2.0 * mass);
    let quantum = setup.potential.omega().map(|w| hbar * w).unwrap_or(0.0);
    let mut energy_scale = kinetic.max(quantum);
    if energy_scale <= 0.0 {
        energy_scale = 1.0;
    }

    let scenario = Scenario {
        id,
        setup,
        initial,
        grid,
        fan,
        sources,
        superposition: SuperpositionSpec {
            axis: s_axis,
            time: s_time,
            fan: s_fan,
            packet,
        },
        energy_scale,
    };
    scenario.validate()?;
    Ok(scenario)
}
