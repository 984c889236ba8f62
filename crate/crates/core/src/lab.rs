//! Configuration-driven experiments and their CSV/JSON/SVG artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FourierScalarField, FourierTerm, LinearMapSpec, MapSpec};
use crate::exponents::{
    birkhoff_alpha, halton_points, induced_a, periodic_alpha, periodic_orbits, pinching_exponents, pointwise_thetas,
    rates, sample_grid, BirkhoffReport, FiberMetric, InducedAReport, InducedDirection, PinchingReport, SamplingSpec,
    Which,
};
use crate::fractal::{
    box_dimension, fractal_criterion_report, graph_cloud, hoelder_fit, BundleSampler, CriterionReport,
    DimensionReport, HoelderReport, SectionSampler, WeierstrassPhi, WeierstrassSampler,
};
use crate::holonomy::{
    delta_scan, integrability_check, DeltaScanReport, HolonomyParams, IntegrabilityReport, ObstructionParams,
    SuParams, TimeDirection, Verdict, FLOOR_MIN, INVARIANT_FACTOR,
};
use crate::numeric::sub_seed;
use crate::splitting::{equivariance_error, BundleField, BundleSelector};
use crate::torus::angle_between;
use crate::{LabError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SplittingCheck,
    Exponents,
    Hoelder,
    Boxdim,
    Obstruction,
    Integrability,
    WeierstrassReference,
    FullDichotomy,
}

/// `"eigen:s" | "eigen:c" | "eigen:u"` or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDirection", into = "RawDirection")]
pub enum DirectionSelector {
    Eigen(usize),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawDirection {
    Named(String),
    Vector(Vec<f64>),
}

impl TryFrom<RawDirection> for DirectionSelector {
    type Error = String;

    fn try_from(raw: RawDirection) -> std::result::Result<Self, String> {
        match raw {
            RawDirection::Named(s) => match s.as_str() {
                "eigen:s" => Ok(Self::Eigen(0)),
                "eigen:c" => Ok(Self::Eigen(1)),
                "eigen:u" => Ok(Self::Eigen(2)),
                _ => Err(format!("unknown direction selector {s:?}")),
            },
            RawDirection::Vector(v) => Ok(Self::Vector(v)),
        }
    }
}

impl From<DirectionSelector> for RawDirection {
    fn from(d: DirectionSelector) -> Self {
        match d {
            DirectionSelector::Eigen(i) => Self::Named(format!("eigen:{}", ["s", "c", "u"][i.min(2)])),
            DirectionSelector::Vector(v) => Self::Vector(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub rows: Vec<Vec<i64>>,
    /// Zero selects the linear map.
    #[serde(default)]
    pub epsilon: f64,
    /// Fourier terms of `φ`; defaults to `sin(2πx₁)/(2π)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<FourierTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionSelector>,
}

impl MapConfig {
    pub fn l3() -> Self {
        Self { rows: LinearMapSpec::l3().rows(), epsilon: 0.0, phi: None, direction: None }
    }

    pub fn example(epsilon: f64, eigen: usize) -> Self {
        Self { epsilon, direction: Some(DirectionSelector::Eigen(eigen)), ..Self::l3() }
    }

    pub fn build(&self) -> Result<MapSpec> {
        let linear = LinearMapSpec::new(&self.rows)?;
        if self.epsilon == 0.0 {
            return Ok(MapSpec::Linear(linear));
        }
        let dim = linear.dim();
        let phi = match &self.phi {
            Some(terms) => FourierScalarField { terms: terms.clone() },
            None => FourierScalarField::sine_x1(dim),
        };
        let e = match &self.direction {
            None => return Err(LabError::Config("a perturbed map needs a direction".into())),
            Some(DirectionSelector::Eigen(i)) => {
                let dirs = linear.eigen_directions()?;
                dirs.get(*i).ok_or_else(|| LabError::Config(format!("no eigen-direction {i}")))?.1
            }
            Some(DirectionSelector::Vector(v)) => {
                if v.len() != dim {
                    return Err(LabError::Config(format!("direction needs {dim} components")));
                }
                let mut e = Vector3::zeros();
                e.as_mut_slice()[..dim].copy_from_slice(v);
                e
            }
        };
        MapSpec::perturbed(linear, self.epsilon, phi, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    #[default]
    S,
    C,
    U,
}

impl Section {
    pub fn selector(self) -> BundleSelector {
        match self {
            Self::S => BundleSelector::S,
            Self::C => BundleSelector::C,
            Self::U => BundleSelector::U,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeierstrassConfig {
    pub lambda: f64,
    pub b: u64,
    pub phi: WeierstrassPhi,
    pub tol: f64,
}

impl Default for WeierstrassConfig {
    fn default() -> Self {
        Self { lambda: 0.55, b: 3, phi: WeierstrassPhi::Cos, tol: 1e-13 }
    }
}

/// Estimator parameters; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub bundle_tol: f64,
    /// Base points for grids, fits and scans.
    pub samples: usize,
    pub k_max: usize,
    pub n_max: usize,
    pub period_cap: usize,
    pub section: Section,
    /// Scales run from `2^-coarse_exp` to `2^-fine_exp`.
    pub coarse_exp: u32,
    pub fine_exp: u32,
    pub cloud_samples: usize,
    pub min_count: usize,
    pub probes: usize,
    pub deltas: Vec<f64>,
    pub arc_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holonomy_direction: Option<TimeDirection>,
    pub holonomy_tol: f64,
    pub su_radius: f64,
    pub alpha_margin: f64,
    pub weierstrass: WeierstrassConfig,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            bundle_tol: 1e-12,
            samples: 100,
            k_max: 8,
            n_max: 2000,
            period_cap: 5,
            section: Section::S,
            coarse_exp: 4,
            fine_exp: 12,
            cloud_samples: 100_000,
            min_count: 50,
            probes: 32,
            deltas: vec![0.02, 0.05, 0.1],
            arc_samples: 8,
            holonomy_direction: None,
            holonomy_tol: 1e-10,
            su_radius: 0.05,
            alpha_margin: 0.05,
            weierstrass: WeierstrassConfig::default(),
        }
    }
}

impl Params {
    pub fn scales(&self) -> Vec<f64> {
        (self.coarse_exp..=self.fine_exp).map(|j| 0.5f64.powi(j as i32)).collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(m.into()));
        if !(1e-15..=1e-6).contains(&self.bundle_tol) {
            return bad("bundle_tol must lie in [1e-15, 1e-6]");
        }
        if !(1..=100_000).contains(&self.samples) {
            return bad("samples must lie in [1, 100000]");
        }
        if !(1..=64).contains(&self.k_max) {
            return bad("k_max must lie in [1, 64]");
        }
        if !(1..=100_000).contains(&self.n_max) {
            return bad("n_max must lie in [1, 100000]");
        }
        if !(1..=12).contains(&self.period_cap) {
            return bad("period_cap must lie in [1, 12]");
        }
        if !(1 <= self.coarse_exp && self.coarse_exp < self.fine_exp && self.fine_exp <= 40) {
            return bad("scale exponents need 1 ≤ coarse_exp < fine_exp ≤ 40");
        }
        if !(1_000..=100_000_000).contains(&self.cloud_samples) {
            return bad("cloud_samples must lie in [1000, 1e8]");
        }
        if self.min_count == 0 {
            return bad("min_count must be positive");
        }
        if !(1..=4096).contains(&self.probes) {
            return bad("probes must lie in [1, 4096]");
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0 && *d <= 0.25)) {
            return bad("deltas must be a non-empty list in (0, 0.25]");
        }
        if !(2..=256).contains(&self.arc_samples) {
            return bad("arc_samples must lie in [2, 256]");
        }
        if !(1e-14..=1e-3).contains(&self.holonomy_tol) {
            return bad("holonomy_tol must lie in [1e-14, 1e-3]");
        }
        if !(self.su_radius > 0.0 && self.su_radius <= 0.1) {
            return bad("su_radius must lie in (0, 0.1]");
        }
        if !(self.alpha_margin >= 0.0 && self.alpha_margin < 1.0) {
            return bad("alpha_margin must lie in [0, 1)");
        }
        let w = &self.weierstrass;
        if !(w.lambda > 0.0 && w.lambda < 1.0) || w.b < 2 || w.lambda * w.b as f64 <= 1.0 {
            return bad("weierstrass needs 0 < lambda < 1, b ≥ 2 and lambda·b > 1");
        }
        if !(w.tol > 0.0 && w.tol < 1e-3) {
            return bad("weierstrass.tol must lie in (0, 1e-3)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapConfig>,
    #[serde(default)]
    pub params: Params,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, map: Option<MapConfig>, seed: u64) -> Self {
        Self { schema_version: SCHEMA_VERSION, kind, seed, output_dir: None, map, params: Params::default() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(LabError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(LabError::Config("seed must fit in a signed 64-bit integer".into()));
        }
        self.params.validate()?;
        match (&self.map, self.kind) {
            (_, ExperimentKind::WeierstrassReference) => Ok(()),
            (None, _) => Err(LabError::Config("this experiment kind needs a [map] table".into())),
            (Some(m), kind) => {
                let map = m.build().map_err(|e| LabError::Config(e.to_string()))?;
                let needs_3d = !matches!(kind, ExperimentKind::SplittingCheck);
                if needs_3d && map.dim() != 3 {
                    return Err(LabError::Config("this experiment kind needs a map on T^3".into()));
                }
                Ok(())
            }
        }
    }

    fn map_spec(&self) -> Result<MapSpec> {
        self.map.as_ref().ok_or_else(|| LabError::Config("missing [map]".into()))?.build()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleCheck {
    pub bundle: BundleSelector,
    pub max_equivariance_error: f64,
    /// Largest angle to the corresponding eigenvector of the linear part.
    pub max_linear_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub x: [f64; 3],
    pub k: usize,
    pub theta_s: f64,
    pub theta_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicAlpha {
    pub which: Which,
    pub alpha: f64,
    pub orbits: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedSummary {
    /// Minimum of `A_k` over `k ≤ k_max`.
    pub a_estimate: f64,
    pub per_k: Vec<InducedAReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDimension {
    pub closed_form: f64,
    pub report: DimensionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHoelder {
    pub closed_form: f64,
    pub report: HoelderReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionStage {
    pub report: CriterionReport,
    /// Same estimator on the linear part's section.
    pub control: f64,
    pub floor: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StageResult {
    Splitting { bundles: Vec<BundleCheck>, samples: usize },
    Pinching { report: PinchingReport, table: Vec<ThetaRow> },
    Birkhoff { which: Which, report: BirkhoffReport },
    Periodic(PeriodicAlpha),
    Induced(InducedSummary),
    Hoelder(ReferenceHoelder),
    Dimension(ReferenceDimension),
    Criterion(CriterionStage),
    Obstruction(DeltaScanReport),
    Integrability(IntegrabilityReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seed: u64,
    pub parameters: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<StageResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DichotomyVerdict {
    pub hoelder_exceeds_threshold: bool,
    pub holonomy_invariant: Verdict,
    pub fractal_certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<DichotomyVerdict>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub timings_normalized: bool,
    pub total_ms: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn result(&self, name: &str) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.name == name).and_then(|s| s.result.as_ref())
    }

    /// Verdicts reported by any stage.
    pub fn verdicts(&self) -> Vec<Verdict> {
        let mut out = Vec::new();
        for s in self.stages.iter().filter_map(|s| s.result.as_ref()) {
            match s {
                StageResult::Obstruction(r) => out.push(r.verdict),
                StageResult::Integrability(r) => {
                    out.extend(r.su_verdict);
                    out.push(r.gap_verdict);
                }
                _ => {}
            }
        }
        out
    }

    /// 0 success, 3 numerical failure, 4 indeterminate verdict.
    pub fn exit_code(&self) -> i32 {
        if self.failed_stage.is_some() {
            3
        } else if self.verdicts().contains(&Verdict::Indeterminate) {
            4
        } else {
            0
        }
    }
}

struct Runner {
    seed: u64,
    normalize: bool,
    stages: Vec<StageRecord>,
    warnings: Vec<String>,
    failed: Option<String>,
}

impl Runner {
    fn stage<T>(
        &mut self,
        name: &str,
        parameters: serde_json::Value,
        f: impl FnOnce(u64) -> Result<T>,
        wrap: impl FnOnce(&T) -> StageResult,
    ) -> Option<T> {
        if self.failed.is_some() {
            return None;
        }
        let seed = sub_seed(self.seed, name);
        let t = Instant::now();
        let out = f(seed);
        let elapsed_ms = if self.normalize { 0.0 } else { t.elapsed().as_secs_f64() * 1e3 };
        log::info!("stage {name} finished in {:.1} ms", t.elapsed().as_secs_f64() * 1e3);
        let (result, error, value) = match out {
            Ok(v) => (Some(wrap(&v)), None, Some(v)),
            Err(e) => {
                self.failed = Some(name.to_string());
                (None, Some(e.to_string()), None)
            }
        };
        self.stages.push(StageRecord { name: name.into(), seed, parameters, result, error, elapsed_ms });
        value
    }
}

fn json(v: impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn lin_dirs(map: &MapSpec) -> Result<Vec<Vector3<f64>>> {
    Ok(map.linear_part().eigen_directions()?.into_iter().map(|(_, v)| v).collect())
}

fn splitting_stage(map: &MapSpec, p: &Params, seed: u64) -> Result<Vec<BundleCheck>> {
    let field = BundleField::new(map, p.bundle_tol)?;
    let pts = halton_points(p.samples, map.dim(), seed);
    let lin = lin_dirs(map)?;
    let sels: Vec<BundleSelector> =
        if map.dim() == 3 { vec![BundleSelector::S, BundleSelector::C, BundleSelector::U] } else { vec![BundleSelector::S, BundleSelector::U] };
    sels.into_iter()
        .map(|b| {
            let li = match b {
                BundleSelector::S => 0,
                BundleSelector::C => 1,
                _ => lin.len() - 1,
            };
            let (mut eq, mut ang) = (0.0f64, 0.0f64);
            for x in &pts {
                eq = eq.max(equivariance_error(&field, x, b)?);
                ang = ang.max(angle_between(&field.vector(x, b)?, &lin[li]));
            }
            Ok(BundleCheck { bundle: b, max_equivariance_error: eq, max_linear_angle: ang })
        })
        .collect()
}

fn pinching_stage(field: &BundleField, p: &Params, seed: u64) -> Result<(PinchingReport, Vec<ThetaRow>)> {
    let grid = sample_grid(field.map(), &SamplingSpec { halton_points: p.samples, periodic_cap: p.period_cap.min(3), seed })?;
    let report = pinching_exponents(field, p.k_max, &grid)?;
    let mut table = Vec::with_capacity(grid.len() * p.k_max);
    for x in &grid {
        for k in 1..=p.k_max {
            let (theta_s, theta_c) = pointwise_thetas(&rates(field, x, k)?)?;
            let c = x.coords();
            table.push(ThetaRow { x: [c[0], c[1], c[2]], k, theta_s, theta_c });
        }
    }
    Ok((report, table))
}

fn induced_stage(field: &BundleField, p: &Params, seed: u64) -> Result<InducedSummary> {
    let grid = halton_points(p.samples, 3, seed);
    let per_k: Vec<InducedAReport> = (1..=p.k_max)
        .map(|k| induced_a(field, InducedDirection::ForwardCs, k, &grid, (p.n_max / k).max(1), FiberMetric::Adapted))
        .collect::<Result<_>>()?;
    let a_estimate = per_k.iter().map(|r| r.a_k).fold(f64::INFINITY, f64::min);
    Ok(InducedSummary { a_estimate, per_k })
}

fn section_hoelder(field: &BundleField, p: &Params, section: Section, seed: u64) -> Result<HoelderReport> {
    let sampler = BundleSampler { field, which: section.selector() };
    hoelder_fit(&sampler, &p.scales(), p.samples, p.probes, seed)
}

fn dimension_of(sampler: &dyn SectionSampler, p: &Params, seed: u64) -> Result<DimensionReport> {
    let cloud = graph_cloud(sampler, p.cloud_samples, seed)?;
    box_dimension(&cloud, &p.scales(), p.min_count)
}

fn weierstrass(p: &Params) -> WeierstrassSampler {
    let w = &p.weierstrass;
    WeierstrassSampler { lambda: w.lambda, b: w.b, phi: w.phi, tol: w.tol }
}

fn obstruction_params(p: &Params) -> ObstructionParams {
    ObstructionParams {
        arc_samples: p.arc_samples,
        direction: p.holonomy_direction,
        holonomy: HolonomyParams { tol: p.holonomy_tol, ..HolonomyParams::default() },
    }
}

fn criterion_stage(map: &MapSpec, p: &Params, alpha: f64, seed: u64) -> Result<CriterionStage> {
    let field = BundleField::new(map, p.bundle_tol)?;
    let control_map = MapSpec::Linear(map.linear_part().clone());
    let control_field = BundleField::new(&control_map, p.bundle_tol)?;
    let which = p.section.selector();
    let scales = p.scales();
    let report = fractal_criterion_report(&BundleSampler { field: &field, which }, alpha, &scales, p.samples, p.probes, seed)?;
    let control = fractal_criterion_report(
        &BundleSampler { field: &control_field, which },
        alpha,
        &scales,
        p.samples,
        p.probes,
        seed,
    )?
    .c_est;
    let floor = control.max(FLOOR_MIN);
    let certified = report.c_est > INVARIANT_FACTOR * floor;
    Ok(CriterionStage { report, control, floor, certified })
}

fn warn_indeterminate(w: &mut Vec<String>, name: &str, v: Verdict) {
    if v == Verdict::Indeterminate {
        w.push(format!("{name}: indeterminate verdict"));
    }
}

/// Runs every stage of the configured experiment. Stage errors are recorded
/// in the report and stop the pipeline.
pub fn run_experiment(config: &ExperimentConfig, normalize_timings: bool) -> ExperimentReport {
    let start = Instant::now();
    let mut r = Runner { seed: config.seed, normalize: normalize_timings, stages: Vec::new(), warnings: Vec::new(), failed: None };
    let p = &config.params;
    let mut verdict = None;
    let map = match config.kind {
        ExperimentKind::WeierstrassReference => None,
        _ => match config.map_spec() {
            Ok(m) => Some(m),
            Err(e) => {
                r.failed = Some("config".into());
                r.warnings.push(e.to_string());
                None
            }
        },
    };
    let fields = map.as_ref().map(|m| BundleField::new(m, p.bundle_tol));
    let field = match fields {
        Some(Ok(f)) => Some(f),
        Some(Err(e)) => {
            r.failed = Some("bundle-field".into());
            r.warnings.push(e.to_string());
            None
        }
        None => None,
    };
    let scale_params = || json(serde_json::json!({ "scales": p.scales(), "samples": p.samples, "probes": p.probes }));
    match (config.kind, map.as_ref(), field.as_ref()) {
        (ExperimentKind::WeierstrassReference, _, _) => {
            let w = weierstrass(p);
            r.stage("weierstrass-hoelder", scale_params(), |s| hoelder_fit(&w, &p.scales(), p.samples, p.probes, s), |h| {
                StageResult::Hoelder(ReferenceHoelder { closed_form: w.hoelder_exponent(), report: h.clone() })
            });
            let params = json(serde_json::json!({ "scales": p.scales(), "cloud_samples": p.cloud_samples, "min_count": p.min_count, "weierstrass": p.weierstrass }));
            if let Some(d) = r.stage("weierstrass-boxdim", params, |s| dimension_of(&w, p, s), |d| {
                StageResult::Dimension(ReferenceDimension { closed_form: w.box_dimension(), report: d.clone() })
            }) {
                if d.density_warning {
                    r.warnings.push("weierstrass-boxdim: sparse boxes at the finest scales".into());
                }
            }
        }
        (_, Some(map), Some(field)) => match config.kind {
            ExperimentKind::SplittingCheck => {
                let params = json(serde_json::json!({ "samples": p.samples, "bundle_tol": p.bundle_tol }));
                r.stage("splitting", params, |s| splitting_stage(map, p, s), |b| StageResult::Splitting {
                    bundles: b.clone(),
                    samples: p.samples,
                });
            }
            ExperimentKind::Exponents => {
                let pin = json(serde_json::json!({ "samples": p.samples, "k_max": p.k_max, "periodic_cap": p.period_cap.min(3) }));
                r.stage("pinching", pin, |s| pinching_stage(field, p, s), |(rep, t)| StageResult::Pinching {
                    report: rep.clone(),
                    table: t.clone(),
                });
                for which in [Which::S, Which::C] {
                    let tag = if which == Which::S { "s" } else { "c" };
                    let params = json(serde_json::json!({ "samples": p.samples, "k": 1, "n_max": p.n_max, "window": 0.5 }));
                    r.stage(
                        &format!("birkhoff-{tag}"),
                        params,
                        |s| birkhoff_alpha(field, which, 1, p.n_max, &halton_points(p.samples, 3, s), 0.5),
                        |b| StageResult::Birkhoff { which, report: b.clone() },
                    );
                    let params = json(serde_json::json!({ "period_cap": p.period_cap }));
                    r.stage(
                        &format!("periodic-{tag}"),
                        params,
                        |_| {
                            let (orbits, failed) = periodic_orbits(map, p.period_cap)?;
                            let alpha = periodic_alpha(field, which, &orbits)?;
                            Ok(PeriodicAlpha { which, alpha, orbits: orbits.len(), failed })
                        },
                        |a| StageResult::Periodic(a.clone()),
                    );
                }
                let params = json(serde_json::json!({ "samples": p.samples, "k_max": p.k_max, "n_max": p.n_max, "metric": FiberMetric::Adapted }));
                r.stage("induced-a", params, |s| induced_stage(field, p, s), |a| StageResult::Induced(a.clone()));
                r.warnings.push(format!("induced-a: infimum over k truncated at k_max = {}", p.k_max));
            }
            ExperimentKind::Hoelder => {
                r.stage("hoelder", scale_params(), |s| section_hoelder(field, p, p.section, s), |h| {
                    StageResult::Hoelder(ReferenceHoelder { closed_form: f64::NAN, report: h.clone() })
                });
            }
            ExperimentKind::Boxdim => {
                let params = json(serde_json::json!({ "scales": p.scales(), "cloud_samples": p.cloud_samples, "min_count": p.min_count, "section": p.section }));
                let sampler = BundleSampler { field, which: p.section.selector() };
                if let Some(d) = r.stage("boxdim", params, |s| dimension_of(&sampler, p, s), |d| {
                    StageResult::Dimension(ReferenceDimension { closed_form: f64::NAN, report: d.clone() })
                }) {
                    if d.density_warning {
                        r.warnings.push("boxdim: sparse boxes at the finest scales".into());
                    }
                }
            }
            ExperimentKind::Obstruction => {
                let params = json(serde_json::json!({ "section": p.section, "deltas": p.deltas, "samples": p.samples, "obstruction": obstruction_params(p) }));
                if let Some(d) = r.stage(
                    "obstruction",
                    params,
                    |s| delta_scan(map, p.section.selector(), &p.deltas, p.samples, &obstruction_params(p), s),
                    |d| StageResult::Obstruction(d.clone()),
                ) {
                    warn_indeterminate(&mut r.warnings, "obstruction", d.verdict);
                }
            }
            ExperimentKind::Integrability => {
                integrability(&mut r, map, p);
            }
            ExperimentKind::FullDichotomy => {
                verdict = full_dichotomy(&mut r, map, field, p);
            }
            ExperimentKind::WeierstrassReference => unreachable!(),
        },
        _ => {}
    }
    ExperimentReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        stages: r.stages,
        verdict,
        warnings: r.warnings,
        failed_stage: r.failed,
        timings_normalized: normalize_timings,
        total_ms: if normalize_timings { 0.0 } else { start.elapsed().as_secs_f64() * 1e3 },
    }
}

fn integrability(r: &mut Runner, map: &MapSpec, p: &Params) -> Option<IntegrabilityReport> {
    let params = json(serde_json::json!({ "samples": p.samples, "a": p.su_radius, "b": p.su_radius, "period_cap": p.period_cap, "su": SuParams::default() }));
    let rep = r.stage(
        "integrability",
        params,
        |s| integrability_check(map, p.samples, p.su_radius, p.su_radius, p.period_cap, &SuParams::default(), s),
        |i| StageResult::Integrability(i.clone()),
    )?;
    if let Some(v) = rep.su_verdict {
        warn_indeterminate(&mut r.warnings, "su-defect", v);
    }
    warn_indeterminate(&mut r.warnings, "c-periodic-gap", rep.gap_verdict);
    if !rep.failed_orbits.is_empty() {
        r.warnings.push(format!("integrability: {} periodic orbits failed to continue", rep.failed_orbits.len()));
    }
    Some(rep)
}

fn full_dichotomy(r: &mut Runner, map: &MapSpec, field: &BundleField, p: &Params) -> Option<DichotomyVerdict> {
    let params = json(serde_json::json!({ "samples": p.samples, "k_max": p.k_max, "n_max": p.n_max, "metric": FiberMetric::Adapted }));
    let a = r.stage("induced-a", params, |s| induced_stage(field, p, s), |a| StageResult::Induced(a.clone()))?;
    r.warnings.push(format!("induced-a: infimum over k truncated at k_max = {}", p.k_max));
    let h = r.stage("hoelder", scale_params_of(p), |s| section_hoelder(field, p, p.section, s), |h| {
        StageResult::Hoelder(ReferenceHoelder { closed_form: f64::NAN, report: h.clone() })
    })?;
    let alpha = (a.a_estimate + p.alpha_margin).clamp(1e-6, 1.0 - 1e-6);
    let params = json(serde_json::json!({ "alpha": alpha, "scales": p.scales(), "samples": p.samples, "probes": p.probes, "section": p.section }));
    let c = r.stage("criterion", params, |s| criterion_stage(map, p, alpha, s), |c| StageResult::Criterion(c.clone()))?;
    let params = json(serde_json::json!({ "section": p.section, "deltas": p.deltas, "samples": p.samples, "obstruction": obstruction_params(p) }));
    let section = match p.section {
        Section::U => Section::S,
        s => s,
    };
    let d = r.stage(
        "obstruction",
        params,
        |s| delta_scan(map, section.selector(), &p.deltas, p.samples, &obstruction_params(p), s),
        |d| StageResult::Obstruction(d.clone()),
    )?;
    warn_indeterminate(&mut r.warnings, "obstruction", d.verdict);
    integrability(r, map, p)?;
    Some(DichotomyVerdict {
        hoelder_exceeds_threshold: h.smooth || h.exponent > a.a_estimate,
        holonomy_invariant: d.verdict,
        fractal_certified: c.certified,
    })
}

fn scale_params_of(p: &Params) -> serde_json::Value {
    json(serde_json::json!({ "scales": p.scales(), "samples": p.samples, "probes": p.probes, "section": p.section }))
}

/// One CSV per table; UTF-8 with a header row and `.` decimals.
pub fn emit_csv(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    for st in &report.stages {
        let Some(res) = &st.result else { continue };
        match res {
            StageResult::Splitting { bundles, .. } => {
                let mut s = String::from("bundle,max_equivariance_error,max_linear_angle\n");
                for b in bundles {
                    writeln!(s, "{:?},{},{}", b.bundle, b.max_equivariance_error, b.max_linear_angle).ok();
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Pinching { table, .. } => {
                let mut s = String::from("x1,x2,x3,k,theta_s,theta_c\n");
                for t in table {
                    writeln!(s, "{},{},{},{},{},{}", t.x[0], t.x[1], t.x[2], t.k, t.theta_s, t.theta_c).ok();
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Birkhoff { report: b, .. } => {
                let mut s = String::from("n,running_inf\n");
                for (i, v) in b.running_inf.iter().enumerate() {
                    writeln!(s, "{},{}", i + 1, v).ok();
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Periodic(_) => {}
            StageResult::Induced(a) => {
                let mut s = String::from("k,a_k\n");
                for r in &a.per_k {
                    writeln!(s, "{},{}", r.k, r.a_k).ok();
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Hoelder(h) => {
                let mut s = String::from("scale,sup_oscillation\n");
                for (e, o) in h.report.scales.iter().zip(&h.report.per_scale_sup_osc) {
                    writeln!(s, "{e},{o}").ok();
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Dimension(d) => put(format!("{}.csv", st.name), d.report.sweep.to_csv())?,
            StageResult::Criterion(c) => {
                let mut s = String::from("scale,min_h\n");
                for (e, m) in c.report.scales.iter().zip(&c.report.per_scale_min) {
                    writeln!(s, "{e},{m}").ok();
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Obstruction(d) => {
                let mut s = String::from("delta,x1,x2,x3,value\n");
                for rep in &d.reports {
                    for (x, v) in &rep.samples {
                        writeln!(s, "{},{},{},{},{}", rep.delta, x[0], x[1], x[2], v).ok();
                    }
                }
                put(format!("{}.csv", st.name), s)?;
            }
            StageResult::Integrability(i) => {
                let mut s = String::from("x1,x2,x3,a,b,defect\n");
                for d in &i.su_defects {
                    writeln!(s, "{},{},{},{},{},{}", d.x[0], d.x[1], d.x[2], d.a, d.b, d.defect).ok();
                }
                put("su_defects.csv".into(), s)?;
                let mut s = String::from("id,period,x1,x2,x3,gap,gap_s,gap_u\n");
                for g in &i.c_periodic_gaps {
                    writeln!(s, "{},{},{},{},{},{},{},{}", g.id, g.period, g.point[0], g.point[1], g.point[2], g.gap, g.gap_s, g.gap_u)
                        .ok();
                }
                put("periodic_gaps.csv".into(), s)?;
            }
        }
    }
    Ok(written)
}

struct Plot {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    log_x: bool,
    log_y: bool,
    series: Vec<(String, Vec<(f64, f64)>)>,
    /// `y = slope·x + intercept` in plotted coordinates.
    line: Option<(f64, f64, String)>,
    hlines: Vec<(f64, String)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

impl Plot {
    fn tx(&self, (x, y): (f64, f64)) -> Option<(f64, f64)> {
        let x = if self.log_x { (x > 0.0).then(|| x.log10())? } else { x };
        let y = if self.log_y { (y > 0.0).then(|| y.log10())? } else { y };
        (x.is_finite() && y.is_finite()).then_some((x, y))
    }

    fn render(&self) -> Option<String> {
        let pts: Vec<(f64, f64)> = self.series.iter().flat_map(|(_, s)| s.iter().filter_map(|p| self.tx(*p))).collect();
        if pts.is_empty() {
            return None;
        }
        let hl: Vec<f64> = self.hlines.iter().filter_map(|(y, _)| self.tx((1.0, *y)).map(|p| p.1)).collect();
        let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
        let (mut y0, mut y1) = pts.iter().map(|p| p.1).chain(hl.iter().copied()).fold((f64::INFINITY, f64::NEG_INFINITY), |a, y| (a.0.min(y), a.1.max(y)));
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (w, h, m) = (640.0, 420.0, 60.0);
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let mut s = String::new();
        writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).ok();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).ok();
        writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).ok();
        writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, escape(&self.title)).ok();
        writeln!(s, r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * m, h - 2.0 * m).ok();
        let lx = if self.log_x { format!("log10 {}", self.x_label) } else { self.x_label.to_string() };
        let ly = if self.log_y { format!("log10 {}", self.y_label) } else { self.y_label.to_string() };
        writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, w / 2.0, h - 18.0, escape(&lx)).ok();
        writeln!(s, r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, h / 2.0, h / 2.0, escape(&ly)).ok();
        for (v, anchor, px, py) in [(x0, "start", sx(x0), h - m + 16.0), (x1, "end", sx(x1), h - m + 16.0)] {
            writeln!(s, r#"<text x="{px:.2}" y="{py:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{v:.3}</text>"#).ok();
        }
        for (v, py) in [(y0, sy(y0)), (y1, sy(y1))] {
            writeln!(s, r#"<text x="{:.2}" y="{py:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.3}</text>"#, m - 4.0).ok();
        }
        for ((y, label), py) in self.hlines.iter().filter_map(|(y, l)| self.tx((1.0, *y)).map(|p| ((y, l), p.1))) {
            let _ = y;
            writeln!(s, r#"<line x1="{m}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#, sy(py), w - m, sy(py)).ok();
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#, w - m - 4.0, sy(py) - 3.0, escape(label)).ok();
        }
        if let Some((slope, intercept, label)) = &self.line {
            let (ya, yb) = (slope * x0 + intercept, slope * x1 + intercept);
            writeln!(s, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.2"/>"#, sx(x0), sy(ya), sx(x1), sy(yb)).ok();
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#, m + 8.0, m + 16.0, escape(label)).ok();
        }
        for (i, (label, series)) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            for p in series.iter().filter_map(|p| self.tx(*p)) {
                writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, sx(p.0), sy(p.1)).ok();
            }
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{c}" text-anchor="end">{}</text>"#, w - m - 4.0, m + 14.0 * (i as f64 + 1.0), escape(label)).ok();
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn plots(report: &ExperimentReport) -> Vec<(String, Plot)> {
    let mut out = Vec::new();
    for st in &report.stages {
        let Some(res) = &st.result else { continue };
        match res {
            StageResult::Dimension(d) => {
                let sw = &d.report.sweep;
                let (a, b) = d.report.window;
                let pts: Vec<(f64, f64)> = sw.scales.iter().zip(&sw.counts).map(|(e, n)| (1.0 / e, *n as f64)).collect();
                let intercept = if b > a && sw.counts[a] > 0 {
                    (sw.counts[a] as f64).log10() - d.report.estimate * (1.0 / sw.scales[a]).log10()
                } else {
                    0.0
                };
                out.push((
                    st.name.clone(),
                    Plot {
                        title: format!("{}: box counts", st.name),
                        x_label: "1/scale",
                        y_label: "count",
                        log_x: true,
                        log_y: true,
                        series: vec![("occupied boxes".into(), pts)],
                        line: Some((d.report.estimate, intercept, format!("slope {:.4}", d.report.estimate))),
                        hlines: vec![],
                    },
                ));
            }
            StageResult::Hoelder(h) => {
                let pts = h.report.scales.iter().copied().zip(h.report.per_scale_sup_osc.iter().copied()).collect();
                let line = (!h.report.smooth).then(|| {
                    (h.report.exponent, h.report.constant.log10(), format!("exponent {:.4}", h.report.exponent))
                });
                out.push((
                    st.name.clone(),
                    Plot {
                        title: format!("{}: sup oscillation", st.name),
                        x_label: "scale",
                        y_label: "oscillation",
                        log_x: true,
                        log_y: true,
                        series: vec![("sup oscillation".into(), pts)],
                        line,
                        hlines: vec![],
                    },
                ));
            }
            StageResult::Pinching { report: rep, .. } => {
                let ks = |f: fn(&crate::exponents::PinchingPerK) -> f64| -> Vec<(f64, f64)> {
                    rep.per_k.iter().map(|r| (r.k as f64, f(r))).collect()
                };
                out.push((
                    st.name.clone(),
                    Plot {
                        title: format!("{}: exponents per k", st.name),
                        x_label: "k",
                        y_label: "exponent",
                        log_x: true,
                        log_y: true,
                        series: vec![("theta_s".into(), ks(|r| r.min_theta_s)), ("theta_c".into(), ks(|r| r.min_theta_c))],
                        line: None,
                        hlines: vec![],
                    },
                ));
            }
            StageResult::Obstruction(d) => {
                let series = d
                    .reports
                    .iter()
                    .map(|r| (format!("delta {}", r.delta), r.samples.iter().enumerate().map(|(i, (_, v))| (i as f64, *v)).collect()))
                    .collect();
                out.push((
                    st.name.clone(),
                    Plot {
                        title: format!("{}: obstruction by sample", st.name),
                        x_label: "sample index",
                        y_label: "obstruction",
                        log_x: false,
                        log_y: true,
                        series,
                        line: None,
                        hlines: vec![
                            (d.invariant_factor * d.noise.floor, format!("{}x floor", d.invariant_factor)),
                            (d.obstructed_factor * d.noise.floor, format!("{}x floor", d.obstructed_factor)),
                        ],
                    },
                ));
            }
            _ => {}
        }
    }
    out
}

/// Static SVG plots; sections without plottable data are skipped with a
/// warning.
pub fn emit_svg(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, plot) in plots(report) {
        match plot.render() {
            Some(svg) => {
                let path = dir.join(format!("{name}.svg"));
                fs::write(&path, svg)?;
                written.push(path);
            }
            None => log::warn!("{name}: nothing to plot"),
        }
    }
    Ok(written)
}

/// Writes `report.json` plus CSV and SVG artifacts.
pub fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    fs::write(&path, report.to_json()? + "\n")?;
    let mut out = vec![path];
    out.extend(emit_csv(report, dir)?);
    out.extend(emit_svg(report, dir)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
schema_version = 1
kind = "obstruction"
seed = 7

[map]
rows = [[0, 1, 0], [0, 0, 1], [-1, 0, 3]]
epsilon = 0.05
direction = "eigen:c"

[params]
samples = 4
deltas = [0.05]
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.kind, ExperimentKind::Obstruction);
        assert_eq!(c.map.as_ref().unwrap().direction, Some(DirectionSelector::Eigen(1)));
        assert_eq!(c.params.samples, 4);
        assert_eq!(c.params.k_max, 8);
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn vector_direction_round_trips() {
        let mut c = ExperimentConfig::new(ExperimentKind::Exponents, Some(MapConfig::example(0.05, 2)), 3);
        c.map.as_mut().unwrap().direction = Some(DirectionSelector::Vector(vec![1.0, 0.0, 0.0]));
        c.params.holonomy_direction = Some(TimeDirection::Backward);
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(ExperimentConfig::parse(&SAMPLE.replace("samples = 4", "samples = 4\nbogus = 1")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("seed = 7", "seed = 7\nextra = true")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("samples = 4", "samples = 0")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("eigen:c", "eigen:x")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("epsilon = 0.05", "epsilon = 0.5")).is_err());
        assert!(ExperimentConfig::parse(&SAMPLE.replace("deltas = [0.05]", "deltas = []")).is_err());
    }

    #[test]
    fn map_config_builds_the_example_family() {
        let dirs = LinearMapSpec::l3().eigen_directions().unwrap();
        for i in 0..3 {
            let built = MapConfig::example(0.05, i).build().unwrap();
            assert_eq!(built, MapSpec::example(0.05, dirs[i].1).unwrap());
        }
        assert!(matches!(MapConfig::l3().build().unwrap(), MapSpec::Linear(_)));
        let mut m = MapConfig::l3();
        m.epsilon = 0.05;
        assert!(m.build().is_err());
    }

    #[test]
    fn csv_tables_have_headers_only_when_empty() {
        let cfg = ExperimentConfig::new(ExperimentKind::Integrability, Some(MapConfig::l3()), 1);
        let report = ExperimentReport {
            schema_version: SCHEMA_VERSION,
            config: cfg,
            stages: vec![StageRecord {
                name: "obstruction".into(),
                seed: 0,
                parameters: serde_json::Value::Null,
                result: Some(StageResult::Obstruction(DeltaScanReport {
                    section: BundleSelector::S,
                    direction: TimeDirection::Forward,
                    reports: vec![],
                    noise: crate::holonomy::NoiseFloor::new(0.0, 0.0),
                    verdict: Verdict::Invariant,
                    invariant_factor: 3.0,
                    obstructed_factor: 10.0,
                    assumptions: vec![],
                })),
                error: None,
                elapsed_ms: 0.0,
            }],
            verdict: None,
            warnings: vec![],
            failed_stage: None,
            timings_normalized: true,
            total_ms: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_csv(&report, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(&files[0]).unwrap(), "delta,x1,x2,x3,value\n");
        assert!(emit_svg(&report, dir.path()).unwrap().is_empty());
    }

    #[test]
    fn splitting_check_is_reproducible() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::SplittingCheck, Some(MapConfig::l3()), 11);
        cfg.params.samples = 20;
        let a = run_experiment(&cfg, true);
        let b = run_experiment(&cfg, true);
        assert_eq!(a.exit_code(), 0);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let Some(StageResult::Splitting { bundles, .. }) = a.result("splitting") else { panic!() };
        assert!(bundles.iter().all(|b| b.max_linear_angle < 1e-9));
    }

    #[test]
    fn weierstrass_reference_writes_artifacts() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::WeierstrassReference, None, 5);
        cfg.params.cloud_samples = 20_000;
        cfg.params.fine_exp = 8;
        cfg.params.samples = 6;
        cfg.params.probes = 16;
        let rep = run_experiment(&cfg, true);
        assert_eq!(rep.failed_stage, None);
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&rep, dir.path()).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert!(names.contains(&"report.json".to_string()));
        assert!(names.contains(&"weierstrass-boxdim.csv".to_string()));
        let svg = fs::read_to_string(dir.path().join("weierstrass-boxdim.svg")).unwrap();
        assert!(svg.contains("slope") && !svg.contains("<script"));
    }
}
