//! The TOML run configuration. All quantities are SI: lengths in m,
//! temperatures in K, pressures in Pa, velocities in m/s, potentials in V.
//!
//! Every block except `[geometry]` may be omitted, and every key inside a
//! block falls back to its default. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coefficients::{BoundaryData, CoefficientSet, InletProfile, PhysicalConstants, SamplingBox};
use crate::discretization::ScalarLifting;
use crate::error::{Error, Result};
use crate::fixed_point::PicardConfig;
use crate::geometry::{CollectorLayout, GeometrySpec, Resolution};
use crate::ledger::{EpsilonObjective, EpsilonVector, LedgerOptions, SearchOptions};
use crate::problem::desk_boundary_data;

/// Cells across each of the five strips: one number for all, or five.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StripCells {
    Uniform(usize),
    PerStrip([usize; 5]),
}

impl StripCells {
    pub fn counts(self) -> [usize; 5] {
        match self {
            StripCells::Uniform(n) => [n; 5],
            StripCells::PerStrip(a) => a,
        }
    }
}

/// `[geometry]`: strip widths and channel length [m], plus the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub l_f: f64,
    pub l_a: f64,
    pub l_m: f64,
    pub l_c: f64,
    pub length: f64,
    pub collector: CollectorLayout,
    pub nx: StripCells,
    pub ny: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let d = GeometrySpec::desk();
        GeometryConfig {
            l_f: d.l_f,
            l_a: d.l_a,
            l_m: d.l_m,
            l_c: d.l_c,
            length: d.length,
            collector: d.collector,
            nx: StripCells::Uniform(8),
            ny: 32,
        }
    }
}

impl GeometryConfig {
    pub fn spec(&self) -> GeometrySpec {
        GeometrySpec {
            l_f: self.l_f,
            l_a: self.l_a,
            l_m: self.l_m,
            l_c: self.l_c,
            length: self.length,
            collector: self.collector,
        }
    }

    pub fn resolution(&self) -> Resolution {
        Resolution {
            nx: self.nx.counts(),
            ny: self.ny,
        }
    }
}

/// Shrink the boundary data by `factor` until the smallness verdict holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleToVerdict {
    pub enabled: bool,
    pub factor: f64,
    pub max_steps: usize,
}

impl Default for ScaleToVerdict {
    fn default() -> Self {
        ScaleToVerdict {
            enabled: false,
            factor: 0.1,
            max_steps: 40,
        }
    }
}

/// `[boundary]`: inlet/outlet data, surroundings and cell voltage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Inlet speed [m/s].
    pub u_in: f64,
    pub profile: InletProfile,
    /// Inlet densities of species 1 and 2 [kg/m^3].
    pub rho_in: [f64; 2],
    pub rho_out: [f64; 2],
    /// Inlet and outlet temperatures [K].
    pub theta_in: f64,
    pub theta_out: f64,
    /// Temperature of the surroundings [K].
    pub theta_e: f64,
    /// Cell voltage [V].
    pub e_cell: f64,
    /// Lifting of the scalar inlet/outlet data along the channel.
    pub lifting: ScalarLifting,
    pub scale_to_verdict: ScaleToVerdict,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        let d = desk_boundary_data();
        BoundaryConfig {
            u_in: d.u_in,
            profile: d.profile,
            rho_in: d.rho_in,
            rho_out: d.rho_out,
            theta_in: d.theta_in,
            theta_out: d.theta_out,
            theta_e: d.theta_e,
            e_cell: d.e_cell,
            lifting: ScalarLifting::default(),
            scale_to_verdict: ScaleToVerdict::default(),
        }
    }
}

impl BoundaryConfig {
    pub fn data(&self) -> BoundaryData {
        BoundaryData {
            u_in: self.u_in,
            profile: self.profile,
            rho_in: self.rho_in,
            rho_out: self.rho_out,
            theta_in: self.theta_in,
            theta_out: self.theta_out,
            theta_e: self.theta_e,
            e_cell: self.e_cell,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    #[default]
    Fixed,
    Optimize,
}

/// Where the Korn constant comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KornSource {
    /// `"estimate"`: Lanczos on the run mesh, times 1.1.
    Named(KornKeyword),
    Value(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KornKeyword {
    Estimate,
}

/// `[ledger]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub epsilon_mode: EpsilonMode,
    /// Used as is in `fixed` mode.
    pub epsilon: EpsilonVector,
    pub objective: EpsilonObjective,
    pub search: SearchOptions,
    pub c_k: KornSource,
    pub options: LedgerOptions,
    /// Interface measures [m] spanned by the slip-coefficient arithmetic.
    pub slip_gamma_range: [f64; 2],
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig {
            epsilon_mode: EpsilonMode::Fixed,
            epsilon: EpsilonVector::default(),
            objective: EpsilonObjective::default(),
            search: SearchOptions::default(),
            c_k: KornSource::Named(KornKeyword::Estimate),
            options: LedgerOptions::default(),
            slip_gamma_range: [9e-4, 1e-2],
        }
    }
}

/// `[hypotheses]`: sampling of the structural hypotheses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesesConfig {
    pub samples: usize,
    pub sampling_box: SamplingBox,
}

impl Default for HypothesesConfig {
    fn default() -> Self {
        HypothesesConfig {
            samples: 2000,
            sampling_box: SamplingBox::default(),
        }
    }
}

/// `[inequalities]`: the certification suite has its own mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalityConfig {
    pub nx: usize,
    pub ny: usize,
    /// Random samples per case.
    pub samples: usize,
    /// Allowed excess of the worst ratio over one.
    pub slack: f64,
}

impl Default for InequalityConfig {
    fn default() -> Self {
        InequalityConfig {
            nx: 32,
            ny: 128,
            samples: 1000,
            slack: 1e-10,
        }
    }
}

/// `[convergence]`: the manufactured-solution study on the unit test cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub nx: usize,
    pub ny: usize,
    /// Meshes in the sweep, each a dyadic refinement of the previous one.
    pub levels: usize,
    pub min_order: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            nx: 2,
            ny: 4,
            levels: 4,
            min_order: 1.8,
        }
    }
}

/// `[output]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub fields_vtk: bool,
    pub probes_csv: bool,
    /// Height of the probe line as a fraction of the channel length.
    pub probe_y: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: "out".into(),
            fields_vtk: true,
            probes_csv: true,
            probe_y: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constants: PhysicalConstants,
    #[serde(default)]
    pub coefficients: CoefficientSet,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub solver: PicardConfig,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub hypotheses: HypothesesConfig,
    #[serde(default)]
    pub inequalities: InequalityConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// The desk cell with every default.
    pub fn desk() -> Self {
        RunConfig {
            geometry: GeometryConfig::default(),
            seed: 0,
            constants: PhysicalConstants::default(),
            coefficients: CoefficientSet::default(),
            boundary: BoundaryConfig::default(),
            solver: PicardConfig::default(),
            ledger: LedgerConfig::default(),
            hypotheses: HypothesesConfig::default(),
            inequalities: InequalityConfig::default(),
            convergence: ConvergenceConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parse and validate a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved document.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("every field has a TOML representation")
    }

    /// All violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.geometry.spec().validate() {
            errs.push(e.to_string());
        }
        let nx = self.geometry.nx.counts();
        if nx.iter().any(|&n| n == 0) || self.geometry.ny == 0 {
            errs.push(format!("geometry: cell counts nx = {nx:?}, ny = {} must be positive", self.geometry.ny));
        }
        self.constants.validate(&mut errs);
        self.coefficients.validate(&mut errs);
        self.boundary.data().validate(&mut errs);
        let s = &self.boundary.scale_to_verdict;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            errs.push(format!("boundary.scale_to_verdict.factor = {} must lie in (0, 1)", s.factor));
        }
        if let Err(Error::Config(e)) = self.solver.validate() {
            errs.extend(e);
        }
        let l = &self.ledger;
        if l.epsilon_mode == EpsilonMode::Fixed && !l.epsilon.is_admissible() {
            errs.push(format!("ledger.epsilon = {:?} leaves the admissible box", l.epsilon.0));
        }
        if let KornSource::Value(c) = l.c_k {
            if !(c >= 1.0 && c.is_finite()) {
                errs.push(format!("ledger.c_k = {c} must be a finite number >= 1"));
            }
        }
        if !(l.options.m_r > 0.0) {
            errs.push(format!("ledger.options.m_r = {} must be positive", l.options.m_r));
        }
        if !(l.search.floor > 0.0) || l.search.starts == 0 {
            errs.push("ledger.search needs floor > 0 and at least one start".into());
        }
        let [g0, g1] = l.slip_gamma_range;
        if !(g0 > 0.0 && g0 <= g1 && g1.is_finite()) {
            errs.push(format!("ledger.slip_gamma_range = [{g0}, {g1}] must be positive and ordered"));
        }
        let h = &self.hypotheses;
        if h.samples == 0 {
            errs.push("hypotheses.samples must be positive".into());
        }
        for (k, [a, b]) in [
            ("theta", h.sampling_box.theta),
            ("rho", h.sampling_box.rho),
            ("pressure", h.sampling_box.pressure),
        ] {
            if !(a <= b) {
                errs.push(format!("hypotheses.sampling_box.{k} = [{a}, {b}] is not ordered"));
            }
        }
        let q = &self.inequalities;
        if q.nx == 0 || q.ny == 0 || q.samples == 0 || !(q.slack >= 0.0) {
            errs.push("inequalities needs positive nx, ny, samples and a nonnegative slack".into());
        }
        let c = &self.convergence;
        if c.nx == 0 || c.ny == 0 || c.levels < 2 {
            errs.push("convergence needs positive nx, ny and at least two levels".into());
        }
        if !(0.0..=1.0).contains(&self.output.probe_y) {
            errs.push(format!("output.probe_y = {} must lie in [0, 1]", self.output.probe_y));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Read, parse and validate a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_only_resolves_to_defaults() {
        let a = RunConfig::from_toml_str("[geometry]\nny = 16\n").unwrap();
        let mut want = RunConfig::desk();
        want.geometry.ny = 16;
        assert_eq!(a, want);
        let b = RunConfig::from_toml_str("[geometry]\nny = 16\n").unwrap();
        assert_eq!(a.to_toml_string(), b.to_toml_string());
    }

    #[test]
    fn resolved_document_round_trips() {
        let mut c = RunConfig::desk();
        c.geometry.nx = StripCells::PerStrip([4, 2, 3, 2, 4]);
        c.ledger.c_k = KornSource::Value(4.5);
        c.ledger.epsilon_mode = EpsilonMode::Optimize;
        c.boundary.scale_to_verdict.enabled = true;
        let text = c.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn unknown_keys_and_missing_geometry_are_rejected() {
        let e = RunConfig::from_toml_str("[geometry]\n[solver]\ntoll = 1e-8\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("toll") && msg.contains("line 3"), "{msg}");
        assert!(RunConfig::from_toml_str("seed = 3\n").is_err());
    }

    #[test]
    fn bound_violations_are_listed_together() {
        let text = "[geometry]\nl_m = -1.0\n[coefficients.mu]\nmodel = { kind = \"constant\", value = 4e-5 }\nlower = 5e-5\nupper = 4e-5\n[solver]\nomega = 2.0\n";
        let Error::Config(errs) = RunConfig::from_toml_str(text).unwrap_err() else {
            panic!("expected a configuration error")
        };
        assert!(errs.iter().any(|e| e.contains("(H1)") && e.contains("mu")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("l_m")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("omega")), "{errs:?}");
    }

    #[test]
    fn korn_source_spellings() {
        let c = RunConfig::from_toml_str("[geometry]\n[ledger]\nc_k = \"estimate\"\n").unwrap();
        assert_eq!(c.ledger.c_k, KornSource::Named(KornKeyword::Estimate));
        let c = RunConfig::from_toml_str("[geometry]\n[ledger]\nc_k = 3.0\n").unwrap();
        assert_eq!(c.ledger.c_k, KornSource::Value(3.0));
        assert!(RunConfig::from_toml_str("[geometry]\n[ledger]\nc_k = 0.5\n").is_err());
    }
}
