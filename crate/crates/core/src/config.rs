//! TOML experiment files. Physical quantities are given in Hz, s and mT and
//! converted to rad/us and us.

use std::path::Path;

use serde::Deserialize;

use crate::campaign::SweepSpec;
use crate::eig::{BatchPolicy, BatchWeighting, ControlGrid, Utility};
use crate::error::{Error, Result};
use crate::models::{
    hz_to_rad_per_us, AcFieldParams, AcModel, AcModelConfig, LikelihoodModel, ModelKind, NuclearModel,
    NuclearModelConfig, NuclearSpinParams, ReadoutFidelity, SensingModel,
};
use crate::orchestrator::{ComputeModel, Mode, RunConfig, DEFAULT_CHECKPOINTS};
use crate::sim::GroundTruth;
use crate::smc::ResamplerConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    grid: GridSection,
    #[serde(default)]
    truth: TruthSection,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    campaign: CampaignSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    kind: Option<ModelKind>,
    n_spins: Option<usize>,
    larmor_hz: Option<f64>,
    t2_s: Option<f64>,
    readout_p0: Option<f64>,
    readout_p1: Option<f64>,
    hyperfine_min_hz: Option<f64>,
    hyperfine_max_hz: Option<f64>,
    frequency_min_hz: Option<f64>,
    frequency_max_hz: Option<f64>,
    ratio_min: Option<f64>,
    ratio_max: Option<f64>,
    bessel_order: Option<usize>,
    gamma_hz_per_mt: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    tau_min_s: Option<f64>,
    tau_max_s: Option<f64>,
    tau_step_s: Option<f64>,
    taus_s: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthSection {
    hyperfine_hz: Option<Vec<f64>>,
    theta_deg: Option<Vec<f64>>,
    frequency_hz: Option<f64>,
    field_mt: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    mode: Option<Mode>,
    shots: Option<usize>,
    particles: Option<usize>,
    batch: Option<usize>,
    delay: Option<usize>,
    sharpening: Option<f64>,
    weighting: Option<BatchWeighting>,
    utility: Option<Utility>,
    liu_west_a: Option<f64>,
    ess_fraction: Option<f64>,
    remap: Option<bool>,
    stop_rel_uncertainty: Option<f64>,
    checkpoints: Option<Vec<usize>>,
    overhead_s: Option<f64>,
    optimizer_evals_per_s: Option<f64>,
    optimizer_fixed_s: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignSection {
    modes: Option<Vec<Mode>>,
    n_bench: Option<usize>,
    points: Option<usize>,
    ratio_points: Option<usize>,
    frequency_min_hz: Option<f64>,
    frequency_max_hz: Option<f64>,
    ratio_min: Option<f64>,
    ratio_max: Option<f64>,
    repetitions: Option<usize>,
    workers: Option<usize>,
}

/// How campaign ground truths are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthSource {
    Sweep(SweepSpec),
    /// The configured truth repeated with independent shot seeds.
    Repeat(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub modes: Vec<Mode>,
    pub source: TruthSource,
    pub workers: usize,
}

/// Everything needed for a run or a campaign, in internal units.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: SensingModel,
    pub grid: ControlGrid,
    /// Truth for single runs and repeated campaigns.
    pub truth: GroundTruth,
    pub run: RunConfig,
    pub campaign: CampaignConfig,
}

fn s_to_us(s: f64) -> f64 {
    s * 1e6
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && !v.is_nan() {
        Ok(v)
    } else {
        Err(Error::config(format!("`{name}` must be positive, got {v}")))
    }
}

/// Default configuration of a model kind.
pub fn defaults(kind: ModelKind) -> Result<ExperimentConfig> {
    let text = match kind {
        ModelKind::Nuclear => "[model]\nkind = \"nuclear\"\n",
        ModelKind::Ac => "[model]\nkind = \"ac\"\n",
    };
    parse_config(text)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(message) => Error::Parse { path: path.to_path_buf(), message },
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: FileConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    let seed = file.seed.unwrap_or(0);
    let kind = file.model.kind.unwrap_or(ModelKind::Nuclear);
    let m = &file.model;
    let fidelity = ReadoutFidelity::new(m.readout_p0.unwrap_or(1.0), m.readout_p1.unwrap_or(1.0))?;

    let model = match kind {
        ModelKind::Nuclear => {
            let n_spins = m.n_spins.or(file.truth.hyperfine_hz.as_ref().map(Vec::len)).unwrap_or(2);
            let mut cfg = NuclearModelConfig::with_spins(n_spins);
            cfg.fidelity = fidelity;
            if let Some(v) = m.larmor_hz {
                cfg.omega_l = hz_to_rad_per_us(positive("larmor_hz", v)?);
            }
            if let Some(v) = m.t2_s {
                cfg.t2 = s_to_us(positive("t2_s", v)?);
            }
            if let Some(v) = m.hyperfine_min_hz {
                cfg.omega_h_min = hz_to_rad_per_us(v);
            }
            if let Some(v) = m.hyperfine_max_hz {
                cfg.omega_h_max = hz_to_rad_per_us(v);
            }
            SensingModel::Nuclear(NuclearModel::new(cfg)?)
        }
        ModelKind::Ac => {
            let mut cfg = AcModelConfig { fidelity, ..AcModelConfig::default() };
            if let Some(v) = m.t2_s {
                cfg.t2 = s_to_us(positive("t2_s", v)?);
            }
            if let Some(v) = m.frequency_min_hz {
                cfg.omega_min = hz_to_rad_per_us(v);
            }
            if let Some(v) = m.frequency_max_hz {
                cfg.omega_max = hz_to_rad_per_us(v);
            }
            if let Some(v) = m.ratio_min {
                cfg.ratio_min = v;
            }
            if let Some(v) = m.ratio_max {
                cfg.ratio_max = v;
            }
            if let Some(v) = m.bessel_order {
                cfg.bessel_order = v;
            }
            if let Some(v) = m.gamma_hz_per_mt {
                cfg.gamma = hz_to_rad_per_us(positive("gamma_hz_per_mt", v)?);
            }
            SensingModel::Ac(AcModel::new(cfg)?)
        }
    };

    let g = &file.grid;
    let grid = match &g.taus_s {
        Some(taus) => ControlGrid::from_taus(taus.iter().map(|t| s_to_us(*t)).collect())?,
        None => {
            let (lo, hi) = match kind {
                ModelKind::Nuclear => (1.0, 10.0),
                ModelKind::Ac => (0.51, 7.0),
            };
            ControlGrid::uniform(
                g.tau_min_s.map(s_to_us).unwrap_or(lo),
                g.tau_max_s.map(s_to_us).unwrap_or(hi),
                g.tau_step_s.map(s_to_us).unwrap_or(0.01),
            )?
        }
    };

    let t = &file.truth;
    let truth = match &model {
        SensingModel::Nuclear(nm) => {
            let n = nm.config().n_spins;
            let omega: Vec<f64> = match &t.hyperfine_hz {
                Some(v) => v.iter().map(|h| hz_to_rad_per_us(*h)).collect(),
                None => [47.0e3, 83.8e3, 65.0e3].iter().cycle().take(n).map(|h| hz_to_rad_per_us(*h)).collect(),
            };
            let theta: Vec<f64> = match &t.theta_deg {
                Some(v) => v.iter().map(|d| d.to_radians()).collect(),
                None => [30.0f64, 21.0, 45.0].iter().cycle().take(n).map(|d| d.to_radians()).collect(),
            };
            if omega.len() != n || theta.len() != n {
                return Err(Error::config(format!("truth needs {n} hyperfine values and {n} angles")));
            }
            let mut params = NuclearSpinParams::new(omega, theta)?.to_location();
            model.canonicalize(&mut params);
            GroundTruth { kind, params, seed }
        }
        SensingModel::Ac(am) => {
            let omega = hz_to_rad_per_us(t.frequency_hz.unwrap_or(500.0e3));
            let b = t.field_mt.unwrap_or(0.1 * omega / am.config().gamma);
            GroundTruth::ac(AcFieldParams { omega, b }, seed)
        }
    };
    if !model.contains(&truth.params) {
        return Err(Error::config("truth lies outside the prior support"));
    }

    let r = &file.run;
    let n_batch = r.batch.unwrap_or(match kind {
        ModelKind::Nuclear => 15,
        ModelKind::Ac => 30,
    });
    let mut batch = BatchPolicy::new(n_batch);
    batch.p_exponent = r.sharpening.unwrap_or(batch.p_exponent);
    batch.weighting = r.weighting.unwrap_or_default();
    let resampler = ResamplerConfig {
        a: r.liu_west_a.unwrap_or(0.98),
        ess_threshold_fraction: r.ess_fraction.unwrap_or(0.5),
        remap: r.remap.unwrap_or(true),
    };
    let run = RunConfig {
        mode: r.mode.unwrap_or(Mode::Sync),
        n_shot_max: r.shots.unwrap_or(1050),
        n_p: r.particles.unwrap_or(3200),
        batch,
        delay_t: r.delay.unwrap_or(n_batch),
        utility: r.utility.unwrap_or_default(),
        resampler,
        stop_rel_uncertainty: r.stop_rel_uncertainty,
        checkpoints: r.checkpoints.clone().unwrap_or_else(|| DEFAULT_CHECKPOINTS.to_vec()),
        overhead_us: s_to_us(r.overhead_s.unwrap_or(0.0)),
        compute: ComputeModel {
            evals_per_s: r.optimizer_evals_per_s.unwrap_or(ComputeModel::default().evals_per_s),
            fixed_us: s_to_us(r.optimizer_fixed_s.unwrap_or(0.0)),
        },
        seed,
    };
    run.validate()?;

    let c = &file.campaign;
    let source = match c.repetitions {
        Some(n) if n > 0 => TruthSource::Repeat(n),
        Some(_) => return Err(Error::config("repetitions must be at least 1")),
        None => {
            let mut spec = match &model {
                SensingModel::Nuclear(nm) => SweepSpec::nuclear(nm.config().n_spins),
                SensingModel::Ac(_) => SweepSpec::ac(),
            };
            if let Some(v) = c.points {
                spec.freq_points = v;
            }
            if let Some(v) = c.ratio_points {
                spec.ratio_points = v;
            }
            if let Some(v) = c.frequency_min_hz {
                spec.freq_range_hz[0] = v;
            }
            if let Some(v) = c.frequency_max_hz {
                spec.freq_range_hz[1] = v;
            }
            if let Some(v) = c.ratio_min {
                spec.ratio_range[0] = v;
            }
            if let Some(v) = c.ratio_max {
                spec.ratio_range[1] = v;
            }
            match c.n_bench {
                Some(n) => spec.n_bench = n,
                None => spec.n_bench = spec.n_bench.min(spec.grid_size()?),
            }
            spec.validate()?;
            TruthSource::Sweep(spec)
        }
    };
    let campaign = CampaignConfig {
        modes: c.modes.clone().unwrap_or_else(|| vec![Mode::Sync, Mode::Nonadaptive]),
        source,
        workers: c.workers.unwrap_or(1),
    };
    if campaign.modes.is_empty() {
        return Err(Error::config("campaign needs at least one mode"));
    }

    Ok(ExperimentConfig { seed, model, grid, truth, run, campaign })
}

impl ExperimentConfig {
    /// Overrides the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.run.seed = seed;
        self.truth.seed = seed;
    }

    /// Flat description for the run manifest.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("model.kind".to_string(), self.model.kind().to_string()),
            ("grid.len".to_string(), self.grid.len().to_string()),
            ("grid.tau_min_us".to_string(), self.grid.taus()[0].to_string()),
            ("grid.tau_max_us".to_string(), self.grid.taus()[self.grid.len() - 1].to_string()),
            ("truth.params".to_string(), join(&self.truth.params)),
            ("run.mode".to_string(), self.run.mode.to_string()),
            ("run.n_shot_max".to_string(), self.run.n_shot_max.to_string()),
            ("run.n_p".to_string(), self.run.n_p.to_string()),
            ("run.n_batch".to_string(), self.run.batch.n_batch.to_string()),
            ("run.p_exponent".to_string(), self.run.batch.p_exponent.to_string()),
            ("run.weighting".to_string(), format!("{:?}", self.run.batch.weighting)),
            ("run.utility".to_string(), format!("{:?}", self.run.utility)),
            ("run.delay_t".to_string(), self.run.delay_t.to_string()),
            ("run.liu_west_a".to_string(), self.run.resampler.a.to_string()),
            ("run.ess_fraction".to_string(), self.run.resampler.ess_threshold_fraction.to_string()),
            ("run.remap".to_string(), self.run.resampler.remap.to_string()),
            ("run.overhead_us".to_string(), self.run.overhead_us.to_string()),
            ("run.optimizer_evals_per_s".to_string(), self.run.compute.evals_per_s.to_string()),
            ("run.optimizer_fixed_us".to_string(), self.run.compute.fixed_us.to_string()),
            (
                "run.stop_rel_uncertainty".to_string(),
                self.run.stop_rel_uncertainty.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
            ),
        ];
        match &self.model {
            SensingModel::Nuclear(m) => {
                let c = m.config();
                out.push(("model.n_spins".into(), c.n_spins.to_string()));
                out.push(("model.omega_l_rad_per_us".into(), c.omega_l.to_string()));
                out.push(("model.t2_us".into(), c.t2.to_string()));
                out.push(("model.readout".into(), format!("{},{}", c.fidelity.p0, c.fidelity.p1)));
                out.push(("model.omega_h_bounds".into(), format!("{},{}", c.omega_h_min, c.omega_h_max)));
            }
            SensingModel::Ac(m) => {
                let c = m.config();
                out.push(("model.gamma_rad_per_us_per_mt".into(), c.gamma.to_string()));
                out.push(("model.t2_us".into(), c.t2.to_string()));
                out.push(("model.readout".into(), format!("{},{}", c.fidelity.p0, c.fidelity.p1)));
                out.push(("model.omega_bounds".into(), format!("{},{}", c.omega_min, c.omega_max)));
                out.push(("model.ratio_bounds".into(), format!("{},{}", c.ratio_min, c.ratio_max)));
                out.push(("model.bessel_order".into(), c.bessel_order.to_string()));
            }
        }
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nuclear_defaults() {
        let c = defaults(ModelKind::Nuclear).unwrap();
        assert_eq!(c.grid.len(), 901);
        assert_eq!(c.run.n_p, 3200);
        assert_eq!(c.run.batch.n_batch, 15);
        assert_eq!(c.model.dim(), 4);
        match &c.campaign.source {
            TruthSource::Sweep(s) => assert_eq!(s.n_bench, 900),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ac_defaults() {
        let c = defaults(ModelKind::Ac).unwrap();
        assert_eq!(c.grid.len(), 650);
        assert_eq!(c.model.dim(), 2);
    }

    #[test]
    fn units_are_converted() {
        let c = parse_config(
            "seed = 3\n[model]\nkind = \"nuclear\"\nt2_s = 1e-3\n[truth]\nhyperfine_hz = [50e3]\ntheta_deg = [90]\n[grid]\ntau_min_s = 2e-6\ntau_max_s = 3e-6\ntau_step_s = 1e-7\n",
        )
        .unwrap();
        let SensingModel::Nuclear(m) = &c.model else { panic!() };
        assert!((m.config().t2 - 1000.0).abs() < 1e-9);
        assert_eq!(c.grid.len(), 11);
        assert!((c.truth.params[0] - hz_to_rad_per_us(50e3)).abs() < 1e-12);
        assert!((c.truth.params[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(c.run.seed, 3);
    }

    #[test]
    fn bad_files_are_config_errors() {
        assert!(matches!(parse_config("[run]\nshots = \"many\"\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("[bogus]\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("[run]\nbatch = 0\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("[model]\nreadout_p0 = 0.4\nreadout_p1 = 0.5\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("[campaign]\nn_bench = 5000\n"), Err(Error::Config(_))));
    }
}
