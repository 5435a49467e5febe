//! Experiment configuration: the TOML the user writes and the fully resolved
//! form every command echoes next to its outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use viscohom::constitutive::StepScheme;
use viscohom::datagen::{DatasetSpec, Labeler, MuConfig};
use viscohom::material::{piecewise_approximate, KvLayer, MaterialProfile, SlsLayer};
use viscohom::microsolver::{Boundary, SimConfig};
use viscohom::nn::{HiddenTarget, Init, LossKind, ProbeGrid, TrainConfig, DEFAULT_HIDDEN};
use viscohom::signal::{IntegratedPath, Signal};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub material: MaterialSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub dt_robustness: DtSection,
    #[serde(default)]
    pub probe: ProbeGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialKind {
    /// Two equal layers, `E = (1, 3)`, `nu = (0.1, 0.2)`.
    TwoPiece,
    /// Smooth tanh profile.
    Tanh,
    /// Layers `[length, E, nu]`.
    PiecewiseKv,
    /// Layers `[length, E1, E2, nu]`.
    PiecewiseSls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSection {
    pub kind: MaterialKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<Vec<f64>>,
    /// Layers used to homogenize a smooth profile.
    #[serde(default = "default_pieces")]
    pub pieces: usize,
}

fn default_pieces() -> usize {
    64
}

impl Default for MaterialSection {
    fn default() -> Self {
        Self { kind: MaterialKind::TwoPiece, layers: Vec::new(), pieces: default_pieces() }
    }
}

impl MaterialSection {
    pub fn profile(&self) -> Result<MaterialProfile> {
        let width = |n: usize| -> Result<()> {
            if self.layers.is_empty() {
                bail!("material.layers must list at least one layer");
            }
            if let Some(l) = self.layers.iter().find(|l| l.len() != n) {
                bail!("each material layer needs {n} numbers, got {l:?}");
            }
            Ok(())
        };
        Ok(match self.kind {
            MaterialKind::TwoPiece => MaterialProfile::two_piece_reference(),
            MaterialKind::Tanh => MaterialProfile::tanh_reference(),
            MaterialKind::PiecewiseKv => {
                width(3)?;
                let layers: Vec<KvLayer> = self.layers.iter().map(|l| KvLayer::new(l[0], l[1], l[2])).collect();
                MaterialProfile::piecewise_kv(&layers)?
            }
            MaterialKind::PiecewiseSls => {
                width(4)?;
                let layers: Vec<SlsLayer> =
                    self.layers.iter().map(|l| SlsLayer::new(l[0], l[1], l[2], l[3])).collect();
                MaterialProfile::piecewise_sls(&layers)?
            }
        })
    }

    /// The profile with finitely many poles that homogenization works on.
    pub fn layered_profile(&self) -> Result<MaterialProfile> {
        let profile = self.profile()?;
        match &profile {
            MaterialProfile::AnalyticKv(a) => Ok(piecewise_approximate(a, self.pieces)?),
            _ => Ok(profile),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Inaccessible loss, 400 trajectories, 1500 epochs.
    #[default]
    A,
    /// Inaccessible phase then accessible phase on 200 short trajectories.
    B,
    /// Accessible loss, 500 trajectories, 3000 epochs.
    C,
    /// Smooth material labelled by the cell solver.
    D,
    /// Protocol A scaled down to 40 trajectories and 150 epochs.
    Desk,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub fine_dt: Option<f64>,
    pub t_final: Option<f64>,
    pub n_pieces: Option<usize>,
    pub step_scale: Option<f64>,
    pub labeler: Option<Labeler>,
    /// Existing dataset to train on instead of generating one.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub loss: Option<LossKind>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub protocol: Option<Protocol>,
    pub hidden: Option<Vec<usize>>,
    pub l0: Option<usize>,
    pub use_strain_rate: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub loss: Option<LossKind>,
    pub hidden_target: Option<HiddenTarget>,
    pub test_fraction: Option<f64>,
    /// Start from these weights instead of a random draw.
    pub init_weights: Option<PathBuf>,
    /// Second phase of a two-phase protocol.
    pub second_phase: Option<PhaseSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Fem,
    MacroAnalytic,
    MacroSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    /// `b(t) = 0.1 sin(2 pi t)`.
    #[default]
    Sinusoidal,
    /// Integrated Brownian motion.
    Brownian,
    Zero,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub backend: Option<Backend>,
    pub preset: Option<Forcing>,
    pub weights: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub t_final: Option<f64>,
    pub h: Option<f64>,
    pub dt: Option<f64>,
    pub rho: Option<f64>,
    pub output_stride: Option<usize>,
    pub scheme: Option<StepScheme>,
    pub brownian_amplitude: Option<f64>,
    pub brownian_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtSection {
    pub dts: Option<Vec<f64>>,
    /// Step the weights were trained at; inflation is measured against it.
    pub reference_dt: Option<f64>,
    pub weights: Option<PathBuf>,
}

/// Everything a command needs, defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub material: MaterialSection,
    pub data: ResolvedData,
    pub train: ResolvedTrain,
    pub simulate: ResolvedSimulate,
    pub dt_robustness: ResolvedDt,
    pub probe: ProbeGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedData {
    pub spec: DatasetSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedTrain {
    pub protocol: Protocol,
    pub hidden: Vec<usize>,
    pub l0: usize,
    pub use_strain_rate: bool,
    pub phase: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_phase: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSimulate {
    pub backend: Backend,
    pub preset: Forcing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedDt {
    pub dts: Vec<f64>,
    pub reference_dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

struct DataPreset {
    n: usize,
    t_final: f64,
    fine_dt: f64,
    labeler: Labeler,
}

fn data_preset(protocol: Protocol) -> DataPreset {
    let analytic = |n, t_final| DataPreset { n, t_final, fine_dt: 0.001, labeler: Labeler::Analytic2Piece };
    match protocol {
        Protocol::A => analytic(400, 4.0),
        Protocol::B => analytic(200, 2.0),
        Protocol::C => analytic(500, 4.0),
        Protocol::Desk => analytic(40, 4.0),
        // 200 cell nodes with dt = h^2
        Protocol::D => DataPreset { n: 500, t_final: 4.0, fine_dt: 2.5e-5, labeler: Labeler::CellFd { n_nodes: 200 } },
    }
}

fn phase_preset(protocol: Protocol, seed: u64) -> (TrainConfig, Option<TrainConfig>) {
    let base = TrainConfig { seed, ..TrainConfig::default() };
    let with = |epochs, batch_size, loss| TrainConfig { epochs, batch_size, loss, ..base.clone() };
    match protocol {
        Protocol::A => (with(1500, 50, LossKind::Inaccessible), None),
        Protocol::B => (
            with(1500, 40, LossKind::Inaccessible),
            Some(TrainConfig { init: Init::FromParams, ..with(1000, 40, LossKind::Accessible) }),
        ),
        Protocol::C | Protocol::D => (with(3000, 50, LossKind::Accessible), None),
        Protocol::Desk => (with(150, 10, LossKind::Inaccessible), None),
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be positive and finite, got {v}");
    }
    Ok(())
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Fills every default and validates the result.
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Resolved> {
        let seed = seed_override.or(self.seed).unwrap_or(0);
        let t = &self.train;
        let protocol = t.protocol.unwrap_or_default();

        let preset = data_preset(protocol);
        let d = &self.data;
        let spec = DatasetSpec {
            n: d.n.unwrap_or(preset.n),
            dt: d.dt.unwrap_or(0.004),
            fine_dt: d.fine_dt.unwrap_or(preset.fine_dt),
            labeler: d.labeler.unwrap_or(preset.labeler),
            mu: MuConfig {
                t_final: d.t_final.unwrap_or(preset.t_final),
                n_pieces: d.n_pieces.unwrap_or(MuConfig::default().n_pieces),
                step_scale: d.step_scale.unwrap_or(MuConfig::default().step_scale),
                seed,
            },
        };
        spec.mu.validate()?;
        check_positive("data.dt", spec.dt)?;
        check_positive("data.fine_dt", spec.fine_dt)?;

        let (mut phase, mut second) = phase_preset(protocol, seed);
        phase.epochs = t.epochs.unwrap_or(phase.epochs);
        phase.batch_size = t.batch_size.unwrap_or(phase.batch_size);
        phase.learning_rate = t.learning_rate.unwrap_or(phase.learning_rate);
        phase.beta1 = t.beta1.unwrap_or(phase.beta1);
        phase.beta2 = t.beta2.unwrap_or(phase.beta2);
        phase.epsilon = t.epsilon.unwrap_or(phase.epsilon);
        phase.loss = t.loss.unwrap_or(phase.loss);
        phase.hidden_target = t.hidden_target.unwrap_or(phase.hidden_target);
        phase.test_fraction = t.test_fraction.unwrap_or(phase.test_fraction);
        if t.init_weights.is_some() {
            phase.init = Init::FromParams;
        }
        if let Some(p) = &t.second_phase {
            let mut s = second.unwrap_or_else(|| TrainConfig { init: Init::FromParams, ..phase.clone() });
            s.epochs = p.epochs.unwrap_or(s.epochs);
            s.batch_size = p.batch_size.unwrap_or(s.batch_size);
            s.learning_rate = p.learning_rate.unwrap_or(s.learning_rate);
            s.loss = p.loss.unwrap_or(s.loss);
            s.hidden_target = phase.hidden_target;
            s.test_fraction = phase.test_fraction;
            second = Some(s);
        }
        phase.validate()?;
        if let Some(s) = &second {
            s.validate()?;
        }
        let train = ResolvedTrain {
            protocol,
            hidden: t.hidden.clone().unwrap_or_else(|| DEFAULT_HIDDEN.to_vec()),
            l0: t.l0.unwrap_or(1),
            use_strain_rate: t.use_strain_rate.unwrap_or(true),
            phase,
            second_phase: second,
            init_weights: t.init_weights.clone(),
        };

        let material = match (protocol, &self.material) {
            // protocol D trains on the smooth profile unless told otherwise
            (Protocol::D, m) if *m == MaterialSection::default() => {
                MaterialSection { kind: MaterialKind::Tanh, ..MaterialSection::default() }
            }
            (_, m) => m.clone(),
        };
        material.profile()?;

        let simulate = self.simulate.resolve(seed)?;
        let dt_robustness = ResolvedDt {
            dts: self.dt_robustness.dts.clone().unwrap_or_else(|| vec![0.002, 0.004, 0.008, 0.016]),
            reference_dt: self.dt_robustness.reference_dt.unwrap_or(spec.dt),
            weights: self.dt_robustness.weights.clone(),
        };
        if dt_robustness.dts.is_empty() {
            bail!("dt_robustness.dts must not be empty");
        }
        for &dt in &dt_robustness.dts {
            check_positive("dt_robustness.dts entry", dt)?;
        }

        Ok(Resolved {
            seed,
            material,
            data: ResolvedData { spec, dir: d.dir.clone() },
            train,
            simulate,
            dt_robustness,
            probe: self.probe.clone(),
        })
    }
}

impl SimulateSection {
    fn resolve(&self, seed: u64) -> Result<ResolvedSimulate> {
        let backend = self.backend.unwrap_or_default();
        let preset = self.preset.unwrap_or_default();
        let t_final = self.t_final.unwrap_or(4.0);
        let mut cfg = match backend {
            Backend::Fem => SimConfig::fem_sinusoidal(self.epsilon.unwrap_or(0.04), t_final),
            Backend::MacroAnalytic | Backend::MacroSurrogate => SimConfig::macro_sinusoidal(t_final),
        };
        cfg.boundary = match preset {
            Forcing::Sinusoidal => cfg.boundary,
            Forcing::Zero => Boundary::default(),
            Forcing::Brownian => {
                let amplitude = self.brownian_amplitude.unwrap_or(0.025);
                let step = self.brownian_step.unwrap_or(0.01);
                let path = IntegratedPath::brownian(amplitude, t_final, step, seed)?;
                Boundary { left: 0.0, right: Signal::IntegratedNoise(path) }
            }
        };
        if let Some(h) = self.h {
            cfg.h = h;
            // keep the preset's dt / h^2 ratio unless dt is given
            if self.dt.is_none() {
                cfg.dt = match backend {
                    Backend::Fem => 0.1 * h * h,
                    _ => 0.4 * h * h,
                };
            }
        }
        cfg.dt = self.dt.unwrap_or(cfg.dt);
        cfg.rho = self.rho.unwrap_or(cfg.rho);
        cfg.output_stride = self.output_stride.unwrap_or(cfg.output_stride);
        cfg.scheme = self.scheme.unwrap_or(cfg.scheme);
        if backend != Backend::Fem {
            cfg.epsilon = None;
        } else if let Some(eps) = self.epsilon {
            cfg.epsilon = Some(eps);
        }
        cfg.element_count()?;
        cfg.step_count()?;
        Ok(ResolvedSimulate { backend, preset, weights: self.weights.clone(), config: cfg })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_protocol_a() {
        let r = RawConfig::parse("").unwrap().resolve(None).unwrap();
        assert_eq!(r.seed, 0);
        assert_eq!(r.data.spec.n, 400);
        assert_eq!(r.train.phase.epochs, 1500);
        assert_eq!(r.train.phase.loss, LossKind::Inaccessible);
        assert_eq!(r.train.hidden, vec![100, 100, 100]);
        assert_eq!(r.simulate.config, SimConfig::fem_sinusoidal(0.04, 4.0));
        assert_eq!(r.dt_robustness.dts, vec![0.002, 0.004, 0.008, 0.016]);
    }

    #[test]
    fn explicit_fields_override_presets() {
        let text = r#"
            seed = 5
            [data]
            n = 12
            [train]
            protocol = "b"
            epochs = 7
            [train.second_phase]
            epochs = 3
        "#;
        let r = RawConfig::parse(text).unwrap().resolve(Some(9)).unwrap();
        assert_eq!(r.seed, 9);
        assert_eq!(r.data.spec.mu.seed, 9);
        assert_eq!(r.data.spec.mu.t_final, 2.0);
        assert_eq!(r.data.spec.n, 12);
        assert_eq!(r.train.phase.epochs, 7);
        let second = r.train.second_phase.unwrap();
        assert_eq!((second.epochs, second.batch_size, second.loss), (3, 40, LossKind::Accessible));
    }

    #[test]
    fn protocol_d_uses_smooth_material_and_cell_labels() {
        let r = RawConfig::parse("[train]\nprotocol = \"d\"").unwrap().resolve(None).unwrap();
        assert_eq!(r.material.kind, MaterialKind::Tanh);
        assert_eq!(r.data.spec.labeler, Labeler::CellFd { n_nodes: 200 });
        assert_eq!(r.train.phase.loss, LossKind::Accessible);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RawConfig::parse("[data]\nsize = 3").is_err());
        assert!(RawConfig::parse("[train]\nbatch_size = 0").unwrap().resolve(None).is_err());
        let layers = "[material]\nkind = \"piecewise_kv\"\nlayers = [[0.5, 1.0]]";
        assert!(RawConfig::parse(layers).unwrap().resolve(None).is_err());
    }

    #[test]
    fn macro_backends_drop_epsilon() {
        let r = RawConfig::parse("[simulate]\nbackend = \"macro_analytic\"\nt_final = 2.0").unwrap().resolve(None).unwrap();
        assert_eq!(r.simulate.config, SimConfig::macro_sinusoidal(2.0));
    }

    #[test]
    fn resolved_config_serializes() {
        let r = RawConfig::parse("[simulate]\npreset = \"brownian\"").unwrap().resolve(Some(3)).unwrap();
        let text = toml::to_string(&r).unwrap();
        assert!(text.contains("seed = 3"));
        assert!(text.contains("integrated_noise"));
    }
}
