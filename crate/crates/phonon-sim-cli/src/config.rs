//! TOML run configuration. Every physical quantity carries its unit in the
//! key name; unknown keys are rejected.

use serde::{Deserialize, Serialize};

use phonon_sim::{
    BeamSplitterModel, CouplingParams, DetectionParams, DetectorMode, DetuningConfig, FockBasis,
    Frame, IntegratorConfig, ProtocolConfig, SweepAxis, SweepParameter, SystemParams,
    TimingParams, TruncationPolicy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prep: Option<PrepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning: Option<DetuningSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<SnapshotSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub omega1_hz: f64,
    pub omega2_hz: f64,
    pub gamma_hz: f64,
    pub t_env_k: f64,
    pub kappa_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass2_kg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub eta: f64,
    pub p: f64,
    pub dark: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub j_hz: f64,
    pub jc_over_j: f64,
    pub jh_over_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepSection {
    pub n_th1: f64,
    pub n_th2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub n1_max: usize,
    pub n2_max: usize,
}

/// Delay grid: either an explicit list or a uniform grid from 0 to
/// `tau_max_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_list_s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secular: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// "full-exchange" (default) or "three-level" (rotation blocks only for
    /// the lowest sectors).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam_splitter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub herald_max_order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis1_param: String,
    pub axis1_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis2_param: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis2_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetuningSection {
    pub delta_over_omega1: Vec<f64>,
    pub omega1_over_kappa: f64,
    pub omega2_over_omega1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSection {
    pub times_s: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restrict_n1: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub n_a: f64,
    pub n_p: f64,
    pub t12_s: f64,
    pub t_tot_s: f64,
    /// "single" or "two-detector".
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSection {
    pub tau_d_s: f64,
    pub tau_th_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub g1_hz: f64,
    pub t_s: Vec<f64>,
    pub n_cav: Vec<f64>,
}

/// Truncation-error policy. `preset = "permissive"` suits deliberately
/// truncated study bases (leakage reported, never fatal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thermal_tail_warn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak_warn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak_fail: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strict: Option<bool>,
}

/// Configuration-level failure; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}
impl std::error::Error for ConfigError {}

pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
    let cfg: ConfigFile =
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    if cfg.schema_version != 1 {
        return Err(ConfigError(format!(
            "unsupported schema_version {} (expected 1)",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

pub fn emit(cfg: &ConfigFile) -> String {
    toml::to_string_pretty(cfg).expect("config serialization cannot fail")
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, ConfigError> {
    section
        .as_ref()
        .ok_or_else(|| ConfigError(format!("missing required [{name}] section")))
}

impl ConfigFile {
    pub fn system_params(&self) -> Result<SystemParams, ConfigError> {
        let s = require(&self.system, "system")?;
        Ok(SystemParams {
            omega1_hz: s.omega1_hz,
            omega2_hz: s.omega2_hz,
            gamma_hz: s.gamma_hz,
            t_env_k: s.t_env_k,
            kappa_hz: s.kappa_hz,
            mass2_kg: s.mass2_kg,
        })
    }

    pub fn detection_params(&self) -> Result<DetectionParams, ConfigError> {
        let d = require(&self.detection, "detection")?;
        Ok(DetectionParams {
            eta: d.eta,
            p: d.p,
            dark: d.dark,
            eta1: d.eta1,
            eta2: d.eta2,
        })
    }

    pub fn coupling_params(&self) -> Result<CouplingParams, ConfigError> {
        let c = require(&self.coupling, "coupling")?;
        Ok(CouplingParams {
            j_hz: c.j_hz,
            jc_over_j: c.jc_over_j,
            jh_over_j: c.jh_over_j,
        })
    }

    pub fn fock_basis(&self) -> Result<FockBasis, ConfigError> {
        let b = require(&self.basis, "basis")?;
        FockBasis::new(b.n1_max, b.n2_max).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn tau_grid(&self) -> Result<Vec<f64>, ConfigError> {
        let g = require(&self.grid, "grid")?;
        match (&g.tau_list_s, g.tau_max_s, g.points) {
            (Some(list), None, None) => {
                if list.is_empty() {
                    Err(ConfigError("grid.tau_list_s is empty".into()))
                } else {
                    Ok(list.clone())
                }
            }
            (None, Some(max), Some(points)) if points >= 2 => Ok((0..points)
                .map(|i| max * i as f64 / (points - 1) as f64)
                .collect()),
            _ => Err(ConfigError(
                "grid needs either tau_list_s or both tau_max_s and points (>= 2)".into(),
            )),
        }
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig, ConfigError> {
        let system = self.system_params()?;
        let detection = self.detection_params()?;
        let coupling = self.coupling_params()?;
        let basis = self.fock_basis()?;
        let prep = require(&self.prep, "prep")?;
        let tau_grid = self.tau_grid()?;
        let mut config = ProtocolConfig::new(
            system,
            detection,
            coupling,
            [prep.n_th1, prep.n_th2],
            tau_grid,
            basis,
        );
        if let Some(integ) = &self.integrator {
            let mut ic = IntegratorConfig {
                step_s: integ.step_s.unwrap_or(config.integrator.step_s),
                ..IntegratorConfig::auto(&system, basis)
            };
            if let Some(frame) = &integ.frame {
                ic.frame = match frame.as_str() {
                    "rotating" => Frame::Rotating,
                    "lab" => Frame::Lab,
                    other => {
                        return Err(ConfigError(format!(
                            "integrator.frame must be 'rotating' or 'lab', got '{other}'"
                        )))
                    }
                };
            }
            if let Some(secular) = integ.secular {
                ic.secular = secular;
            }
            if let Some(leak) = integ.leak_tolerance {
                ic.leak_tolerance = leak;
            }
            config.integrator = ic;
        }
        if let Some(proto) = &self.protocol {
            if let Some(bs) = &proto.beam_splitter {
                config.bs_model = match bs.as_str() {
                    "full-exchange" => BeamSplitterModel::FullExchange,
                    "three-level" => BeamSplitterModel::ThreeLevel,
                    other => {
                        return Err(ConfigError(format!(
                            "protocol.beam_splitter must be 'full-exchange' or 'three-level', got '{other}'"
                        )))
                    }
                };
            }
            if let Some(order) = proto.herald_max_order {
                config.herald_max_order = order;
            }
        }
        if let Some(policy) = &self.policy {
            let mut p = match policy.preset.as_deref() {
                None | Some("default") => TruncationPolicy::default(),
                Some("permissive") => TruncationPolicy::permissive(),
                Some(other) => {
                    return Err(ConfigError(format!(
                        "policy.preset must be 'default' or 'permissive', got '{other}'"
                    )))
                }
            };
            if let Some(v) = policy.thermal_tail_warn {
                p.thermal_tail_warn = v;
            }
            if let Some(v) = policy.leak_warn {
                p.leak_warn = v;
            }
            if let Some(v) = policy.leak_fail {
                p.leak_fail = v;
            }
            if let Some(v) = policy.strict {
                p.strict = v;
            }
            config.policy = p;
        }
        Ok(config)
    }

    pub fn sweep_axes(&self) -> Result<Vec<SweepAxis>, ConfigError> {
        let s = require(&self.sweep, "sweep")?;
        let mut axes = vec![SweepAxis {
            param: parse_param(&s.axis1_param)?,
            values: s.axis1_values.clone(),
        }];
        match (&s.axis2_param, &s.axis2_values) {
            (Some(p), Some(v)) => axes.push(SweepAxis {
                param: parse_param(p)?,
                values: v.clone(),
            }),
            (None, None) => {}
            _ => {
                return Err(ConfigError(
                    "sweep.axis2_param and sweep.axis2_values must be given together".into(),
                ))
            }
        }
        Ok(axes)
    }

    pub fn detuning_config(&self) -> Result<DetuningConfig, ConfigError> {
        let d = require(&self.detuning, "detuning")?;
        Ok(DetuningConfig {
            delta_over_omega1: d.delta_over_omega1.clone(),
            omega1_over_kappa: d.omega1_over_kappa,
            omega2_over_omega1: d.omega2_over_omega1,
        })
    }

    pub fn timing_params(&self) -> Result<(TimingParams, DetectorMode), ConfigError> {
        let t = require(&self.timing, "timing")?;
        let detection = self.detection_params()?;
        let mode = match t.mode.as_str() {
            "single" => DetectorMode::Single,
            "two-detector" => DetectorMode::TwoDetector,
            other => {
                return Err(ConfigError(format!(
                    "timing.mode must be 'single' or 'two-detector', got '{other}'"
                )))
            }
        };
        Ok((
            TimingParams {
                n_a: t.n_a,
                n_p: t.n_p,
                t12_s: t.t12_s,
                t_tot_s: t.t_tot_s,
                eta: detection.eta,
                p: detection.p,
                eta1: detection.eta1,
                eta2: detection.eta2,
            },
            mode,
        ))
    }
}

fn parse_param(name: &str) -> Result<SweepParameter, ConfigError> {
    name.parse().map_err(ConfigError)
}
