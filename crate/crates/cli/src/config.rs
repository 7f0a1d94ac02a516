//! Run configuration: one JSON document drives every subcommand, and the
//! pipeline manifest embeds the fully resolved copy so a run can be replayed
//! bit-for-bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spectrasweep_core::cube::BandGrid;
use spectrasweep_core::forward::{NoiseModel, SimOptions};
use spectrasweep_core::losses::LossWeights;
use spectrasweep_core::net::TrainConfig;
use spectrasweep_core::optics::{AcquisitionGeometry, LensConfig};
use spectrasweep_core::preprocess::PreprocessOptions;
use spectrasweep_core::reconstruct::SolverConfig;
use spectrasweep_core::registration::RegistrationParams;
use spectrasweep_core::scene::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructMethod {
    #[default]
    Variational,
    Net,
}

impl std::str::FromStr for ReconstructMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "variational" => Ok(ReconstructMethod::Variational),
            "net" => Ok(ReconstructMethod::Net),
            other => Err(format!(
                "unknown method {other:?}, expected variational|net"
            )),
        }
    }
}

/// Everything a full run needs. Defaults describe the 8-band 64x64 toy
/// setup, which runs end to end in seconds on a laptop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub lens: LensConfig,
    pub geometry: AcquisitionGeometry,
    /// Explicit sweep positions in mm; empty means one exact-focus position
    /// per scene band.
    pub positions_mm: Vec<f64>,
    pub noise: NoiseModel,
    pub sim: SimOptions,
    /// Per-band sensor response; empty means flat.
    pub response: Vec<f64>,
    pub weights: LossWeights,
    pub solver: SolverConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessOptions,
    pub registration: RegistrationParams,
    pub method: ReconstructMethod,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bands = BandGrid::uniform(470.0, 900.0, 8).expect("valid grid");
        RunConfig {
            scene: SceneSpec {
                width: 64,
                height: 64,
                bands_nm: bands.wavelengths_nm().to_vec(),
                ..SceneSpec::default()
            },
            lens: LensConfig {
                aperture_mm: 0.5,
                ..LensConfig::default()
            },
            geometry: AcquisitionGeometry {
                pixel_pitch_um: 25.0,
                z0_mm: 70.0,
                z1_mm: 170.0,
                ..AcquisitionGeometry::default()
            },
            positions_mm: Vec::new(),
            noise: NoiseModel::default(),
            // a flat response keeps raw frames inside [0, 1], and skipping
            // the max-normalization keeps the capture scale the solver
            // inverts
            sim: SimOptions {
                normalize: false,
                ..SimOptions::default()
            },
            response: Vec::new(),
            weights: LossWeights::default(),
            solver: SolverConfig::default(),
            train: TrainConfig::default(),
            preprocess: PreprocessOptions::default(),
            registration: RegistrationParams::default(),
            method: ReconstructMethod::Variational,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        // manifests embed the resolved config; accept them directly so a
        // manifest replays the run it records
        if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
            if manifest.manifest == MANIFEST_TAG {
                return Ok(manifest.config);
            }
        }
        if let Ok(manifest) = serde_json::from_str::<CommandManifest>(&text) {
            if manifest.manifest == COMMAND_MANIFEST_TAG {
                return Ok(manifest.config);
            }
        }
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}

pub const MANIFEST_TAG: &str = "spectrasweep-run/1";
pub const COMMAND_MANIFEST_TAG: &str = "spectrasweep-cmd/1";

/// Sidecar written next to every artifact a subcommand produces: the
/// command, the resolved configuration, and the input paths, enough to
/// reproduce the artifact bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandManifest {
    pub manifest: String,
    pub command: String,
    pub config: RunConfig,
    pub inputs: std::collections::BTreeMap<String, PathBuf>,
    pub output: PathBuf,
}

/// Written next to the pipeline artifacts: the resolved configuration and
/// where every artifact landed. Feeding it back to `pipeline --config`
/// reproduces the run bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest: String,
    pub config: RunConfig,
    pub artifacts: RunArtifacts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub truth_cube: PathBuf,
    pub stack: PathBuf,
    pub model_input: PathBuf,
    pub reconstruction: PathBuf,
    pub report: PathBuf,
}

/// Dataset manifest for `train`: pairs of model-input tensors and target
/// cubes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub pairs: Vec<DatasetPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetPair {
    pub input: PathBuf,
    pub target: PathBuf,
}
