//! JSON interchange for single motions produced by `generate` and `transition`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xspecies_core::features::{MotionSequence, FRAME_DIM};
use xspecies_core::Matrix;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub caption: String,
    pub species: String,
    pub seed: u64,
    /// Bone lengths the motion was conditioned on.
    pub bones: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
    /// Frame range driven by generated gap latents, for transitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seam: Option<(usize, usize)>,
}

impl MotionFile {
    pub fn from_motion(caption: &str, species: &str, seed: u64, bones: &[f64], m: &MotionSequence) -> Self {
        let frames = (0..m.len()).map(|t| m.frame(t).to_vec()).collect();
        Self { caption: caption.into(), species: species.into(), seed, bones: bones.to_vec(), frames, seam: None }
    }

    pub fn motion(&self) -> CliResult<MotionSequence> {
        if self.frames.iter().any(|f| f.len() != FRAME_DIM) {
            return Err(CliError::Config(format!("every frame must have {FRAME_DIM} values")));
        }
        let data: Vec<f64> = self.frames.iter().flatten().copied().collect();
        Ok(MotionSequence::new(Matrix::from_vec(self.frames.len(), FRAME_DIM, data))?)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
