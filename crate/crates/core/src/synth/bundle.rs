use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matches::{synthesize_augmented, CorruptionSpec};
use super::scene::{camera_rig, render_ground_truth, AnalyticScene, RigConfig};
use super::AUGMENT_SCALES;
use crate::corres::{AugmentedSet, Correspondence, ImageId};
use crate::geometry::{CameraSet, GeometryError};
use crate::image::{DepthMap, Image};
use crate::render::{EvalView, TrainData, TrainView};

/// Everything a run needs for one synthetic scene.
#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub scene: AnalyticScene,
    pub cameras: CameraSet,
    /// Ground truth per camera, in camera order.
    pub images: Vec<Image>,
    pub depths: Vec<DepthMap>,
    /// Raw matches between training views, one set per scale.
    pub sets: Vec<AugmentedSet>,
}

impl SynthBundle {
    pub fn generate(
        scene: AnalyticScene,
        rig: &RigConfig,
        corruption: &CorruptionSpec,
        stride: u32,
        seed: u64,
    ) -> Result<Self, GeometryError> {
        Self::with_cameras(scene, camera_rig(rig)?, corruption, stride, seed)
    }

    /// Like [`SynthBundle::generate`] for a given camera set; matches are
    /// drawn between the cameras in the `train` split.
    pub fn with_cameras(
        scene: AnalyticScene,
        cameras: CameraSet,
        corruption: &CorruptionSpec,
        stride: u32,
        seed: u64,
    ) -> Result<Self, GeometryError> {
        let (images, depths) = cameras
            .cameras()
            .iter()
            .map(|c| render_ground_truth(&scene, c))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = cameras.ids_with_split("train");
        let sets = synthesize_augmented(&scene, &cameras, &train, &AUGMENT_SCALES, stride, corruption, &mut rng);
        Ok(Self { scene, cameras, images, depths, sets })
    }

    pub fn train_ids(&self) -> Vec<ImageId> {
        self.cameras.ids_with_split("train")
    }

    pub fn test_ids(&self) -> Vec<ImageId> {
        self.cameras.ids_with_split("test")
    }

    /// Training data over the training views; `correspondences` use camera
    /// ids and are re-indexed to training-view positions, dropping any pair
    /// that touches another view.
    pub fn train_data(&self, correspondences: &[Correspondence]) -> TrainData {
        let train = self.train_ids();
        let pos = |id: ImageId| train.iter().position(|&t| t == id);
        let views = train
            .iter()
            .map(|&i| TrainView { camera: self.cameras.cameras()[i].clone(), image: self.images[i].clone() })
            .collect();
        let eval = self
            .test_ids()
            .into_iter()
            .map(|i| EvalView {
                name: self.cameras.name(i).to_string(),
                camera: self.cameras.cameras()[i].clone(),
                image: self.images[i].clone(),
                depth: self.depths[i].clone(),
            })
            .collect();
        let correspondences = correspondences
            .iter()
            .filter_map(|c| Some(Correspondence { image_q: pos(c.image_q)?, image_s: pos(c.image_s)?, ..*c }))
            .collect();
        TrainData { views, eval, correspondences, near: self.scene.near, far: self.scene.far }
    }
}
