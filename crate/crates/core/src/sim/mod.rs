//! Synthetic scenes: landmarks with descriptors, camera trajectories,
//! rendering into per-pixel observations, and the text file formats.

mod io;
mod render;
mod scene;
mod trajectory;

pub use io::{
    read_observations, read_scene, read_trajectory, write_observations, write_scene,
    write_trajectory,
};
pub use render::{render, Hit, NoiseModel, Observation, PredictedMaps, RenderConfig};
pub use scene::{
    generate_scene, Descriptor, Extent, Landmark, SceneModel, DESCRIPTOR_DIM, LABEL_DYNAMIC,
    LABEL_STATIC,
};
pub use trajectory::{
    base_intrinsics, generate_trajectory, Frame, Resolution, TrajectoryConfig, TrajectoryMode,
    INDOOR_DEPTH_RANGE, OUTDOOR_DEPTH_RANGE,
};

/// Per-item generator: one ChaCha stream per `(seed, stream)` pair.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
