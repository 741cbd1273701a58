//! Sources of normal-flow observations: synthetic scenes, the time-surface
//! estimator and file ingest.

pub mod io;
pub mod synth;
pub mod time_surface;

pub use io::{read_flow_file, write_flow_file, FlowFile, FlowFormat, FlowStream, SidecarRecord};
pub use synth::{
    generate_scene, generate_sequence, to_stream, GradientField, GroundTruth, NoiseModel, Region,
    SceneObject, SyntheticScene,
};
pub use time_surface::{normal_flow_from_time_surface, TimeSurface};
