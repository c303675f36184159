//! File formats: meshes, poses, manifests and reports.

pub mod manifest;
pub mod ply;
pub mod poses;
pub mod report;

pub use manifest::{load_scene, Scene, SceneManifest, Sequence, SequenceEntry, Split};
pub use ply::{read_ply, write_ply, PlyFormat};
pub use poses::{
    read_object_transforms, read_predictions, read_trajectory, write_object_transforms, write_predictions,
    write_trajectory, FrameKeys, PredictionSet,
};
pub use report::{read_frames_csv, read_summary, write_report, Summary, TableRow};
