//! Sequence tracking loop and trackers.

pub mod config;
pub mod tracker;

pub use config::{GridSection, Regions, RunConfig, TrackerKind, TrackerSection, TrackerSpec};
pub use tracker::{
    CentroidTracker, GtPurpose, GtRead, NetworkTracker, TrackRow, TrackRun, Tracker, centroid_step,
    encode_pseudo_image, make_tracker, network_step, run_sequences, run_tracker, write_track_rows,
};
