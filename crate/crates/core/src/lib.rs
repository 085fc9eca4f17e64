//! WLAN-sensing toolkit: beam-steered MIMO-OFDM channel simulation, CSI
//! phase sanitization, subspace AoA tracking, motion features and a
//! linear-SVM motion detector, composed into a deterministic streaming
//! pipeline with NDJSON interchange formats.

pub mod aoa;
pub mod chansim;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod ndjson;
pub mod pipeline;
pub mod publish;
pub mod sanitize;

pub use aoa::{
    estimate_correlation, music_spectrum, pick_peaks, smooth_coherence, AoaEstimate,
    CorrelationEstimate, SpatialSpectrum,
};
pub use chansim::{synthesize_frame, synthesize_sequence, CsiFrame, PathSet, Scenario};
pub use config::{DetectorMode, PipelineConfig};
pub use detector::{
    aoa_change, changes_for_corpus, detect, evaluate, threshold_predict, train_svm, AoaChange,
    DetectionEvent, EvalReport, FeatureLayout, FeatureName, SvmModel, ThresholdConfig,
    TrainOptions,
};
pub use error::{Error, Result};
pub use eval::{
    run_cross_setup_matrix, run_feature_comparison, run_suite, write_suite, ExperimentPlan,
    SuiteOutcome, Table1, Table2,
};
pub use features::FeatureVector;
pub use geometry::{steering_vector, ArrayGeometry, BeamPattern, BeamPatternSpec};
pub use ndjson::{read_feature_vectors, to_line, write_record, FrameReader, FrameRecord, RecordReader};
pub use pipeline::{run_pipeline, Pipeline, PipelineRun};
pub use publish::{publish_events, publish_lines, write_lines, DeliveryReport, PublisherConfig};
pub use sanitize::{sanitize_frame, SanitizedFrame};
