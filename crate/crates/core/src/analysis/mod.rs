//! Streaming time-tag analytics: clock-offset recovery, cross-correlation
//! histograms and two- and four-fold coincidence counting.

pub mod fourfold;
pub mod g2;
pub mod offset;
pub mod twofold;

pub use fourfold::{
    analyze_dataset, fourfold_coincidences, roi_sweep, AnalyzerSettings, FourfoldAnalysis,
    FourfoldAnalyzer, FourfoldCount, FourfoldEvent, FourfoldWindows, HeraldMap, RoiPoint, RoiSweep,
};
pub use g2::{g2_histogram, g2_histogram_over, G2Histogram};
pub use offset::{estimate_offset, refine_offset};
pub use twofold::{net_twofold, twofold_count, CoincidenceWindow};
