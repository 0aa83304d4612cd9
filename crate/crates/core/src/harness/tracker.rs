use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{TrackerKind, TrackerSpec};
use crate::backbone::{
    BackboneConfig, MultiScaleFeatures, Prediction, WeightStore, backbone_forward, head_decode,
    init_weights, load_weights, similarity_neck_forward,
};
use crate::dataset::Sequence;
use crate::error::{Error, Result};
use crate::eval::{FrameResult, center_distance, iou3d};
use crate::geometry::{Box7, Point, PointCloud, crop_to_region};
use crate::pepfe::{ChannelSelection, PyramidSpec, encode_features};
use crate::pillar::{GridSpec, PseudoImage, augment_points, max_pool, pillarize, scatter};

/// One tracking step: given the previous box and the search cloud already
/// cropped into that box's local frame, predict the current box.
pub trait Tracker {
    /// Called once with frame 0 (global coordinates) and its ground-truth box.
    fn init(&mut self, cloud: &PointCloud, init_box: &Box7) -> Result<()>;

    fn step(&mut self, frame: usize, prev: &Box7, search: &PointCloud) -> Result<Prediction>;
}

/// Classical baseline: follows the mean shift of the points around the
/// previous box relative to the first-frame template centroid.
#[derive(Debug, Clone, Default)]
pub struct CentroidTracker {
    template_centroid: [f64; 3],
    template_count: usize,
}

pub const CENTROID_INFLATE: f64 = 1.5;

fn select_local(cloud: &PointCloud, size: &Box7) -> ([f64; 3], usize) {
    let (hl, hw, hh) = (
        0.5 * size.l * CENTROID_INFLATE,
        0.5 * size.w * CENTROID_INFLATE,
        0.5 * size.h * CENTROID_INFLATE,
    );
    let mut sum = [0.0; 3];
    let mut n = 0;
    for p in &cloud.points {
        if p.x.abs() <= hl && p.y.abs() <= hw && p.z.abs() <= hh {
            sum[0] += p.x;
            sum[1] += p.y;
            sum[2] += p.z;
            n += 1;
        }
    }
    let mean = if n == 0 { [0.0; 3] } else { sum.map(|s| s / n as f64) };
    (mean, n)
}

/// Mean-shift update against a stored template; `search` is in `prev`'s local frame.
pub fn centroid_step(prev: &Box7, search: &PointCloud, template_centroid: [f64; 3], template_count: usize) -> Prediction {
    let (mean, n) = select_local(search, prev);
    if n == 0 || template_count == 0 {
        return Prediction {
            bbox: *prev,
            confidence: 0.0,
        };
    }
    let shift = [0, 1, 2].map(|i| mean[i] - template_centroid[i]);
    let [cx, cy, cz] = prev.to_global(shift);
    Prediction {
        bbox: Box7 { cx, cy, cz, ..*prev },
        confidence: (n as f64 / template_count as f64).clamp(0.0, 1.0),
    }
}

impl Tracker for CentroidTracker {
    fn init(&mut self, cloud: &PointCloud, init_box: &Box7) -> Result<()> {
        let points = cloud
            .points
            .iter()
            .map(|p| {
                let [x, y, z] = init_box.to_local(p.xyz());
                Point::new(x, y, z, p.r)
            })
            .collect();
        let (mean, n) = select_local(&PointCloud::new(points, cloud.frame_id), init_box);
        self.template_centroid = mean;
        self.template_count = n;
        Ok(())
    }

    fn step(&mut self, _frame: usize, prev: &Box7, search: &PointCloud) -> Result<Prediction> {
        Ok(centroid_step(prev, search, self.template_centroid, self.template_count))
    }
}

/// Pillarizes a local cloud and scatters its pooled PE-PFE vectors.
pub fn encode_pseudo_image(local: &PointCloud, grid: &GridSpec, pyramid: &PyramidSpec) -> Result<PseudoImage> {
    let set = augment_points(pillarize(local, grid)?);
    let encoded = encode_features(&set, pyramid, &ChannelSelection::default())?;
    scatter(&max_pool(&encoded), encoded.width, grid)
}

/// Siamese network tracker with a fixed first-frame template.
pub struct NetworkTracker {
    cfg: BackboneConfig,
    weights: Arc<WeightStore>,
    search_grid: GridSpec,
    template_grid: GridSpec,
    pyramid: PyramidSpec,
    template: Option<MultiScaleFeatures>,
}

impl NetworkTracker {
    pub fn new(spec: &TrackerSpec, weights: Arc<WeightStore>) -> Result<Self> {
        spec.validate()?;
        weights.check_against(&spec.backbone)?;
        Ok(Self {
            cfg: spec.backbone.clone(),
            weights,
            search_grid: spec.search,
            template_grid: spec.template,
            pyramid: spec.pyramid,
            template: None,
        })
    }

    /// Loads `spec.weights` or seeds a fresh store.
    pub fn from_spec(spec: &TrackerSpec) -> Result<Self> {
        let w = match &spec.weights {
            Some(p) => load_weights(p, &spec.backbone)?,
            None => init_weights(&spec.backbone, spec.seed)?,
        };
        Self::new(spec, Arc::new(w))
    }

    fn features(&self, local: &PointCloud, grid: &GridSpec) -> Result<MultiScaleFeatures> {
        let image = encode_pseudo_image(local, grid, &self.pyramid)?;
        backbone_forward(&image, &self.cfg, &self.weights)
    }
}

/// Full network pass for one frame. `search` and `template` are local clouds.
pub fn network_step(
    prev: &Box7,
    search: &PointCloud,
    template: &MultiScaleFeatures,
    tracker: &NetworkTracker,
) -> Result<Prediction> {
    let s = tracker.features(search, &tracker.search_grid)?;
    let fused = similarity_neck_forward(template, &s, &tracker.cfg, &tracker.weights)?;
    head_decode(&fused, prev, &tracker.search_grid, &tracker.cfg, &tracker.weights)
}

impl Tracker for NetworkTracker {
    fn init(&mut self, cloud: &PointCloud, init_box: &Box7) -> Result<()> {
        let local = crop_to_region(cloud, &self.template_grid.region(), Some(init_box))?;
        self.template = Some(self.features(&local, &self.template_grid)?);
        Ok(())
    }

    fn step(&mut self, _frame: usize, prev: &Box7, search: &PointCloud) -> Result<Prediction> {
        let template = self
            .template
            .as_ref()
            .ok_or_else(|| Error::Config("network tracker used before init".into()))?;
        network_step(prev, search, template, self)
    }
}

pub fn make_tracker(spec: &TrackerSpec) -> Result<Box<dyn Tracker + Send>> {
    Ok(match spec.kind {
        TrackerKind::Centroid => Box::new(CentroidTracker::default()),
        TrackerKind::Network => Box::new(NetworkTracker::from_spec(spec)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtPurpose {
    Init,
    Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtRead {
    pub frame: usize,
    pub purpose: GtPurpose,
    /// Number of predictions made before this read.
    pub predictions_so_far: usize,
}

/// Ground-truth access that records every read.
struct GroundTruth<'a> {
    seq: &'a Sequence,
    log: Vec<GtRead>,
}

impl GroundTruth<'_> {
    fn read(&mut self, frame: usize, purpose: GtPurpose, predictions_so_far: usize) -> Box7 {
        self.log.push(GtRead {
            frame,
            purpose,
            predictions_so_far,
        });
        self.seq.frames[frame].gt_box
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub sequence_id: String,
    pub category: String,
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
    pub confidence: f64,
    pub held: bool,
    pub iou: f64,
    pub center_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRun {
    /// One box per frame; frame 0 is the initial box.
    pub predictions: Vec<Box7>,
    pub rows: Vec<TrackRow>,
    pub gt_reads: Vec<GtRead>,
}

impl TrackRun {
    pub fn frame_results(&self) -> Vec<FrameResult> {
        self.rows
            .iter()
            .map(|r| FrameResult {
                sequence_id: r.sequence_id.clone(),
                category: r.category.clone(),
                frame: r.frame,
                iou: r.iou,
                center_dist: r.center_dist,
            })
            .collect()
    }

    /// True when ground truth was read only at frame 0 for initialization and
    /// afterwards only for scoring frames already predicted.
    pub fn follows_ope(&self) -> bool {
        let init_ok = self
            .gt_reads
            .iter()
            .filter(|r| r.purpose == GtPurpose::Init)
            .map(|r| r.frame)
            .eq([0]);
        let metric_ok = self
            .gt_reads
            .iter()
            .filter(|r| r.purpose == GtPurpose::Metric)
            .all(|r| r.frame >= 1 && r.predictions_so_far >= r.frame);
        init_ok && metric_ok
    }
}

/// One-pass evaluation: initialize from the frame-0 box, then crop, step and
/// score every later frame. Low-confidence or empty-crop frames hold the
/// previous box.
pub fn run_tracker(seq: &Sequence, spec: &TrackerSpec, tracker: &mut dyn Tracker) -> Result<TrackRun> {
    let mut gt = GroundTruth { seq, log: Vec::new() };
    let init = gt.read(0, GtPurpose::Init, 0);
    tracker.init(&seq.cloud(0)?, &init)?;
    let region = spec.search.region();
    let mut predictions = vec![init];
    let mut rows = Vec::with_capacity(seq.len().saturating_sub(1));
    for t in 1..seq.len() {
        let prev = predictions[t - 1];
        let search = crop_to_region(&seq.cloud(t)?, &region, Some(&prev))?;
        let (bbox, confidence, held) = if search.is_empty() {
            (prev, 0.0, true)
        } else {
            let p = tracker.step(t, &prev, &search)?;
            if p.confidence < spec.confidence_floor || !p.bbox.is_valid() {
                (prev, p.confidence, true)
            } else {
                (p.bbox, p.confidence, false)
            }
        };
        predictions.push(bbox);
        let truth = gt.read(t, GtPurpose::Metric, predictions.len() - 1);
        rows.push(TrackRow {
            sequence_id: seq.sequence_id.clone(),
            category: seq.category.clone(),
            frame: t,
            cx: bbox.cx,
            cy: bbox.cy,
            cz: bbox.cz,
            h: bbox.h,
            w: bbox.w,
            l: bbox.l,
            theta: bbox.theta,
            confidence,
            held,
            iou: iou3d(&bbox, &truth),
            center_dist: center_distance(&bbox, &truth),
        });
    }
    Ok(TrackRun {
        predictions,
        rows,
        gt_reads: gt.log,
    })
}

/// Runs a fresh tracker from `spec` over each sequence in parallel.
pub fn run_sequences(seqs: &[Sequence], spec: &TrackerSpec) -> Result<Vec<TrackRun>> {
    use rayon::prelude::*;
    seqs.par_iter()
        .map(|seq| {
            let mut tracker = make_tracker(spec)?;
            run_tracker(seq, spec, tracker.as_mut())
        })
        .collect()
}

pub fn write_track_rows(path: impl AsRef<Path>, runs: &[TrackRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in runs.iter().flat_map(|r| &r.rows) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
