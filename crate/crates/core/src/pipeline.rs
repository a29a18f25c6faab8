//! Profile training, inspection and the on-disk profile format.
//!
//! A profile is trained per harness type from at least five known-good samples,
//! each sample being one frame per configured view. Inspection runs every view
//! through segmentation, colour comparison and the orientation check, then folds
//! the results into a single pass, fail or unclear verdict.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::color::{
    calibrate_thresholds, classify_wire, references_from, resample_patch, sample_patches, score_patch, ColorPatch,
    ColorScore, ReferencePatch, Thresholds, WireVerdict, MIN_SAMPLES, PATCH_HEIGHT, PATCH_WIDTH,
};
use crate::error::{Error, Result};
use crate::gradient::GradientConfig;
use crate::imaging::{crop_roi, sharpness, HsvRange, RgbImage, Roi};
use crate::orientation::{
    verify_orientation, EmbeddingExtractor, EmbeddingVector, OrientationSpec, OrientationVerdict,
};
use crate::segmentation::{segment_wires, ScanLineConfig, Segmentation, WireBox};

pub const PROFILE_FORMAT_VERSION: u32 = 1;
pub const PROFILE_SUFFIX: &str = ".harnessprofile.json";
pub const UNCLEAR_MESSAGE: &str = "Image not clear";

fn default_bg() -> HsvRange {
    HsvRange::GREEN_BACKGROUND
}

/// One camera view of the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub view_id: String,
    pub roi: Roi,
    pub expected_wires: usize,
    #[serde(default = "default_bg")]
    pub bg_range: HsvRange,
    /// Defaults to the rows derived from the ROI height.
    #[serde(default)]
    pub scan: Option<ScanLineConfig>,
    #[serde(default)]
    pub gradient: GradientConfig,
    #[serde(default)]
    pub orientation: Option<OrientationSpec>,
}

impl ViewSpec {
    pub fn new(view_id: impl Into<String>, roi: Roi, expected_wires: usize) -> Self {
        Self {
            view_id: view_id.into(),
            roi,
            expected_wires,
            bg_range: default_bg(),
            scan: None,
            gradient: GradientConfig::default(),
            orientation: None,
        }
    }

    pub fn scan_config(&self) -> ScanLineConfig {
        self.scan.unwrap_or_else(|| ScanLineConfig::for_height(self.roi.height))
    }

    pub fn validate(&self) -> Result<()> {
        if self.expected_wires == 0 {
            return Err(Error::InvalidConfig(format!("view {}: expected_wires must be >= 1", self.view_id)));
        }
        if self.roi.width == 0 || self.roi.height == 0 {
            return Err(Error::InvalidConfig(format!("view {}: empty roi", self.view_id)));
        }
        self.scan_config().validate(self.roi.height)?;
        self.bg_range.validate()?;
        self.gradient.validate()?;
        if let Some(o) = &self.orientation {
            o.validate()?;
        }
        Ok(())
    }
}

/// Training input: profile identity plus the views every sample provides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub profile_id: String,
    pub harness_type: String,
    pub views: Vec<ViewSpec>,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (label, s) in [("profile_id", &self.profile_id), ("harness_type", &self.harness_type)] {
            let ok = !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !s.starts_with('.');
            if !ok {
                return Err(Error::InvalidConfig(format!("{label} '{s}' must be non-empty [A-Za-z0-9._-]")));
            }
        }
        if self.views.is_empty() {
            return Err(Error::InvalidConfig("at least one view is required".into()));
        }
        self.views.iter().try_for_each(ViewSpec::validate)
    }
}

/// One known-good harness: a frame per view, in view order.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub name: String,
    pub frames: Vec<RgbImage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewProfile {
    pub spec: ViewSpec,
    pub references: Vec<ReferencePatch>,
    pub thresholds: Vec<Thresholds>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedProfile {
    pub profile_id: String,
    pub harness_type: String,
    pub extractor_version: String,
    pub created_at: DateTime<Utc>,
    pub sample_count: usize,
    pub samples: Vec<String>,
    pub views: Vec<ViewProfile>,
}

impl TrainedProfile {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }
}

fn check_frames(views: usize, frames: usize) -> Result<()> {
    if views != frames {
        return Err(Error::ViewCountMismatch { expected: views, found: frames });
    }
    Ok(())
}

fn check_roi(frame: &RgbImage, roi: Roi) -> Result<()> {
    if !roi.fits(frame.width(), frame.height()) {
        return Err(Error::RoiOutOfBounds { roi, width: frame.width(), height: frame.height() });
    }
    Ok(())
}

pub fn train(
    config: &TrainingConfig,
    samples: &[TrainingSample],
    extractor: &dyn EmbeddingExtractor,
) -> Result<TrainedProfile> {
    config.validate()?;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::SampleCountTooLow(samples.len()));
    }
    let mut views = Vec::with_capacity(config.views.len());
    for (v, view) in config.views.iter().enumerate() {
        let scan = view.scan_config();
        let mut segmented = Vec::with_capacity(samples.len());
        let mut embeddings = Vec::new();
        let mut sharpness_sum = 0.0;
        for sample in samples {
            check_frames(config.views.len(), sample.frames.len())?;
            let frame = &sample.frames[v];
            check_roi(frame, view.roi)?;
            let cropped = crop_roi(frame, view.roi)?;
            let unclear = || Error::TrainingSampleUnclear {
                view: view.view_id.clone(),
                sample: sample.name.clone(),
            };
            let boxes = match segment_wires(&cropped, &view.bg_range, &scan, view.expected_wires, &view.gradient) {
                Segmentation::Clear { boxes, .. } => boxes,
                Segmentation::Unclear { .. } => return Err(unclear()),
            };
            match &view.orientation {
                Some(OrientationSpec::Distinct { connector_roi, .. }) => {
                    check_roi(frame, *connector_roi)?;
                    let patch = crop_roi(frame, *connector_roi)?;
                    sharpness_sum += sharpness(&patch);
                    embeddings.push(extractor.extract(&patch)?);
                }
                // a good sample must show its marker, or every inspection would read reversed
                Some(spec @ OrientationSpec::Symmetric { .. })
                    if verify_orientation(frame, spec, extractor) != OrientationVerdict::Correct =>
                {
                    return Err(unclear());
                }
                Some(OrientationSpec::Symmetric { .. }) => {}
                None => {}
            }
            segmented.push((cropped, boxes));
        }
        let per_wire = sample_patches(&segmented, PATCH_WIDTH, PATCH_HEIGHT)?;
        let references = references_from(&per_wire)?;
        let thresholds = calibrate_thresholds(&per_wire, &references)?;

        let mut spec = view.clone();
        if let Some(OrientationSpec::Distinct { reference, reference_sharpness, .. }) = &mut spec.orientation {
            *reference = Some(EmbeddingVector::mean(&embeddings)?);
            *reference_sharpness = Some(sharpness_sum / samples.len() as f64);
        }
        views.push(ViewProfile { spec, references, thresholds });
    }
    Ok(TrainedProfile {
        profile_id: config.profile_id.clone(),
        harness_type: config.harness_type.clone(),
        extractor_version: extractor.version().to_string(),
        created_at: Utc::now(),
        sample_count: samples.len(),
        samples: samples.iter().map(|s| s.name.clone()).collect(),
        views,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Overall {
    Pass,
    Fail,
    Unclear,
}

impl Overall {
    pub fn as_str(self) -> &'static str {
        match self {
            Overall::Pass => "Pass",
            Overall::Fail => "Fail",
            Overall::Unclear => "Unclear",
        }
    }
}

impl std::fmt::Display for Overall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Overall {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pass" => Ok(Overall::Pass),
            "fail" => Ok(Overall::Fail),
            "unclear" => Ok(Overall::Unclear),
            _ => Err(Error::InvalidConfig(format!("unknown verdict '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResult {
    pub wire_index: usize,
    pub verdict: WireVerdict,
    pub score: Option<ColorScore>,
    pub bbox: Option<WireBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewResult {
    pub view_id: String,
    pub segmentation: Segmentation,
    pub wires: Vec<WireResult>,
    pub orientation: Option<OrientationVerdict>,
    pub overall: Overall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionResult {
    pub profile_id: String,
    pub overall: Overall,
    /// Operator-facing text; set for unclear results.
    pub message: Option<String>,
    pub views: Vec<ViewResult>,
    pub elapsed_ms: f64,
}

/// Fail dominates unclear, which dominates pass.
pub fn fold_verdicts(items: impl IntoIterator<Item = Overall>) -> Overall {
    items.into_iter().fold(Overall::Pass, |acc, v| match (acc, v) {
        (Overall::Fail, _) | (_, Overall::Fail) => Overall::Fail,
        (Overall::Unclear, _) | (_, Overall::Unclear) => Overall::Unclear,
        _ => Overall::Pass,
    })
}

fn wire_overall(v: WireVerdict) -> Overall {
    match v {
        WireVerdict::Match => Overall::Pass,
        WireVerdict::Mismatch => Overall::Fail,
        WireVerdict::Unclear => Overall::Unclear,
    }
}

fn orientation_overall(v: OrientationVerdict) -> Overall {
    match v {
        OrientationVerdict::Correct => Overall::Pass,
        OrientationVerdict::Reversed => Overall::Fail,
        OrientationVerdict::Unclear => Overall::Unclear,
    }
}

fn inspect_view(view: &ViewProfile, frame: &RgbImage, extractor: &dyn EmbeddingExtractor) -> Result<ViewResult> {
    let spec = &view.spec;
    check_roi(frame, spec.roi)?;
    let cropped = crop_roi(frame, spec.roi)?;
    let segmentation = segment_wires(&cropped, &spec.bg_range, &spec.scan_config(), spec.expected_wires, &spec.gradient);
    let wires = match segmentation.boxes() {
        Some(boxes) => boxes
            .iter()
            .zip(view.references.iter().zip(&view.thresholds))
            .map(|(bx, (reference, th))| {
                let patch = ColorPatch::from_image(&resample_patch(&cropped, bx, PATCH_WIDTH, PATCH_HEIGHT)?);
                let score = score_patch(&patch, reference)?;
                Ok(WireResult {
                    wire_index: bx.index,
                    verdict: classify_wire(&score, th),
                    score: Some(score),
                    bbox: Some(*bx),
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => (0..spec.expected_wires)
            .map(|wire_index| WireResult { wire_index, verdict: WireVerdict::Unclear, score: None, bbox: None })
            .collect(),
    };
    let orientation = spec.orientation.as_ref().map(|o| verify_orientation(frame, o, extractor));
    let overall = fold_verdicts(
        wires
            .iter()
            .map(|w| wire_overall(w.verdict))
            .chain(orientation.map(orientation_overall)),
    );
    Ok(ViewResult { view_id: spec.view_id.clone(), segmentation, wires, orientation, overall })
}

/// Inspects one harness: `frames[i]` is the frame for the profile's view `i`.
pub fn inspect(
    profile: &TrainedProfile,
    frames: &[RgbImage],
    extractor: &dyn EmbeddingExtractor,
) -> Result<InspectionResult> {
    let start = Instant::now();
    if profile.extractor_version != extractor.version() {
        return Err(Error::ProfileVersionMismatch(format!(
            "profile built with extractor '{}', running '{}'",
            profile.extractor_version,
            extractor.version()
        )));
    }
    check_frames(profile.views.len(), frames.len())?;
    let views = profile
        .views
        .iter()
        .zip(frames)
        .map(|(v, f)| inspect_view(v, f, extractor))
        .collect::<Result<Vec<_>>>()?;
    let overall = fold_verdicts(views.iter().map(|v| v.overall));
    Ok(InspectionResult {
        profile_id: profile.profile_id.clone(),
        overall,
        message: (overall == Overall::Unclear).then(|| UNCLEAR_MESSAGE.to_string()),
        views,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Serialize, Deserialize)]
struct ProfileEnvelope {
    format_version: u32,
    crc32: String,
    profile: serde_json::Value,
}

fn profile_crc(value: &serde_json::Value) -> Result<u32> {
    // serde_json's map is ordered by key, so this byte stream is canonical
    Ok(crc32fast::hash(&serde_json::to_vec(value)?))
}

pub fn profile_to_bytes(profile: &TrainedProfile) -> Result<Vec<u8>> {
    let value = serde_json::to_value(profile)?;
    let env = ProfileEnvelope {
        format_version: PROFILE_FORMAT_VERSION,
        crc32: format!("{:08x}", profile_crc(&value)?),
        profile: value,
    };
    Ok(serde_json::to_vec_pretty(&env)?)
}

pub fn profile_from_bytes(bytes: &[u8]) -> Result<TrainedProfile> {
    let env: ProfileEnvelope =
        serde_json::from_slice(bytes).map_err(|e| Error::CorruptProfile(format!("unreadable envelope: {e}")))?;
    if env.format_version != PROFILE_FORMAT_VERSION {
        return Err(Error::FormatVersionUnsupported(env.format_version));
    }
    let crc = profile_crc(&env.profile)?;
    if format!("{crc:08x}") != env.crc32.to_ascii_lowercase() {
        return Err(Error::CorruptProfile(format!("checksum {crc:08x} does not match stored {}", env.crc32)));
    }
    serde_json::from_value(env.profile).map_err(|e| Error::CorruptProfile(e.to_string()))
}

/// `<root>/<harness_type>/<profile_id>.harnessprofile.json`
pub fn profile_path(root: &Path, harness_type: &str, profile_id: &str) -> PathBuf {
    root.join(harness_type).join(format!("{profile_id}{PROFILE_SUFFIX}"))
}

/// Writes to a temporary sibling then renames, so readers never see a partial file.
pub fn save_profile(profile: &TrainedProfile, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, profile_to_bytes(profile)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<TrainedProfile> {
    profile_from_bytes(&std::fs::read(path)?)
}

/// Every profile under `root`, as `(harness_type, profile_id, path)`, sorted.
pub fn list_profiles(root: &Path) -> Result<Vec<(String, String, PathBuf)>> {
    let mut out = Vec::new();
    if !root.exists() {
        return Ok(out);
    }
    for dir in std::fs::read_dir(root)? {
        let dir = dir?;
        if !dir.file_type()?.is_dir() {
            continue;
        }
        let harness_type = dir.file_name().to_string_lossy().into_owned();
        for f in std::fs::read_dir(dir.path())? {
            let f = f?;
            let name = f.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(PROFILE_SUFFIX) {
                out.push((harness_type.clone(), id.to_string(), f.path()));
            }
        }
    }
    out.sort();
    Ok(out)
}
