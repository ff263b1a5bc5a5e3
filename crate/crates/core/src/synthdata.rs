//! Synthetic registered visual/thermal foot-pair cohorts with planted
//! thermal clusters and cluster-coupled clinical records.
//!
//! Each image shows two mirror-symmetric feet. A foot is a tapered
//! super-ellipse
//!
//! ```text
//! |u / (b·(1 − 0.18·v/a))|^e + |v / a|^e ≤ 1
//! ```
//!
//! in foot-local coordinates `(u, v)` (u toward the midline, v toward the
//! heel), rotated by a small angle, with five toe discs along the top edge.
//!
//! Clinical records follow a latent logistic link. With `h = 1` for planted
//! cluster 1 and `f1` its cohort fraction,
//!
//! ```text
//! s      = 1.5·risk_correlation·(h − f1) + ε,          ε ~ N(0, 1)
//! mtcns  = clamp(round(exp(1.35 + 0.45·s + 0.45·η₁)), 0, 33)
//! tbi    = clamp(0.92 − 0.06·s + 0.07·η₂, 0.2, 1.5)
//! item   ~ Bernoulli(logistic(α_item + γ_item·s))
//! ```
//!
//! so cluster 1 has stochastically higher mTCNS and lower TBI whenever
//! `risk_correlation > 0` and is independent of every clinical field when it
//! is zero.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    save_visual, write_manifest, write_thermal_raw, Complication, ExamResult, ImagePair, IngestError, Manifest,
    ManifestRow, ParticipantRecord, Sex, ThermalGrid, VisualImage, DEFAULT_VALID_RANGE,
};
use crate::segmentation::{BinaryMask, SegmentationError};
use crate::training::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Mask(#[from] SegmentationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Largest number of distinct thermal patterns the generator plants.
pub const MAX_CLUSTERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_participants: usize,
    /// Planted cluster shares; sizes are allocated by largest remainder.
    pub cluster_fractions: Vec<f64>,
    /// Thermal-pattern effect size: mean hotspot amplitude in °C.
    pub separation: f64,
    /// Strength of the cluster → clinical risk coupling, in [0, 1].
    pub risk_correlation: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Per-pixel thermal noise standard deviation in °C.
    pub noise_sd: f64,
    /// Scale of the between-participant foot shape and placement variation
    /// (1 = full jitter ranges of [`FootParams::sample`]).
    pub shape_variability: f64,
    /// Participants (first in id order) that receive rater masks.
    pub n_rated: usize,
    pub n_raters: usize,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_participants: 282,
            cluster_fractions: vec![123.0 / 282.0, 159.0 / 282.0],
            separation: 6.0,
            risk_correlation: 1.0,
            seed: 7,
            height: 160,
            width: 120,
            noise_sd: 0.1,
            shape_variability: 0.25,
            n_rated: 60,
            n_raters: 3,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_participants < 2 {
            return bad(format!("n_participants must be at least 2, got {}", self.n_participants));
        }
        let k = self.cluster_fractions.len();
        if k == 0 || k > MAX_CLUSTERS {
            return bad(format!("between 1 and {MAX_CLUSTERS} cluster fractions required, got {k}"));
        }
        if self.cluster_fractions.iter().any(|&f| !(f >= 0.0)) {
            return bad("cluster fractions must be non-negative".into());
        }
        let total: f64 = self.cluster_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("cluster fractions sum to {total}, expected 1"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be finite and ≥ 0, got {}", self.separation));
        }
        if !(0.0..=1.0).contains(&self.risk_correlation) {
            return bad(format!("risk_correlation must lie in [0, 1], got {}", self.risk_correlation));
        }
        if self.height < 64 || self.width < 48 {
            return bad(format!("image must be at least 64×48, got {}×{}", self.height, self.width));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.shape_variability) {
            return bad(format!("shape_variability must lie in [0, 1], got {}", self.shape_variability));
        }
        if self.n_rated > 0 && self.n_raters < 2 {
            return bad("rater masks need n_raters ≥ 2".into());
        }
        Ok(())
    }

    /// Planted cluster sizes by largest-remainder rounding.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        largest_remainder(self.n_participants, &self.cluster_fractions)
    }
}

pub(crate) fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - sizes.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

/// Amplitudes (°C) of the planted thermal patterns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThermalPattern {
    /// Warm spot on the left forefoot only (contralateral asymmetry).
    pub left_forefoot: f64,
    /// Warm spot on both heels.
    pub heels: f64,
    /// Spot on the right forefoot only; negative values cool.
    pub right_forefoot: f64,
}

impl ThermalPattern {
    /// Pattern for 1-based planted cluster `c` at amplitude `amp`.
    pub fn for_cluster(c: usize, amp: f64) -> Self {
        match c {
            1 => ThermalPattern {
                left_forefoot: amp,
                ..Default::default()
            },
            3 => ThermalPattern {
                heels: 0.8 * amp,
                ..Default::default()
            },
            4 => ThermalPattern {
                right_forefoot: -amp,
                ..Default::default()
            },
            _ => ThermalPattern::default(),
        }
    }
}

/// Shape and temperature parameters of one image pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootParams {
    pub height: usize,
    pub width: usize,
    /// Half-length of a foot in pixels.
    pub half_length: f64,
    /// Half-width at mid-foot in pixels.
    pub half_width: f64,
    pub exponent: f64,
    /// Rotation of the left foot in radians; the right foot is its mirror.
    pub angle: f64,
    pub center_y: f64,
    /// Horizontal distance of each foot center from the image midline.
    pub offset_x: f64,
    /// Mean plantar temperature in °C.
    pub base_temp: f64,
    pub ambient_temp: f64,
    pub noise_sd: f64,
    pub pattern: ThermalPattern,
    /// Hotspot width (Gaussian standard deviation) in pixels.
    pub spot_sigma: f64,
    pub skin_rgb: [f64; 3],
    pub cloth_rgb: [f64; 3],
}

impl FootParams {
    /// Typical parameters for an image of the given size; no pattern.
    pub fn nominal(height: usize, width: usize) -> Self {
        let s = height as f64 / 160.0;
        FootParams {
            height,
            width,
            half_length: 60.0 * s,
            half_width: 20.0 * s,
            exponent: 2.6,
            angle: 0.0,
            center_y: height as f64 * 0.52,
            offset_x: width as f64 * 0.245,
            base_temp: 30.0,
            ambient_temp: 23.0,
            noise_sd: 0.0,
            pattern: ThermalPattern::default(),
            spot_sigma: 14.0 * s,
            skin_rgb: [205.0, 160.0, 135.0],
            cloth_rgb: [70.0, 80.0, 110.0],
        }
    }

    /// Random participant-level variation around [`FootParams::nominal`];
    /// `shape_variability` scales the shape and placement jitter.
    pub fn sample(height: usize, width: usize, noise_sd: f64, shape_variability: f64, rng: &mut impl Rng) -> Self {
        let mut p = FootParams::nominal(height, width);
        let s = height as f64 / 160.0;
        let mut jitter = |half_range: f64| shape_variability * rng.random_range(-half_range..half_range);
        p.half_length += jitter(4.0) * s;
        p.half_width += jitter(1.5) * s;
        p.exponent += jitter(0.4);
        p.angle = jitter(0.08);
        p.center_y += jitter(3.0) * s;
        p.offset_x += jitter(1.5) * s;
        p.base_temp = 29.5 + 0.6 * rng.sample::<f64, _>(StandardNormal);
        p.ambient_temp = rng.random_range(22.0..24.5);
        p.noise_sd = noise_sd;
        let tone = rng.random_range(-1.0..1.0);
        p.skin_rgb = [205.0 + 35.0 * tone, 160.0 + 40.0 * tone, 135.0 + 40.0 * tone];
        p.cloth_rgb = [
            rng.random_range(40.0..100.0),
            rng.random_range(50.0..110.0),
            rng.random_range(90.0..150.0),
        ];
        p
    }

    fn left_center(&self) -> (f64, f64) {
        (self.center_y, (self.width as f64 - 1.0) / 2.0 - self.offset_x)
    }

    /// Foot-local coordinates of image point `(y, x)` relative to the left foot.
    fn local(&self, y: f64, x: f64) -> (f64, f64) {
        let (cy, cx) = self.left_center();
        let (dy, dx) = (y - cy, x - cx);
        let (s, c) = self.angle.sin_cos();
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Normalized super-ellipse radius of the left-foot body (1 on the outline).
    fn body_radius(&self, u: f64, v: f64) -> f64 {
        let vn = v / self.half_length;
        let bw = self.half_width * (1.0 - 0.18 * vn.clamp(-1.0, 1.0));
        ((u / bw).abs().powf(self.exponent) + vn.abs().powf(self.exponent)).powf(1.0 / self.exponent)
    }

    fn toes(&self) -> [(f64, f64, f64); 5] {
        let (a, b) = (self.half_length, self.half_width);
        // (u, v, radius); the big toe sits on the medial side.
        [
            (0.62 * b, -0.9 * a, 0.30 * b),
            (0.12 * b, -0.92 * a, 0.24 * b),
            (-0.3 * b, -0.88 * a, 0.22 * b),
            (-0.68 * b, -0.82 * a, 0.2 * b),
            (-1.0 * b, -0.72 * a, 0.18 * b),
        ]
    }

    fn in_left_foot(&self, y: f64, x: f64) -> bool {
        let (u, v) = self.local(y, x);
        self.body_radius(u, v) <= 1.0
            || self
                .toes()
                .iter()
                .any(|&(tu, tv, r)| (u - tu).powi(2) + (v - tv).powi(2) <= r * r)
    }

    /// Mirrors an image column across the vertical midline.
    fn mirror_x(&self, x: f64) -> f64 {
        self.width as f64 - 1.0 - x
    }

    fn in_foot(&self, y: f64, x: f64) -> bool {
        self.in_left_foot(y, x) || self.in_left_foot(y, self.mirror_x(x))
    }

    /// Image coordinates of a left-foot landmark at local `(u, v)`, snapped
    /// to the nearest pixel center so a spot peaks exactly on a pixel.
    fn landmark(&self, u: f64, v: f64) -> (f64, f64) {
        let (cy, cx) = self.left_center();
        let (s, c) = self.angle.sin_cos();
        let x = cx + c * u - s * v;
        let y = cy + s * u + c * v;
        (y.round(), x.round())
    }

    fn forefoot_spot(&self) -> (f64, f64) {
        self.landmark(0.15 * self.half_width, -0.55 * self.half_length)
    }

    fn heel_spot(&self) -> (f64, f64) {
        self.landmark(0.0, 0.6 * self.half_length)
    }

    /// Noise-free temperature of the left foot body at image point `(y, x)`.
    fn base_field(&self, y: f64, x: f64) -> f64 {
        let (u, v) = self.local(y, x);
        let r = self.body_radius(u, v).min(1.0);
        let vn = (v / self.half_length).clamp(-1.0, 1.0);
        self.base_temp + 0.8 * vn - 1.2 * r.powi(4)
    }

    fn spot(&self, y: f64, x: f64, at: (f64, f64)) -> f64 {
        let d2 = (y - at.0).powi(2) + (x - at.1).powi(2);
        (-d2 / (2.0 * self.spot_sigma * self.spot_sigma)).exp()
    }

    /// Noise-free plantar temperature at `(y, x)`; `left` selects which foot's
    /// field applies (mirror coordinates are used for the right foot).
    fn foot_temp(&self, y: f64, x: f64, left: bool) -> f64 {
        let lx = if left { x } else { self.mirror_x(x) };
        let mut t = self.base_field(y, lx);
        let p = &self.pattern;
        if p.heels != 0.0 {
            t += p.heels * self.spot(y, lx, self.heel_spot());
        }
        if left && p.left_forefoot != 0.0 {
            t += p.left_forefoot * self.spot(y, lx, self.forefoot_spot());
        }
        if !left && p.right_forefoot != 0.0 {
            t += p.right_forefoot * self.spot(y, lx, self.forefoot_spot());
        }
        t
    }

    /// Background temperature: ambient plus a warm halo that decays away
    /// from the nearest foot.
    fn background_temp(&self, y: f64, x: f64) -> f64 {
        let left_side = x <= (self.width as f64 - 1.0) / 2.0;
        let lx = if left_side { x } else { self.mirror_x(x) };
        let (u, v) = self.local(y, lx);
        let dist = (self.body_radius(u, v) - 1.0).max(0.0) * self.half_width;
        let edge = self.base_temp - 1.2;
        self.ambient_temp + (edge - self.ambient_temp) * (-dist / 2.5).exp()
    }
}

/// One generated image pair with its exact ground-truth mask.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub pair: ImagePair,
    pub mask: BinaryMask,
}

const SUPERSAMPLE: usize = 4;

/// Renders the visual image, thermal grid and mask for `params`. Thermal
/// noise and visual texture are drawn from `seed`.
pub fn generate_foot_pair(participant_id: &str, params: &FootParams, seed: u64) -> SynthPair {
    let (h, w) = (params.height, params.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sd.max(0.0)).expect("finite noise sd");
    let mid = (w as f64 - 1.0) / 2.0;

    let mut mask = Vec::with_capacity(h * w);
    let mut thermal = Vec::with_capacity(h * w);
    let mut visual = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64, c as f64);
            let inside = params.in_foot(y, x);
            mask.push(inside as u8);
            let t = if inside {
                params.foot_temp(y, x, x <= mid)
            } else {
                params.background_temp(y, x)
            };
            let eps = if params.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            thermal.push((t + eps) as f32);

            // Anti-aliased coverage so the outline is recoverable to sub-pixel precision.
            let mut covered = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let oy = (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    let ox = (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                    covered += params.in_foot(y + oy, x + ox) as usize;
                }
            }
            let cov = covered as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let weave = 8.0 * (x * 0.9).sin() * (y * 0.9).sin();
            let (u, v) = params.local(y, if x <= mid { x } else { params.mirror_x(x) });
            let shade = 1.0 - 0.15 * params.body_radius(u, v).min(1.0).powi(4);
            let cloth_noise: f64 = 6.0 * rng.sample::<f64, _>(StandardNormal);
            let skin_noise: f64 = 3.0 * rng.sample::<f64, _>(StandardNormal);
            for ch in 0..3 {
                let bg = params.cloth_rgb[ch] + weave + cloth_noise;
                let fg = params.skin_rgb[ch] * shade + skin_noise;
                visual.push((cov * fg + (1.0 - cov) * bg).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let mask = BinaryMask::new(h, w, mask).expect("binary by construction");
    let thermal = ThermalGrid::new(h, w, thermal, DEFAULT_VALID_RANGE).expect("generator temperatures in range");
    SynthPair {
        pair: ImagePair {
            participant_id: participant_id.to_string(),
            visual: VisualImage::new(h, w, visual),
            thermal,
        },
        mask,
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Samples the clinical record of one participant (see the module docs for
/// the link). `in_cluster_one` is the planted-cluster indicator `h`.
pub fn sample_record(
    participant_id: &str,
    in_cluster_one: bool,
    cluster_one_fraction: f64,
    risk_correlation: f64,
    rng: &mut impl Rng,
) -> ParticipantRecord {
    let h = in_cluster_one as u8 as f64;
    let mut z = || rng.sample::<f64, _>(StandardNormal);
    let s = 1.5 * risk_correlation * (h - cluster_one_fraction) + z();
    let (eta1, eta2, e_age, e_dur) = (z(), z(), z(), z());
    let mtcns = (1.35 + 0.45 * s + 0.45 * eta1).exp().round().clamp(0.0, 33.0) as i32;
    let tbi = ((0.92 - 0.06 * s + 0.07 * eta2).clamp(0.2, 1.5) * 100.0).round() / 100.0;
    let age = (55.0 + 2.0 * s + 9.0 * e_age).round().clamp(30.0, 85.0);
    let duration = ((8.0 + 1.5 * s + 5.0 * e_dur).clamp(0.0, 40.0) * 10.0).round() / 10.0;

    let mut bern = |alpha: f64, gamma: f64| rng.random::<f64>() < logistic(alpha + gamma * s);
    let sex = if bern(0.0, 0.0) { Sex::Male } else { Sex::Female };
    let pad_history = bern(-2.2, 0.7);
    let prior_ulcer = bern(-2.8, 0.7);
    let prior_amputation = bern(-4.0, 0.7);
    let monofilament = bern(-1.5, 0.8);
    let physical = bern(-1.8, 0.5);
    let visual = bern(-1.6, 0.5);
    let mut complications = BTreeSet::new();
    if bern(-3.0, 0.5) {
        complications.insert(Complication::Stroke);
    }
    if bern(-2.5, 0.5) {
        complications.insert(Complication::RenalDisease);
    }
    if bern(-1.5, 0.5) {
        complications.insert(Complication::EyeDisease);
    }
    if mtcns >= 3 {
        complications.insert(Complication::Neuropathy);
    }
    if tbi <= 0.71 {
        complications.insert(Complication::Pad);
    }
    let mut exam = || {
        if bern(-1.0, 0.8) {
            ExamResult::Impaired
        } else {
            ExamResult::Normal
        }
    };
    ParticipantRecord {
        participant_id: participant_id.to_string(),
        age: Some(age),
        sex: Some(sex),
        diabetes_duration: Some(duration),
        mtcns: Some(mtcns),
        tbi: Some(tbi),
        pad_clinical_history: Some(pad_history),
        prior_ulcer: Some(prior_ulcer),
        prior_amputation: Some(prior_amputation),
        complications: Some(complications),
        physical_impairment: Some(physical),
        visual_impairment: Some(visual),
        monofilament_insensitive: Some(monofilament),
        pinprick: Some(exam()),
        vibration: Some(exam()),
        light_touch: Some(exam()),
        position_sense: Some(exam()),
        temperature_sense: Some(exam()),
    }
}

fn grow(mask: &BinaryMask, dilate: bool) -> BinaryMask {
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, |r, c| {
        let mut any = false;
        let mut all = true;
        for (dr, dc) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
            let v = rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && mask.get(rr as usize, cc as usize);
            any |= v;
            all &= v;
        }
        if dilate {
            any
        } else {
            all
        }
    })
}

/// Simulated annotator masks: a generous rater (1-px dilation), a tight
/// rater (1-px erosion) and further raters that flip random outline pixels.
pub fn rater_masks(truth: &BinaryMask, n_raters: usize, rng: &mut impl Rng) -> Vec<BinaryMask> {
    let (h, w) = truth.dims();
    let dilated = grow(truth, true);
    let eroded = grow(truth, false);
    (0..n_raters)
        .map(|k| match k {
            0 => dilated.clone(),
            1 => eroded.clone(),
            _ => {
                let flips: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.3).collect();
                BinaryMask::from_fn(h, w, |r, c| {
                    let i = r * w + c;
                    let outline = dilated.get(r, c) != eroded.get(r, c);
                    truth.get(r, c) ^ (outline && flips[i])
                })
            }
        })
        .collect()
}

/// Everything generated for one participant.
#[derive(Clone, Debug)]
pub struct SynthParticipant {
    pub record: ParticipantRecord,
    pub pair: ImagePair,
    pub mask: BinaryMask,
    pub raters: Vec<BinaryMask>,
    /// 1-based planted cluster.
    pub cluster: usize,
    pub amplitude: f64,
}

/// Planted labels and ground truth for a cohort, in participant order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub ids: Vec<String>,
    pub clusters: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

impl PlantedTruth {
    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|i| self.clusters[i])
    }
}

pub fn participant_id(index: usize) -> String {
    format!("P{:04}", index + 1)
}

// Independent random streams per participant.
const STREAM_SHAPE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_RECORD: u64 = 3;
const STREAM_RATERS: u64 = 4;

fn participant_seed(cohort_seed: u64, index: usize, stream: u64) -> u64 {
    derive_seed(derive_seed(cohort_seed, index as u64 + 1), stream)
}

/// Planted cluster (1-based) of every participant, in id order.
pub fn planted_clusters(spec: &CohortSpec) -> Result<Vec<usize>, SynthError> {
    spec.validate()?;
    let mut labels: Vec<usize> = spec
        .cluster_sizes()
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c + 1, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    Ok(labels)
}

/// Clinical records only; identical to those of [`generate_cohort_in_memory`]
/// for the same spec, at a fraction of the cost.
pub fn sample_records(spec: &CohortSpec) -> Result<Vec<(usize, ParticipantRecord)>, SynthError> {
    let labels = planted_clusters(spec)?;
    let f1 = spec.cluster_fractions[0];
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(participant_seed(spec.seed, i, STREAM_RECORD));
            (c, sample_record(&participant_id(i), c == 1, f1, spec.risk_correlation, &mut rng))
        })
        .collect())
}

pub fn generate_participant(spec: &CohortSpec, index: usize, cluster: usize) -> SynthParticipant {
    let id = participant_id(index);
    let mut shape_rng = ChaCha8Rng::seed_from_u64(participant_seed(spec.seed, index, STREAM_SHAPE));
    let mut params = FootParams::sample(spec.height, spec.width, spec.noise_sd, spec.shape_variability, &mut shape_rng);
    let amplitude = if cluster == 2 {
        0.0
    } else {
        spec.separation * shape_rng.random_range(0.75..1.25)
    };
    params.pattern = ThermalPattern::for_cluster(cluster, amplitude);
    let SynthPair { pair, mask } = generate_foot_pair(&id, &params, participant_seed(spec.seed, index, STREAM_NOISE));
    let mut rec_rng = ChaCha8Rng::seed_from_u64(participant_seed(spec.seed, index, STREAM_RECORD));
    let record = sample_record(&id, cluster == 1, spec.cluster_fractions[0], spec.risk_correlation, &mut rec_rng);
    let raters = if index < spec.n_rated {
        let mut r = ChaCha8Rng::seed_from_u64(participant_seed(spec.seed, index, STREAM_RATERS));
        rater_masks(&mask, spec.n_raters, &mut r)
    } else {
        Vec::new()
    };
    SynthParticipant {
        record,
        pair,
        mask,
        raters,
        cluster,
        amplitude,
    }
}

pub fn generate_cohort_in_memory(spec: &CohortSpec) -> Result<Vec<SynthParticipant>, SynthError> {
    let labels = planted_clusters(spec)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &c)| generate_participant(spec, i, c))
        .collect())
}

/// File layout of a cohort directory, relative to its root.
pub mod layout {
    pub const MANIFEST: &str = "manifest.csv";
    pub const PLANTED_TRUTH: &str = "planted_truth.csv";
    pub const VISUAL_DIR: &str = "visual";
    pub const THERMAL_DIR: &str = "thermal";
    pub const MASK_DIR: &str = "masks";
    pub const RATER_DIR: &str = "raters";

    pub fn rater_file(id: &str, k: usize) -> String {
        format!("{id}_r{}.png", k + 1)
    }
}

fn mkdir(p: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(p).map_err(|source| SynthError::Io {
        path: p.to_path_buf(),
        source,
    })
}

/// Writes a generated cohort under `dir` and returns its manifest.
pub fn write_cohort(participants: &[SynthParticipant], dir: &Path) -> Result<(Manifest, PlantedTruth), SynthError> {
    for sub in [layout::VISUAL_DIR, layout::THERMAL_DIR, layout::MASK_DIR, layout::RATER_DIR] {
        mkdir(&dir.join(sub))?;
    }
    let mut rows = Vec::with_capacity(participants.len());
    for p in participants {
        let id = &p.record.participant_id;
        let visual_path = PathBuf::from(layout::VISUAL_DIR).join(format!("{id}.png"));
        let thermal_path = PathBuf::from(layout::THERMAL_DIR).join(format!("{id}.f32"));
        save_visual(&p.pair.visual, &dir.join(&visual_path))?;
        write_thermal_raw(&p.pair.thermal, &dir.join(&thermal_path))?;
        p.mask.save_png(&dir.join(layout::MASK_DIR).join(format!("{id}.png")))?;
        for (k, r) in p.raters.iter().enumerate() {
            r.save_png(&dir.join(layout::RATER_DIR).join(layout::rater_file(id, k)))?;
        }
        rows.push(ManifestRow {
            visual_path,
            thermal_path,
            record: p.record.clone(),
        });
    }
    let manifest = Manifest {
        base_dir: dir.to_path_buf(),
        rows,
    };
    write_manifest(&manifest, &dir.join(layout::MANIFEST))?;
    let truth = PlantedTruth {
        ids: participants.iter().map(|p| p.record.participant_id.clone()).collect(),
        clusters: participants.iter().map(|p| p.cluster).collect(),
        amplitudes: participants.iter().map(|p| p.amplitude).collect(),
    };
    write_planted_truth(&truth, &dir.join(layout::PLANTED_TRUTH))?;
    Ok((manifest, truth))
}

/// Generates a cohort and writes it under `dir`.
pub fn generate_cohort(spec: &CohortSpec, dir: &Path) -> Result<(Manifest, PlantedTruth), SynthError> {
    let participants = generate_cohort_in_memory(spec)?;
    write_cohort(&participants, dir)
}

pub fn write_planted_truth(truth: &PlantedTruth, path: &Path) -> Result<(), SynthError> {
    let mut out = String::from("participant_id,cluster,hotspot_amplitude\n");
    for ((id, c), a) in truth.ids.iter().zip(&truth.clusters).zip(&truth.amplitudes) {
        out.push_str(&format!("{id},{c},{a:.6}\n"));
    }
    fs::write(path, out).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_planted_truth(path: &Path) -> Result<PlantedTruth, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut truth = PlantedTruth {
        ids: Vec::new(),
        clusters: Vec::new(),
        amplitudes: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let parsed = match cells.as_slice() {
            [id, c, a] => c.parse::<usize>().ok().zip(a.parse::<f64>().ok()).map(|(c, a)| (id.to_string(), c, a)),
            _ => None,
        };
        let (id, c, a) =
            parsed.ok_or_else(|| SynthError::InvalidSpec(format!("{}: malformed line {}", path.display(), i + 1)))?;
        truth.ids.push(id);
        truth.clusters.push(c);
        truth.amplitudes.push(a);
    }
    Ok(truth)
}
