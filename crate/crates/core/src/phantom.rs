//! Synthetic pelvic radiograph phantoms with controllable sacroiliitis
//! severity, ground-truth masks, truth boxes, grades, and follow-up
//! trajectories.
//!
//! The geometry is parametric and lives entirely in this module: two
//! iliac-wing blobs (pelvis, label 1), a central sacrum trapezoid
//! (label 2) overlapping the wings, and one joint band per side rendered
//! where the sacrum meets each wing. The only contract downstream is the
//! mask labels, the truth boxes, and a joint appearance monotone in grade
//! (darker crisp line at grade 0, erosions and growing sclerosis through
//! grades 2-3, a bridged/absent joint at grade 4).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gray::{GrayImage, LabelMask, Rect, LABEL_PELVIS, LABEL_SACRUM};
use crate::labels::mny_positive;
use crate::manifest::{FollowUpEntry, FollowUpManifest, Manifest, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub grade_left: u8,
    pub grade_right: u8,
    /// Clutter intensity in [0,1]: hip joints, pubic symphysis, and
    /// soft-tissue texture away from the SIJ.
    pub distractor_level: f64,
    /// Additive Gaussian noise, in grayscale units of the 16-bit range.
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 628,
            height: 416,
            grade_left: 0,
            grade_right: 0,
            distractor_level: 0.0,
            noise_sigma: 150.0,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidSpec(format!(
                "phantom must be at least 64x64, got {}x{}",
                self.height, self.width
            )));
        }
        if self.width <= self.height {
            return Err(Error::InvalidSpec(
                "pelvis phantoms are landscape: width must exceed height".into(),
            ));
        }
        if self.grade_left > 4 || self.grade_right > 4 {
            return Err(Error::InvalidSpec("grades must be in 0..=4".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_level) {
            return Err(Error::InvalidSpec("distractor_level must be in [0,1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidSpec("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub image: GrayImage,
    pub mask: LabelMask,
    /// Left/right SIJ truth boxes in pixel coordinates.
    pub truth_boxes: (Rect, Rect),
    pub grades: (u8, u8),
    pub label: u8,
}

/// Grade-dependent joint appearance. All columns are monotone in grade.
struct JointAppearance {
    line_depth: f32,
    sclerosis: f32,
    notch_density: f64,
    width_scale: f64,
}

fn joint_appearance(grade: u8) -> JointAppearance {
    let (line_depth, sclerosis, notch_density, width_scale) = match grade {
        0 => (12000.0, 0.0, 0.0, 1.0),
        1 => (9000.0, 2500.0, 0.10, 1.2),
        2 => (7000.0, 9000.0, 0.30, 1.5),
        3 => (4000.0, 15000.0, 0.50, 1.9),
        _ => (0.0, 21000.0, 0.80, 2.2),
    };
    JointAppearance {
        line_depth,
        sclerosis,
        notch_density,
        width_scale,
    }
}

/// Internal geometry, all fractions of the image dimensions.
struct Geometry {
    h: usize,
    w: usize,
    /// Dilation-equivalent radius used only for the truth region.
    joint_reach: usize,
}

impl Geometry {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            joint_reach: ((w as f64 * 0.02).round() as usize).max(1),
        }
    }

    /// Rounded-rectangle iliac wing (superellipse, exponent 4).
    fn in_wing(&self, r: usize, c: usize, left: bool) -> bool {
        let (h, w) = (self.h as f64, self.w as f64);
        let cc = if left { 0.26 * w } else { 0.74 * w };
        let u = (r as f64 - 0.40 * h) / (0.30 * h);
        let v = (c as f64 - cc) / (0.15 * w);
        u.powi(4) + v.powi(4) <= 1.0
    }

    /// Sacrum trapezoid tapering to an apex; t runs 0 (top) to 1 (bottom).
    fn sacrum_half_width(&self, r: usize) -> Option<f64> {
        let h = self.h as f64;
        let top = 0.16 * h;
        let taper_start = 0.52 * h;
        let apex = 0.68 * h;
        let rf = r as f64;
        if rf < top || rf > apex {
            return None;
        }
        let w = self.w as f64;
        if rf <= taper_start {
            // widens slightly downward so the edge stays inside the wing
            let t = (rf - top) / (taper_start - top);
            Some((0.115 + 0.020 * t) * w)
        } else {
            let t = (rf - taper_start) / (apex - taper_start);
            Some((0.135 - 0.115 * t) * w)
        }
    }

    fn in_sacrum(&self, r: usize, c: usize) -> bool {
        match self.sacrum_half_width(r) {
            Some(hw) => (c as f64 - 0.5 * self.w as f64).abs() <= hw,
            None => false,
        }
    }

    /// Row span of the rendered joint band.
    fn joint_rows(&self) -> (usize, usize) {
        (
            (0.18 * self.h as f64) as usize,
            (0.50 * self.h as f64) as usize,
        )
    }

    /// Column of the sacrum lateral edge at this row (left side; the
    /// right side mirrors).
    fn edge_col(&self, r: usize, left: bool) -> Option<f64> {
        let hw = self.sacrum_half_width(r)?;
        let cx = 0.5 * self.w as f64;
        Some(if left { cx - hw } else { cx + hw })
    }
}

/// Truth region per joint: pelvis pixels within `joint_reach` of any
/// sacrum pixel, computed by brute-force distance checks inside a window
/// around the joint. Independent of the anatomy module's morphology.
fn truth_box(geom: &Geometry, mask: &LabelMask, left: bool) -> Rect {
    let reach = geom.joint_reach as isize;
    let reach2 = reach * reach;
    let (h, w) = (geom.h, geom.w);

    let mut cols: Vec<f64> = Vec::new();
    for r in 0..h {
        if let Some(c) = geom.edge_col(r, left) {
            cols.push(c);
        }
    }
    let cmin = (cols.iter().cloned().fold(f64::MAX, f64::min) as isize - 2 * reach).max(0) as usize;
    let cmax =
        ((cols.iter().cloned().fold(f64::MIN, f64::max) as isize + 2 * reach) as usize).min(w - 1);

    let data = mask.data();
    let mut bbox: Option<Rect> = None;
    for r in 0..h {
        for c in cmin..=cmax {
            if data[[r, c]] != LABEL_PELVIS {
                continue;
            }
            let mut near = false;
            'scan: for dr in -reach..=reach {
                for dc in -reach..=reach {
                    if dr * dr + dc * dc > reach2 {
                        continue;
                    }
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr >= 0
                        && nc >= 0
                        && (nr as usize) < h
                        && (nc as usize) < w
                        && data[[nr as usize, nc as usize]] == LABEL_SACRUM
                    {
                        near = true;
                        break 'scan;
                    }
                }
            }
            if near {
                let px = Rect::new(r, c, r + 1, c + 1);
                bbox = Some(match bbox {
                    Some(b) => b.union(&px),
                    None => px,
                });
            }
        }
    }
    let tight = bbox.expect("joint region exists by construction");
    // same margin convention the localization pipeline applies
    let mr = (tight.height() as f64 * 0.1).round() as usize;
    let mc = (tight.width() as f64 * 0.1).round() as usize;
    Rect {
        row0: tight.row0.saturating_sub(mr),
        col0: tight.col0.saturating_sub(mc),
        row1: (tight.row1 + mr).min(h),
        col1: (tight.col1 + mc).min(w),
    }
}

fn render_joint(
    canvas: &mut Array2<f32>,
    geom: &Geometry,
    grade: u8,
    left: bool,
    rng: &mut ChaCha8Rng,
    line_pixels: &mut Vec<(usize, usize)>,
) {
    let app = joint_appearance(grade);
    let (r0, r1) = geom.joint_rows();
    let base_width = (geom.w as f64 * 0.006).max(1.0);
    let line_w = (base_width * app.width_scale).round() as usize;
    let scler_w = (geom.w as f64 * 0.008).max(1.0) as usize;

    for r in r0..=r1 {
        let edge = match geom.edge_col(r, left) {
            Some(e) => e,
            None => continue,
        };
        let notched = rng.gen_bool(app.notch_density);
        // the dark joint line sits on the pelvis side of the edge
        for k in 0..line_w.max(1) {
            let c = if left {
                edge as usize + k
            } else {
                (edge as usize).saturating_sub(k)
            };
            if c >= geom.w {
                continue;
            }
            if !notched && app.line_depth > 0.0 {
                canvas[[r, c]] -= app.line_depth;
                line_pixels.push((r, c));
            } else if app.line_depth == 0.0 || notched {
                // erosion/bridging: bone-bright fill instead of a line
                canvas[[r, c]] += app.sclerosis * 0.5;
                line_pixels.push((r, c));
            }
        }
        // sclerotic band further into the pelvis side
        if app.sclerosis > 0.0 {
            for k in 0..scler_w {
                let off = line_w.max(1) + k;
                let c = if left {
                    edge as usize + off
                } else {
                    (edge as usize).saturating_sub(off)
                };
                if c < geom.w {
                    canvas[[r, c]] += app.sclerosis;
                }
            }
        }
    }
}

fn render_distractors(
    canvas: &mut Array2<f32>,
    geom: &Geometry,
    level: f64,
    truth: &(Rect, Rect),
    rng: &mut ChaCha8Rng,
) {
    if level <= 0.0 {
        return;
    }
    let (h, w) = (geom.h as f64, geom.w as f64);
    let amp = (9000.0 * level) as f32;

    let paint_ellipse = |cr: f64, cc: f64, ar: f64, ac: f64, value: f32, canvas: &mut Array2<f32>| {
        let r_lo = ((cr - ar).max(0.0)) as usize;
        let r_hi = ((cr + ar).min(h - 1.0)) as usize;
        let c_lo = ((cc - ac).max(0.0)) as usize;
        let c_hi = ((cc + ac).min(w - 1.0)) as usize;
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                if truth.0.contains(r, c) || truth.1.contains(r, c) {
                    continue;
                }
                let u = (r as f64 - cr) / ar;
                let v = (c as f64 - cc) / ac;
                if u * u + v * v <= 1.0 {
                    canvas[[r, c]] += value;
                }
            }
        }
    };

    // hip joints: bright femoral heads low and lateral
    paint_ellipse(0.80 * h, 0.16 * w, 0.09 * h, 0.05 * w, amp, canvas);
    paint_ellipse(0.80 * h, 0.84 * w, 0.09 * h, 0.05 * w, amp, canvas);
    // pubic symphysis: small midline structure at the bottom
    paint_ellipse(0.90 * h, 0.495 * w, 0.06 * h, 0.012 * w, amp, canvas);
    paint_ellipse(0.90 * h, 0.505 * w, 0.06 * h, 0.012 * w, amp, canvas);
    // bowel-gas / soft-tissue blobs scattered away from the joints
    let n_blobs = (10.0 * level).round() as usize;
    for _ in 0..n_blobs {
        let cr = rng.gen_range(0.05..0.95) * h;
        let cc = rng.gen_range(0.05..0.95) * w;
        let ar = rng.gen_range(0.02..0.08) * h;
        let ac = rng.gen_range(0.02..0.08) * w;
        let value = rng.gen_range(-1.0..1.0) as f32 * amp * 0.7;
        paint_ellipse(cr, cc, ar, ac, value, canvas);
    }
}

/// Deterministic phantom render: same spec, bit-identical output.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomSample> {
    spec.validate()?;
    let geom = Geometry::new(spec.height, spec.width);
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // mask first: wings then sacrum painted over
    let mut mask = LabelMask::zeros(h, w);
    {
        let data = mask.data_mut();
        for r in 0..h {
            for c in 0..w {
                if geom.in_sacrum(r, c) {
                    data[[r, c]] = LABEL_SACRUM;
                } else if geom.in_wing(r, c, true) || geom.in_wing(r, c, false) {
                    data[[r, c]] = LABEL_PELVIS;
                }
            }
        }
    }

    let truth_left = truth_box(&geom, &mask, true);
    let truth_right = truth_box(&geom, &mask, false);
    let truth = (truth_left, truth_right);

    // image: soft-tissue background, bright bone, joint bands, clutter
    let mut canvas = Array2::<f32>::zeros((h, w));
    let body_cr = 0.5 * h as f64;
    let body_cc = 0.5 * w as f64;
    for r in 0..h {
        for c in 0..w {
            let u = (r as f64 - body_cr) / (0.52 * h as f64);
            let v = (c as f64 - body_cc) / (0.48 * w as f64);
            let soft = if u * u + v * v <= 1.0 { 14000.0 } else { 6000.0 };
            let bone = if mask.data()[[r, c]] != 0 { 18000.0 } else { 0.0 };
            canvas[[r, c]] = soft + bone;
        }
    }

    let mut line_pixels = Vec::new();
    render_joint(
        &mut canvas,
        &geom,
        spec.grade_left,
        true,
        &mut rng,
        &mut line_pixels,
    );
    render_joint(
        &mut canvas,
        &geom,
        spec.grade_right,
        false,
        &mut rng,
        &mut line_pixels,
    );
    render_distractors(&mut canvas, &geom, spec.distractor_level, &truth, &mut rng);

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        canvas.mapv_inplace(|v| v + normal.sample(&mut rng) as f32);
    }

    let image = GrayImage::from_f32(&canvas, 16)?;
    let label = u8::from(mny_positive(spec.grade_left, spec.grade_right)?);
    Ok(PhantomSample {
        image,
        mask,
        truth_boxes: truth,
        grades: (spec.grade_left, spec.grade_right),
        label,
    })
}

/// Pixels the joint renderer touched for one spec; used by tests to
/// verify truth-box containment without exposing render internals.
pub fn joint_line_pixels(spec: &PhantomSpec) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    let geom = Geometry::new(spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut canvas = Array2::<f32>::zeros((spec.height, spec.width));
    let mut pixels = Vec::new();
    render_joint(
        &mut canvas,
        &geom,
        spec.grade_left,
        true,
        &mut rng,
        &mut pixels,
    );
    render_joint(
        &mut canvas,
        &geom,
        spec.grade_right,
        false,
        &mut rng,
        &mut pixels,
    );
    Ok(pixels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n: usize,
    /// Per-joint grade distribution, summing to 1.
    pub grade_distribution: [f64; 5],
    pub distractor_level: f64,
    pub noise_sigma: f64,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub cohort_tag: String,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n: 100,
            grade_distribution: [0.30, 0.15, 0.25, 0.20, 0.10],
            distractor_level: 0.5,
            noise_sigma: 150.0,
            width: 628,
            height: 416,
            seed: 0,
            cohort_tag: "phantom".into(),
        }
    }
}

impl CorpusConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("corpus needs n >= 1".into()));
        }
        let sum: f64 = self.grade_distribution.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.grade_distribution.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "grade distribution must sum to 1, sums to {sum}"
            )));
        }
        Ok(())
    }

    /// Label prevalence implied by independent per-joint sampling,
    /// enumerated over all 25 grade pairs.
    pub fn implied_prevalence(&self) -> f64 {
        let mut p = 0.0;
        for l in 0..5u8 {
            for r in 0..5u8 {
                if mny_positive(l, r).expect("grades in range") {
                    p += self.grade_distribution[l as usize] * self.grade_distribution[r as usize];
                }
            }
        }
        p
    }
}

fn sample_grade(dist: &[f64; 5], rng: &mut impl Rng) -> u8 {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (g, &p) in dist.iter().enumerate() {
        acc += p;
        if x < acc {
            return g as u8;
        }
    }
    4
}

/// Generate `n` phantoms plus a manifest under `out_dir` (images/ and
/// masks/ subdirectories). Samples render in parallel; the manifest is
/// assembled in sample-id order, so the output is deterministic.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    // draw grades sequentially so the stream is stable, render in parallel
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let specs: Vec<(String, PhantomSpec)> = (0..config.n)
        .map(|i| {
            let grade_left = sample_grade(&config.grade_distribution, &mut rng);
            let grade_right = sample_grade(&config.grade_distribution, &mut rng);
            let sample_seed: u64 = rng.gen();
            (
                format!("{}-{i:05}", config.cohort_tag),
                PhantomSpec {
                    seed: sample_seed,
                    width: config.width,
                    height: config.height,
                    grade_left,
                    grade_right,
                    distractor_level: config.distractor_level,
                    noise_sigma: config.noise_sigma,
                },
            )
        })
        .collect();

    let entries: Result<Vec<ManifestEntry>> = specs
        .par_iter()
        .map(|(sample_id, spec)| {
            let sample = generate_phantom(spec)?;
            let image_rel = PathBuf::from("images").join(format!("{sample_id}.png"));
            let mask_rel = PathBuf::from("masks").join(format!("{sample_id}.png"));
            sample.image.save_png(&out_dir.join(&image_rel))?;
            sample.mask.save_png(&out_dir.join(&mask_rel))?;
            Ok(ManifestEntry {
                sample_id: sample_id.clone(),
                image_path: image_rel,
                mask_path: Some(mask_rel),
                pred_mask_path: None,
                crop_path: None,
                sij_boxes: Some(crate::anatomy::SijBoxes {
                    left: sample.truth_boxes.0,
                    right: sample.truth_boxes.1,
                    margin_applied: 0.1,
                }),
                grades: sample.grades,
                label: sample.label,
                cohort_tag: config.cohort_tag.clone(),
            })
        })
        .collect();

    let mut manifest = Manifest::new(config.seed);
    manifest.entries = entries?;
    manifest.entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Near-miss stratum: baseline-negative with combined grade burden >= 2
/// (e.g. (1,1) or a unilateral grade 2).
pub fn is_near_miss(grades: (u8, u8)) -> bool {
    grades.0 as u16 + grades.1 as u16 >= 2
}

/// Synthesize follow-up labels: baseline-negative samples progress with
/// probability `progression_rate`, multiplied by `1 + high_risk_boost`
/// for the near-miss stratum. Baseline-positives stay positive.
pub fn synth_followup(
    manifest: &Manifest,
    progression_rate: f64,
    high_risk_boost: f64,
    seed: u64,
) -> Result<FollowUpManifest> {
    if !(0.0..=1.0).contains(&progression_rate) || high_risk_boost < 0.0 {
        return Err(Error::InvalidSpec(
            "progression rate must be in [0,1] and boost non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fu = FollowUpManifest::new(seed);
    for e in &manifest.entries {
        let followup_label = if e.label == 1 {
            1
        } else {
            let p = if is_near_miss(e.grades) {
                (progression_rate * (1.0 + high_risk_boost)).min(1.0)
            } else {
                progression_rate
            };
            u8::from(p > 0.0 && rng.gen_bool(p))
        };
        fu.entries.push(FollowUpEntry {
            sample_id: e.sample_id.clone(),
            baseline_label: e.label,
            followup_label,
            horizon_months: 24,
        });
    }
    Ok(fu)
}
