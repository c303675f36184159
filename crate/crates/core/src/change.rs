//! Visual, semantic and geometric change between two renderings of a scene
//! taken from the same pose.
//!
//! By convention the first argument is the rendering of the rescan and the
//! second the rendering of the reference scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::image::{luma, ColorImage, DepthMap, LabelImage};
use crate::mesh::SceneModel;
use crate::render::{render, RenderedViews};

/// How color images are reduced before the visual measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisualMode {
    /// Rec. 601 luma.
    #[default]
    Grayscale,
    /// Every RGB channel is a separate sample; means are taken per channel.
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualChange {
    pub rho_v: f64,
    pub zeta_v: f64,
    /// Set when either score had a zero denominator; both scores are then 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChangeFlags {
    pub visual_degenerate: bool,
    pub semantic_empty_overlap: bool,
    pub geometric_empty_overlap: bool,
}

impl ChangeFlags {
    pub fn any(&self) -> bool {
        self.visual_degenerate || self.semantic_empty_overlap || self.geometric_empty_overlap
    }

    /// `|`-separated flag names, empty when no flag is set.
    pub fn to_tokens(&self) -> String {
        let mut out = Vec::new();
        if self.visual_degenerate {
            out.push("visual_degenerate");
        }
        if self.semantic_empty_overlap {
            out.push("semantic_empty");
        }
        if self.geometric_empty_overlap {
            out.push("geometric_empty");
        }
        out.join("|")
    }

    pub fn from_tokens(s: &str) -> Result<Self> {
        let mut f = ChangeFlags::default();
        for tok in s.split('|').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "visual_degenerate" => f.visual_degenerate = true,
                "semantic_empty" => f.semantic_empty_overlap = true,
                "geometric_empty" => f.geometric_empty_overlap = true,
                other => return Err(Error::InvalidArgument(format!("unknown change flag `{other}`"))),
            }
        }
        Ok(f)
    }
}

/// All four change measures for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeScores {
    pub rho_v: f64,
    pub zeta_v: f64,
    pub zeta_s: f64,
    /// Millimeters.
    pub zeta_g: f64,
    /// Fraction of pixels with valid depth in both renderings.
    pub valid_overlap: f64,
    pub flags: ChangeFlags,
}

/// Pixels with valid depth in both maps.
pub fn mutual_valid_mask(d: &DepthMap, d_ref: &DepthMap) -> Result<Vec<bool>> {
    d.same_size(d_ref)?;
    Ok(d.as_slice()
        .iter()
        .zip(d_ref.as_slice())
        .map(|(a, b)| *a > 0.0 && *b > 0.0)
        .collect())
}

/// `ρ_v = Σ(I−I′)² / √(ΣI²·ΣI′²)` (0 for identical images) and the
/// mean-subtracted normalized cross-correlation
/// `ζ_v = Σ Ī·Ī′ / √(ΣĪ²·ΣĪ′²)` (1 for identical images), over the pixels
/// selected by `mask` (all pixels when `None`).
pub fn visual_change(
    i: &ColorImage,
    i_ref: &ColorImage,
    mask: Option<&[bool]>,
    mode: VisualMode,
) -> Result<VisualChange> {
    i.same_size(i_ref)?;
    if let Some(m) = mask {
        if m.len() != i.len() {
            return Err(Error::InvalidArgument(format!(
                "mask of {} entries for an image of {} pixels",
                m.len(),
                i.len()
            )));
        }
    }
    let selected = |idx: usize| mask.is_none_or(|m| m[idx]);
    let channels: &[usize] = match mode {
        VisualMode::Grayscale => &[0],
        VisualMode::PerChannel => &[0, 1, 2],
    };
    let sample = |px: [u8; 3], ch: usize| -> f64 {
        match mode {
            VisualMode::Grayscale => luma(px),
            VisualMode::PerChannel => px[ch] as f64,
        }
    };

    let a = i.as_slice();
    let b = i_ref.as_slice();
    let mut ssd = 0.0;
    let mut ea = 0.0;
    let mut eb = 0.0;
    let mut ncc = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut count = 0usize;
    for &ch in channels {
        let mut sa = 0.0;
        let mut sb = 0.0;
        let mut n = 0usize;
        for idx in (0..a.len()).filter(|&k| selected(k)) {
            sa += sample(a[idx], ch);
            sb += sample(b[idx], ch);
            n += 1;
        }
        if n == 0 {
            continue;
        }
        let (ma, mb) = (sa / n as f64, sb / n as f64);
        for idx in (0..a.len()).filter(|&k| selected(k)) {
            let (x, y) = (sample(a[idx], ch), sample(b[idx], ch));
            ssd += (x - y) * (x - y);
            ea += x * x;
            eb += y * y;
            let (xc, yc) = (x - ma, y - mb);
            ncc += xc * yc;
            va += xc * xc;
            vb += yc * yc;
        }
        count += n;
    }
    let rho_den = (ea * eb).sqrt();
    let zeta_den = (va * vb).sqrt();
    if count == 0 || !(rho_den > 0.0) || !(zeta_den > 0.0) {
        return Ok(VisualChange {
            rho_v: 0.0,
            zeta_v: 0.0,
            degenerate: true,
        });
    }
    Ok(VisualChange {
        rho_v: ssd / rho_den,
        zeta_v: (ncc / zeta_den).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Fraction of pixels labeled in both images whose labels differ.
/// Returns `(ζ_s, empty_overlap)`; `ζ_s = 0` when nothing overlaps.
pub fn semantic_change(l: &LabelImage, l_ref: &LabelImage) -> Result<(f64, bool)> {
    l.same_size(l_ref)?;
    let mut both = 0usize;
    let mut differ = 0usize;
    for (a, b) in l.as_slice().iter().zip(l_ref.as_slice()) {
        if *a != 0 && *b != 0 {
            both += 1;
            if a != b {
                differ += 1;
            }
        }
    }
    if both == 0 {
        return Ok((0.0, true));
    }
    Ok((differ as f64 / both as f64, false))
}

/// Mean absolute depth difference in millimeters over pixels valid in both
/// maps. Returns `(ζ_g, empty_overlap)`; `ζ_g = 0` when nothing overlaps.
pub fn geometric_change(d: &DepthMap, d_ref: &DepthMap) -> Result<(f64, bool)> {
    d.same_size(d_ref)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in d.as_slice().iter().zip(d_ref.as_slice()) {
        if *a > 0.0 && *b > 0.0 {
            sum += (a - b).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Ok((0.0, true));
    }
    Ok((sum / n as f64 * 1000.0, false))
}

/// Change measures between a rescan rendering `test` and a reference
/// rendering `reference` of the same pose.
pub fn change_scores(test: &RenderedViews, reference: &RenderedViews, mode: VisualMode) -> Result<ChangeScores> {
    let mask = mutual_valid_mask(&test.depth, &reference.depth)?;
    let overlap = mask.iter().filter(|m| **m).count();
    let visual = visual_change(&test.color, &reference.color, Some(&mask), mode)?;
    let (zeta_s, sem_empty) = semantic_change(&test.labels, &reference.labels)?;
    let (zeta_g, geo_empty) = geometric_change(&test.depth, &reference.depth)?;
    Ok(ChangeScores {
        rho_v: visual.rho_v,
        zeta_v: visual.zeta_v,
        zeta_s,
        zeta_g,
        valid_overlap: if mask.is_empty() {
            0.0
        } else {
            overlap as f64 / mask.len() as f64
        },
        flags: ChangeFlags {
            visual_degenerate: visual.degenerate,
            semantic_empty_overlap: sem_empty,
            geometric_empty_overlap: geo_empty,
        },
    })
}

/// Renders rescan and reference from `pose` and compares them.
pub fn frame_change(
    rescan: &SceneModel,
    reference: &SceneModel,
    pose: &Pose,
    k: &Intrinsics,
    mode: VisualMode,
) -> Result<ChangeScores> {
    let test = render(rescan, pose, k);
    let refv = render(reference, pose, k);
    change_scores(&test, &refv, mode)
}

/// Per-scene averages. Each measure skips the frames flagged for it; a
/// measure is `None` when every frame was flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneChangeStats {
    pub frames: usize,
    pub rho_v: Option<f64>,
    pub zeta_v: Option<f64>,
    pub zeta_s: Option<f64>,
    pub zeta_g: Option<f64>,
}

pub fn scene_change_stats(frames: &[ChangeScores]) -> Result<SceneChangeStats> {
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
        let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    }
    let visual = || frames.iter().filter(|f| !f.flags.visual_degenerate);
    Ok(SceneChangeStats {
        frames: frames.len(),
        rho_v: mean(visual().map(|f| f.rho_v)),
        zeta_v: mean(visual().map(|f| f.zeta_v)),
        zeta_s: mean(
            frames
                .iter()
                .filter(|f| !f.flags.semantic_empty_overlap)
                .map(|f| f.zeta_s),
        ),
        zeta_g: mean(
            frames
                .iter()
                .filter(|f| !f.flags.geometric_empty_overlap)
                .map(|f| f.zeta_g),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_color(rng: &mut impl Rng, w: u32, h: u32) -> ColorImage {
        ColorImage::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    /// Straightforward double loop over rows and columns.
    fn naive_visual(i: &ColorImage, r: &ColorImage) -> (f64, f64) {
        let (w, h) = (i.width(), i.height());
        let (mut sum_a, mut sum_b) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                sum_a += luma(i.get(x, y));
                sum_b += luma(r.get(x, y));
            }
        }
        let n = (w * h) as f64;
        let (ma, mb) = (sum_a / n, sum_b / n);
        let (mut ssd, mut ea, mut eb, mut cross, mut va, mut vb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let a = luma(i.get(x, y));
                let b = luma(r.get(x, y));
                ssd += (a - b).powi(2);
                ea += a * a;
                eb += b * b;
                cross += (a - ma) * (b - mb);
                va += (a - ma).powi(2);
                vb += (b - mb).powi(2);
            }
        }
        (ssd / (ea * eb).sqrt(), cross / (va * vb).sqrt())
    }

    #[test]
    fn identical_images_have_no_visual_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_color(&mut rng, 16, 12);
        let v = visual_change(&img, &img, None, VisualMode::Grayscale).unwrap();
        assert_eq!(v.rho_v, 0.0);
        assert!((v.zeta_v - 1.0).abs() < 1e-12);
        assert!(!v.degenerate);
    }

    #[test]
    fn inverted_image_is_perfectly_anticorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_color(&mut rng, 16, 12);
        let inv = img.map(|p| p.map(|c| 255 - c));
        let v = visual_change(&img, &inv, None, VisualMode::Grayscale).unwrap();
        assert!((v.zeta_v + 1.0).abs() < 1e-12, "{}", v.zeta_v);
        let v = visual_change(&img, &inv, None, VisualMode::PerChannel).unwrap();
        assert!((v.zeta_v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn visual_change_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_color(&mut rng, 8, 8);
            let b = random_color(&mut rng, 8, 8);
            let v = visual_change(&a, &b, None, VisualMode::Grayscale).unwrap();
            let (rho, zeta) = naive_visual(&a, &b);
            assert!((v.rho_v - rho).abs() < 1e-12);
            assert!((v.zeta_v - zeta).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_flagged_degenerate() {
        let a = ColorImage::filled(8, 8, [10, 10, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_color(&mut rng, 8, 8);
        let v = visual_change(&a, &b, None, VisualMode::Grayscale).unwrap();
        assert!(v.degenerate);
        assert!(v.zeta_v.is_finite() && v.rho_v.is_finite());
        let mask = vec![false; 64];
        assert!(
            visual_change(&b, &b, Some(&mask), VisualMode::Grayscale)
                .unwrap()
                .degenerate
        );
    }

    #[test]
    fn semantic_change_counts_altered_pixels() {
        let a = LabelImage::from_vec(4, 1, vec![1, 2, 3, 0]).unwrap();
        assert_eq!(semantic_change(&a, &a).unwrap(), (0.0, false));
        let all = LabelImage::from_vec(4, 1, vec![2, 3, 1, 5]).unwrap();
        assert_eq!(semantic_change(&a, &all).unwrap(), (1.0, false));
        let half = LabelImage::from_vec(4, 1, vec![1, 9, 3, 7]).unwrap();
        // Overlap is the first three pixels; one of them differs.
        assert!((semantic_change(&a, &half).unwrap().0 - 1.0 / 3.0).abs() < 1e-15);
        let b = LabelImage::from_vec(4, 1, vec![1, 2, 7, 7]).unwrap();
        let c = LabelImage::from_vec(4, 1, vec![1, 2, 8, 8]).unwrap();
        assert_eq!(semantic_change(&b, &c).unwrap(), (0.5, false));
        let none = LabelImage::filled(4, 1, 0);
        assert_eq!(semantic_change(&a, &none).unwrap(), (0.0, true));
    }

    #[test]
    fn geometric_change_of_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = DepthMap::from_fn(32, 24, |_, _| rng.gen_range(0.5..4.0));
        let shifted = d.map(|v| v + 0.010);
        let (g, empty) = geometric_change(&shifted, &d).unwrap();
        assert!(!empty);
        assert!((g - 10.0).abs() < 1e-9, "{g}");
        assert_eq!(geometric_change(&d, &d).unwrap(), (0.0, false));
        let invalid = DepthMap::filled(32, 24, 0.0);
        assert_eq!(geometric_change(&d, &invalid).unwrap(), (0.0, true));
    }

    #[test]
    fn geometric_change_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut gen = || {
                DepthMap::from_fn(16, 12, |_, _| {
                    if rng.gen_bool(0.3) {
                        0.0
                    } else {
                        rng.gen_range(0.2..5.0)
                    }
                })
            };
            let (a, b) = (gen(), gen());
            let (mut s, mut n) = (0.0, 0);
            for y in 0..12 {
                for x in 0..16 {
                    if a.get(x, y) > 0.0 && b.get(x, y) > 0.0 {
                        s += (a.get(x, y) - b.get(x, y)).abs();
                        n += 1;
                    }
                }
            }
            let (g, _) = geometric_change(&a, &b).unwrap();
            assert!((g - s / n as f64 * 1000.0).abs() < 1e-9);
            assert_eq!(g, geometric_change(&b, &a).unwrap().0);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = LabelImage::filled(4, 4, 1);
        let b = LabelImage::filled(4, 5, 1);
        assert!(matches!(semantic_change(&a, &b), Err(Error::DimensionMismatch(..))));
    }

    #[test]
    fn stats_average_and_skip_flagged() {
        let base = ChangeScores {
            rho_v: 0.1,
            zeta_v: 0.9,
            zeta_s: 0.2,
            zeta_g: 10.0,
            valid_overlap: 1.0,
            flags: ChangeFlags::default(),
        };
        let one = scene_change_stats(&[base]).unwrap();
        assert_eq!(one.zeta_g, Some(10.0));
        assert_eq!(one.rho_v, Some(0.1));
        let second = ChangeScores { zeta_g: 30.0, ..base };
        assert_eq!(scene_change_stats(&[base, second]).unwrap().zeta_g, Some(20.0));
        let flagged = ChangeScores {
            zeta_g: 1000.0,
            zeta_v: -5.0,
            flags: ChangeFlags {
                visual_degenerate: true,
                geometric_empty_overlap: true,
                ..Default::default()
            },
            ..base
        };
        let s = scene_change_stats(&[base, flagged]).unwrap();
        assert_eq!(s.zeta_g, Some(10.0));
        assert_eq!(s.zeta_v, Some(0.9));
        assert!((s.zeta_s.unwrap() - 0.2).abs() < 1e-15);
        assert!(scene_change_stats(&[]).is_err());
    }

    #[test]
    fn flags_roundtrip_tokens() {
        let f = ChangeFlags {
            visual_degenerate: true,
            semantic_empty_overlap: false,
            geometric_empty_overlap: true,
        };
        assert_eq!(ChangeFlags::from_tokens(&f.to_tokens()).unwrap(), f);
        assert_eq!(ChangeFlags::from_tokens("").unwrap(), ChangeFlags::default());
    }

    proptest::proptest! {
        #[test]
        fn semantic_change_symmetric_and_relabel_invariant(
            a in proptest::collection::vec(0u16..6, 48),
            b in proptest::collection::vec(0u16..6, 48),
        ) {
            let la = LabelImage::from_vec(8, 6, a).unwrap();
            let lb = LabelImage::from_vec(8, 6, b).unwrap();
            let s = semantic_change(&la, &lb).unwrap();
            proptest::prop_assert_eq!(s, semantic_change(&lb, &la).unwrap());
            // Bijective relabeling of valid IDs, 0 stays invalid.
            let perm = |l: u16| if l == 0 { 0 } else { 100 + (l * 7) % 11 };
            let s2 = semantic_change(&la.map(perm), &lb.map(perm)).unwrap();
            proptest::prop_assert_eq!(s, s2);
        }

        #[test]
        fn geometric_change_scales_with_offset(c in -0.5f64..0.5) {
            let d = DepthMap::from_fn(8, 6, |x, y| 1.0 + 0.1 * x as f64 + 0.05 * y as f64);
            let (g, _) = geometric_change(&d, &d.map(|v| v + c)).unwrap();
            proptest::prop_assert!((g - 1000.0 * c.abs()).abs() < 1e-9);
        }
    }
}
