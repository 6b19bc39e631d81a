//! Synthetic stimuli: moving bars, single-basis probes, and dead-leaves images
//! panned into frame sequences as a stand-in for natural scenes and movies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimation::BasisModel;
use crate::image::{bilinear, FrameSequence, GrayImage, DEFAULT_FRAME_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" => Ok(Orientation::Horizontal),
            "vertical" => Ok(Orientation::Vertical),
            other => Err(Error::BadSpec(format!("unknown orientation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarStimulusSpec {
    pub frame_side: usize,
    pub bar_thickness: usize,
    pub orientation: Orientation,
    pub n_frames: usize,
    pub foreground: f64,
    pub background: f64,
}

impl BarStimulusSpec {
    /// Thickness 10% of the side (at least 1 px), `2 * frame_side` frames,
    /// foreground +1 on background -1.
    pub fn with_defaults(frame_side: usize, orientation: Orientation) -> Self {
        BarStimulusSpec {
            frame_side,
            bar_thickness: ((frame_side as f64 * 0.1).round() as usize).max(1),
            orientation,
            n_frames: 2 * frame_side,
            foreground: 1.0,
            background: -1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bar_thickness == 0 || self.bar_thickness > self.frame_side {
            return Err(Error::BadSpec(format!(
                "bar thickness {} outside 1..={}",
                self.bar_thickness, self.frame_side
            )));
        }
        if self.n_frames == 0 {
            return Err(Error::BadSpec("n_frames must be >= 1".into()));
        }
        if self.foreground == self.background
            || !self.foreground.is_finite()
            || !self.background.is_finite()
        {
            return Err(Error::BadSpec(
                "foreground and background must be distinct finite values".into(),
            ));
        }
        Ok(())
    }

    /// Leading edge of the bar in frame `t`.
    pub fn offset(&self, t: usize) -> usize {
        if self.n_frames == 1 {
            return 0;
        }
        let travel = (self.frame_side - self.bar_thickness) as f64;
        (t as f64 * travel / (self.n_frames - 1) as f64).round() as usize
    }
}

/// A bar sweeping once across the frame, edge to edge, linearly in time.
pub fn generate_moving_bar(spec: &BarStimulusSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let side = spec.frame_side;
    let frames = (0..spec.n_frames)
        .map(|t| {
            let start = spec.offset(t);
            let end = start + spec.bar_thickness;
            GrayImage::from_fn(side, side, |r, c| {
                let along = match spec.orientation {
                    Orientation::Horizontal => r,
                    Orientation::Vertical => c,
                };
                if (start..end).contains(&along) {
                    spec.foreground
                } else {
                    spec.background
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, DEFAULT_FRAME_RATE)
}

/// Basis image of `unit` (column of `A`) reshaped row-major into a square
/// patch.
pub fn generate_single_basis_probe(model: &BasisModel, unit: usize) -> Result<GrayImage> {
    if unit >= model.n_units() {
        return Err(Error::IndexOutOfRange {
            index: unit,
            len: model.n_units(),
        });
    }
    let side = model.patch_side().ok_or(Error::DimensionMismatch {
        what: "square patch pixel count",
        expected: 0,
        got: model.n_pixels(),
    })?;
    let col = model.a().column(unit);
    GrayImage::from_fn(side, side, |r, c| col[r * side + c])
}

/// Occlusion ("dead leaves") image model: opaque discs with power-law radii
/// (density ∝ r⁻³) and uniform gray levels, stacked front to back until the
/// canvas is covered, then lightly blurred.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadLeavesSpec {
    pub width: usize,
    pub height: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Gaussian blur sigma in pixels; 0 disables.
    pub blur_sigma: f64,
    pub seed: u64,
}

impl DeadLeavesSpec {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        DeadLeavesSpec {
            width,
            height,
            min_radius: 2.0,
            max_radius: 80.0,
            blur_sigma: 1.0,
            seed,
        }
    }
}

const MAX_LEAVES: usize = 2_000_000;

pub fn generate_dead_leaves(spec: &DeadLeavesSpec) -> Result<GrayImage> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::BadSpec(
            "dead-leaves canvas must be at least 1x1".into(),
        ));
    }
    if !(spec.min_radius > 0.0 && spec.max_radius >= spec.min_radius) {
        return Err(Error::BadSpec("need 0 < min_radius <= max_radius".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = vec![0.0; w * h];
    let mut covered = vec![false; w * h];
    let mut remaining = w * h;
    let (a, b) = (spec.min_radius.powi(-2), spec.max_radius.powi(-2));
    let margin = spec.max_radius;
    for _ in 0..MAX_LEAVES {
        if remaining == 0 {
            break;
        }
        let u: f64 = rng.random();
        let radius = (a - u * (a - b)).powf(-0.5);
        let cx = rng.random_range(-margin..w as f64 + margin);
        let cy = rng.random_range(-margin..h as f64 + margin);
        let gray: f64 = rng.random();
        let r0 = (cy - radius).floor().max(0.0) as usize;
        let r1 = ((cy + radius).ceil().max(0.0) as usize).min(h);
        let c0 = (cx - radius).floor().max(0.0) as usize;
        let c1 = ((cx + radius).ceil().max(0.0) as usize).min(w);
        let r2 = radius * radius;
        for r in r0..r1 {
            let dy = r as f64 + 0.5 - cy;
            for c in c0..c1 {
                let dx = c as f64 + 0.5 - cx;
                let idx = r * w + c;
                if !covered[idx] && dx * dx + dy * dy <= r2 {
                    covered[idx] = true;
                    values[idx] = gray;
                    remaining -= 1;
                }
            }
        }
    }
    if remaining > 0 {
        values
            .iter_mut()
            .zip(&covered)
            .filter(|(_, c)| !**c)
            .for_each(|(v, _)| *v = 0.5);
    }
    let img = GrayImage::new(w, h, values)?;
    if spec.blur_sigma > 0.0 {
        Ok(gaussian_blur(&img, spec.blur_sigma))
    } else {
        Ok(img)
    }
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &GrayImage, horizontal: bool| {
        GrayImage::from_fn(src.width(), src.height(), |r, c| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let d = i as isize - radius;
                    let (rr, cc) = if horizontal {
                        (r as isize, (c as isize + d).clamp(0, w - 1))
                    } else {
                        ((r as isize + d).clamp(0, h - 1), c as isize)
                    };
                    k * src.get(rr as usize, cc as usize)
                })
                .sum()
        })
        .expect("blur keeps a valid shape")
    };
    pass(&pass(img, true), false)
}

/// Camera path for [`generate_pan`]: the frame's top-left corner starts at
/// `start` (row, col) and moves by `velocity` pixels per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanSpec {
    pub frame_width: usize,
    pub frame_height: usize,
    pub n_frames: usize,
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub frame_rate: f64,
}

/// Frames cropped (with bilinear subpixel sampling) along a straight camera
/// path over a still image.
pub fn generate_pan(image: &GrayImage, spec: &PanSpec) -> Result<FrameSequence> {
    if spec.n_frames == 0 || spec.frame_width == 0 || spec.frame_height == 0 {
        return Err(Error::BadSpec(
            "pan needs at least one frame of size >= 1x1".into(),
        ));
    }
    let last = (spec.n_frames - 1) as f64;
    for (row, col) in [
        spec.start,
        (
            spec.start.0 + last * spec.velocity.0,
            spec.start.1 + last * spec.velocity.1,
        ),
    ] {
        let fits = row >= 0.0
            && col >= 0.0
            && row + (spec.frame_height - 1) as f64 <= (image.height() - 1) as f64
            && col + (spec.frame_width - 1) as f64 <= (image.width() - 1) as f64;
        if !fits {
            return Err(Error::BadSpec(format!(
                "pan leaves the {}x{} image at ({row}, {col})",
                image.width(),
                image.height()
            )));
        }
    }
    let frames = (0..spec.n_frames)
        .map(|t| {
            let oy = spec.start.0 + t as f64 * spec.velocity.0;
            let ox = spec.start.1 + t as f64 * spec.velocity.1;
            GrayImage::from_fn(spec.frame_width, spec.frame_height, |r, c| {
                bilinear(image, oy + r as f64, ox + c as f64)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, spec.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::initial_filters;
    use crate::image::PatchSet;
    use crate::topography::build_topography;
    use crate::whitening::fit_whitening;
    use nalgebra::DMatrix;

    #[test]
    fn horizontal_bar_positions() {
        let spec = BarStimulusSpec::with_defaults(20, Orientation::Horizontal);
        assert_eq!(spec.bar_thickness, 2);
        assert_eq!(spec.n_frames, 40);
        let seq = generate_moving_bar(&spec).unwrap();
        assert_eq!(seq.len(), 40);
        let first = &seq.frames()[0];
        for r in 0..20 {
            for c in 0..20 {
                let expected = if r < 2 { 1.0 } else { -1.0 };
                assert_eq!(first.get(r, c), expected);
            }
        }
        for frame in seq.frames() {
            let fg = frame.values().iter().filter(|&&v| v == 1.0).count();
            assert_eq!(fg, 2 * 20);
        }
        assert_eq!(spec.offset(39), 18);
        let last = &seq.frames()[39];
        assert_eq!(last.get(19, 0), 1.0);
        assert_eq!(last.get(17, 0), -1.0);
    }

    #[test]
    fn single_frame_bar_sits_at_zero() {
        let spec = BarStimulusSpec {
            n_frames: 1,
            ..BarStimulusSpec::with_defaults(8, Orientation::Vertical)
        };
        assert_eq!(spec.offset(0), 0);
        let seq = generate_moving_bar(&spec).unwrap();
        assert_eq!(seq.frames()[0].get(5, 0), 1.0);
    }

    #[test]
    fn vertical_is_transposed_horizontal() {
        let h = generate_moving_bar(&BarStimulusSpec::with_defaults(12, Orientation::Horizontal))
            .unwrap();
        let v = generate_moving_bar(&BarStimulusSpec::with_defaults(12, Orientation::Vertical))
            .unwrap();
        for (a, b) in h.frames().iter().zip(v.frames()) {
            assert_eq!(&a.transpose(), b);
        }
        assert_eq!(
            h,
            generate_moving_bar(&BarStimulusSpec::with_defaults(12, Orientation::Horizontal))
                .unwrap()
        );
    }

    #[test]
    fn bad_bar_specs() {
        let base = BarStimulusSpec::with_defaults(8, Orientation::Horizontal);
        for spec in [
            BarStimulusSpec {
                bar_thickness: 0,
                ..base.clone()
            },
            BarStimulusSpec {
                bar_thickness: 9,
                ..base.clone()
            },
            BarStimulusSpec {
                n_frames: 0,
                ..base.clone()
            },
            BarStimulusSpec {
                foreground: -1.0,
                ..base.clone()
            },
        ] {
            assert!(matches!(generate_moving_bar(&spec), Err(Error::BadSpec(_))));
        }
    }

    #[test]
    fn probe_reshapes_basis_column() {
        let x = DMatrix::from_fn(300, 9, |r, c| {
            ((r * 13 + c * 5) % 11) as f64 + (r % 4 * c) as f64
        });
        let patches = PatchSet::new(x, 3, "t", false).unwrap();
        let whitening = fit_whitening(&patches, 4).unwrap();
        let w = initial_filters(4, 4, 1).unwrap();
        let model = BasisModel::from_filters(
            w,
            &whitening,
            build_topography(2, 2, 0).unwrap(),
            0.005,
            1,
            vec![],
        )
        .unwrap();
        let probe = generate_single_basis_probe(&model, 2).unwrap();
        assert_eq!(probe.values(), model.a().column(2).as_slice());
        let other = generate_single_basis_probe(&model, 3).unwrap();
        assert_ne!(probe, other);
        assert!(matches!(
            generate_single_basis_probe(&model, 4),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn dead_leaves_is_covered_and_deterministic() {
        let spec = DeadLeavesSpec::new(64, 48, 3);
        let a = generate_dead_leaves(&spec).unwrap();
        assert_eq!(a, generate_dead_leaves(&spec).unwrap());
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.variance() > 0.0);
        assert_ne!(
            a,
            generate_dead_leaves(&DeadLeavesSpec::new(64, 48, 4)).unwrap()
        );
    }

    #[test]
    fn pan_integer_steps_are_crops() {
        let img = GrayImage::from_fn(30, 20, |r, c| (r * 30 + c) as f64).unwrap();
        let spec = PanSpec {
            frame_width: 5,
            frame_height: 4,
            n_frames: 6,
            start: (2.0, 1.0),
            velocity: (1.0, 2.0),
            frame_rate: 24.0,
        };
        let seq = generate_pan(&img, &spec).unwrap();
        for (t, frame) in seq.frames().iter().enumerate() {
            assert_eq!(frame.get(0, 0), img.get(2 + t, 1 + 2 * t));
            assert_eq!(frame.get(3, 4), img.get(5 + t, 5 + 2 * t));
        }
        let too_far = PanSpec {
            n_frames: 20,
            ..spec
        };
        assert!(generate_pan(&img, &too_far).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let flat = GrayImage::filled(9, 7, 0.25).unwrap();
        let b = gaussian_blur(&flat, 1.5);
        assert!(b.values().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
