//! Numbered PNG sequences: `frames/%05d.png` (8-bit RGB) and
//! `masks/%05d.png` (grayscale, nonzero = hole), plus a `sequence.txt`
//! summary.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::field::{Image, Mask};

pub const FRAMES_DIR: &str = "frames";
pub const MASKS_DIR: &str = "masks";
pub const MANIFEST: &str = "sequence.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSpec {
    pub frames_dir: PathBuf,
    pub masks_dir: PathBuf,
}

impl SequenceSpec {
    /// The standard layout below `root`.
    pub fn under(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        Self {
            frames_dir: root.join(FRAMES_DIR),
            masks_dir: root.join(MASKS_DIR),
        }
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

/// Round-half-up 8-bit quantization of a `[0, 1]` intensity.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn dequantize(q: u8) -> f64 {
    f64::from(q) / 255.0
}

/// Numbered `.png` files in `dir`, ordered by index.
fn numbered_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let index = path
            .extension()
            .filter(|e| e.eq_ignore_ascii_case("png"))
            .and_then(|_| path.file_stem()?.to_str()?.parse::<u64>().ok());
        if let Some(index) = index {
            files.push((index, path));
        }
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

fn decode(index: usize, path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Frame {
        index,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn image_from_rgb8(img: &RgbImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Image::from_fn(3, h, w, |c, y, x| {
        dequantize(img.get_pixel(x as u32, y as u32)[c])
    })
}

pub fn image_to_rgb8(img: &Image) -> Result<RgbImage> {
    if img.channels() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "{} channels, expected RGB",
            img.channels()
        )));
    }
    Ok(RgbImage::from_fn(
        img.width() as u32,
        img.height() as u32,
        |x, y| {
            let (x, y) = (x as usize, y as usize);
            image::Rgb([0, 1, 2].map(|c| quantize(img.get(c, y, x))))
        },
    ))
}

pub fn mask_from_gray8(img: &GrayImage) -> Mask {
    Mask::from_fn(img.height() as usize, img.width() as usize, |y, x| {
        img.get_pixel(x as u32, y as u32)[0] == 0
    })
}

pub fn mask_to_gray8(m: &Mask) -> GrayImage {
    GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        image::Luma([if m.get(y as usize, x as usize) {
            0
        } else {
            255
        }])
    })
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(image_from_rgb8(&img.to_rgb8()))
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    image_to_rgb8(img)?
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(mask_from_gray8(&img.to_luma8()))
}

pub fn save_mask(m: &Mask, path: &Path) -> Result<()> {
    mask_to_gray8(m).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// All frames of a numbered directory. Every frame must share the size of
/// the first.
pub fn load_frames(dir: &Path) -> Result<Vec<Image>> {
    let files = numbered_files(dir)?;
    let mut frames: Vec<Image> = Vec::with_capacity(files.len());
    for (index, path) in files.iter().enumerate() {
        let img = image_from_rgb8(&decode(index, path)?.to_rgb8());
        check_size(
            index,
            frames.first().map(|f| (f.height(), f.width())),
            (img.height(), img.width()),
        )?;
        frames.push(img);
    }
    Ok(frames)
}

pub fn load_masks(dir: &Path) -> Result<Vec<Mask>> {
    let files = numbered_files(dir)?;
    let mut masks: Vec<Mask> = Vec::with_capacity(files.len());
    for (index, path) in files.iter().enumerate() {
        let m = mask_from_gray8(&decode(index, path)?.to_luma8());
        check_size(
            index,
            masks.first().map(|f| (f.height(), f.width())),
            (m.height(), m.width()),
        )?;
        masks.push(m);
    }
    Ok(masks)
}

fn check_size(index: usize, first: Option<(usize, usize)>, got: (usize, usize)) -> Result<()> {
    match first {
        Some(expected) if expected != got => Err(Error::Frame {
            index,
            message: format!(
                "size {}x{} differs from {}x{}",
                got.1, got.0, expected.1, expected.0
            ),
        }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Image>,
    pub masks: Vec<Mask>,
}

pub fn load_sequence(spec: &SequenceSpec) -> Result<Sequence> {
    let frames = load_frames(&spec.frames_dir)?;
    let masks = load_masks(&spec.masks_dir)?;
    if frames.len() != masks.len() {
        return Err(Error::LengthMismatch {
            what: "frame and mask counts",
            left: frames.len(),
            right: masks.len(),
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput("sequence"));
    }
    for (index, (f, m)) in frames.iter().zip(&masks).enumerate() {
        if !f.same_grid(m) {
            return Err(Error::Frame {
                index,
                message: format!(
                    "mask {}x{} does not match frame {}x{}",
                    m.width(),
                    m.height(),
                    f.width(),
                    f.height()
                ),
            });
        }
    }
    Ok(Sequence { frames, masks })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_frames(frames: &[Image], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        save_image(f, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

pub fn save_masks(masks: &[Mask], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (i, m) in masks.iter().enumerate() {
        save_mask(m, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}

/// Writes frames (and masks, when given) in the standard layout under `root`
/// together with `sequence.txt`.
pub fn save_sequence(frames: &[Image], masks: Option<&[Mask]>, root: &Path) -> Result<()> {
    if let Some(masks) = masks {
        if masks.len() != frames.len() {
            return Err(Error::LengthMismatch {
                what: "frame and mask counts",
                left: frames.len(),
                right: masks.len(),
            });
        }
    }
    let spec = SequenceSpec::under(root);
    save_frames(frames, &spec.frames_dir)?;
    if let Some(masks) = masks {
        save_masks(masks, &spec.masks_dir)?;
    }
    let (h, w) = frames.first().map_or((0, 0), |f| (f.height(), f.width()));
    let text = format!(
        "frames={}\nwidth={w}\nheight={h}\nmasks={}\n",
        frames.len(),
        masks.is_some()
    );
    let path = root.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ProceduralTexture;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn round_trip_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let tex = ProceduralTexture::new(4, 32.0);
        let frames: Vec<Image> = (0..3).map(|t| tex.render(12, 10, t as f64, 0.0)).collect();
        let masks: Vec<Mask> = (0..3)
            .map(|t| Mask::from_fn(12, 10, |y, x| y + x != t + 4))
            .collect();
        save_sequence(&frames, Some(&masks), dir.path()).unwrap();
        let seq = load_sequence(&SequenceSpec::under(dir.path())).unwrap();
        assert_eq!(seq.masks, masks);
        for (a, b) in frames.iter().zip(&seq.frames) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1.0 / 510.0 + 1e-15);
            }
        }
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.starts_with("frames=3\nwidth=10\nheight=12\n"));
    }

    #[test]
    fn zero_mask_file_is_fully_visible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        GrayImage::new(5, 4).save(&path).unwrap();
        assert!(load_mask(&path).unwrap().all_visible());
    }

    #[test]
    fn count_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![Image::filled(3, 4, 4, 0.5); 3];
        save_sequence(&frames, None, dir.path()).unwrap();
        save_masks(&[Mask::visible(4, 4)], &dir.path().join(MASKS_DIR)).unwrap();
        let err = load_sequence(&SequenceSpec::under(dir.path())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn odd_sized_frame_names_index() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![
            Image::filled(3, 4, 4, 0.5),
            Image::filled(3, 4, 4, 0.5),
            Image::filled(3, 5, 4, 0.5),
        ];
        save_frames(&frames, dir.path()).unwrap();
        let err = load_frames(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Frame { index: 2, .. }), "{err}");
    }

    #[test]
    fn missing_directory_names_path() {
        let err = load_frames(Path::new("/nonexistent/frames")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/frames"));
    }
}
