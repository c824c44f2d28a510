//! Frame-sequence ingestion, the BQC1 raw clip format and PNG visualization.
//!
//! BQC1 layout, little-endian throughout:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..4   | magic `BQC1`                            |
//! | 4..20  | t, c, h, w as `u32`                     |
//! | 20     | dtype: 1 = real32, 2 = real64           |
//! | 21     | layout: 0 = t-major, row-major          |
//! | 22..24 | reserved, zero                          |
//! | 24..   | payload, `t*c*h*w` values               |

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::VideoClip;

pub const MAGIC: &[u8; 4] = b"BQC1";
pub const HEADER_LEN: usize = 24;
const LAYOUT_T_MAJOR: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Ppm,
    Png,
}

impl FrameFormat {
    fn matches(self, path: &Path) -> bool {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match self {
            FrameFormat::Ppm => matches!(ext.as_deref(), Some("ppm" | "pnm")),
            FrameFormat::Png => ext.as_deref() == Some("png"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequenceSource {
    pub dir: PathBuf,
    /// `None` accepts both PPM and PNG files.
    pub format: Option<FrameFormat>,
    /// 1 (luma) or 3 (RGB).
    pub channels: usize,
}

impl FrameSequenceSource {
    pub fn rgb(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            format: None,
            channels: 3,
        }
    }

    /// Frame files in lexicographic order.
    pub fn frame_paths(&self) -> Result<Vec<PathBuf>> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut paths = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            let accepted = match self.format {
                Some(f) => f.matches(&path),
                None => FrameFormat::Ppm.matches(&path) || FrameFormat::Png.matches(&path),
            };
            if accepted && path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(paths)
    }
}

fn decode(path: &Path, channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Ingestion(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let wide = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    // channel-major planes
    let interleaved: Vec<f64> = match (channels, wide) {
        (3, false) => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (3, true) => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        (1, false) => img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        (1, true) => img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        _ => return Err(Error::Config(format!("frames must have 1 or 3 channels, not {channels}"))),
    };
    let mut planes = vec![0.0; channels * h * w];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            planes[ch * h * w + i] = v;
        }
    }
    Ok((h, w, planes))
}

/// Reads every frame in `source`, scaled to [0, 1].
pub fn load_frames(source: &FrameSequenceSource) -> Result<VideoClip> {
    let paths = source.frame_paths()?;
    if paths.is_empty() {
        return Err(Error::Ingestion(format!("no frames found in {}", source.dir.display())));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for path in &paths {
        let (h, w, planes) = decode(path, source.channels)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Ingestion(format!(
                    "{} is {h}x{w}, earlier frames are {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )))
            }
            Some(_) => {}
        }
        data.extend(planes);
    }
    let (h, w) = dims.expect("at least one frame");
    VideoClip::new(paths.len(), source.channels, h, w, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    Real32 = 1,
    Real64 = 2,
}

impl RawDtype {
    pub fn width(self) -> usize {
        match self {
            RawDtype::Real32 => 4,
            RawDtype::Real64 => 8,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(RawDtype::Real32),
            2 => Ok(RawDtype::Real64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub dtype: RawDtype,
}

impl RawHeader {
    pub fn payload_len(&self) -> usize {
        self.t * self.c * self.h * self.w * self.dtype.width()
    }
}

pub fn encode_raw(clip: &VideoClip, dtype: RawDtype) -> Result<Vec<u8>> {
    let (t, c, h, w) = clip.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + clip.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    for d in [t, c, h, w] {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&[dtype as u8, LAYOUT_T_MAJOR, 0, 0]);
    match dtype {
        RawDtype::Real64 => clip.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        RawDtype::Real32 => {
            for &v in clip.data() {
                let narrow = v as f32;
                if narrow as f64 != v && !v.is_nan() {
                    return Err(Error::Validation(format!(
                        "{v} is not representable as real32; use real64 for a lossless file"
                    )));
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> Result<VideoClip> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let header = RawHeader {
        t: dim(0),
        c: dim(1),
        h: dim(2),
        w: dim(3),
        dtype: RawDtype::from_code(bytes[20])?,
    };
    if bytes[21] != LAYOUT_T_MAJOR {
        return Err(Error::Format(format!("unknown layout code {}", bytes[21])));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::Format(format!(
            "header {}x{}x{}x{} implies {} payload bytes, found {}",
            header.t,
            header.c,
            header.h,
            header.w,
            header.payload_len(),
            payload.len()
        )));
    }
    let data = match header.dtype {
        RawDtype::Real64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        RawDtype::Real32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    VideoClip::new(header.t, header.c, header.h, header.w, data).map_err(|e| Error::Format(e.to_string()))
}

/// Writes a real64 file, lossless for every value.
pub fn save_raw(clip: &VideoClip, path: &Path) -> Result<()> {
    save_raw_as(clip, path, RawDtype::Real64)
}

pub fn save_raw_as(clip: &VideoClip, path: &Path, dtype: RawDtype) -> Result<()> {
    fs::write(path, encode_raw(clip, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn load_raw(path: &Path) -> Result<VideoClip> {
    decode_raw(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VizMode {
    PerFrame,
    Global,
}

impl std::str::FromStr for VizMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-frame" | "per-frame-minmax" => Ok(VizMode::PerFrame),
            "global" | "global-minmax" => Ok(VizMode::Global),
            _ => Err(Error::Config(format!("unknown visualization mode {s:?}"))),
        }
    }
}

fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < 0.0 && hi > 0.0 {
        // signed data: keep zero at mid-gray
        let m = hi.max(-lo);
        (-m, m)
    } else {
        (lo, hi)
    }
}

fn to_u8(v: f64, (lo, hi): (f64, f64)) -> u8 {
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        128
    } else {
        ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// 8-bit images of every frame. Three-channel clips become RGB files
/// `frame_0000.png`; other clips write one grayscale file per channel,
/// `frame_0000_c0.png`. Constant frames map to 128.
pub fn render_frames(clip: &VideoClip, mode: VizMode) -> Vec<(String, DynamicImage)> {
    let (t, c, h, w) = clip.shape();
    let global = range(clip.data());
    let mut out = Vec::new();
    for ti in 0..t {
        let r = match mode {
            VizMode::Global => global,
            VizMode::PerFrame => range(clip.frame(ti)),
        };
        if c == 3 {
            let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let px = |ch| to_u8(clip.get(ti, ch, y as usize, x as usize), r);
                Rgb([px(0), px(1), px(2)])
            });
            out.push((format!("frame_{ti:04}.png"), DynamicImage::ImageRgb8(img)));
        } else {
            for ch in 0..c {
                let plane = clip.plane(ti, ch);
                let img = GrayImage::from_raw(w as u32, h as u32, plane.iter().map(|&v| to_u8(v, r)).collect())
                    .expect("plane matches image size");
                out.push((format!("frame_{ti:04}_c{ch}.png"), DynamicImage::ImageLuma8(img)));
            }
        }
    }
    out
}

pub fn export_visualization(clip: &VideoClip, dir: &Path, mode: VizMode) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    render_frames(clip, mode)
        .into_iter()
        .map(|(name, img)| {
            let path = dir.join(name);
            img.save(&path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&path, io),
                other => Error::Format(other.to_string()),
            })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::random_clip;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_ppm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize, usize) -> u8) {
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    bytes.push(f(ch, y, x));
                }
            }
        }
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn ppm_sequence_loads_in_order_and_scales() {
        let dir = tempfile::tempdir().unwrap();
        for i in [2usize, 0, 1] {
            write_ppm(&dir.path().join(format!("f{i:02}.ppm")), 5, 4, |ch, y, x| {
                if (ch, y, x) == (0, 0, 0) {
                    255
                } else {
                    (i * 10 + ch) as u8
                }
            });
        }
        let clip = load_frames(&FrameSequenceSource::rgb(dir.path())).unwrap();
        assert_eq!(clip.shape(), (3, 3, 4, 5));
        assert_eq!(clip.get(0, 0, 0, 0), 1.0);
        for t in 0..3 {
            assert_eq!(clip.get(t, 2, 3, 4), (t * 10 + 2) as f64 / 255.0);
        }
    }

    #[test]
    fn png_and_luma() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3u8 {
            GrayImage::from_pixel(4, 3, image::Luma([i * 100])).save(dir.path().join(format!("{i}.png"))).unwrap();
        }
        let src = FrameSequenceSource {
            dir: dir.path().into(),
            format: Some(FrameFormat::Png),
            channels: 1,
        };
        let clip = load_frames(&src).unwrap();
        assert_eq!(clip.shape(), (3, 1, 3, 4));
        assert_eq!(clip.get(2, 0, 1, 1), 200.0 / 255.0);
    }

    #[test]
    fn ingestion_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_frames(&FrameSequenceSource::rgb(dir.path())), Err(Error::Ingestion(_))));
        write_ppm(&dir.path().join("a.ppm"), 4, 4, |_, _, _| 0);
        write_ppm(&dir.path().join("b.ppm"), 5, 4, |_, _, _| 0);
        assert!(matches!(load_frames(&FrameSequenceSource::rgb(dir.path())), Err(Error::Ingestion(_))));
        let missing = FrameSequenceSource::rgb(dir.path().join("nope"));
        assert!(matches!(load_frames(&missing), Err(Error::Io { .. })));
        let junk = tempfile::tempdir().unwrap();
        fs::write(junk.path().join("c.ppm"), b"P6 garbage").unwrap();
        assert!(matches!(load_frames(&FrameSequenceSource::rgb(junk.path())), Err(Error::Ingestion(_))));
    }

    #[test]
    fn raw_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.bqc");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clip = random_clip(&mut rng, (4, 3, 5, 7), -1e3, 1e3).unwrap();
        save_raw(&clip, &path).unwrap();
        let back = load_raw(&path).unwrap();
        assert!(clip.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.shape(), clip.shape());

        let narrow = clip.map(|v| v as f32 as f64);
        save_raw_as(&narrow, &path, RawDtype::Real32).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, HEADER_LEN + 4 * clip.len());
        assert_eq!(load_raw(&path).unwrap(), narrow);
        assert!(matches!(save_raw_as(&clip, &path, RawDtype::Real32), Err(Error::Validation(_))));
    }

    #[test]
    fn raw_format_errors() {
        let clip = VideoClip::from_fn(2, 1, 2, 2, |t, _, y, x| (t + y + x) as f64).unwrap();
        let bytes = encode_raw(&clip, RawDtype::Real64).unwrap();
        assert!(matches!(decode_raw(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_raw(&bytes[..10]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_raw(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 3;
        assert!(matches!(decode_raw(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[20] = 9;
        assert!(matches!(decode_raw(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn visualization_rules() {
        let zero = VideoClip::zeros(2, 3, 4, 4).unwrap();
        for (_, img) in render_frames(&zero, VizMode::PerFrame) {
            assert!(img.to_rgb8().pixels().all(|p| p.0 == [128; 3]));
        }
        // frame 1 carries ten times the energy of frame 0
        let clip = VideoClip::from_fn(2, 1, 2, 2, |t, _, y, x| (y * 2 + x) as f64 * if t == 0 { 1.0 } else { 10.0 }).unwrap();
        let per = render_frames(&clip, VizMode::PerFrame);
        let global = render_frames(&clip, VizMode::Global);
        assert_eq!(per[0].1.to_luma8().into_raw(), vec![0, 85, 170, 255]);
        assert_eq!(global[0].1.to_luma8().into_raw(), vec![0, 9, 17, 26]);
        assert_eq!(per[1].1.to_luma8().into_raw(), global[1].1.to_luma8().into_raw());
        let signed = VideoClip::new(1, 1, 1, 3, vec![-2.0, 0.0, 1.0]).unwrap();
        assert_eq!(render_frames(&signed, VizMode::Global)[0].1.to_luma8().into_raw(), vec![0, 128, 191]);

        let dir = tempfile::tempdir().unwrap();
        let paths = export_visualization(&zero, &dir.path().join("viz"), VizMode::Global).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("frame_0000.png"));
    }
}
