//! Low-level frame-difference features and threshold-based frame selection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::FilterKind;

/// 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("frame dimensions {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Frame::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn check_same_dims(&self, other: &Frame) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Binary P5 encoding with maxval 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::invalid(format!("unsupported PGM magic {:?}", fields[0])));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad PGM {what} {s:?}")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 255 {
            return Err(Error::invalid(format!("PGM maxval {maxval}, expected 255")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let needed = width * height;
        if bytes.len() < pos + needed {
            return Err(Error::invalid(format!(
                "PGM raster has {} bytes, expected {needed}",
                bytes.len().saturating_sub(pos)
            )));
        }
        Frame::new(width, height, bytes[pos..pos + needed].to_vec())
    }
}

/// Tunable constants of the area and edge features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    /// A pixel counts as changed when its absolute difference exceeds this.
    pub area_pixel_delta: u8,
    /// Normalized Sobel magnitude at or above which a pixel is an edge.
    pub edge_threshold: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            area_pixel_delta: 25,
            edge_threshold: 0.125,
        }
    }
}

impl FeatureParams {
    pub fn feature(&self, kind: FilterKind, prev: &Frame, curr: &Frame) -> Result<f64> {
        match kind {
            FilterKind::Pixel => pixel_diff(prev, curr),
            FilterKind::Area => self.area_diff(prev, curr),
            FilterKind::Edge => self.edge_diff(prev, curr),
        }
    }

    pub fn area_diff(&self, prev: &Frame, curr: &Frame) -> Result<f64> {
        prev.check_same_dims(curr)?;
        let changed = prev
            .pixels
            .iter()
            .zip(&curr.pixels)
            .filter(|(a, b)| a.abs_diff(**b) > self.area_pixel_delta)
            .count();
        Ok(changed as f64 / prev.pixels.len() as f64)
    }

    pub fn edge_diff(&self, prev: &Frame, curr: &Frame) -> Result<f64> {
        prev.check_same_dims(curr)?;
        let a = self.edge_map(prev)?;
        let b = self.edge_map(curr)?;
        let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        Ok(differing as f64 / a.len() as f64)
    }

    /// Binary Sobel edge map; border pixels are never edges.
    pub fn edge_map(&self, frame: &Frame) -> Result<Vec<bool>> {
        let (w, h) = (frame.width, frame.height);
        if w < 3 || h < 3 {
            return Err(Error::FrameTooSmall(w, h));
        }
        let mut map = vec![false; w * h];
        let px = |x: usize, y: usize| frame.get(x, y) as i32;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
                let gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1))
                    - (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
                let magnitude = (gx.abs() + gy.abs()) as f64 / (16.0 * 255.0);
                map[y * w + x] = magnitude >= self.edge_threshold;
            }
        }
        Ok(map)
    }

    pub fn filter_sequence(
        &self,
        frames: &[Frame],
        feature: FilterKind,
        threshold: f64,
    ) -> Result<Vec<FilterDecision>> {
        if frames.is_empty() {
            return Err(Error::Empty("frame sequence"));
        }
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::invalid(format!("filter threshold {threshold}")));
        }
        let mut decisions = Vec::with_capacity(frames.len());
        decisions.push(FilterDecision {
            frame_index: 0,
            feature_value: 0.0,
            kept: true,
        });
        for (i, pair) in frames.windows(2).enumerate() {
            let value = self.feature(feature, &pair[0], &pair[1])?;
            decisions.push(FilterDecision {
                frame_index: i + 1,
                feature_value: value,
                kept: value >= threshold,
            });
        }
        Ok(decisions)
    }
}

/// Mean absolute intensity difference, scaled to [0, 1].
pub fn pixel_diff(prev: &Frame, curr: &Frame) -> Result<f64> {
    prev.check_same_dims(curr)?;
    let total: u64 = prev
        .pixels
        .iter()
        .zip(&curr.pixels)
        .map(|(a, b)| a.abs_diff(*b) as u64)
        .sum();
    Ok(total as f64 / (255.0 * prev.pixels.len() as f64))
}

pub fn area_diff(prev: &Frame, curr: &Frame) -> Result<f64> {
    FeatureParams::default().area_diff(prev, curr)
}

pub fn edge_diff(prev: &Frame, curr: &Frame) -> Result<f64> {
    FeatureParams::default().edge_diff(prev, curr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub frame_index: usize,
    pub feature_value: f64,
    pub kept: bool,
}

/// Decides which frames are forwarded: frame 0 always, every later frame
/// whose difference to its predecessor reaches `threshold`.
pub fn filter_sequence(
    frames: &[Frame],
    feature: FilterKind,
    threshold: f64,
) -> Result<Vec<FilterDecision>> {
    FeatureParams::default().filter_sequence(frames, feature, threshold)
}

/// Loads every `*.pgm` file in `dir`, ordered by file name.
pub fn load_frame_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|ext| ext.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            Frame::from_pgm(&bytes).map_err(|e| Error::parse("PGM", p, e))
        })
        .collect()
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&frame.to_pgm())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(w: usize, h: usize, px: Vec<u8>) -> Frame {
        Frame::new(w, h, px).unwrap()
    }

    #[test]
    fn pixel_examples() {
        let a = Frame::filled(4, 4, 17).unwrap();
        assert_eq!(pixel_diff(&a, &a).unwrap(), 0.0);
        let black = Frame::filled(3, 3, 0).unwrap();
        let white = Frame::filled(3, 3, 255).unwrap();
        assert_eq!(pixel_diff(&black, &white).unwrap(), 1.0);
        let p = frame(2, 2, vec![10, 10, 10, 10]);
        let q = frame(2, 2, vec![10, 61, 10, 10]);
        assert!((pixel_diff(&p, &q).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn area_examples() {
        let a = Frame::filled(4, 4, 50).unwrap();
        assert_eq!(area_diff(&a, &a).unwrap(), 0.0);
        let black = Frame::filled(4, 4, 0).unwrap();
        let white = Frame::filled(4, 4, 255).unwrap();
        assert_eq!(area_diff(&black, &white).unwrap(), 1.0);
        let mut px = vec![50u8; 16];
        for i in [0, 5, 10, 15] {
            px[i] = 150;
        }
        assert_eq!(area_diff(&a, &frame(4, 4, px)).unwrap(), 0.25);
        // exactly at the delta does not count
        let b = Frame::filled(4, 4, 75).unwrap();
        assert_eq!(area_diff(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn edge_examples() {
        let a = Frame::filled(5, 5, 0).unwrap();
        let b = Frame::filled(5, 5, 200).unwrap();
        assert_eq!(edge_diff(&a, &a).unwrap(), 0.0);
        assert_eq!(edge_diff(&a, &b).unwrap(), 0.0);

        // columns 0-1 dark, 2-4 bright: interior columns 1 and 2 see
        // |Gx| = 4 * 255, columns 3 sees nothing; 3 interior rows
        let mut px = Vec::new();
        for _ in 0..5 {
            px.extend_from_slice(&[0, 0, 255, 255, 255]);
        }
        let step = frame(5, 5, px);
        let map = FeatureParams::default().edge_map(&step).unwrap();
        assert_eq!(map.iter().filter(|e| **e).count(), 6);
        assert!((edge_diff(&step, &a).unwrap() - 6.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn edge_errors() {
        let small = Frame::filled(2, 5, 0).unwrap();
        assert!(matches!(edge_diff(&small, &small), Err(Error::FrameTooSmall(2, 5))));
        let a = Frame::filled(4, 4, 0).unwrap();
        let b = Frame::filled(5, 4, 0).unwrap();
        assert!(matches!(pixel_diff(&a, &b), Err(Error::DimensionMismatch(..))));
        assert!(area_diff(&a, &b).is_err());
        assert!(edge_diff(&a, &b).is_err());
    }

    #[test]
    fn sequence_examples() {
        assert!(matches!(
            filter_sequence(&[], FilterKind::Pixel, 0.1),
            Err(Error::Empty(_))
        ));
        // pixel diffs: 0.04 then ~0.006
        let f0 = Frame::filled(10, 10, 100).unwrap();
        let f1 = Frame::filled(10, 10, 110).unwrap(); // 10/255 ~ 0.039
        let mut px = vec![110u8; 100];
        px[..15].iter_mut().for_each(|p| *p = 120); // 150/25500 ~ 0.0059
        let f2 = frame(10, 10, px);
        let frames = vec![f0, f1, f2];
        let d = filter_sequence(&frames, FilterKind::Pixel, 0.01).unwrap();
        let kept: Vec<usize> = d.iter().filter(|d| d.kept).map(|d| d.frame_index).collect();
        assert_eq!(kept, vec![0, 1]);
        assert_eq!(d[0].feature_value, 0.0);

        let all = filter_sequence(&frames, FilterKind::Pixel, 0.0).unwrap();
        assert!(all.iter().all(|d| d.kept));
        let none = filter_sequence(&frames, FilterKind::Area, 1.0 + 1e-9).unwrap();
        assert_eq!(none.iter().filter(|d| d.kept).count(), 1);
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let f = frame(3, 2, vec![0, 1, 2, 253, 254, 255]);
        assert_eq!(Frame::from_pgm(&f.to_pgm()).unwrap(), f);
        let commented = b"P5\n# made by hand\n3 2\n255\n\x00\x01\x02\xfd\xfe\xff";
        assert_eq!(Frame::from_pgm(commented).unwrap(), f);
        assert!(Frame::from_pgm(b"P2\n3 2\n255\n").is_err());
        assert!(Frame::from_pgm(b"P5\n3 2\n255\n\x00").is_err());
        assert!(Frame::from_pgm(b"P5\n3 2\n65535\n").is_err());
    }

    fn arb_pair() -> impl Strategy<Value = (Frame, Frame)> {
        (3usize..8, 3usize..8).prop_flat_map(|(w, h)| {
            (
                prop::collection::vec(any::<u8>(), w * h),
                prop::collection::vec(any::<u8>(), w * h),
            )
                .prop_map(move |(a, b)| (frame(w, h, a), frame(w, h, b)))
        })
    }

    proptest! {
        #[test]
        fn features_symmetric_bounded_and_zero_on_self((a, b) in arb_pair()) {
            for kind in FilterKind::ALL {
                let p = FeatureParams::default();
                let ab = p.feature(kind, &a, &b).unwrap();
                let ba = p.feature(kind, &b, &a).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(p.feature(kind, &a, &a).unwrap(), 0.0);
            }
        }
    }
}
