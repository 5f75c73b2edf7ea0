use crate::raster::Image;
use crate::registry::Registry;
use crate::{Error, Result};

const DARK: u8 = 128;
const PADDING: usize = 2;

/// A line cut from a page; `y_top..=y_bottom` is the cropped (padded) row range.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub image: Image,
    pub y_top: usize,
    pub y_bottom: usize,
}

pub trait LineSegmenter: Send + Sync {
    fn name(&self) -> String;
    fn segment(&self, page: &Image) -> Result<Vec<Segment>>;
}

/// Horizontal projection profile: runs of rows whose dark fraction exceeds `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionSegmenter {
    pub threshold: f64,
}

impl Default for ProjectionSegmenter {
    fn default() -> Self {
        Self { threshold: 0.0 }
    }
}

impl LineSegmenter for ProjectionSegmenter {
    fn name(&self) -> String {
        format!("projection:{}", self.threshold)
    }

    fn segment(&self, page: &Image) -> Result<Vec<Segment>> {
        Ok(segment_lines(page, self.threshold))
    }
}

pub fn segmenter_registry() -> Registry<dyn LineSegmenter> {
    let mut r: Registry<dyn LineSegmenter> = Registry::new("line segmenter");
    r.register("projection", |arg| {
        let threshold = match arg {
            None => 0.0,
            Some(a) => a
                .parse::<f64>()
                .ok()
                .filter(|t| (0.0..1.0).contains(t))
                .ok_or_else(|| Error::InvalidArgument(format!("projection threshold {a:?} not in [0, 1)")))?,
        };
        Ok(Box::new(ProjectionSegmenter { threshold }))
    });
    r
}

pub fn segment_lines(page: &Image, threshold: f64) -> Vec<Segment> {
    let gray;
    let page = if page.is_gray() {
        page
    } else {
        gray = page.to_gray();
        &gray
    };
    let (w, h) = (page.width(), page.height());
    let inked: Vec<bool> = (0..h)
        .map(|y| {
            let row = &page.data()[y * w..(y + 1) * w];
            let dark = row.iter().filter(|&&v| v < DARK).count();
            dark as f64 / w as f64 > threshold
        })
        .collect();
    let mut out = Vec::new();
    let mut y = 0;
    while y < h {
        if !inked[y] {
            y += 1;
            continue;
        }
        let start = y;
        while y < h && inked[y] {
            y += 1;
        }
        let top = start.saturating_sub(PADDING);
        let bottom = (y - 1 + PADDING).min(h - 1);
        let image = page.crop_rows(top, bottom + 1).expect("rows inside page");
        out.push(Segment {
            image,
            y_top: top,
            y_bottom: bottom,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_page_has_no_lines() {
        assert!(segment_lines(&Image::filled_gray(20, 30, 255), 0.0).is_empty());
    }

    #[test]
    fn single_band_is_padded() {
        let mut img = Image::filled_gray(40, 40, 255);
        for y in 10..=20 {
            for x in 0..40 {
                img.set(x, y, 0, 0);
            }
        }
        let segs = segment_lines(&img, 0.05);
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].y_top, segs[0].y_bottom), (8, 22));
        assert_eq!(segs[0].image.height(), 15);
    }

    #[test]
    fn padding_clamps_at_edges_and_threshold_is_strict() {
        let mut img = Image::filled_gray(10, 6, 255);
        for x in 0..10 {
            img.set(x, 0, 0, 0);
            img.set(x, 5, 0, 0);
        }
        img.set(0, 3, 0, 0);
        let segs = segment_lines(&img, 0.1);
        assert_eq!(segs.iter().map(|s| (s.y_top, s.y_bottom)).collect::<Vec<_>>(), vec![(0, 2), (3, 5)]);
        assert_eq!(segment_lines(&img, 0.0).len(), 3);
    }

    #[test]
    fn registry_builds_projection() {
        let r = segmenter_registry();
        assert_eq!(r.build("projection:0.05").unwrap().name(), "projection:0.05");
        assert!(r.build("projection:2").is_err());
        assert!(r.build("watershed").is_err());
    }
}
