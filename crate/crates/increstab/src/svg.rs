//! Tiny SVG writer for planar trajectory plots.
//!
//! Emits a fixed-size canvas mapping a world-coordinate window onto pixels
//! (y axis flipped so "up" is up). Coordinates are rounded to 1/100 px so
//! output is byte-stable across platforms.

use std::fmt::Write as _;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

pub struct SvgPlot {
    width: u32,
    height: u32,
    window: [(f64, f64); 2],
    body: String,
}

fn fmt_px(v: f64) -> String {
    format!("{:.2}", v)
}

impl SvgPlot {
    /// Canvas of `width`x`height` pixels showing the 2-D `window`.
    pub fn new(window: &BoxDomain, width: u32, height: u32) -> Result<Self> {
        if window.dim() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "svg window must be 2-D, got {}-D",
                window.dim()
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("svg canvas must be non-empty".into()));
        }
        let b = window.bounds();
        Ok(Self {
            width,
            height,
            window: [b[0], b[1]],
            body: String::new(),
        })
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.window[0];
        let (y0, y1) = self.window[1];
        let px = (x - x0) / (x1 - x0) * f64::from(self.width);
        let py = (1.0 - (y - y0) / (y1 - y0)) * f64::from(self.height);
        (px, py)
    }

    /// Axis-aligned rectangle given in world coordinates.
    pub fn rect(&mut self, rect: &BoxDomain, fill: &str, stroke: &str) -> Result<()> {
        if rect.dim() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "svg rect must be 2-D, got {}-D",
                rect.dim()
            )));
        }
        let b = rect.bounds();
        let (px0, py1) = self.map(b[0].0, b[1].0);
        let (px1, py0) = self.map(b[0].1, b[1].1);
        writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}" stroke-width="1"/>"#,
            fmt_px(px0),
            fmt_px(py0),
            fmt_px(px1 - px0),
            fmt_px(py1 - py0),
        )
        .unwrap();
        Ok(())
    }

    /// Open polyline through world-coordinate points.
    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        if points.len() < 2 {
            return;
        }
        let mut attr = String::new();
        for &(x, y) in points {
            let (px, py) = self.map(x, y);
            if !attr.is_empty() {
                attr.push(' ');
            }
            write!(attr, "{},{}", fmt_px(px), fmt_px(py)).unwrap();
        }
        writeln!(
            self.body,
            r#"<polyline points="{attr}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
        )
        .unwrap();
    }

    /// Small filled disc marking a single world-coordinate point.
    pub fn marker(&mut self, x: f64, y: f64, radius: f64, fill: &str) {
        let (px, py) = self.map(x, y);
        writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{radius}" fill="{fill}"/>"#,
            fmt_px(px),
            fmt_px(py),
        )
        .unwrap();
    }

    /// Complete document.
    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\">\n\
             <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             {body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> BoxDomain {
        BoxDomain::new(vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap()
    }

    #[test]
    fn maps_world_to_pixels_with_flipped_y() {
        let plot = SvgPlot::new(&window(), 500, 500).unwrap();
        assert_eq!(plot.map(0.0, 0.0), (250.0, 250.0));
        assert_eq!(plot.map(-1.0, -1.0), (0.0, 500.0));
        assert_eq!(plot.map(1.0, 1.0), (500.0, 0.0));
    }

    #[test]
    fn renders_expected_elements() {
        let mut plot = SvgPlot::new(&window(), 200, 100).unwrap();
        let target = BoxDomain::new(vec![(-0.5, 0.5), (-0.5, 0.5)]).unwrap();
        plot.rect(&target, "#eee", "black").unwrap();
        plot.polyline(&[(-1.0, 0.0), (0.0, 1.0), (1.0, 0.0)], "red", 1.5);
        plot.marker(0.0, 0.0, 3.0, "blue");
        let doc = plot.finish();
        assert!(doc.starts_with("<svg "));
        assert!(doc.trim_end().ends_with("</svg>"));
        assert!(doc.contains(r#"<rect x="50.00" y="25.00" width="100.00" height="50.00""#));
        assert!(doc.contains(r#"points="0.00,50.00 100.00,0.00 200.00,50.00""#));
        assert!(doc.contains(r#"<circle cx="100.00" cy="50.00" r="3""#));
    }

    #[test]
    fn rejects_wrong_dimension() {
        let line = BoxDomain::new(vec![(0.0, 1.0)]).unwrap();
        assert!(SvgPlot::new(&line, 10, 10).is_err());
        let mut plot = SvgPlot::new(&window(), 10, 10).unwrap();
        assert!(plot.rect(&line, "none", "black").is_err());
    }

    #[test]
    fn degenerate_polyline_is_dropped() {
        let mut plot = SvgPlot::new(&window(), 10, 10).unwrap();
        plot.polyline(&[(0.0, 0.0)], "red", 1.0);
        let doc = plot.finish();
        assert!(!doc.contains("polyline"));
    }
}
