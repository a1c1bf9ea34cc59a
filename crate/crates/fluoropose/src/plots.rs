//! Hand-rolled SVG box plots for error-metric comparisons.
//!
//! Whisker rule: each whisker extends to the farthest sample within
//! 1.5 x IQR of its box edge; samples beyond that are outliers and are
//! not drawn, but their fraction is printed under the box and stored in
//! the box's data attributes.  Every statistic drawn is also embedded as
//! a machine-readable `data-*` attribute so plots can be checked against
//! the numbers they claim to show.

use crate::error::{Error, Result};
use crate::metrics::percentile_sorted;

/// The statistics one box displays.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub label: String,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Smallest sample within 1.5 x IQR below the first quartile.
    pub whisker_low: f64,
    /// Largest sample within 1.5 x IQR above the third quartile.
    pub whisker_high: f64,
    /// Fraction of samples beyond the whiskers.
    pub outlier_fraction: f64,
}

/// Compute box statistics from raw samples.
pub fn box_stats(label: &str, samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput(format!("no samples for box {label}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "non-finite sample in box {label}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q1 = percentile_sorted(&sorted, 25.0);
    let median = percentile_sorted(&sorted, 50.0);
    let q3 = percentile_sorted(&sorted, 75.0);
    let iqr = q3 - q1;
    let low_bound = q1 - 1.5 * iqr;
    let high_bound = q3 + 1.5 * iqr;
    let whisker_low = *sorted
        .iter()
        .find(|&&v| v >= low_bound)
        .expect("some sample is above the lower fence");
    let whisker_high = *sorted
        .iter()
        .rev()
        .find(|&&v| v <= high_bound)
        .expect("some sample is below the upper fence");
    let outliers = sorted
        .iter()
        .filter(|&&v| v < whisker_low || v > whisker_high)
        .count();
    Ok(BoxStats {
        label: label.to_string(),
        count: sorted.len(),
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
        outlier_fraction: outliers as f64 / sorted.len() as f64,
    })
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Pick a round tick step covering `span` with about `target` intervals.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let factor = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    factor * mag
}

const PLOT_HEIGHT: f64 = 360.0;
const MARGIN_TOP: f64 = 44.0;
const MARGIN_BOTTOM: f64 = 56.0;
const MARGIN_LEFT: f64 = 72.0;
const SLOT_WIDTH: f64 = 130.0;
const BOX_WIDTH: f64 = 56.0;

/// Render one comparison plot: one box per entry, shared linear scale.
/// The returned document is self-contained SVG 1.1.
pub fn box_plot_svg(title: &str, unit: &str, boxes: &[BoxStats]) -> Result<String> {
    if boxes.is_empty() {
        return Err(Error::DegenerateInput("no boxes to plot".into()));
    }
    let width = MARGIN_LEFT + SLOT_WIDTH * boxes.len() as f64 + 24.0;
    let lo = boxes.iter().map(|b| b.whisker_low).fold(f64::INFINITY, f64::min);
    let hi = boxes
        .iter()
        .map(|b| b.whisker_high)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    let (lo, hi) = (lo - 0.05 * span, hi + 0.05 * span);
    let inner_h = PLOT_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let y = |v: f64| MARGIN_TOP + (hi - v) / (hi - lo) * inner_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{PLOT_HEIGHT}\" \
         viewBox=\"0 0 {width} {PLOT_HEIGHT}\">\n"
    ));
    svg.push_str(
        "<!-- whisker rule: each whisker reaches the farthest sample within \
         1.5*IQR of its box edge; samples beyond are outliers, counted in \
         data-outlier-fraction -->\n",
    );
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape_xml(title)
    ));

    // Axis with round-valued ticks.
    let step = nice_step(hi - lo, 6);
    let mut tick = (lo / step).ceil() * step;
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{}\" x2=\"{MARGIN_LEFT}\" y2=\"{}\" \
         stroke=\"black\"/>\n",
        y(hi),
        y(lo)
    ));
    while tick <= hi {
        let ty = y(tick);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ty}\" x2=\"{MARGIN_LEFT}\" y2=\"{ty}\" stroke=\"black\"/>\n",
            MARGIN_LEFT - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{:.4}</text>\n",
            MARGIN_LEFT - 8.0,
            ty + 4.0,
            tick
        ));
        tick += step;
    }
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_TOP + inner_h / 2.0,
        MARGIN_TOP + inner_h / 2.0,
        escape_xml(unit)
    ));

    for (i, b) in boxes.iter().enumerate() {
        let cx = MARGIN_LEFT + SLOT_WIDTH * (i as f64 + 0.5);
        let (x0, x1) = (cx - BOX_WIDTH / 2.0, cx + BOX_WIDTH / 2.0);
        svg.push_str(&format!(
            "<g class=\"box\" data-label=\"{}\" data-count=\"{}\" data-q1=\"{}\" \
             data-median=\"{}\" data-q3=\"{}\" data-whisker-low=\"{}\" \
             data-whisker-high=\"{}\" data-outlier-fraction=\"{}\">\n",
            escape_xml(&b.label),
            b.count,
            b.q1,
            b.median,
            b.q3,
            b.whisker_low,
            b.whisker_high,
            b.outlier_fraction
        ));
        // Whisker stem and caps.
        svg.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>\n",
            y(b.whisker_high),
            y(b.q3)
        ));
        svg.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>\n",
            y(b.q1),
            y(b.whisker_low)
        ));
        for w in [b.whisker_low, b.whisker_high] {
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
                cx - BOX_WIDTH / 4.0,
                y(w),
                cx + BOX_WIDTH / 4.0,
                y(w)
            ));
        }
        // Box and median.
        svg.push_str(&format!(
            "<rect x=\"{x0}\" y=\"{}\" width=\"{BOX_WIDTH}\" height=\"{}\" \
             fill=\"#c6dbef\" stroke=\"black\"/>\n",
            y(b.q3),
            (y(b.q1) - y(b.q3)).max(0.5)
        ));
        svg.push_str(&format!(
            "<line x1=\"{x0}\" y1=\"{}\" x2=\"{x1}\" y2=\"{}\" stroke=\"black\" \
             stroke-width=\"2\"/>\n",
            y(b.median),
            y(b.median)
        ));
        // Labels.
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{}</text>\n",
            PLOT_HEIGHT - MARGIN_BOTTOM + 20.0,
            escape_xml(&b.label)
        ));
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
             text-anchor=\"middle\">n={}, outliers {:.1}%</text>\n",
            PLOT_HEIGHT - MARGIN_BOTTOM + 36.0,
            b.count,
            b.outlier_fraction * 100.0
        ));
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Pull every `data-*` attribute of each box group back out of an SVG
/// produced by [`box_plot_svg`].
pub fn parse_box_attributes(svg: &str) -> Vec<BoxStats> {
    let mut out = Vec::new();
    for part in svg.split("<g class=\"box\"").skip(1) {
        let head = part.split('>').next().unwrap_or("");
        let attr = |name: &str| -> Option<String> {
            let key = format!("data-{name}=\"");
            let start = head.find(&key)? + key.len();
            let end = head[start..].find('"')? + start;
            Some(head[start..end].to_string())
        };
        let f = |name: &str| attr(name).and_then(|v| v.parse::<f64>().ok());
        if let (Some(label), Some(count), Some(q1), Some(median), Some(q3), Some(wl), Some(wh), Some(of)) = (
            attr("label"),
            attr("count").and_then(|v| v.parse::<usize>().ok()),
            f("q1"),
            f("median"),
            f("q3"),
            f("whisker-low"),
            f("whisker-high"),
            f("outlier-fraction"),
        ) {
            out.push(BoxStats {
                label,
                count,
                q1,
                median,
                q3,
                whisker_low: wl,
                whisker_high: wh,
                outlier_fraction: of,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal well-formedness check: tags balance, exactly one root.
    fn assert_well_formed_xml(doc: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut roots = 0usize;
        let mut rest = doc;
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            let end = rest.find('>').expect("unclosed tag");
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if tag.starts_with("!--") {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().expect("closing tag without opener");
                assert_eq!(open, name.trim(), "mismatched tag");
                if stack.is_empty() {
                    roots += 1;
                }
            } else if tag.ends_with('/') {
                if stack.is_empty() {
                    roots += 1;
                }
            } else {
                let name = tag.split_whitespace().next().expect("tag name").to_string();
                stack.push(name);
            }
            // Attribute quotes must balance inside the tag.
            assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in <{tag}>");
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert_eq!(roots, 1, "expected exactly one root element");
    }

    #[test]
    fn quartiles_match_a_brute_force_oracle() {
        let samples: Vec<f64> = (0..101).map(|i| (i as f64) * 0.37).collect();
        let b = box_stats("demo", &samples).unwrap();
        // 101 evenly spread samples: quartiles fall exactly on elements.
        assert_eq!(b.q1, 25.0 * 0.37);
        assert_eq!(b.median, 50.0 * 0.37);
        assert_eq!(b.q3, 75.0 * 0.37);
        assert_eq!(b.outlier_fraction, 0.0);
        assert_eq!(b.whisker_low, 0.0);
        assert_eq!(b.whisker_high, 100.0 * 0.37);
    }

    #[test]
    fn whiskers_clip_at_one_point_five_iqr() {
        // Quartiles of 1..=9 are 3 and 7 (IQR 4); fences at -3 and 13.
        let mut samples: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        samples.push(30.0); // outlier
        samples.push(-20.0); // outlier
        let b = box_stats("demo", &samples).unwrap();
        assert!(b.whisker_high <= b.q3 + 1.5 * (b.q3 - b.q1) + 1e-12);
        assert!(b.whisker_low >= b.q1 - 1.5 * (b.q3 - b.q1) - 1e-12);
        assert_eq!(b.outlier_fraction, 2.0 / 11.0);
    }

    #[test]
    fn svg_is_well_formed_and_documents_the_whisker_rule() {
        let a = box_stats("estimation", &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let b = box_stats("registration", &[0.3, 0.6, 0.9, 1.2, 5.0]).unwrap();
        let svg = box_plot_svg("position error", "mm", &[a, b]).unwrap();
        assert_well_formed_xml(&svg);
        assert!(svg.contains("1.5*IQR"), "whisker rule must be documented");
        assert!(svg.contains("outlier"));
    }

    #[test]
    fn identical_inputs_render_identical_plots() {
        let samples = [0.4, 0.9, 1.1, 1.7, 2.2, 2.3];
        let a = box_plot_svg(
            "angle error",
            "deg",
            &[box_stats("m", &samples).unwrap()],
        )
        .unwrap();
        let b = box_plot_svg(
            "angle error",
            "deg",
            &[box_stats("m", &samples).unwrap()],
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedded_statistics_parse_back_exactly() {
        let samples: Vec<f64> = (0..57).map(|i| ((i * 37) % 23) as f64 * 0.173).collect();
        let stats = box_stats("exact", &samples).unwrap();
        let svg = box_plot_svg("roundtrip", "mm", std::slice::from_ref(&stats)).unwrap();
        let parsed = parse_box_attributes(&svg);
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0], stats, "SVG must embed the exact statistics");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(box_stats("x", &[]).is_err());
        assert!(box_stats("x", &[f64::NAN]).is_err());
        assert!(box_plot_svg("t", "u", &[]).is_err());
    }

    #[test]
    fn labels_are_xml_escaped() {
        let b = box_stats("a<b>&\"c\"", &[1.0, 2.0]).unwrap();
        let svg = box_plot_svg("t", "u", &[b]).unwrap();
        assert!(svg.contains("a&lt;b&gt;&amp;&quot;c&quot;"));
        let parsed = parse_box_attributes(&svg);
        assert_eq!(parsed[0].label, "a&lt;b&gt;&amp;&quot;c&quot;");
    }
}
