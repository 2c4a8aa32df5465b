//! Minimal SVG rendering of a run trace: accuracy and power over time, with
//! a vertical marker at every configuration switch.

use std::fmt::Write as _;

use crate::online::{TraceEvent, SWITCH_NOTE};

const WIDTH: f64 = 900.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 50.0;

struct Panel {
    top: f64,
    lo: f64,
    hi: f64,
    label: &'static str,
    color: &'static str,
}

impl Panel {
    fn y(&self, v: f64) -> f64 {
        let span = (self.hi - self.lo).max(1e-9);
        self.top + PANEL_H * (1.0 - (v - self.lo) / span)
    }
}

fn x_of(t: f64, t_max: f64) -> f64 {
    MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * t / t_max.max(1.0)
}

/// Renders the trace; an optional `target` draws a dashed accuracy line.
pub fn render_trace(trace: &[TraceEvent], target: Option<f64>) -> String {
    let t_max = trace.last().map_or(1.0, |e| (e.t_s + 1) as f64);
    let (p_lo, p_hi) = trace.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e.power_w), hi.max(e.power_w))
    });
    let (p_lo, p_hi) = if trace.is_empty() {
        (0.0, 1.0)
    } else {
        let pad = ((p_hi - p_lo) * 0.1).max(0.1);
        (p_lo - pad, p_hi + pad)
    };
    let panels = [
        Panel {
            top: MARGIN_T,
            lo: 0.0,
            hi: 1.0,
            label: "accuracy",
            color: "#1f77b4",
        },
        Panel {
            top: MARGIN_T + PANEL_H + GAP,
            lo: p_lo,
            hi: p_hi,
            label: "power (W)",
            color: "#d62728",
        },
    ];
    let height = MARGIN_T + 2.0 * PANEL_H + GAP + 40.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (k, panel) in panels.iter().enumerate() {
        let bottom = panel.top + PANEL_H;
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_L}" y="{}" width="{}" height="{PANEL_H}" fill="none" stroke="#888"/>"##,
            panel.top,
            WIDTH - MARGIN_L - MARGIN_R
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text><text x="{}" y="{}" text-anchor="end">{:.2}</text>"#,
            MARGIN_L - 4.0,
            panel.top + 10.0,
            panel.hi,
            MARGIN_L - 4.0,
            bottom,
            panel.lo
        );
        let _ = writeln!(s, r#"<text x="{MARGIN_L}" y="{}">{}</text>"#, panel.top - 8.0, panel.label);

        let mut points = String::new();
        for e in trace {
            let v = if k == 0 { e.accuracy } else { e.power_w };
            let _ = write!(points, "{:.1},{:.1} ", x_of(e.t_s as f64, t_max), panel.y(v));
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            panel.color,
            points.trim_end()
        );
        if k == 0 {
            if let Some(t) = target {
                let y = panel.y(t);
                let _ = writeln!(
                    s,
                    r##"<line x1="{MARGIN_L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#555" stroke-dasharray="4 3"/>"##,
                    WIDTH - MARGIN_R
                );
            }
        }
        for e in trace.iter().filter(|e| e.note.as_deref() == Some(SWITCH_NOTE)) {
            let x = x_of(e.t_s as f64, t_max);
            let _ = writeln!(
                s,
                r##"<line class="switch" x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{bottom}" stroke="#2ca02c"/>"##,
                panel.top
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
        (WIDTH + MARGIN_L) / 2.0,
        height - 10.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::online::Phase;

    #[test]
    fn one_marker_per_switch() {
        let ev = |t, note: Option<&str>| TraceEvent {
            t_s: t,
            phase: Phase::Exploit,
            threshold: 0.01,
            bitrate_kbps: 400,
            accuracy: 0.9,
            power_w: 5.0,
            note: note.map(str::to_owned),
        };
        let trace = vec![ev(0, None), ev(1, Some(SWITCH_NOTE)), ev(2, None)];
        let svg = render_trace(&trace, Some(0.9));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // one marker in each panel
        assert_eq!(svg.matches(r#"class="switch""#).count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(render_trace(&[], None).contains("</svg>"));
    }
}
