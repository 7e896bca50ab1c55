//! Static SVG rendering of survival and risk-difference curves.

use std::fmt::Write;

use seqtrials::MarginalResults;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Panel {
    x0: f64,
    t_max: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Panel {
    fn x(&self, t: f64) -> f64 {
        self.x0 + MARGIN + t / self.t_max * PANEL_W
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN + (self.y_hi - v) / (self.y_hi - self.y_lo) * PANEL_H
    }

    fn axes(&self, out: &mut String, title: &str) {
        let (l, r) = (self.x(0.0), self.x(self.t_max));
        let (t, b) = (self.y(self.y_hi), self.y(self.y_lo));
        let _ = writeln!(out, r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, r - l, b - t);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{title}</text>"#, (l + r) / 2.0, t - 12.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">time</text>"#, (l + r) / 2.0, b + 34.0);
        for k in 0..=self.t_max.floor() as usize {
            let x = self.x(k as f64);
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, b + 5.0);
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="11">{k}</text>"#, b + 18.0);
        }
        for i in 0..=4 {
            let v = self.y_lo + (self.y_hi - self.y_lo) * f64::from(i) / 4.0;
            let y = self.y(v);
            let _ = writeln!(out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/>"#, l - 5.0);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{v:.3}</text>"#, l - 8.0, y + 4.0);
        }
        if self.y_lo < 0.0 && self.y_hi > 0.0 {
            let y = self.y(0.0);
            let _ = writeln!(out, r##"<line x1="{l:.2}" y1="{y:.2}" x2="{r:.2}" y2="{y:.2}" stroke="#bbb" stroke-dasharray="2,3"/>"##);
        }
    }

    /// Right-continuous step path through `(t, v)` pairs, starting at `(0, start)`.
    fn steps(&self, out: &mut String, start: f64, points: &[(f64, f64)], color: &str, dashed: bool) {
        let mut d = format!("M{:.2},{:.2}", self.x(0.0), self.y(start));
        for &(t, v) in points.iter().filter(|p| p.0 <= self.t_max) {
            let _ = write!(d, " H{:.2} V{:.2}", self.x(t), self.y(v));
        }
        let _ = write!(d, " H{:.2}", self.x(self.t_max));
        let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#);
    }
}

fn jump_times(r: &MarginalResults) -> Vec<f64> {
    let mut t: Vec<f64> = r.s1_curve.times.iter().chain(&r.s0_curve.times).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// Survival curves under both strategies (solid: always treated, dashed:
/// never treated) next to the risk-difference curve, one color per method.
pub fn render_curves(curves: &[(String, &MarginalResults)], t_max: f64) -> String {
    let all_surv = curves
        .iter()
        .flat_map(|(_, r)| r.s1_curve.surv.iter().chain(&r.s0_curve.surv))
        .copied()
        .filter(|v| v.is_finite());
    let s_lo = all_surv.fold(1.0_f64, f64::min).max(0.0);
    let rd: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|(_, r)| jump_times(r).into_iter().map(|t| (t, r.rd_at(t))).collect())
        .collect();
    let rd_vals = rd.iter().flatten().map(|p| p.1).filter(|v| v.is_finite());
    let (rd_lo, rd_hi) = rd_vals.fold((0.0_f64, 0.0_f64), |(a, b), v| (a.min(v), b.max(v)));
    let (rd_lo, rd_hi) = nice_range(rd_lo, rd_hi);

    let surv = Panel {
        x0: 0.0,
        t_max,
        y_lo: (s_lo - 0.02).max(0.0),
        y_hi: 1.0,
    };
    let diff = Panel {
        x0: PANEL_W + 2.0 * MARGIN,
        t_max,
        y_lo: rd_lo,
        y_hi: rd_hi,
    };
    let width = 2.0 * PANEL_W + 4.0 * MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + 20.0 * curves.len() as f64 + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    surv.axes(&mut out, "survival");
    diff.axes(&mut out, "risk difference S1 - S0");
    for (i, ((label, r), rd)) in curves.iter().zip(&rd).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts = |c: &seqtrials::SurvivalCurve| c.times.iter().copied().zip(c.surv.iter().copied()).collect::<Vec<_>>();
        surv.steps(&mut out, 1.0, &pts(&r.s1_curve), color, false);
        surv.steps(&mut out, 1.0, &pts(&r.s0_curve), color, true);
        diff.steps(&mut out, 0.0, rd, color, false);
        let y = PANEL_H + 2.0 * MARGIN + 20.0 * i as f64 + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
            MARGIN,
            MARGIN + 24.0,
            MARGIN + 30.0,
            y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="dimgray">solid: always treated, dashed: never treated</text>"#,
        MARGIN + 200.0,
        PANEL_H + 2.0 * MARGIN + 10.0
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqtrials::SurvivalCurve;

    fn results() -> MarginalResults {
        let curve = |v: f64| SurvivalCurve {
            times: vec![1.0, 2.0],
            surv: vec![1.0 - v, 1.0 - 2.0 * v],
            flags: Default::default(),
        };
        MarginalResults {
            horizons: vec![1.0, 2.0],
            s1: vec![0.9, 0.8],
            s0: vec![0.8, 0.6],
            rd: vec![0.1, 0.2],
            s1_curve: curve(0.1),
            s0_curve: curve(0.2),
            population: "C0".into(),
            bands: None,
        }
    }

    #[test]
    fn renders_one_path_per_curve() {
        let r = results();
        let svg = render_curves(&[("a<b".into(), &r), ("c".into(), &r)], 2.0);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path").count(), 6);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn step_path_is_deterministic() {
        let r = results();
        let a = render_curves(&[("m".into(), &r)], 2.0);
        let b = render_curves(&[("m".into(), &r)], 2.0);
        assert_eq!(a, b);
    }
}
