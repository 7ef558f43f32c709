use std::fmt::Write;

use super::ExposureCurve;

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\">{}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    )
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Line chart of named `(x, y)` series.
pub fn line_chart_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).chain([0.0]));
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = header(title);
    let _ = writeln!(s, "<text x=\"2\" y=\"{PAD}\">{y1:.3e}</text>");
    let _ = writeln!(s, "<text x=\"2\" y=\"{}\">{y0:.3e}</text>", H - PAD);
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ =
            writeln!(s, "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>", path.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>",
            W - PAD - 100.0,
            PAD + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bar chart with one labelled bar per value.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let (_, hi) = bounds(bars.iter().map(|b| b.1).chain([0.0]));
    let mut s = header(title);
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = if hi > 0.0 { v.max(0.0) / hi * (H - 2.0 * PAD) } else { 0.0 };
        let x = PAD + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
            H - PAD - h,
            slot * 0.7,
            COLORS[0]
        );
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{}\">{}</text>", H - PAD + 14.0, escape(label));
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{:.2}\">{v:.3}</text>", H - PAD - h - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Rows `k,step,error` for a family of exposure curves.
pub fn exposure_csv(curves: &[ExposureCurve]) -> String {
    let mut s = String::from("k,step,error\n");
    for c in curves {
        for (step, v) in c.per_step.iter().enumerate() {
            let _ = writeln!(s, "{},{step},{v:.8e}", c.k);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_deterministic_and_well_formed() {
        let series = vec![("a<b".to_string(), vec![(0.0, 1.0), (1.0, 0.5)]), ("flat".to_string(), vec![(0.0, 0.2)])];
        let a = line_chart_svg("errors", &series);
        assert_eq!(a, line_chart_svg("errors", &series));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("a&lt;b"));
        let b = bar_chart_svg("flops", &[("m1".into(), 474.4), ("m4".into(), 479.8)]);
        assert_eq!(b.matches("<rect").count(), 3);
    }

    #[test]
    fn exposure_rows() {
        let c = ExposureCurve { k: 1, per_step: vec![0.5, 0.25, 0.0], endpoint: 0.5 };
        assert_eq!(exposure_csv(&[c]), "k,step,error\n1,0,5.00000000e-1\n1,1,2.50000000e-1\n1,2,0.00000000e0\n");
    }
}
