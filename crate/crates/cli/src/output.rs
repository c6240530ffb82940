//! Text artifacts: CSV tables with fixed float formatting and a small
//! hand-rolled SVG polyline plotter. Identical inputs render identical bytes.

use p2eig_core::{BranchPoint, SolutionCatalog};

/// All CSV floats use this: 17 significant digits, round-trip safe.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn linear_csv(pairs: &[(f64, Vec<f64>)]) -> String {
    let mut out = String::from("k,lambda\n");
    for (i, (lambda, _)) in pairs.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, fmt(*lambda)));
    }
    out
}

/// Profile of one field: `x,u` rows in 1D, `x,y,u` rows in 2D.
pub fn field_csv(grid: &p2eig_core::Grid, values: &[f64]) -> String {
    let mut out = String::new();
    if grid.dim() == 1 {
        out.push_str("x,u\n");
        for (slot, v) in values.iter().enumerate() {
            let [x, _] = grid.interior_coords(slot);
            out.push_str(&format!("{},{}\n", fmt(x), fmt(*v)));
        }
    } else {
        out.push_str("x,y,u\n");
        for (slot, v) in values.iter().enumerate() {
            let [x, y] = grid.interior_coords(slot);
            out.push_str(&format!("{},{},{}\n", fmt(x), fmt(y), fmt(*v)));
        }
    }
    out
}

pub fn branch_csv(points: &[BranchPoint]) -> String {
    let mut out = String::from("lambda,l2_norm,h12_norm,energy,residual,iterations\n");
    for pt in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt(pt.lambda),
            fmt(pt.l2_norm),
            fmt(pt.h12_norm),
            fmt(pt.energy),
            fmt(pt.residual),
            pt.iterations
        ));
    }
    out
}

pub fn catalog_csv(catalog: &SolutionCatalog) -> String {
    let mut out = String::from("index,l2_norm,energy,residual,nodal_domains\n");
    for (i, e) in catalog.entries.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i,
            fmt(e.l2_norm),
            fmt(e.energy),
            fmt(e.residual),
            e.nodal_domains
        ));
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One named curve; points are plotted in the order given.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Polyline chart. With `log_y` the vertical axis is log10; callers must
/// then supply strictly positive ordinates.
pub fn polyline_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let map_y = |y: f64| if log_y { y.log10() } else { y };
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(map_y(y));
        }
    }
    let (x_lo, x_hi) = padded_range(&xs);
    let (y_lo, y_hi) = padded_range(&ys);
    let to_px = |x: f64| MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let to_py = |y: f64| HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        m = MARGIN,
        t = MARGIN,
        r = WIDTH - MARGIN,
        b = HEIGHT - MARGIN,
    ));
    for i in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let px = to_px(fx);
        let py = to_py(fy);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{b:.1}\" x2=\"{px:.1}\" y2=\"{b2:.1}\" stroke=\"black\"/>\n\
             <text x=\"{px:.1}\" y=\"{bl:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{lx}</text>\n",
            b = HEIGHT - MARGIN,
            b2 = HEIGHT - MARGIN + 5.0,
            bl = HEIGHT - MARGIN + 18.0,
            lx = tick_label(fx, false),
        ));
        svg.push_str(&format!(
            "<line x1=\"{m0:.1}\" y1=\"{py:.1}\" x2=\"{m}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
             <text x=\"{ml:.1}\" y=\"{pyl:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{ly}</text>\n",
            m0 = MARGIN - 5.0,
            m = MARGIN,
            ml = MARGIN - 8.0,
            pyl = py + 4.0,
            ly = tick_label(fy, log_y),
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    ));
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", to_px(x), to_py(map_y(y))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        if !s.label.is_empty() {
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
                 fill=\"{color}\">{}</text>\n",
                WIDTH - MARGIN + 6.0,
                MARGIN + 16.0 * idx as f64,
                escape(&s.label)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn padded_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

fn tick_label(value: f64, log_axis: bool) -> String {
    if log_axis {
        format!("{:.3e}", 10f64.powf(value))
    } else {
        format!("{value:.4}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_csv_has_pinned_header_and_full_precision() {
        let points = vec![BranchPoint {
            lambda: 10.5,
            l2_norm: 0.125,
            h12_norm: 1.0 / 3.0,
            energy: -0.25,
            residual: 1e-11,
            iterations: 42,
        }];
        let csv = branch_csv(&points);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lambda,l2_norm,h12_norm,energy,residual,iterations"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("1.0500000000000000e1,1.2500000000000000e-1,3.3333333333333331e-1"));
        assert!(row.ends_with(",42"));
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let series = vec![Series {
            label: "branch".into(),
            points: vec![(1.0, 10.0), (2.0, 100.0), (3.0, 1000.0)],
        }];
        let a = polyline_svg("t", "x", "y", &series, true);
        let b = polyline_svg("t", "x", "y", &series, true);
        assert_eq!(a, b, "same data must render the same bytes");
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 1);
    }

    #[test]
    fn svg_escapes_markup_in_labels() {
        let svg = polyline_svg("a<b&c>", "x", "y", &[], false);
        assert!(svg.contains("a&lt;b&amp;c&gt;"));
    }
}
