//! Self-contained SVG line and bar charts (no scripts, fonts or external refs).

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

/// Extends a degenerate range so it can be mapped onto pixels.
fn span(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(s: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64), x_label: &str) {
    let (l, r, t, b) = (MARGIN, W - 20.0, 40.0, H - MARGIN);
    writeln!(s, "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>").unwrap();
    writeln!(s, "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>").unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = b - f * (b - t);
        let x = l + f * (r - l);
        writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{:.4}</text>", l - 4.0, y + 4.0, y0 + f * (y1 - y0)).unwrap();
        writeln!(s, "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{:.4}</text>", b + 14.0, x0 + f * (x1 - x0)).unwrap();
    }
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (l + r) / 2.0, H - 20.0, escape(x_label)).unwrap();
}

pub fn line_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let xr = span(pts().map(|p| p.0).fold(f64::INFINITY, f64::min), pts().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max));
    let yr = span(pts().map(|p| p.1).fold(f64::INFINITY, f64::min), pts().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
    let mut s = header(title);
    axes(&mut s, xr, yr, x_label);
    let (l, r, t, b) = (MARGIN, W - 20.0, 40.0, H - MARGIN);
    for (i, se) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = se
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| {
                let px = l + (x - xr.0) / (xr.1 - xr.0) * (r - l);
                let py = b - (y - yr.0) / (yr.1 - yr.0) * (b - t);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", coords.join(" ")).unwrap();
        let ly = t + 14.0 * i as f64;
        writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\" text-anchor=\"end\">{}</text>", r - 4.0, escape(&se.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let vals = || bars.iter().map(|b| b.1).filter(|v| v.is_finite());
    let yr = span(vals().fold(0.0, f64::min), vals().fold(0.0, f64::max));
    let mut s = header(title);
    let (l, r, t, b) = (MARGIN, W - 20.0, 40.0, H - MARGIN);
    writeln!(s, "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>").unwrap();
    let to_y = |v: f64| b - (v - yr.0) / (yr.1 - yr.0) * (b - t);
    let zero = to_y(0.0);
    writeln!(s, "<line x1=\"{l}\" y1=\"{zero:.1}\" x2=\"{r}\" y2=\"{zero:.1}\" stroke=\"black\"/>").unwrap();
    let slot = (r - l) / bars.len().max(1) as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { *v } else { 0.0 };
        let y = to_y(v);
        let x = l + slot * (i as f64 + 0.15);
        writeln!(
            s,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
            y.min(zero),
            slot * 0.7,
            (zero - y).abs(),
            COLORS[i % COLORS.len()]
        )
        .unwrap();
        let cx = x + slot * 0.35;
        writeln!(s, "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.4}</text>", y.min(zero) - 4.0).unwrap();
        writeln!(s, "<text x=\"{cx:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", b + 14.0, escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Renders a CSV: metric reports (`task,metric,value,n_samples`) become bar
/// charts, anything else is drawn as one line per numeric column against
/// the first column.
pub fn render_csv(title: &str, text: &str) -> Result<String, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').map(str::trim).collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').map(str::trim).collect()).collect();
    if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(format!("row {} has {} fields, header has {}", bad + 2, rows[bad].len(), header.len()));
    }
    if header == ["task", "metric", "value", "n_samples"] {
        let bars = rows
            .iter()
            .map(|r| r[2].parse().map(|v| (r[1].to_string(), v)).map_err(|_| format!("bad value `{}`", r[2])))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(bar_chart(title, &bars));
    }
    let parse = |s: &str| s.parse::<f64>().ok();
    let series = (1..header.len())
        .filter(|&c| rows.iter().all(|r| parse(r[c]).is_some()))
        .map(|c| Series {
            name: header[c].to_string(),
            points: rows.iter().filter_map(|r| Some((parse(r[0])?, parse(r[c])?))).collect(),
        })
        .collect::<Vec<_>>();
    if series.is_empty() {
        return Err("no numeric columns to plot".into());
    }
    Ok(line_chart(title, header[0], &series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_self_contained() {
        let line = render_csv("loss", "step,loss\n0,1.0\n10,0.5\n").unwrap();
        let bars = render_csv("m", "task,metric,value,n_samples\ndepth,rmse,0.1,4\n").unwrap();
        for svg in [line, bars] {
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert!(!svg.contains("href") && !svg.contains("<script"));
        }
        assert!(render_csv("x", "a,b\nfoo,bar\n").is_err());
        assert!(render_csv("x", "a,b\n1\n").is_err());
    }
}
