//! Static SVG charts rendered from run CSVs. Inputs are only ever read.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn axes(out: &mut String, y_min: f64, y_max: f64) {
    let (x0, x1, y0, y1) = (PAD_L, W - PAD_R, H - PAD_B, PAD_T);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = y0 + (y1 - y0) * f;
        let v = y_min + (y_max - y_min) * f;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.3}</text>",
            x0 - 6.0,
            y + 4.0
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
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

/// Polyline chart of named `(x, y)` series.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = header(title);
    let (x_min, x_max) = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y_min, y_max) = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let y_min = y_min.min(0.0);
    axes(&mut out, y_min, y_max);
    let sx = |x: f64| PAD_L + (x - x_min) / (x_max - x_min) * (W - PAD_R - PAD_L);
    let sy = |y: f64| H - PAD_B - (y - y_min) / (y_max - y_min) * (H - PAD_B - PAD_T);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut path = String::new();
        for &(x, y) in pts.iter().filter(|p| p.1.is_finite()) {
            let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>", path.trim_end());
        let ly = PAD_T + 18.0 * i as f64;
        let lx = W - PAD_R + 12.0;
        let _ = writeln!(out, "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", lx + 18.0);
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">{}</text>", lx + 24.0, ly + 4.0, escape(name));
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n<text x=\"{PAD_L}\" y=\"{}\">{x_min}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x_max}</text>",
        (PAD_L + W - PAD_R) / 2.0,
        H - 12.0,
        escape(x_label),
        H - PAD_B + 16.0,
        W - PAD_R,
        H - PAD_B + 16.0
    );
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with value labels.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let mut out = header(title);
    let (_, y_max) = range(bars.iter().map(|b| b.1));
    let y_max = y_max.max(0.0);
    let y_max = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };
    axes(&mut out, 0.0, y_max);
    let n = bars.len().max(1) as f64;
    let slot = (W - PAD_R - PAD_L) / n;
    for (i, (label, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
        let h = v / y_max * (H - PAD_B - PAD_T);
        let x = PAD_L + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
            H - PAD_B - h,
            slot * 0.7,
            COLORS[i % COLORS.len()]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(out, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.3}</text>", H - PAD_B - h - 4.0);
        let _ = writeln!(out, "<text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", H - PAD_B + 16.0, escape(label));
    }
    out.push_str("</svg>\n");
    out
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::corrupt(path, "empty csv"))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    if rows.iter().any(|r| r.len() != header.len()) {
        return Err(Error::corrupt(path, "ragged csv row"));
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn curves(path: &Path, title: &str, names: &[&str]) -> Result<String> {
    let (header, rows) = read_table(path)?;
    let step = column(&header, "step").ok_or_else(|| Error::corrupt(path, "no step column"))?;
    let series = names
        .iter()
        .filter_map(|n| column(&header, n).map(|c| (n.to_string(), c)))
        .map(|(n, c)| (n, rows.iter().map(|r| (num(&r[step]), num(&r[c]))).collect()))
        .collect::<Vec<_>>();
    Ok(line_chart(title, "step", &series))
}

/// Renders every chart whose source CSV exists in `run_dir` into `out_dir`.
pub fn render_run(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut charts: Vec<(&str, String)> = Vec::new();
    let p = run_dir.join("losses.csv");
    if p.is_file() {
        charts.push(("losses.svg", curves(&p, "Self-training losses", &["l_total", "l_rw", "l_bcl", "l_fg_l", "l_fg_u"])?));
        charts.push(("lambda.svg", curves(&p, "Consistency weight", &["lambda_t"])?));
    }
    let p = run_dir.join("pretrain_losses.csv");
    if p.is_file() {
        charts.push(("pretrain_losses.svg", curves(&p, "Teacher pre-training losses", &["l_total", "l_fg", "l_bg", "l_m"])?));
    }
    let p = run_dir.join("metrics.csv");
    if p.is_file() {
        let (header, rows) = read_table(&p)?;
        let cls = column(&header, "class").ok_or_else(|| Error::corrupt(&p, "no class column"))?;
        let mut bars = Vec::new();
        for r in rows.iter().filter(|r| r[0] == "mean") {
            for m in ["dsc", "jaccard"] {
                if let Some(c) = column(&header, m) {
                    bars.push((format!("{m} {}", r[cls]), num(&r[c])));
                }
            }
        }
        charts.push(("metrics.svg", bar_chart("Test overlap metrics", &bars)));
    }
    let p = run_dir.join("ablation.csv");
    if p.is_file() {
        let (header, rows) = read_table(&p)?;
        let (vc, mc, valc) = match (column(&header, "variant"), column(&header, "metric"), column(&header, "value")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::corrupt(&p, "missing ablation columns")),
        };
        let mut order: Vec<String> = Vec::new();
        for r in &rows {
            if !order.contains(&r[vc]) {
                order.push(r[vc].clone());
            }
        }
        for metric in ["dsc", "hd95"] {
            let bars = order
                .iter()
                .map(|v| {
                    let vals: Vec<f64> = rows
                        .iter()
                        .filter(|r| &r[vc] == v && r[mc] == metric)
                        .map(|r| num(&r[valc]))
                        .filter(|x| x.is_finite())
                        .collect();
                    (v.clone(), vals.iter().sum::<f64>() / vals.len().max(1) as f64)
                })
                .collect::<Vec<_>>();
            charts.push((
                if metric == "dsc" { "ablation_dsc.svg" } else { "ablation_hd95.svg" },
                bar_chart(&format!("Ablation: mean {metric}"), &bars),
            ));
        }
    }
    if charts.is_empty() {
        return Err(Error::NotFound(format!("no plottable CSV in {}", run_dir.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, svg) in charts {
        let path = out_dir.join(name);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
