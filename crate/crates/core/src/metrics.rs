//! Overlap and boundary-distance metrics on binary masks.
//!
//! Boundary cells are mask cells with at least one 4-neighbour outside the
//! mask (the grid edge counts as outside). Distances are Euclidean between
//! cell centres, in cell units.

use serde::{Deserialize, Serialize};

use crate::error::{EmptyMask, Error, Result};
use crate::raster::Raster;

/// How directed boundary distances are combined into HD95 and ASD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceConvention {
    /// Percentile and mean over both directions pooled together.
    #[default]
    Pooled,
    /// Maximum of the two directed 95th percentiles; mean of the directed means.
    DirectedMax,
}

fn check_pair(pred: &Raster, gt: &Raster) -> Result<()> {
    pred.ensure_same_shape(gt, "metric")?;
    if pred.channels() != 1 {
        return Err(Error::domain("metrics expect single-channel masks"));
    }
    if !pred.is_binary() || !gt.is_binary() {
        return Err(Error::domain("metrics expect binary masks"));
    }
    Ok(())
}

fn counts(pred: &Raster, gt: &Raster) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (a == 1.0, b == 1.0);
        p += a as usize;
        g += b as usize;
        inter += (a && b) as usize;
    }
    (inter, p, g)
}

/// `2|P∩G| / (|P|+|G|)`, or 1 when both masks are empty.
pub fn dsc(pred: &Raster, gt: &Raster) -> Result<f64> {
    check_pair(pred, gt)?;
    let (i, p, g) = counts(pred, gt);
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (p + g) as f64)
}

/// `|P∩G| / |P∪G|`, or 1 when both masks are empty.
pub fn jaccard(pred: &Raster, gt: &Raster) -> Result<f64> {
    check_pair(pred, gt)?;
    let (i, p, g) = counts(pred, gt);
    let union = p + g - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / union as f64)
}

/// Boundary cells of a binary mask as `(y, x)`.
pub fn boundary_cells(mask: &Raster) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let on = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && y < h as isize && x < w as isize && mask.get(0, y as usize, x as usize) == 1.0
    };
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

const FAR: i64 = i64::MAX / 4;

/// Exact squared Euclidean distance transform of a 1-D sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[i64], out: &mut [i64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q] < FAR).collect();
    if sites.is_empty() {
        out.fill(FAR);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let inter = |q: usize, p: usize| -> f64 {
        let (q, p) = (q as i64, p as i64);
        ((f[q as usize] + q * q) - (f[p as usize] + p * p)) as f64 / (2 * (q - p)) as f64
    };
    for &q in &sites {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = inter(q, p);
                    if s <= *z.last().expect("z tracks v") {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            z.clear();
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every cell to the nearest marked cell.
fn squared_distance_map(h: usize, w: usize, marked: &[(usize, usize)]) -> Vec<i64> {
    let mut grid = vec![FAR; h * w];
    for &(y, x) in marked {
        grid[y * w + x] = 0;
    }
    let mut col = vec![0i64; h];
    let mut tmp = vec![0i64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut tmp);
        for y in 0..h {
            grid[y * w + x] = tmp[y];
        }
    }
    let mut row = vec![0i64; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row);
        grid[y * w..(y + 1) * w].copy_from_slice(&row);
    }
    grid
}

fn directed(from: &[(usize, usize)], to_map: &[i64], w: usize) -> Vec<f64> {
    from.iter().map(|&(y, x)| (to_map[y * w + x] as f64).sqrt()).collect()
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub hd95: f64,
    pub asd: f64,
}

pub fn surface_distances(pred: &Raster, gt: &Raster, convention: SurfaceConvention) -> Result<SurfaceDistances> {
    check_pair(pred, gt)?;
    let (_, p, g) = counts(pred, gt);
    match (p == 0, g == 0) {
        (true, true) => return Err(Error::UndefinedMetric(EmptyMask::Both)),
        (true, false) => return Err(Error::UndefinedMetric(EmptyMask::Prediction)),
        (false, true) => return Err(Error::UndefinedMetric(EmptyMask::GroundTruth)),
        _ => {}
    }
    let (h, w) = (pred.height(), pred.width());
    let bp = boundary_cells(pred);
    let bg = boundary_cells(gt);
    let p_to_g = directed(&bp, &squared_distance_map(h, w, &bg), w);
    let g_to_p = directed(&bg, &squared_distance_map(h, w, &bp), w);
    Ok(match convention {
        SurfaceConvention::Pooled => {
            let mut all = p_to_g;
            all.extend_from_slice(&g_to_p);
            SurfaceDistances {
                hd95: percentile(&all, 0.95),
                asd: mean(&all),
            }
        }
        SurfaceConvention::DirectedMax => SurfaceDistances {
            hd95: percentile(&p_to_g, 0.95).max(percentile(&g_to_p, 0.95)),
            asd: 0.5 * (mean(&p_to_g) + mean(&g_to_p)),
        },
    })
}

/// One metrics row; `hd95`/`asd` are `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub class: u8,
    pub dsc: f64,
    pub jaccard: f64,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

impl MetricRow {
    pub fn compute(id: &str, class: u8, pred: &Raster, gt: &Raster, convention: SurfaceConvention) -> Result<Self> {
        let d = dsc(pred, gt)?;
        let j = jaccard(pred, gt)?;
        let sd = match surface_distances(pred, gt, convention) {
            Ok(s) => Some(s),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricRow {
            id: id.to_string(),
            class,
            dsc: d,
            jaccard: j,
            hd95: sd.map(|s| s.hd95),
            asd: sd.map(|s| s.asd),
        })
    }

    pub fn is_defined(&self) -> bool {
        self.hd95.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub dsc: f64,
    pub jaccard: f64,
    pub hd95: f64,
    pub asd: f64,
    /// Rows whose boundary metrics were undefined and left out of the hd95/asd means.
    pub excluded: usize,
}

impl MetricMeans {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a MetricRow>) -> Self {
        let rows: Vec<&MetricRow> = rows.into_iter().collect();
        let n = rows.len().max(1) as f64;
        let defined: Vec<&&MetricRow> = rows.iter().filter(|r| r.is_defined()).collect();
        let nd = defined.len();
        let avg = |f: &dyn Fn(&MetricRow) -> f64| -> f64 {
            if nd == 0 {
                f64::NAN
            } else {
                defined.iter().map(|r| f(r)).sum::<f64>() / nd as f64
            }
        };
        MetricMeans {
            dsc: rows.iter().map(|r| r.dsc).sum::<f64>() / n,
            jaccard: rows.iter().map(|r| r.jaccard).sum::<f64>() / n,
            hd95: avg(&|r| r.hd95.expect("defined")),
            asd: avg(&|r| r.asd.expect("defined")),
            excluded: rows.len() - nd,
        }
    }
}

/// Per-sample rows plus per-class and overall means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub class_means: Vec<(u8, MetricMeans)>,
    pub mean: MetricMeans,
}

pub const METRICS_CSV_HEADER: &str = "id,class,dsc,jaccard,hd95,asd";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

impl MetricReport {
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut classes: Vec<u8> = rows.iter().map(|r| r.class).collect();
        classes.sort_unstable();
        classes.dedup();
        let class_means = classes
            .iter()
            .map(|&c| (c, MetricMeans::of(rows.iter().filter(|r| r.class == c))))
            .collect::<Vec<_>>();
        // overall mean: average of per-sample class-averaged rows
        let mean = if class_means.len() <= 1 {
            MetricMeans::of(&rows)
        } else {
            let k = class_means.len() as f64;
            let mut m = MetricMeans {
                dsc: 0.0,
                jaccard: 0.0,
                hd95: 0.0,
                asd: 0.0,
                excluded: 0,
            };
            for (_, cm) in &class_means {
                m.dsc += cm.dsc / k;
                m.jaccard += cm.jaccard / k;
                m.hd95 += cm.hd95 / k;
                m.asd += cm.asd / k;
                m.excluded += cm.excluded;
            }
            m
        };
        MetricReport {
            rows,
            class_means,
            mean,
        }
    }

    /// CSV text: per-sample rows, then `mean` rows per class and `mean,all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.id,
                r.class,
                r.dsc,
                r.jaccard,
                fmt_opt(r.hd95),
                fmt_opt(r.asd)
            ));
        }
        for (c, m) in &self.class_means {
            s.push_str(&format!("mean,{c},{},{},{},{}\n", m.dsc, m.jaccard, m.hd95, m.asd));
        }
        let m = &self.mean;
        s.push_str(&format!("mean,all,{},{},{},{}\n", m.dsc, m.jaccard, m.hd95, m.asd));
        s
    }
}
