//! Photometric confidence, confidence-weighted depth filtering and
//! evaluation metrics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_pfm, write_pfm};
use crate::image::{ensure_same_size, DepthMap, Image, Sized2d};

/// Per-pixel agreement between a captured and a rendered image, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Sized2d for ConfidenceMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl ConfidenceMap {
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }
}

/// `S = 1 - |gt - render|₁ / 3` per pixel.
pub fn confidence_map(gt: &Image, rendered: &Image) -> Result<ConfidenceMap> {
    ensure_same_size(gt, rendered, "confidence images")?;
    let values = gt
        .pixels
        .iter()
        .zip(&rendered.pixels)
        .map(|(a, b)| {
            let l1: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
            (1.0 - l1 / 3.0).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ConfidenceMap {
        width: gt.width,
        height: gt.height,
        values,
    })
}

pub fn write_confidence(path: &Path, map: &ConfidenceMap) -> Result<()> {
    let v: Vec<f32> = map.values.iter().map(|&x| x as f32).collect();
    write_pfm(path, map.width, map.height, &v)
}

pub fn read_confidence(path: &Path) -> Result<ConfidenceMap> {
    let (width, height, v) = read_pfm(path)?;
    let values: Vec<f64> = v.into_iter().map(f64::from).collect();
    if values.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::format(path, "confidence outside [0, 1]"));
    }
    Ok(ConfidenceMap { width, height, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_radius")]
    pub radius: usize,
    #[serde(default = "default_sigma_spatial")]
    pub sigma_spatial: f64,
    #[serde(default = "default_sigma_color")]
    pub sigma_color: f64,
}

fn default_radius() -> usize {
    5
}
fn default_sigma_spatial() -> f64 {
    3.0
}
fn default_sigma_color() -> f64 {
    0.1
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            sigma_spatial: default_sigma_spatial(),
            sigma_color: default_sigma_color(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spatial > 0.0 && self.sigma_color > 0.0) {
            return Err(Error::Config("filter sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// Joint bilateral filter with an extra confidence factor on each neighbor.
///
/// Only valid depth pixels contribute. A pixel whose weights sum to zero keeps
/// its value. The validity mask is unchanged.
pub fn confidence_filter(depth: &DepthMap, image: &Image, conf: &ConfidenceMap, cfg: &FilterConfig) -> Result<DepthMap> {
    cfg.validate()?;
    ensure_same_size(depth, image, "filter depth and image")?;
    ensure_same_size(depth, conf, "filter depth and confidence")?;
    let (w, h, r) = (depth.width, depth.height, cfg.radius as isize);
    let ks = -0.5 / (cfg.sigma_spatial * cfg.sigma_spatial);
    let kc = -0.5 / (cfg.sigma_color * cfg.sigma_color);
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| ((dx * dx + dy * dy) as f64 * ks).exp()))
        .collect();
    let side = (2 * r + 1) as usize;
    let values: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let spatial = &spatial;
            (0..w).map(move |x| {
                let p = y * w + x;
                let ip = image.pixels[p];
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    let qy = y as isize + dy;
                    if qy < 0 || qy >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let qx = x as isize + dx;
                        if qx < 0 || qx >= w as isize {
                            continue;
                        }
                        let q = qy as usize * w + qx as usize;
                        if !depth.valid[q] || conf.values[q] <= 0.0 {
                            continue;
                        }
                        let iq = image.pixels[q];
                        let dc: f64 = (0..3).map(|c| (ip[c] - iq[c]).powi(2)).sum();
                        let wt = spatial[(dy + r) as usize * side + (dx + r) as usize] * (dc * kc).exp() * conf.values[q];
                        num += wt * depth.values[q];
                        den += wt;
                    }
                }
                if den > 0.0 {
                    num / den
                } else {
                    depth.values[p]
                }
            })
        })
        .collect();
    DepthMap::with_mask(w, h, values, depth.valid.clone())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn joint(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<usize>> {
    ensure_same_size(pred, gt, "predicted and ground-truth depth")?;
    let idx: Vec<usize> = (0..pred.len()).filter(|&i| pred.valid[i] && gt.valid[i]).collect();
    if idx.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(idx)
}

/// Factor `median(gt) / median(pred)` over jointly valid pixels.
pub fn median_scale_factor(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let idx = joint(pred, gt)?;
    let mut p: Vec<f64> = idx.iter().map(|&i| pred.values[i]).collect();
    let mut g: Vec<f64> = idx.iter().map(|&i| gt.values[i]).collect();
    let (mp, mg) = (median(&mut p), median(&mut g));
    if !(mp > 0.0 && mg > 0.0) {
        return Err(Error::InvalidInput(format!("non-positive median depth ({mp}, {mg})")));
    }
    Ok(mg / mp)
}

pub fn median_scale(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    Ok(pred.scaled(median_scale_factor(pred, gt)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_3: f64,
}

impl DepthMetrics {
    pub const COLUMNS: [&'static str; 7] = ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta_1", "delta_2", "delta_3"];
    const TITLES: [&'static str; 7] = ["Abs Rel", "Sq Rel", "RMSE", "RMSE log", "d<1.25", "d<1.25^2", "d<1.25^3"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta_1,
            self.delta_2,
            self.delta_3,
        ]
    }

    /// Per-component mean.
    pub fn mean(all: &[DepthMetrics]) -> Option<DepthMetrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let mut s = [0.0; 7];
        for m in all {
            for (a, v) in s.iter_mut().zip(m.values()) {
                *a += v / n;
            }
        }
        Some(DepthMetrics {
            abs_rel: s[0],
            sq_rel: s[1],
            rmse: s[2],
            rmse_log: s[3],
            delta_1: s[4],
            delta_2: s[5],
            delta_3: s[6],
        })
    }
}

/// Depth error statistics over jointly valid pixels, optionally after median
/// scaling of `pred`.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, median_scaling: bool) -> Result<DepthMetrics> {
    let idx = joint(pred, gt)?;
    let s = if median_scaling { median_scale_factor(pred, gt)? } else { 1.0 };
    let n = idx.len() as f64;
    let (mut ar, mut sr, mut se, mut sl) = (0.0, 0.0, 0.0, 0.0);
    let mut d = [0usize; 3];
    for &i in &idx {
        let (y, g) = (pred.values[i] * s, gt.values[i]);
        if !(y > 0.0 && g > 0.0) {
            return Err(Error::InvalidInput(format!("non-positive depth at pixel {i}")));
        }
        let e = y - g;
        ar += e.abs() / g;
        sr += e * e / g;
        se += e * e;
        sl += (y.ln() - g.ln()).powi(2);
        let ratio = (y / g).max(g / y);
        for (k, c) in d.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *c += 1;
            }
        }
    }
    Ok(DepthMetrics {
        abs_rel: ar / n,
        sq_rel: sr / n,
        rmse: (se / n).sqrt(),
        rmse_log: (sl / n).sqrt(),
        delta_1: d[0] as f64 / n,
        delta_2: d[1] as f64 / n,
        delta_3: d[2] as f64 / n,
    })
}

/// `10 log10(1 / MSE)`; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_size(a, b, "psnr images")?;
    let n = (a.len() * 3) as f64;
    let mse: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

const SSIM_RADIUS: isize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over pixels and channels with an 11×11 Gaussian window. The
/// window is truncated at the border and its weights renormalized.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ensure_same_size(a, b, "ssim images")?;
    let (w, h) = (a.width as isize, a.height as isize);
    let g: Vec<f64> = (-SSIM_RADIUS..=SSIM_RADIUS)
        .map(|d| (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = 0.0;
            for x in 0..w {
                for c in 0..3 {
                    let mut s = [0.0; 6];
                    for dy in -SSIM_RADIUS..=SSIM_RADIUS {
                        let qy = y + dy;
                        if qy < 0 || qy >= h {
                            continue;
                        }
                        for dx in -SSIM_RADIUS..=SSIM_RADIUS {
                            let qx = x + dx;
                            if qx < 0 || qx >= w {
                                continue;
                            }
                            let wt = g[(dy + SSIM_RADIUS) as usize] * g[(dx + SSIM_RADIUS) as usize];
                            let q = (qy * w + qx) as usize;
                            let (u, v) = (a.pixels[q][c], b.pixels[q][c]);
                            s[0] += wt;
                            s[1] += wt * u;
                            s[2] += wt * v;
                            s[3] += wt * u * u;
                            s[4] += wt * v * v;
                            s[5] += wt * u * v;
                        }
                    }
                    let (mu, mv) = (s[1] / s[0], s[2] / s[0]);
                    let vu = s[3] / s[0] - mu * mu;
                    let vv = s[4] / s[0] - mv * mv;
                    let cov = s[5] / s[0] - mu * mv;
                    row += (2.0 * mu * mv + SSIM_C1) * (2.0 * cov + SSIM_C2)
                        / ((mu * mu + mv * mv + SSIM_C1) * (vu + vv + SSIM_C2));
                }
            }
            row
        })
        .sum();
    Ok(total / (a.len() * 3) as f64)
}

/// Labelled metric rows, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(String, DepthMetrics)>,
}

impl MetricsTable {
    pub fn push(&mut self, label: impl Into<String>, m: DepthMetrics) {
        self.rows.push((label.into(), m));
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("label,{}\n", DepthMetrics::COLUMNS.join(","));
        for (label, m) in &self.rows {
            let vals: Vec<String> = m.values().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{label},{}", vals.join(","));
        }
        s
    }

    /// Fixed-width text with four decimals.
    pub fn to_text(&self) -> String {
        let lw = self.rows.iter().map(|(l, _)| l.len()).chain([5]).max().unwrap_or(5);
        let mut s = format!("{:<lw$}", "label");
        for t in DepthMetrics::TITLES {
            let _ = write!(s, "  {t:>9}");
        }
        s.push('\n');
        for (label, m) in &self.rows {
            let _ = write!(s, "{label:<lw$}");
            for v in m.values() {
                let _ = write!(s, "  {v:>9.4}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("label,{}", DepthMetrics::COLUMNS.join(",")) {
            return Err(Error::InvalidInput(format!("unexpected metrics header `{header}`")));
        }
        let mut table = Self::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::InvalidInput(format!("metrics row `{line}` has {} fields", f.len())));
            }
            let v = f[1..]
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("metrics row `{line}`: {e}")))?;
            table.push(
                f[0],
                DepthMetrics {
                    abs_rel: v[0],
                    sq_rel: v[1],
                    rmse: v[2],
                    rmse_log: v[3],
                    delta_1: v[4],
                    delta_2: v[5],
                    delta_3: v[6],
                },
            );
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand::{Rng as _, SeedableRng};

    fn random_depth(rng: &mut Rng, w: usize, h: usize, holes: bool) -> DepthMap {
        let v = (0..w * h).map(|_| rng.gen_range(0.2..5.0)).collect();
        let m = (0..w * h).map(|_| !holes || rng.gen_bool(0.8)).collect();
        DepthMap::with_mask(w, h, v, m).unwrap()
    }

    fn random_image(rng: &mut Rng, w: usize, h: usize) -> Image {
        Image::from_pixels(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn confidence_cases() {
        let a = Image::filled(2, 1, [1.0, 0.0, 0.0]);
        assert!(confidence_map(&a, &a).unwrap().values.iter().all(|&s| s == 1.0));
        let s = confidence_map(&a, &Image::filled(2, 1, [0.0; 3])).unwrap();
        assert!((s.values[0] - 2.0 / 3.0).abs() < 1e-15);
        let s = confidence_map(&Image::filled(1, 1, [1.0; 3]), &Image::filled(1, 1, [0.0; 3])).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert!(confidence_map(&a, &Image::filled(1, 2, [0.0; 3])).is_err());
    }

    /// Direct window loop written from the weight formula.
    fn filter_oracle(d: &DepthMap, img: &Image, s: &ConfidenceMap, cfg: &FilterConfig) -> Vec<f64> {
        let (w, h) = (d.width as i64, d.height as i64);
        let r = cfg.radius as i64;
        let mut out = Vec::new();
        for py in 0..h {
            for px in 0..w {
                let p = (py * w + px) as usize;
                let (mut num, mut den) = (0.0, 0.0);
                for qy in (py - r).max(0)..=(py + r).min(h - 1) {
                    for qx in (px - r).max(0)..=(px + r).min(w - 1) {
                        let q = (qy * w + qx) as usize;
                        if !d.valid[q] {
                            continue;
                        }
                        let ds = ((px - qx).pow(2) + (py - qy).pow(2)) as f64;
                        let dc: f64 = (0..3).map(|c| (img.pixels[p][c] - img.pixels[q][c]).powi(2)).sum();
                        let wt = (-ds / (2.0 * cfg.sigma_spatial.powi(2))).exp()
                            * (-dc / (2.0 * cfg.sigma_color.powi(2))).exp()
                            * s.values[q];
                        num += wt * d.values[q];
                        den += wt;
                    }
                }
                out.push(if den > 0.0 { num / den } else { d.values[p] });
            }
        }
        out
    }

    #[test]
    fn filter_matches_oracle_and_stays_in_window_range() {
        let mut rng = Rng::seed_from_u64(1);
        for r in [0, 1, 3, 5] {
            let cfg = FilterConfig {
                radius: r,
                ..Default::default()
            };
            let d = random_depth(&mut rng, 9, 7, true);
            let img = random_image(&mut rng, 9, 7);
            let mut s = ConfidenceMap {
                width: 9,
                height: 7,
                values: (0..63).map(|_| rng.gen()).collect(),
            };
            s.values[10] = 0.0;
            let out = confidence_filter(&d, &img, &s, &cfg).unwrap();
            for (i, (a, b)) in out.values.iter().zip(filter_oracle(&d, &img, &s, &cfg)).enumerate() {
                assert!((a - b).abs() < 1e-12, "pixel {i}: {a} vs {b}");
            }
            for (i, v) in out.values.iter().enumerate() {
                let (x, y) = ((i % 9) as isize, (i / 9) as isize);
                let win: Vec<f64> = (0..63)
                    .filter(|&q| {
                        let (qx, qy) = ((q % 9) as isize, (q / 9) as isize);
                        (qx - x).abs() <= r as isize && (qy - y).abs() <= r as isize && d.valid[q]
                    })
                    .map(|q| d.values[q])
                    .chain([d.values[i]])
                    .collect();
                let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
            if r == 0 {
                for i in 0..63 {
                    if d.valid[i] && s.values[i] > 0.0 {
                        assert!((out.values[i] - d.values[i]).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn filter_fixed_point_and_outlier_repair() {
        let img = Image::filled(11, 11, [0.5; 3]);
        let mut d = DepthMap::from_values(11, 11, vec![2.0; 121]).unwrap();
        let mut s = ConfidenceMap::uniform(11, 11, 0.9);
        let cfg = FilterConfig::default();
        let out = confidence_filter(&d, &img, &s, &cfg).unwrap();
        assert!(out.values.iter().all(|v| (v - 2.0).abs() < 1e-14));
        d.values[60] = 9.0;
        s.values[60] = 0.0;
        let out = confidence_filter(&d, &img, &s, &cfg).unwrap();
        assert!((out.values[60] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn median_scaling_cases() {
        let mut rng = Rng::seed_from_u64(2);
        let gt = random_depth(&mut rng, 8, 8, false);
        assert_eq!(median_scale_factor(&gt, &gt).unwrap(), 1.0);
        let half = gt.scaled(0.5);
        assert_eq!(median_scale_factor(&half, &gt).unwrap(), 2.0);
        for _ in 0..20 {
            let p = random_depth(&mut rng, 8, 8, true);
            let g = random_depth(&mut rng, 8, 8, true);
            let idx = joint(&p, &g).unwrap();
            let s = median_scale(&p, &g).unwrap();
            let mut a: Vec<f64> = idx.iter().map(|&i| s.values[i]).collect();
            let mut b: Vec<f64> = idx.iter().map(|&i| g.values[i]).collect();
            assert!((median(&mut a) - median(&mut b)).abs() < 1e-12);
        }
        assert!(matches!(median_scale(&gt, &DepthMap::empty(8, 8)), Err(Error::NoOverlap)));
    }

    #[test]
    fn metric_scalar_cases() {
        let gt = DepthMap::from_values(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let m = depth_metrics(&gt, &gt, false).unwrap();
        assert_eq!(m.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let m = depth_metrics(
            &DepthMap::from_values(1, 1, vec![2.0]).unwrap(),
            &DepthMap::from_values(1, 1, vec![1.0]).unwrap(),
            false,
        )
        .unwrap();
        assert_eq!(m.abs_rel, 1.0);
        assert_eq!(m.sq_rel, 1.0);
        assert_eq!(m.rmse, 1.0);
        assert!((m.rmse_log - 2f64.ln()).abs() < 1e-15);
        assert_eq!((m.delta_1, m.delta_2, m.delta_3), (0.0, 0.0, 0.0));
        for c in [0.1, 3.0, 7.5] {
            let m = depth_metrics(&gt.scaled(c), &gt, true).unwrap();
            for (a, b) in m.values().iter().zip([0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    fn metrics_oracle(p: &DepthMap, g: &DepthMap) -> [f64; 7] {
        let mut n = 0.0;
        let mut acc = [0.0; 7];
        for y in 0..p.height {
            for x in 0..p.width {
                let (Some(a), Some(b)) = (p.get(x, y), g.get(x, y)) else { continue };
                n += 1.0;
                acc[0] += (a - b).abs() / b;
                acc[1] += (a - b) * (a - b) / b;
                acc[2] += (a - b) * (a - b);
                acc[3] += (a.ln() - b.ln()) * (a.ln() - b.ln());
                let t = if a / b > b / a { a / b } else { b / a };
                acc[4] += (t < 1.25) as u8 as f64;
                acc[5] += (t < 1.5625) as u8 as f64;
                acc[6] += (t < 1.953125) as u8 as f64;
            }
        }
        [
            acc[0] / n,
            acc[1] / n,
            (acc[2] / n).sqrt(),
            (acc[3] / n).sqrt(),
            acc[4] / n,
            acc[5] / n,
            acc[6] / n,
        ]
    }

    #[test]
    fn metrics_match_oracle_and_are_scale_invariant() {
        let mut rng = Rng::seed_from_u64(3);
        for _ in 0..30 {
            let p = random_depth(&mut rng, 8, 8, true);
            let g = random_depth(&mut rng, 8, 8, true);
            let m = depth_metrics(&p, &g, false).unwrap();
            for (a, b) in m.values().iter().zip(metrics_oracle(&p, &g)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(m.delta_1 <= m.delta_2 && m.delta_2 <= m.delta_3);
            let base = depth_metrics(&p, &g, true).unwrap();
            let scaled = depth_metrics(&p.scaled(4.0), &g, true).unwrap();
            assert_eq!(base, scaled);
        }
    }

    /// Two-pass windowed statistics from the definition.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (w, h) = (a.width as i64, a.height as i64);
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut win = Vec::new();
                    for qy in (y - 5).max(0)..=(y + 5).min(h - 1) {
                        for qx in (x - 5).max(0)..=(x + 5).min(w - 1) {
                            let d2 = ((qx - x).pow(2) + (qy - y).pow(2)) as f64;
                            let q = (qy * w + qx) as usize;
                            win.push(((-d2 / 4.5).exp(), a.pixels[q][c], b.pixels[q][c]));
                        }
                    }
                    let sw: f64 = win.iter().map(|t| t.0).sum();
                    let mu = win.iter().map(|t| t.0 * t.1).sum::<f64>() / sw;
                    let mv = win.iter().map(|t| t.0 * t.2).sum::<f64>() / sw;
                    let vu = win.iter().map(|t| t.0 * (t.1 - mu).powi(2)).sum::<f64>() / sw;
                    let vv = win.iter().map(|t| t.0 * (t.2 - mv).powi(2)).sum::<f64>() / sw;
                    let cv = win.iter().map(|t| t.0 * (t.1 - mu) * (t.2 - mv)).sum::<f64>() / sw;
                    total += (2.0 * mu * mv + 1e-4) * (2.0 * cv + 9e-4) / ((mu * mu + mv * mv + 1e-4) * (vu + vv + 9e-4));
                }
            }
        }
        total / (w * h * 3) as f64
    }

    #[test]
    fn image_metrics() {
        let z = Image::filled(4, 4, [0.0; 3]);
        let half = Image::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&z, &z).unwrap(), f64::INFINITY);
        assert!((psnr(&z, &half).unwrap() - 6.020599913279624).abs() < 1e-12);
        let mut rng = Rng::seed_from_u64(4);
        for _ in 0..5 {
            let a = random_image(&mut rng, 8, 8);
            let b = random_image(&mut rng, 8, 8);
            assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            let s = ssim(&a, &b).unwrap();
            assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
            assert!((s - ssim_oracle(&a, &b)).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = MetricsTable::default();
        let m = DepthMetrics {
            abs_rel: 0.1,
            sq_rel: 0.02,
            rmse: 0.3,
            rmse_log: 0.04,
            delta_1: 0.9,
            delta_2: 0.95,
            delta_3: 1.0,
        };
        t.push("guided", m);
        t.push("unguided", DepthMetrics { abs_rel: 1.0 / 3.0, ..m });
        assert_eq!(MetricsTable::from_csv(&t.to_csv()).unwrap(), t);
        let text = t.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains("0.1000"));
    }
}
