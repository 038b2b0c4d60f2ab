//! Output directory handling, run manifests and the divergence plot.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::stability::{DivergenceCurve, RateFit};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FILTERSTAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "filterstab-out";
pub const MANIFEST_NAME: &str = "manifest.json";

/// `flag`, else `$FILTERSTAB_OUT`, else `./filterstab-out`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputEntry>,
}

/// Writes files into one directory and records their digests.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> io::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.entries.push(OutputEntry { path: name.to_string(), sha256: sha256_hex(contents), bytes: contents.len() });
        Ok(path)
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, command: &str, config: &[u8], seed: Option<u64>, wall_clock_seconds: f64) -> io::Result<RunManifest> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: sha256_hex(config),
            seed,
            wall_clock_seconds,
            outputs: self.entries,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)? + "\n";
        fs::write(self.dir.join(MANIFEST_NAME), json)?;
        Ok(manifest)
    }
}

/// One line of the divergence plot.
pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub curve: &'a DivergenceCurve,
    pub fit: Option<&'a RateFit>,
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const MAX_POINTS: usize = 800;

/// Self-contained SVG of `E chi2` against `t` on a log scale, one polyline per
/// series, labelled with its fitted rate.
pub fn divergence_svg(series: &[PlotSeries<'_>]) -> String {
    let (w, h) = (820.0, 520.0);
    let (left, right, top, bottom) = (80.0, 190.0, 30.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);

    let t_max = series.iter().filter_map(|s| s.curve.times.last().copied()).fold(0.0_f64, f64::max).max(1e-12);
    let positive = || series.iter().flat_map(|s| s.curve.mean_chi2.iter().copied()).filter(|v| *v > 0.0 && v.is_finite());
    let y_hi = positive().fold(f64::MIN_POSITIVE, f64::max);
    let y_lo = positive().fold(y_hi, f64::min).max(y_hi * 1e-10);
    let (d_lo, d_hi) = (y_lo.log10().floor(), y_hi.log10().ceil().max(y_lo.log10().floor() + 1.0));
    let x_of = |t: f64| left + pw * t / t_max;
    let y_of = |v: f64| top + ph * (d_hi - v.log10().clamp(d_lo, d_hi)) / (d_hi - d_lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let mut d = d_lo;
    while d <= d_hi + 1e-9 {
        let y = y_of(10f64.powf(d));
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, left - 6.0, y + 4.0);
        d += 1.0;
    }
    for k in 0..=5 {
        let t = t_max * k as f64 / 5.0;
        let x = x_of(t);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top + ph + 18.0, trim(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t</text>"#, left + pw / 2.0, h - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">E chi2(pi_t^mu | pi_t^nu)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let n = ser.curve.times.len();
        let stride = n.div_ceil(MAX_POINTS).max(1);
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for k in (0..n).step_by(stride).chain(std::iter::once(n.saturating_sub(1))) {
            let v = ser.curve.mean_chi2[k];
            if v >= y_lo && v.is_finite() {
                segments.last_mut().expect("non-empty").push((x_of(ser.curve.times[k]), y_of(v)));
            } else if !segments.last().expect("non-empty").is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|p| p.len() > 1) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        let label = match ser.fit {
            Some(f) => format!("{} ({:.3})", ser.label, f.rate),
            None => ser.label.to_string(),
        };
        let ly = top + 16.0 + 20.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 20.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 26.0, escape(&label));
    }
    s.push_str("</svg>\n");
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(rate: f64) -> DivergenceCurve {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let mean_chi2 = times.iter().map(|t| (-rate * t).exp()).collect();
        DivergenceCurve { times, mean_chi2, stderr: vec![0.0; 101], n_paths: 1, floor_hits: 0 }
    }

    #[test]
    fn svg_is_self_contained() {
        let (a, b) = (curve(0.5), curve(0.0));
        let svg = divergence_svg(&[
            PlotSeries { label: "a<b", curve: &a, fit: None },
            PlotSeries { label: "flat", curve: &b, fit: None },
        ]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn zero_curve_still_renders() {
        let mut z = curve(0.0);
        z.mean_chi2.iter_mut().for_each(|v| *v = 0.0);
        let svg = divergence_svg(&[PlotSeries { label: "zero", curve: &z, fit: None }]);
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn manifest_lists_digests() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        out.write("a.txt", b"abc").unwrap();
        let m = out.finish("test", b"", Some(1), 0.0).unwrap();
        assert_eq!(m.outputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(dir.path().join(MANIFEST_NAME).exists());
    }

    #[test]
    fn flag_beats_environment() {
        assert_eq!(resolve_out_dir(Some(Path::new("x"))), PathBuf::from("x"));
    }
}
