//! Output files: a staging directory renamed into place on success, curve
//! tables and SVG renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use didcurve::EffectCurveEstimate;

/// Directory that receives outputs and becomes `target` on [`Staging::commit`].
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(target: &Path, force: bool) -> std::io::Result<Self> {
        if target.exists() && !force {
            return Err(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!(
                    "output directory {} already exists (use --force to replace it)",
                    target.display()
                ),
            ));
        }
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir)?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> std::io::Result<()> {
        fs::write(self.dir.join(name), contents)
    }

    pub fn commit(mut self) -> std::io::Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.dir, &self.target)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `delta,psi,theta,ci_lower,ci_upper,method,bandwidth`.
pub fn curve_csv(curve: &EffectCurveEstimate) -> String {
    let mut out = String::from("delta,psi,theta,ci_lower,ci_upper,method,bandwidth\n");
    for k in 0..curve.grid.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            curve.grid[k],
            curve.psi[k],
            curve.theta_curve[k],
            opt(curve.ci_lower.as_ref().map(|v| v[k])),
            opt(curve.ci_upper.as_ref().map(|v| v[k])),
            curve.method,
            opt(curve.bandwidth),
        );
    }
    out
}

/// `delta,lower,upper` bands.
pub fn bands_csv(grid: &[f64], lower: &[f64], upper: &[f64]) -> String {
    let mut out = String::from("delta,lower,upper\n");
    for k in 0..grid.len() {
        let _ = writeln!(out, "{},{},{}", grid[k], lower[k], upper[k]);
    }
    out
}

/// Static line plot of a curve with its band, when present.
pub fn curve_svg(curve: &EffectCurveEstimate, title: &str, width: u32, height: u32) -> String {
    let (w, h) = (width as f64, height as f64);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 45.0);
    let mut ys: Vec<f64> = curve.psi.clone();
    if let (Some(lo), Some(hi)) = (&curve.ci_lower, &curve.ci_upper) {
        ys.extend(lo);
        ys.extend(hi);
    }
    ys.push(0.0);
    let (xmin, xmax) = (curve.grid[0], curve.grid[curve.grid.len() - 1]);
    let (mut ymin, mut ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if ymax - ymin < 1e-12 {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let px = |x: f64| left + (x - xmin) / xspan * (w - left - right);
    let py = |y: f64| top + (ymax - y) / (ymax - ymin) * (h - top - bottom);
    let points = |ys: &[f64]| {
        curve
            .grid
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let (Some(lo), Some(hi)) = (&curve.ci_lower, &curve.ci_upper) {
        let mut band = points(hi);
        let back: Vec<f64> = lo.iter().rev().copied().collect();
        let grid_rev: Vec<f64> = curve.grid.iter().rev().copied().collect();
        for (x, y) in grid_rev.iter().zip(&back) {
            let _ = write!(band, " {:.2},{:.2}", px(*x), py(*y));
        }
        let _ = writeln!(
            s,
            r##"<polygon points="{band}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
        left,
        py(0.0),
        w - right,
        py(0.0)
    );
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        points(&curve.psi)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let x = xmin + xspan * k as f64 / 4.0;
        let y = ymin + (ymax - ymin) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(x),
            h - bottom + 16.0,
            tick(x)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            py(y) + 4.0,
            tick(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">dose</text>"#,
        (left + w - right) / 2.0,
        h - 8.0
    );
    let _ = writeln!(s, r#"<text x="{left}" y="18">{}</text>"#, escape(title));
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let r = format!("{v:.2}");
    if r == "-0.00" {
        "0.00".into()
    } else {
        r
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
