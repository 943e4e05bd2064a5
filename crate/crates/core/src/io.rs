//! File formats: headerless little-endian `f32` rasters with JSON sidecars,
//! the text tabulated-phase format and mixture JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::phase::TabulatedPhase;
use crate::quadrature;
use crate::transport::{GridSpec, OpticalMedium, ReflectanceImage, Tallies};

/// Metadata written next to a simulated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSidecar {
    pub mu_a: f64,
    pub mu_s: f64,
    pub g: f64,
    pub n_tissue: f64,
    pub n_ambient: f64,
    pub thickness_cm: f64,
    pub delta_r_mm: f64,
    pub n_r: usize,
    pub n_photons: u64,
    pub seed: u64,
    pub tallies: Tallies,
}

impl ImageSidecar {
    pub fn new(medium: &OpticalMedium, image: &ReflectanceImage, n_photons: u64, seed: u64) -> Self {
        Self {
            mu_a: medium.mu_a,
            mu_s: medium.mu_s,
            g: medium.g,
            n_tissue: medium.n_tissue,
            n_ambient: medium.n_ambient,
            thickness_cm: medium.thickness_cm,
            delta_r_mm: image.grid().delta_r_mm,
            n_r: image.grid().n_r,
            n_photons,
            seed,
            tallies: *image.tallies(),
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            delta_r_mm: self.delta_r_mm,
            n_r: self.n_r,
        }
    }
}

/// `img.f32` → `img.json`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes values as little-endian `f32`.
pub fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    write_bytes(path, &f32_bytes(values))
}

pub fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            "f32 raster",
            format!("{}: {} bytes is not a multiple of 4", path.display(), bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes the raster and its JSON sidecar.
pub fn write_image(path: &Path, image: &ReflectanceImage, sidecar: &ImageSidecar) -> Result<()> {
    write_f32(path, image.pixels())?;
    write_json(&sidecar_path(path), sidecar)
}

/// Reads a square raster. The grid comes from `grid` if given, else from the
/// sidecar if present, else from the file length with a unit pitch.
pub fn read_image(path: &Path, grid: Option<GridSpec>) -> Result<ReflectanceImage> {
    let pixels = read_f32(path)?;
    let side_path = sidecar_path(path);
    let (grid, tallies) = match grid {
        Some(g) => (g, Tallies::default()),
        None if side_path.exists() => {
            let sc: ImageSidecar = read_json(&side_path)?;
            (sc.grid(), sc.tallies)
        }
        None => {
            let side = (pixels.len() as f64).sqrt().round() as usize;
            if side * side != pixels.len() || side.is_multiple_of(2) {
                return Err(Error::format(
                    "f32 raster",
                    format!("{} values do not form an odd square image", pixels.len()),
                ));
            }
            (GridSpec::new(1.0, side / 2 + 1)?, Tallies::default())
        }
    };
    ReflectanceImage::from_pixels(grid, pixels, tallies)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Record {
        record: path.display().to_string(),
        source: Box::new(e.into()),
    })
}

pub fn read_gmm(path: &Path) -> Result<GmmParams> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GmmParams::from_json(&s)
}

/// Text form: `M <count>` then `theta density` per line.
pub fn format_tabulated(phase: &TabulatedPhase) -> String {
    let mut out = format!("M {}\n", phase.bins());
    for (t, d) in phase.theta_grid().iter().zip(phase.density()) {
        writeln!(out, "{t:.12} {d:.12}").unwrap();
    }
    out
}

pub fn parse_tabulated(text: &str) -> Result<TabulatedPhase> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::format("phase file", "empty file"))?;
    let m: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["M", n] => n
            .parse()
            .map_err(|_| Error::format("phase file", format!("bad count `{n}`")))?,
        _ => return Err(Error::format("phase file", format!("bad header `{header}`"))),
    };
    if m == 0 {
        return Err(Error::format("phase file", "M must be positive"));
    }
    let expected = quadrature::midpoints(m);
    let mut density = Vec::with_capacity(m);
    for (i, line) in lines.enumerate() {
        if i >= m {
            return Err(Error::format("phase file", format!("more than {m} data lines")));
        }
        let mut it = line.split_whitespace();
        let (Some(t), Some(d), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::format("phase file", format!("line {}: `{line}`", i + 2)));
        };
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::format("phase file", format!("line {}: bad number `{s}`", i + 2)))
        };
        let t = parse(t)?;
        if (t - expected[i]).abs() > 1e-6 {
            return Err(Error::format(
                "phase file",
                format!("line {}: theta {t} is not the grid midpoint {}", i + 2, expected[i]),
            ));
        }
        density.push(parse(d)?);
    }
    if density.len() != m {
        return Err(Error::format(
            "phase file",
            format!("header promises {m} lines, found {}", density.len()),
        ));
    }
    TabulatedPhase::new(density)
}

pub fn read_tabulated(path: &Path) -> Result<TabulatedPhase> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tabulated(&s)
}

pub fn write_tabulated(path: &Path, phase: &TabulatedPhase) -> Result<()> {
    write_bytes(path, format_tabulated(phase).as_bytes())
}

/// Binary PGM (`P5`) raster.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    write_bytes(path, &bytes)
}
