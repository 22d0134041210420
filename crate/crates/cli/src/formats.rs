//! On-disk formats: JSON annotation and config documents, the binary
//! density-map file and PGM heatmaps.

use std::fs;
use std::path::Path;

use sadl_core::{DensityMap, Point, ScaleConfig, ScaleGrid, Scene};
use serde::Deserialize;

use crate::CliError;

pub const DENSITY_MAGIC: &[u8; 8] = b"SADLDM01";
const HEADER_LEN: usize = 8 + 4 * 4;

/// Head annotations of one image. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct AnnotationFile {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
}

impl AnnotationFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("annotations: {e}")))
    }

    pub fn into_scene(self) -> Result<Scene, CliError> {
        let points = self.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
        Ok(Scene::new(self.width, self.height, points)?)
    }
}

/// Reads and validates an annotation document.
pub fn read_scene(path: &Path) -> Result<Scene, CliError> {
    AnnotationFile::parse(&read_text(path)?)?.into_scene()
}

/// Partial [`ScaleConfig`]: every field is optional and falls back to the
/// library default. Omitted weights are uniform over `num_scales`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct ConfigFile {
    pub num_scales: Option<usize>,
    pub alpha: Option<f64>,
    pub beta1: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub var_fraction_tau: Option<f64>,
    pub m_cap: Option<usize>,
    pub var_floor: Option<f64>,
    pub denom_guard: Option<f64>,
    pub factors: Option<Vec<u32>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))
    }

    pub fn into_config(self) -> Result<ScaleConfig, CliError> {
        let base = ScaleConfig::with_scales(self.num_scales.unwrap_or(3));
        let config = ScaleConfig {
            alpha: self.alpha.unwrap_or(base.alpha),
            beta1: self.beta1.unwrap_or(base.beta1),
            weights: self.weights.unwrap_or(base.weights.clone()),
            var_fraction_tau: self.var_fraction_tau.unwrap_or(base.var_fraction_tau),
            m_cap: self.m_cap.unwrap_or(base.m_cap),
            var_floor: self.var_floor.unwrap_or(base.var_floor),
            denom_guard: self.denom_guard.unwrap_or(base.denom_guard),
            factors: self.factors,
            ..base
        };
        config.validate()?;
        Ok(config)
    }
}

/// Loads a config document, or the defaults when no path is given.
pub fn read_config(path: Option<&Path>) -> Result<ScaleConfig, CliError> {
    match path {
        Some(p) => ConfigFile::parse(&read_text(p)?)?.into_config(),
        None => Ok(ScaleConfig::default()),
    }
}

/// One scale's density values with the grid they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFile {
    pub scale: u32,
    pub factor: u32,
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl DensityFile {
    pub fn from_map(map: &DensityMap) -> Result<Self, CliError> {
        let g = map.grid();
        let narrow = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| CliError::Input(format!("{what} {v} does not fit in u32")))
        };
        Ok(Self {
            scale: narrow(g.scale, "scale")?,
            factor: g.factor,
            width: narrow(g.width, "width")?,
            height: narrow(g.height, "height")?,
            values: map.values().to_vec(),
        })
    }

    pub fn grid(&self) -> ScaleGrid {
        ScaleGrid {
            scale: self.scale as usize,
            factor: self.factor,
            width: self.width as usize,
            height: self.height as usize,
        }
    }

    pub fn into_map(self) -> Result<DensityMap, CliError> {
        Ok(DensityMap::new(self.grid(), self.values)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(DENSITY_MAGIC);
        for field in [self.scale, self.factor, self.width, self.height] {
            out.extend_from_slice(&field.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let bad = |msg: String| Err(CliError::Input(format!("density file: {msg}")));
        if bytes.len() < HEADER_LEN {
            return bad(format!("{} bytes is shorter than the header", bytes.len()));
        }
        if &bytes[..8] != DENSITY_MAGIC {
            return bad("bad magic".into());
        }
        let word = |i: usize| {
            let at = 8 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
        };
        let (scale, factor, width, height) = (word(0), word(1), word(2), word(3));
        let cells = u64::from(width) * u64::from(height);
        let payload = (bytes.len() - HEADER_LEN) as u64;
        if payload != 8 * cells {
            return bad(format!("payload of {payload} bytes, header implies {}", 8 * cells));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return bad(format!("non-finite value at cell {j}"));
        }
        Ok(Self {
            scale,
            factor,
            width,
            height,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_bytes(path, &self.to_bytes())
    }
}

/// Binary 8-bit PGM, min-max normalized. A constant map gives all zeros.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if range > 0.0 {
            ((v - lo) / range * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_heatmap(path: &Path, map: &DensityMap) -> Result<(), CliError> {
    let g = map.grid();
    write_bytes(path, &pgm_bytes(g.width, g.height, map.values()))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_ignores_unknown_fields() {
        let a = AnnotationFile::parse(r#"{"width": 4, "height": 3, "points": [[1, 2.5]], "source": "x"}"#)
            .unwrap();
        assert_eq!(a.points, vec![[1.0, 2.5]]);
        assert_eq!(a.into_scene().unwrap().count(), 1);
    }

    #[test]
    fn point_outside_the_image_is_an_input_error() {
        let a = AnnotationFile::parse(r#"{"width": 4, "height": 3, "points": [[5, 1]]}"#).unwrap();
        assert_eq!(a.into_scene().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c = ConfigFile::parse(r#"{"alpha": 2, "num_scales": 2}"#).unwrap().into_config().unwrap();
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.weights, vec![0.5, 0.5]);
        assert_eq!(c.m_cap, ScaleConfig::default().m_cap);
        assert!(ConfigFile::parse(r#"{"alpha": -1}"#).unwrap().into_config().is_err());
    }

    #[test]
    fn density_file_rejects_bad_payloads() {
        let f = DensityFile {
            scale: 1,
            factor: 1,
            width: 2,
            height: 1,
            values: vec![0.25, 1.5],
        };
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 24 + 16);
        assert_eq!(DensityFile::from_bytes(&bytes).unwrap(), f);
        assert!(DensityFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(DensityFile::from_bytes(&wrong).is_err());
        let mut nan = bytes;
        nan[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(DensityFile::from_bytes(&nan).is_err());
    }

    #[test]
    fn pgm_scales_to_full_range() {
        let p = pgm_bytes(3, 1, &[1.0, 2.0, 3.0]);
        assert_eq!(&p[..11], b"P5\n3 1\n255\n");
        assert_eq!(&p[11..], &[0, 128, 255]);
        assert_eq!(&pgm_bytes(2, 1, &[0.0, 0.0])[11..], &[0, 0]);
    }
}
