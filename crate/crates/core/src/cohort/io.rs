//! Cohort directory format: `manifest.json`, `vol_<id>.f32` (raw LE f32,
//! x-fastest) and `corr_<id>.particles` (one `x y z` line per point).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::shape::{CorrespondenceSet, GroupLabel, ShapeParams};
use super::{Cohort, CohortSpec, GroundTruthSample, Split, Volume};
use crate::error::{format_err, io_err};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub group: GroupLabel,
    pub split: Split,
    pub params: Option<ShapeParams>,
    #[serde(default)]
    pub augmented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde_scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CohortSpec,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub n_points: usize,
    pub samples: Vec<SampleRecord>,
}

fn significant_digits(s: &str) -> usize {
    let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
    let trimmed = digits.trim_start_matches('0');
    if trimmed.is_empty() {
        1
    } else {
        trimmed.len()
    }
}

/// Shortest exact decimal representation, padded to at least nine
/// significant digits.
pub fn format_coordinate(v: f64) -> String {
    let mut s = format!("{v}");
    let sig = significant_digits(&s);
    if sig < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat('0').take(9 - sig));
    }
    s
}

pub fn write_particles(path: &Path, corr: &CorrespondenceSet) -> Result<()> {
    let mut text = String::with_capacity(corr.len() * 48);
    for p in &corr.points {
        text.push_str(&format!(
            "{} {} {}\n",
            format_coordinate(p[0]),
            format_coordinate(p[1]),
            format_coordinate(p[2])
        ));
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_particles(path: &Path) -> Result<CorrespondenceSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut points = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", line_no + 1),
            })?;
        if vals.len() != 3 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected 3 values, got {}", line_no + 1, vals.len()),
            });
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    Ok(CorrespondenceSet::new(points))
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let mut bytes = Vec::with_capacity(vol.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_volume(path: &Path, dims: [usize; 3], spacing: f64) -> Result<Volume> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let n: usize = dims.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {} bytes for dims {dims:?}, found {}", 4 * n, bytes.len()),
        });
    }
    Ok(Volume {
        dims,
        spacing,
        data: bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect(),
    })
}

/// Write every sample, then the manifest.
pub fn save_cohort(dir: &Path, cohort: &Cohort) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = Vec::with_capacity(cohort.samples.len());
    for s in &cohort.samples {
        write_volume(&dir.join(format!("vol_{}.f32", s.id)), &s.volume)?;
        write_particles(&dir.join(format!("corr_{}.particles", s.id)), &s.correspondences)?;
        records.push(SampleRecord {
            id: s.id.clone(),
            group: s.group,
            split: s.split,
            params: s.params.clone(),
            augmented: s.augmented,
            kde_scores: s.kde_scores.clone(),
        });
    }
    let manifest = Manifest {
        spec: cohort.spec.clone(),
        dims: cohort.spec.dims,
        spacing: cohort.spec.spacing,
        n_points: cohort.spec.n_points,
        samples: records,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(format_err(&path))?;
    fs::write(&path, json).map_err(io_err(&path))
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(format_err(&path))?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for r in manifest.samples {
        let volume = read_volume(&dir.join(format!("vol_{}.f32", r.id)), manifest.dims, manifest.spacing)?;
        let correspondences = read_particles(&dir.join(format!("corr_{}.particles", r.id)))?;
        if correspondences.len() != manifest.n_points {
            return Err(Error::Dimension {
                what: "correspondence count in particles file",
                expected: manifest.n_points,
                found: correspondences.len(),
            });
        }
        samples.push(GroundTruthSample {
            id: r.id,
            params: r.params,
            volume,
            correspondences,
            group: r.group,
            split: r.split,
            augmented: r.augmented,
            kde_scores: r.kde_scores,
        });
    }
    let mut spec = manifest.spec;
    spec.dims = manifest.dims;
    spec.spacing = manifest.spacing;
    spec.n_points = manifest.n_points;
    Ok(Cohort { spec, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coordinates_have_nine_significant_digits() {
        assert_eq!(format_coordinate(24.0), "24.0000000");
        assert_eq!(format_coordinate(0.5), "0.500000000");
        assert_eq!(format_coordinate(-0.001), "-0.00100000000");
        assert_eq!(format_coordinate(0.0), "0.00000000");
        let long = format_coordinate(1.0 / 3.0);
        assert_eq!(long.parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    proptest! {
        #[test]
        fn coordinate_text_round_trips_bit_exactly(v in -1e4f64..1e4) {
            let s = format_coordinate(v);
            prop_assert!(!s.contains('e'));
            prop_assert!(significant_digits(&s) >= 9);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
