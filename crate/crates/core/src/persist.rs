//! JSON library files and trajectory CSV files.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::basis::{phase_schedule, BasisConfig};
use crate::context::GraspModel;
use crate::gmm::GmmComponent;
use crate::linalg::to_row_major;
use crate::mixture::{Component, LearnerHyper, PrompLibrary};
use crate::promp::{PrompParams, Trajectory};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    format: u32,
    basis: BasisConfig,
    hyper: LearnerHyper,
    components: Vec<ComponentRecord>,
    grasp: Option<Vec<GraspRecord>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentRecord {
    pi: f64,
    mean: Vec<f64>,
    /// Row-major, `mean.len()` squared entries.
    cov: Vec<f64>,
    prev_cov: Vec<f64>,
    obs_noise: Vec<f64>,
    n_samples: usize,
    samples: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspRecord {
    weight: f64,
    mean: [f64; 3],
    cov: [f64; 9],
}

fn parse_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.into(),
        message: message.into(),
    }
}

/// Deserializes JSON, reporting the path of the offending field on failure.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_error(
            if path == "." {
                "<root>".to_string()
            } else {
                path
            },
            e.inner().to_string(),
        )
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| parse_error("<root>", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn square(values: &[f64], dim: usize, field: String) -> Result<DMatrix<f64>> {
    if values.len() != dim * dim {
        return Err(parse_error(
            field,
            format!("expected {} entries, found {}", dim * dim, values.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(dim, dim, values))
}

fn library_to_file(lib: &PrompLibrary, grasp: Option<&GraspModel>) -> LibraryFile {
    LibraryFile {
        format: FORMAT_VERSION,
        basis: lib.cfg.clone(),
        hyper: lib.hyper.clone(),
        components: lib
            .components
            .iter()
            .zip(&lib.mix_coeffs)
            .map(|(c, pi)| ComponentRecord {
                pi: *pi,
                mean: c.params.mean_w.as_slice().to_vec(),
                cov: to_row_major(&c.params.cov_w),
                prev_cov: to_row_major(&c.params.prev_cov),
                obs_noise: to_row_major(&c.params.obs_noise),
                n_samples: c.params.n_samples,
                samples: c.samples.iter().map(|s| s.as_slice().to_vec()).collect(),
            })
            .collect(),
        grasp: grasp.map(|g| {
            g.components
                .iter()
                .map(|c| GraspRecord {
                    weight: c.weight,
                    mean: [c.mean[0], c.mean[1], c.mean[2]],
                    cov: std::array::from_fn(|k| c.cov[(k / 3, k % 3)]),
                })
                .collect()
        }),
    }
}

fn library_from_file(file: LibraryFile) -> Result<(PrompLibrary, Option<GraspModel>)> {
    if file.format != FORMAT_VERSION {
        return Err(parse_error(
            "format",
            format!("unsupported version {}", file.format),
        ));
    }
    let mut lib = PrompLibrary::new(file.basis, file.hyper)
        .map_err(|e| parse_error("basis", e.to_string()))?;
    let dim = lib.cfg.weight_dim();
    let d = lib.cfg.state_dim;
    for (j, rec) in file.components.into_iter().enumerate() {
        let at = |f: &str| format!("components[{j}].{f}");
        if rec.mean.len() != dim {
            return Err(parse_error(
                at("mean"),
                format!("expected {dim} entries, found {}", rec.mean.len()),
            ));
        }
        if let Some(k) = rec.samples.iter().position(|s| s.len() != dim) {
            return Err(parse_error(
                at(&format!("samples[{k}]")),
                format!("expected {dim} entries"),
            ));
        }
        let params = PrompParams {
            mean_w: DVector::from_vec(rec.mean),
            cov_w: square(&rec.cov, dim, at("cov"))?,
            n_samples: rec.n_samples,
            prev_cov: square(&rec.prev_cov, dim, at("prev_cov"))?,
            obs_noise: square(&rec.obs_noise, d, at("obs_noise"))?,
        };
        lib.components.push(Component {
            params,
            samples: rec.samples.into_iter().map(DVector::from_vec).collect(),
        });
        lib.mix_coeffs.push(rec.pi);
    }
    let grasp = file.grasp.map(|records| GraspModel {
        components: records
            .into_iter()
            .map(|r| GmmComponent {
                weight: r.weight,
                mean: Vector3::from(r.mean),
                cov: Matrix3::from_row_slice(&r.cov),
            })
            .collect(),
    });
    if let Some(g) = &grasp {
        g.validate()
            .map_err(|e| parse_error("grasp", e.to_string()))?;
    }
    Ok((lib, grasp))
}

pub fn library_to_json(lib: &PrompLibrary, grasp: Option<&GraspModel>) -> String {
    serde_json::to_string_pretty(&library_to_file(lib, grasp)).expect("library serializes")
}

pub fn library_from_json(text: &str) -> Result<(PrompLibrary, Option<GraspModel>)> {
    library_from_file(from_json_str(text)?)
}

pub fn save_library(path: &Path, lib: &PrompLibrary, grasp: Option<&GraspModel>) -> Result<()> {
    std::fs::write(path, library_to_json(lib, grasp) + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_library(path: &Path) -> Result<(PrompLibrary, Option<GraspModel>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    library_from_json(&text)
}

/// Writes `timestep,phase,y1..yd`, one row per timestep.
pub fn export_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let phases = phase_schedule(traj.len())?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestep".to_string(), "phase".to_string()];
    header.extend((1..=traj.state_dim()).map(|k| format!("y{k}")));
    w.write_record(&header)?;
    for (t, phase) in phases.iter().enumerate() {
        let mut row = vec![t.to_string(), format!("{phase:.16e}")];
        row.extend((0..traj.state_dim()).map(|k| format!("{:.16e}", traj.states()[(t, k)])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "timestep" || &header[1] != "phase" {
        return Err(parse_error("header", "expected timestep,phase,y1..yd"));
    }
    let mut rows = Vec::new();
    for (t, record) in r.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .skip(2)
            .enumerate()
            .map(|(k, v)| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_error(format!("row {t}, y{}", k + 1), e.to_string()))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Trajectory::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianMixture;

    fn sample_library() -> PrompLibrary {
        let mut lib = PrompLibrary::new(BasisConfig::default(), LearnerHyper::default()).unwrap();
        for k in 0..3 {
            let w = DVector::from_fn(30, |i, _| (i as f64 * 0.37 + k as f64).sin() / 3.0);
            lib.incorporate(w).unwrap();
        }
        lib
    }

    #[test]
    fn round_trip_is_exact() {
        let lib = sample_library();
        let gm = GaussianMixture::single(
            Vector3::new(0.1, -0.2, 1.0),
            Matrix3::new(2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.5),
        );
        let (back, g) = library_from_json(&library_to_json(&lib, Some(&gm))).unwrap();
        assert_eq!(back, lib);
        assert_eq!(g.unwrap(), gm);
    }

    #[test]
    fn empty_library_round_trips() {
        let lib = PrompLibrary::new(BasisConfig::default(), LearnerHyper::default()).unwrap();
        let (back, g) = library_from_json(&library_to_json(&lib, None)).unwrap();
        assert!(back.is_empty());
        assert!(g.is_none());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = library_to_json(&sample_library(), None);
        let cut = &text[..text.len() / 2];
        assert!(matches!(library_from_json(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn errors_name_the_field() {
        let lib = sample_library();
        let text = library_to_json(&lib, None).replacen("\"n_samples\"", "\"n_sample\"", 1);
        match library_from_json(&text) {
            Err(Error::Parse { field, .. }) => {
                assert!(field.starts_with("components[0]"), "{field}")
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut file = library_to_file(&lib, None);
        file.components[1].cov.pop();
        let text = serde_json::to_string(&file).unwrap();
        match library_from_json(&text) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "components[1].cov"),
            other => panic!("unexpected {other:?}"),
        }

        let text = library_to_json(&lib, None).replacen("\"gamma\": 0.01", "\"gamma\": \"x\"", 1);
        match library_from_json(&text) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "hyper.gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = Trajectory::new(DMatrix::from_fn(7, 3, |t, d| {
            (t as f64 + 0.1) * (d as f64 - 1.3) / 7.0
        }))
        .unwrap();
        export_trajectory(&path, &traj).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("timestep,phase,y1,y2,y3\n"));
        assert_eq!(import_trajectory(&path).unwrap(), traj);
    }
}
