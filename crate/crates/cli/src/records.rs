//! CSV row layouts.

use std::path::Path;

use amc::metrics::FrameMetrics;
use amc::{Rotation, So3Vector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationRow {
    pub frame: u64,
    pub t: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub view_wx: f64,
    pub view_wy: f64,
    pub view_wz: f64,
    pub lost: u8,
    pub saccade: u8,
}

impl RotationRow {
    pub fn new(frame: u64, t: f64, r_0j: &Rotation, view: &Rotation, lost: bool, saccade: bool) -> Result<Self, CliError> {
        let w = log_vector(r_0j)?;
        let v = log_vector(view)?;
        Ok(RotationRow {
            frame,
            t,
            wx: w[0],
            wy: w[1],
            wz: w[2],
            view_wx: v[0],
            view_wy: v[1],
            view_wz: v[2],
            lost: lost as u8,
            saccade: saccade as u8,
        })
    }

    pub fn rotation(&self) -> Rotation {
        So3Vector::new(self.wx, self.wy, self.wz).exp()
    }

    pub fn view(&self) -> Rotation {
        So3Vector::new(self.view_wx, self.view_wy, self.view_wz).exp()
    }
}

/// Exact camera orientation relative to the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub frame: u64,
    pub t: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl GroundTruthRow {
    pub fn rotation(&self) -> Rotation {
        So3Vector::new(self.wx, self.wy, self.wz).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    pub frame: u64,
    pub nf_rms: f64,
    pub delta_i_rms: f64,
    pub sharpness: f64,
    pub valid_pct: f64,
    pub omega_img: f64,
    pub omega_view: f64,
}

impl MetricsRow {
    pub fn new(mode: &str, frame: u64, m: &FrameMetrics) -> Self {
        MetricsRow {
            mode: mode.to_owned(),
            frame,
            nf_rms: m.nf_rms,
            delta_i_rms: m.delta_i_rms,
            sharpness: m.sharpness,
            valid_pct: m.valid_pct,
            omega_img: m.omega_img,
            omega_view: m.omega_view,
        }
    }
}

pub fn log_vector(r: &Rotation) -> Result<[f64; 3], CliError> {
    r.log().map(|w| w.as_array()).map_err(CliError::data)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_header_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = So3Vector::new(0.01, -0.02, 0.03).exp();
        let row = RotationRow::new(3, 0.05, &r, &Rotation::identity(), false, true).unwrap();
        let mut w = writer(&path).unwrap();
        w.serialize(&row).unwrap();
        w.flush().unwrap();
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "frame,t,wx,wy,wz,view_wx,view_wy,view_wz,lost,saccade");
        let back: Vec<RotationRow> = read_rows(&path).unwrap();
        assert_eq!(back, vec![row.clone()]);
        assert!(back[0].rotation().geodesic_distance(&r) < 1e-12);
        assert_eq!((back[0].lost, back[0].saccade), (0, 1));
    }
}
